//! Trains both streams on one toy object at desk scale and prints
//! validation accuracies.
//!
//! Usage: `cargo run --release -p posecheck --example desk_run -- [object] [per_class] [epochs]`

use std::time::Instant;

use posecheck::datagen::{build_dataset, make_toy_mesh, DatasetConfig, ToyKind};
use posecheck::evaluation::{aca, confusion, oa};
use posecheck::nn::{predict_cloud, predict_depth, train_cloud, train_depth, CloudArch, DepthArch, TrainConfig};
use posecheck::pipeline::{prepare, validate, InputBuilder};
use posecheck::rasterizer::CameraIntrinsics;
use posecheck::ObjectModel;

fn main() -> posecheck::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind: ToyKind = args.get(1).map_or("cross4", String::as_str).parse()?;
    let per_class: usize = args.get(2).map_or(1000, |s| s.parse().expect("per_class"));
    let epochs: usize = args.get(3).map_or(20, |s| s.parse().expect("epochs"));

    let (mesh, sym) = make_toy_mesh(kind);
    let model = ObjectModel::build(&mesh, sym, 2000, 0)?;
    let cam = CameraIntrinsics::default();
    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::desk()
    };
    let t = Instant::now();
    let train = build_dataset(&model, kind.name(), &DatasetConfig { per_class, ..DatasetConfig::default() }, &cam, 1)?;
    let val = build_dataset(&model, kind.name(), &DatasetConfig { per_class: per_class / 4, ..DatasetConfig::default() }, &cam, 2)?;
    let builder = InputBuilder::new(&model, cam, cfg.augment_size(), cfg.points, cfg.seed)?;
    let tr = prepare(&builder, &train.manifest, &train.scenes)?;
    let va = prepare(&builder, &val.manifest, &val.scenes)?;
    println!("data {:.1}s, cloud support {}/{}", t.elapsed().as_secs_f64(), tr.cloud_training().len(), tr.cloud.len());

    let t = Instant::now();
    let (mut dnet, hist) = train_depth(&tr.depth, DepthArch::desk(), &cfg)?;
    for e in &hist.epochs {
        println!("depth epoch {:2} loss {:.4} acc {:.3}", e.epoch, e.loss, e.accuracy);
    }
    println!("depth train {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let (mut cnet, hist) = train_cloud(&tr.cloud_training(), builder.model_cloud(), CloudArch::desk(), &cfg)?;
    for e in &hist.epochs {
        println!("cloud epoch {:2} loss {:.4} acc {:.3}", e.epoch, e.loss, e.accuracy);
    }
    println!("cloud train {:.1}s", t.elapsed().as_secs_f64());

    let truth: Vec<_> = val.manifest.records.iter().map(|r| r.label).collect();
    let dp = predict_depth(&mut dnet, &va.depth)?;
    let cm = confusion(truth.iter().zip(&dp).map(|(t, p)| (*t, p.label())));
    println!("depth  OA {:.2} ACA {:.2}", oa(&cm), aca(&cm));
    let present = va.cloud_training();
    let cp = predict_cloud(&mut cnet, &present, builder.model_cloud())?;
    let cm = confusion(present.iter().zip(&cp).map(|(s, p)| (s.label, p.label())));
    println!("cloud  OA {:.2} ACA {:.2} (on {} supported)", oa(&cm), aca(&cm), present.len());
    let verdicts = validate(&mut dnet, &mut cnet, &builder, &va)?;
    let cm = confusion(truth.iter().zip(&verdicts).map(|(t, v)| (*t, v.label)));
    println!("fused  OA {:.2} ACA {:.2}", oa(&cm), aca(&cm));
    Ok(())
}
