use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use posecheck::datagen::{build_dataset, DatasetConfig, DatasetManifest, Scene};
use posecheck::evaluation::{confidence_replacement_experiment, confusion, report as build_report, EvalReport, ObjectResult, RescoredDetection};
use posecheck::evaluation::{aca, oa};
use posecheck::geometry::{pose_distance, GroundTruthSet};
use posecheck::nn::{
    load_checkpoint, save_checkpoint, train_cloud, train_depth, Checkpoint, CloudNet, DepthNet, History, StreamArch,
    TrainConfig,
};
use posecheck::pipeline::{prepare, validate, InputBuilder};
use posecheck::rasterizer::{render_depth, DepthImage};
use posecheck::seeding::derive_seed;
use posecheck::{Label, ObjectModel, Pose, Symmetry};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Loaded;
use crate::fail::{Fail, Stage};
use crate::Stream;

fn io_fail(stage: Stage, path: &Path) -> impl Fn(std::io::Error) -> Fail + '_ {
    move |e| Fail::new(stage, format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Fail> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_fail(Stage::Data, parent))?;
    }
    std::fs::write(path, bytes).map_err(io_fail(Stage::Data, path))
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, Fail> {
    let text = std::fs::read_to_string(path).map_err(io_fail(stage, path))?;
    serde_json::from_str(&text).map_err(|e| Fail::new(stage, format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Inline JSON when the argument starts with `{`, a file path otherwise.
fn parse_pose(arg: &str, base: &Path) -> Result<Pose, Fail> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        let path = base.join(arg);
        std::fs::read_to_string(&path).map_err(io_fail(Stage::Data, &path))?
    };
    serde_json::from_str(&text).map_err(|e| Fail::new(Stage::Config, format!("pose `{arg}`: {e}")))
}

#[derive(Serialize)]
struct SymmetryCheck {
    angle_deg: f64,
    max_vertex_mismatch: f64,
}

#[derive(Serialize)]
struct MeshInfo {
    name: String,
    vertices: usize,
    triangles: usize,
    area: f64,
    radius: f64,
    diameter: f64,
    lambda_eigenvalues: [f64; 3],
    symmetry: Symmetry,
    checks: Vec<SymmetryCheck>,
    symmetry_consistent: bool,
}

/// For each non-trivial group element, the largest distance from a rotated
/// vertex to its nearest vertex.
fn symmetry_checks(model: &ObjectModel) -> Vec<SymmetryCheck> {
    let verts = &model.mesh.vertices;
    let stride = verts.len().div_ceil(500).max(1);
    let axis = model.symmetry.axis().unwrap_or_else(Vector3::z);
    model
        .symmetry
        .elements()
        .into_iter()
        .skip(1)
        .map(|g| {
            let worst = verts
                .iter()
                .step_by(stride)
                .map(|v| {
                    let w = g * v;
                    verts.iter().map(|u| (u - w).norm()).fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max);
            let (s, c) = (g - g.transpose(), g.trace());
            let sin = Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]).dot(&axis) / 2.0;
            SymmetryCheck {
                angle_deg: sin.atan2((c - 1.0) / 2.0).to_degrees().rem_euclid(360.0),
                max_vertex_mismatch: worst,
            }
        })
        .collect()
}

pub fn mesh_info(l: &Loaded) -> Result<(), Fail> {
    let model = l.model()?;
    let checks = symmetry_checks(&model);
    let tol = 1e-3 * model.diameter;
    let info = MeshInfo {
        name: l.object_name(),
        vertices: model.mesh.vertices.len(),
        triangles: model.mesh.triangles.len(),
        area: model.mesh.area(),
        radius: model.radius,
        diameter: model.diameter,
        lambda_eigenvalues: model.lambda_eigenvalues(),
        symmetry: model.symmetry,
        symmetry_consistent: checks.iter().all(|c| c.max_vertex_mismatch <= tol),
        checks,
    };
    println!("object: {}", info.name);
    println!("vertices: {}  triangles: {}  area: {:.6}", info.vertices, info.triangles, info.area);
    println!("radius: {:.6}", info.radius);
    println!("diameter: {:.6}", info.diameter);
    let [a, b, c] = info.lambda_eigenvalues;
    println!("lambda eigenvalues: {a:.6} {b:.6} {c:.6}");
    match model.symmetry {
        Symmetry::None => println!("symmetry: none"),
        Symmetry::Cyclic { order, axis } => println!("symmetry: cyclic order {order} about {:?}", axis.as_slice()),
        Symmetry::Revolution { axis } => println!("symmetry: revolution about {:?}", axis.as_slice()),
    }
    let worst = info.checks.iter().map(|c| c.max_vertex_mismatch).fold(0.0, f64::max);
    println!(
        "symmetry check: max vertex mismatch {worst:.3e} over {} elements ({})",
        info.checks.len(),
        if info.symmetry_consistent { "consistent" } else { "INCONSISTENT" }
    );
    let dir = l.output("mesh");
    l.write_resolved(&dir)?;
    write(&dir.join("info.json"), to_json(&info))
}

pub const SPLITS: [&str; 2] = ["train", "val"];

fn split_seed(seed: u64, split: &str) -> u64 {
    derive_seed(seed, &[SPLITS.iter().position(|s| *s == split).unwrap_or(SPLITS.len()) as u64])
}

pub fn make_dataset(l: &Loaded) -> Result<(), Fail> {
    let model = l.model()?;
    let name = l.object_name();
    let root = l.output("data");
    l.write_resolved(&root)?;
    for split in SPLITS {
        let cfg = DatasetConfig {
            per_class: if split == "train" {
                l.config.dataset.per_class
            } else {
                l.config.validation_per_class
            },
            ..l.config.dataset.clone()
        };
        let data = build_dataset(&model, &name, &cfg, &l.config.camera, split_seed(l.config.seed, split))
            .map_err(Fail::at(Stage::Data))?;
        let path = data.write(&root.join(split)).map_err(Fail::at(Stage::Data))?;
        println!(
            "{split}: {} valid + {} invalid from {} scenes -> {}",
            data.manifest.counts.valid,
            data.manifest.counts.invalid,
            data.manifest.scenes.len(),
            path.display()
        );
    }
    Ok(())
}

pub fn distance(l: &Loaded, a: &str, b: &str) -> Result<(), Fail> {
    let model = l.model()?;
    let (pa, pb) = (parse_pose(a, &l.base)?, parse_pose(b, &l.base)?);
    let d = pose_distance(&pa, &pb, &model);
    println!("{d:?}");
    if d < model.tp_threshold() {
        println!("valid (< 10% diameter)");
    } else {
        println!("invalid (>= 10% diameter)");
    }
    Ok(())
}

pub fn render(l: &Loaded, poses: &[String], out: Option<PathBuf>) -> Result<(), Fail> {
    let model = l.model()?;
    let poses = poses.iter().map(|p| parse_pose(p, &l.base)).collect::<Result<Vec<_>, _>>()?;
    let img = render_depth(&model, &poses, &l.config.camera);
    let stem = match out {
        Some(p) => l.base.join(p),
        None => l.output("render").join("depth"),
    };
    if let Some(dir) = stem.parent() {
        l.write_resolved(dir)?;
    }
    write(&stem.with_extension("dpr"), img.to_dpr_bytes())?;
    write(&stem.with_extension("pgm"), img.to_pgm16(l.config.camera.near, l.config.camera.far))?;
    println!("{} of {} pixels hit -> {}", img.finite_count(), img.pixels.len(), stem.display());
    Ok(())
}

fn load_split(l: &Loaded, split: &str) -> Result<(DatasetManifest, Vec<Scene>), Fail> {
    let dir = l.output("data").join(split);
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"), Stage::Data)?;
    let scenes = manifest.load_scenes(&dir).map_err(Fail::at(Stage::Data))?;
    Ok((manifest, scenes))
}

fn summarize(h: &History) {
    if let Some(e) = h.epochs.last() {
        println!(
            "{}: {} epochs, final loss {:.4}, train accuracy {:.2}%",
            h.stream,
            h.epochs.len(),
            e.loss,
            100.0 * e.accuracy
        );
    }
}

pub fn train(l: &Loaded, stream: Stream) -> Result<(), Fail> {
    let model = l.model()?;
    let cfg = &l.config.train;
    let (manifest, scenes) = load_split(l, "train")?;
    let builder = InputBuilder::new(&model, l.config.camera, cfg.augment_size(), cfg.points, cfg.seed)
        .map_err(Fail::at(Stage::Train))?;
    let set = prepare(&builder, &manifest, &scenes).map_err(Fail::at(Stage::Train))?;
    let dir = l.output("model");
    l.write_resolved(&dir)?;
    let save = |name: &str, ck: Checkpoint, hist: &History| -> Result<(), Fail> {
        save_checkpoint(&dir.join(format!("{name}.vnw")), &ck).map_err(Fail::at(Stage::Train))?;
        write(&dir.join(format!("history_{name}.json")), to_json(hist))?;
        summarize(hist);
        Ok(())
    };
    if stream != Stream::Cloud {
        let (net, hist) = train_depth(&set.depth, l.config.depth_arch.clone(), cfg).map_err(Fail::at(Stage::Train))?;
        let ck = Checkpoint::capture(StreamArch::Depth(net.arch.clone()), &net.params(), cfg.seed, cfg.epochs);
        save("depth", ck, &hist)?;
    }
    if stream != Stream::Depth {
        let (net, hist) = train_cloud(&set.cloud_training(), builder.model_cloud(), l.config.cloud_arch.clone(), cfg)
            .map_err(Fail::at(Stage::Train))?;
        let ck = Checkpoint::capture(StreamArch::Cloud(net.arch.clone()), &net.params(), cfg.seed, cfg.epochs);
        save("cloud", ck, &hist)?;
    }
    Ok(())
}

fn load_nets(l: &Loaded) -> Result<(DepthNet<f32>, CloudNet<f32>, u64), Fail> {
    let dir = l.output("model");
    let read = |name: &str| {
        let path = dir.join(format!("{name}.vnw"));
        load_checkpoint(&path).map_err(|e| Fail::new(Stage::Data, format!("{}: {e}", path.display())))
    };
    let (dck, cck) = (read("depth")?, read("cloud")?);
    let mismatch = |msg: String| Fail::new(Stage::Train, msg);
    let StreamArch::Depth(darch) = dck.header.arch.clone() else {
        return Err(mismatch("depth.vnw holds a cloud-stream checkpoint".into()));
    };
    let StreamArch::Cloud(carch) = cck.header.arch.clone() else {
        return Err(mismatch("cloud.vnw holds a depth-stream checkpoint".into()));
    };
    if darch != l.config.depth_arch || carch != l.config.cloud_arch {
        return Err(mismatch("checkpoint architecture does not match the config".into()));
    }
    if dck.header.seed != cck.header.seed {
        return Err(mismatch("depth and cloud checkpoints come from different seeds".into()));
    }
    let mut dnet = DepthNet::<f32>::new(darch, 0).map_err(Fail::at(Stage::Train))?;
    dck.restore(dnet.params_mut()).map_err(Fail::at(Stage::Train))?;
    let mut cnet = CloudNet::<f32>::new(carch, 0).map_err(Fail::at(Stage::Train))?;
    cck.restore(cnet.params_mut()).map_err(Fail::at(Stage::Train))?;
    Ok((dnet, cnet, dck.header.seed))
}

/// 8-bit mask of where `poses` render.
fn mask_pgm(img: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|d| if d.is_finite() { 255u8 } else { 0 }));
    out
}

pub fn infer(l: &Loaded, split: &str, overlays: bool) -> Result<(), Fail> {
    let model = l.model()?;
    let (mut manifest, scenes) = load_split(l, split)?;
    let (mut dnet, mut cnet, seed) = load_nets(l)?;
    let depth_size = TrainConfig {
        input_size: dnet.arch.input_size,
        ..l.config.train.clone()
    }
    .augment_size();
    let builder = InputBuilder::new(&model, l.config.camera, depth_size, cnet.arch.points, seed)
        .map_err(Fail::at(Stage::Eval))?;
    let set = prepare(&builder, &manifest, &scenes).map_err(Fail::at(Stage::Eval))?;
    let verdicts = validate(&mut dnet, &mut cnet, &builder, &set).map_err(Fail::at(Stage::Eval))?;
    for (rec, v) in manifest.records.iter_mut().zip(&verdicts) {
        rec.validator = Some(*v);
    }
    // The annotated copy lives elsewhere; keep its scene paths pointing at
    // the original files.
    let back = Path::new("..").join("..").join("data").join(split);
    for s in &mut manifest.scenes {
        s.depth_file = back.join(&s.depth_file);
        s.cloud_file = back.join(&s.cloud_file);
    }
    let dir = l.output("infer").join(split);
    l.write_resolved(&dir)?;
    write(&dir.join("manifest.json"), manifest.to_json().map_err(Fail::at(Stage::Eval))?)?;
    let accepted = verdicts.iter().filter(|v| v.label == Label::Valid).count();
    println!("{split}: {accepted} of {} detections accepted", verdicts.len());

    if overlays {
        let idx = manifest.scene_indices().map_err(Fail::at(Stage::Data))?;
        for (s, scene) in scenes.iter().enumerate() {
            let pick = |want: Label| -> Vec<Pose> {
                manifest
                    .records
                    .iter()
                    .zip(&idx)
                    .filter(|(r, &i)| i == s && r.validator.is_some_and(|v| v.label == want))
                    .map(|(r, _)| r.pose)
                    .collect()
            };
            let cam = &l.config.camera;
            let odir = dir.join("overlays");
            write(&odir.join(format!("{}_depth.pgm", scene.id)), scene.depth.to_pgm16(cam.near, cam.far))?;
            let acc = render_depth(&model, &pick(Label::Valid), cam);
            write(&odir.join(format!("{}_accepted.pgm", scene.id)), mask_pgm(&acc))?;
            let rej = render_depth(&model, &pick(Label::Invalid), cam);
            write(&odir.join(format!("{}_rejected.pgm", scene.id)), mask_pgm(&rej))?;
        }
    }
    Ok(())
}

pub fn evaluate(l: &Loaded, split: &str) -> Result<(), Fail> {
    let model = l.model()?;
    let path = l.output("infer").join(split).join("manifest.json");
    let manifest: DatasetManifest = read_json(&path, Stage::Data)?;
    let idx = manifest.scene_indices().map_err(Fail::at(Stage::Data))?;
    let mut pairs = Vec::with_capacity(manifest.records.len());
    let mut dets = Vec::with_capacity(manifest.records.len());
    for (r, &scene) in manifest.records.iter().zip(&idx) {
        let v = r
            .validator
            .ok_or_else(|| Fail::new(Stage::Data, format!("{}: record without verdict; run infer first", path.display())))?;
        pairs.push((r.label, v.label));
        dets.push(RescoredDetection {
            scene,
            pose: r.pose,
            confidence: r.confidence,
            p_valid: v.fused.p_valid,
        });
    }
    let gts: Vec<GroundTruthSet> = manifest
        .scenes
        .iter()
        .map(|s| GroundTruthSet {
            model_id: manifest.model_id.clone(),
            poses: s.gt.clone(),
        })
        .collect();
    let cm = confusion(pairs);
    let (before, after) = confidence_replacement_experiment(&dets, &gts, &model).map_err(Fail::at(Stage::Eval))?;
    let rep = build_report(vec![ObjectResult {
        name: l.object_name(),
        aca: Some(aca(&cm)),
        oa: Some(oa(&cm)),
        ap_before: Some(before),
        ap_after: Some(after),
    }]);
    let dir = l.output("eval").join(split);
    l.write_resolved(&dir)?;
    write_report(&dir, &rep)?;
    #[derive(Serialize)]
    struct Counts {
        tp: usize,
        #[serde(rename = "fn")]
        fn_: usize,
        tn: usize,
        fp: usize,
    }
    write(
        &dir.join("confusion.json"),
        to_json(&Counts {
            tp: cm.tp,
            fn_: cm.fn_,
            tn: cm.tn,
            fp: cm.fp,
        }),
    )?;
    print!("{}", rep.to_text());
    Ok(())
}

fn write_report(dir: &Path, rep: &EvalReport) -> Result<(), Fail> {
    write(&dir.join("report.json"), rep.to_json().map_err(Fail::at(Stage::Eval))?)?;
    write(&dir.join("report.txt"), rep.to_text())
}

/// Report inputs: full reports or bare lists of object rows.
#[derive(Deserialize)]
#[serde(untagged)]
enum ReportInput {
    Report(EvalReport),
    Rows(Vec<ObjectResult>),
}

pub fn report(inputs: &[PathBuf], out: &Path) -> Result<(), Fail> {
    let mut objects = Vec::new();
    for p in inputs {
        match read_json::<ReportInput>(p, Stage::Data)? {
            ReportInput::Report(r) => objects.extend(r.objects),
            ReportInput::Rows(rows) => objects.extend(rows),
        }
    }
    if objects.is_empty() {
        return Err(Fail::new(Stage::Eval, "no object rows in the inputs"));
    }
    let rep = build_report(objects);
    write_report(out, &rep)?;
    print!("{}", rep.to_text());
    Ok(())
}
