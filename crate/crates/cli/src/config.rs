use std::path::{Path, PathBuf};

use posecheck::datagen::{make_toy_mesh, DatasetConfig, ToyKind};
use posecheck::nn::{CloudArch, DepthArch, TrainConfig};
use posecheck::rasterizer::CameraIntrinsics;
use posecheck::{ObjectModel, Symmetry, TriangleMesh};
use serde::{Deserialize, Serialize};

use crate::fail::{Fail, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Report name; defaults to the toy kind or the mesh file stem.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub toy: Option<ToyKind>,
    /// OBJ file, relative to the config file.
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    /// Required with `mesh`; toys carry their own.
    #[serde(default)]
    pub symmetry: Option<Symmetry>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    2000
}

fn default_validation() -> usize {
    250
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub object: ObjectSpec,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    /// Training split; `per_class` is its size.
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_validation")]
    pub validation_per_class: usize,
    /// Base seed of the generated splits.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "TrainConfig::desk")]
    pub train: TrainConfig,
    #[serde(default = "DepthArch::desk")]
    pub depth_arch: DepthArch,
    #[serde(default = "CloudArch::desk")]
    pub cloud_arch: CloudArch,
    /// Relative to the config file.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// A parsed config together with the directory relative paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, Fail> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Fail::new(Stage::Config, format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Fail::new(Stage::Config, format!("config {}: {e}", path.display())))?;
        config.check()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn output(&self, sub: &str) -> PathBuf {
        self.base.join(&self.config.output_dir).join(sub)
    }

    pub fn object_name(&self) -> String {
        let o = &self.config.object;
        if let Some(n) = &o.name {
            return n.clone();
        }
        match (&o.toy, &o.mesh) {
            (Some(kind), _) => kind.name().to_string(),
            (None, Some(p)) => p.file_stem().map_or("object".into(), |s| s.to_string_lossy().into_owned()),
            _ => "object".into(),
        }
    }

    pub fn mesh(&self) -> Result<(TriangleMesh, Symmetry), Fail> {
        let o = &self.config.object;
        match (&o.toy, &o.mesh) {
            (Some(kind), None) => Ok(make_toy_mesh(*kind)),
            (None, Some(path)) => {
                let mesh = TriangleMesh::read_obj(&self.base.join(path)).map_err(Fail::at(Stage::Data))?;
                Ok((mesh, o.symmetry.unwrap_or(Symmetry::None)))
            }
            _ => unreachable!("checked on load"),
        }
    }

    pub fn model(&self) -> Result<ObjectModel, Fail> {
        let (mesh, sym) = self.mesh()?;
        ObjectModel::build(&mesh, sym, self.config.object.samples, self.config.object.seed).map_err(Fail::at(Stage::Data))
    }

    /// Writes the fully resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), Fail> {
        std::fs::create_dir_all(dir).map_err(|e| Fail::new(Stage::Data, format!("{}: {e}", dir.display())))?;
        let text = serde_json::to_string_pretty(&self.config).expect("config serializes") + "\n";
        let path = dir.join("config.resolved.json");
        std::fs::write(&path, text).map_err(|e| Fail::new(Stage::Data, format!("{}: {e}", path.display())))
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<(), Fail> {
        let bad = |msg: String| Err(Fail::new(Stage::Config, msg));
        let o = &self.object;
        match (&o.toy, &o.mesh) {
            (Some(_), Some(_)) => return bad("object: give either `toy` or `mesh`, not both".into()),
            (None, None) => return bad("object: one of `toy` or `mesh` is required".into()),
            (Some(_), None) if o.symmetry.is_some() => {
                return bad("object: toy objects define their own symmetry".into());
            }
            _ => {}
        }
        if self.train.input_size != self.depth_arch.input_size {
            return bad(format!(
                "train.input_size {} differs from depth_arch.input_size {}",
                self.train.input_size, self.depth_arch.input_size
            ));
        }
        if self.train.points != self.cloud_arch.points {
            return bad(format!(
                "train.points {} differs from cloud_arch.points {}",
                self.train.points, self.cloud_arch.points
            ));
        }
        if self.validation_per_class == 0 || self.dataset.per_class == 0 {
            return bad("dataset sizes must be positive".into());
        }
        let cfg = Fail::at(Stage::Config);
        self.camera.validate().map_err(&cfg)?;
        self.train.validate().map_err(&cfg)?;
        self.depth_arch.validate().map_err(&cfg)?;
        self.cloud_arch.validate().map_err(&cfg)?;
        self.dataset.noise.validate().map_err(&cfg)?;
        Ok(())
    }
}
