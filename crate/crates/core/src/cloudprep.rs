//! Point-cloud stream inputs: the canonical model cloud and the scene cloud
//! cropped and mapped into the hypothesis frame.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{ObjectModel, Pose};
use crate::rasterizer::ROI_RADIUS_FACTOR;
use crate::{Error, Result};

/// Crops with fewer points than this are not fed to the network.
pub const MIN_SUPPORT: usize = 16;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
        }
    }

    /// One `x y z` triple per line.
    pub fn to_xyz(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 32);
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
        }
        out
    }

    pub fn parse_xyz(text: &str, origin: &Path) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .ok()
                .filter(|c: &Vec<f64>| c.len() == 3 && c.iter().all(|x| x.is_finite()))
                .ok_or_else(|| Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("expected three finite numbers, got `{line}`"),
                })?;
            points.push(Vector3::new(coords[0], coords[1], coords[2]));
        }
        Ok(Self { points })
    }

    pub fn write_xyz(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_xyz())?;
        Ok(())
    }

    pub fn read_xyz(path: &Path) -> Result<Self> {
        Self::parse_xyz(&std::fs::read_to_string(path)?, path)
    }
}

/// `n` area-weighted samples of the model surface in its centered frame.
pub fn model_cloud(model: &ObjectModel, n: usize, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PointCloud {
        points: model.mesh.sample_surface(n, &mut rng)?,
    })
}

/// Maps scene points into the hypothesis frame, `q = Rᵀ(x − t)`, and keeps
/// those inside the ball of radius 1.2·model radius.
pub fn crop_canonicalize(scene: &PointCloud, theta_hat: &Pose, model: &ObjectModel) -> PointCloud {
    crop_canonicalize_with(scene, theta_hat, ROI_RADIUS_FACTOR * model.radius)
}

pub fn crop_canonicalize_with(scene: &PointCloud, theta_hat: &Pose, ball_radius: f64) -> PointCloud {
    let inv = theta_hat.inverse();
    let r2 = ball_radius * ball_radius;
    PointCloud {
        points: scene
            .points
            .iter()
            .map(|x| inv.transform_point(x))
            .filter(|q| q.norm_squared() <= r2)
            .collect(),
    }
}

/// Fixed-size resampling: without replacement when the cloud is large
/// enough, with replacement otherwise.
pub fn resample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::InsufficientSupport(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cloud.len();
    let points = if len >= n {
        index::sample(&mut rng, len, n)
            .into_iter()
            .map(|i| cloud.points[i])
            .collect()
    } else {
        (0..n).map(|_| cloud.points[rng.random_range(0..len)]).collect()
    };
    Ok(PointCloud { points })
}

pub fn shuffle_points(cloud: &PointCloud, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = cloud.points.clone();
    points.shuffle(&mut rng);
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Symmetry;
    use crate::mesh::TriangleMesh;

    fn cube() -> ObjectModel {
        ObjectModel::build(&TriangleMesh::cuboid(Vector3::new(1.0, 1.0, 1.0)), Symmetry::None, 1000, 5).unwrap()
    }

    fn line_cloud(n: usize) -> PointCloud {
        PointCloud {
            points: (0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
        }
    }

    fn sorted_keys(c: &PointCloud) -> Vec<i64> {
        let mut k: Vec<i64> = c.points.iter().map(|p| p.x as i64).collect();
        k.sort();
        k
    }

    #[test]
    fn model_cloud_is_on_surface_and_deterministic() {
        let m = cube();
        let a = model_cloud(&m, 1024, 9).unwrap();
        assert_eq!(a, model_cloud(&m, 1024, 9).unwrap());
        for p in &a.points {
            assert!(((p + m.centroid).amax() - 0.5).abs() < 1e-9, "{p:?} not on the cube surface");
        }
        let single = model_cloud(&m, 1, 9).unwrap();
        assert_eq!(single.len(), 1);
        assert!(((single.points[0] + m.centroid).amax() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn crop_inverts_the_hypothesis_exactly() {
        let m = cube();
        let model = model_cloud(&m, 512, 1).unwrap();
        let pose = Pose::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(0.4, -0.2, 3.0));
        let back = crop_canonicalize(&model.transformed(&pose), &pose, &m);
        assert_eq!(back.len(), model.len());
        for (a, b) in back.points.iter().zip(&model.points) {
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn crop_discards_far_points() {
        let m = cube();
        let far = PointCloud {
            points: vec![Vector3::new(0.0, 0.0, 10.0); 5],
        };
        assert!(crop_canonicalize(&far, &Pose::identity(), &m).is_empty());
    }

    #[test]
    fn crop_separates_instances() {
        let m = cube();
        let model = model_cloud(&m, 300, 2).unwrap();
        let a = Pose::from_translation(Vector3::new(0.0, 0.0, 3.0));
        let b = Pose::from_translation(Vector3::new(4.0 * m.radius, 0.0, 3.0));
        let mut scene = model.transformed(&a);
        scene.points.extend(model.transformed(&b).points);
        let crop = crop_canonicalize(&scene, &a, &m);
        assert_eq!(crop.len(), model.len());
        for (p, q) in crop.points.iter().zip(&model.points) {
            assert!((p - q).amax() < 1e-12);
        }
    }

    #[test]
    fn resample_cases() {
        let c = line_cloud(8);
        let same = resample(&c, 8, 3).unwrap();
        assert_eq!(sorted_keys(&same), (0..8).collect::<Vec<_>>());

        let small = line_cloud(3);
        let up = resample(&small, 6, 3).unwrap();
        assert_eq!(up.len(), 6);
        assert!(up.points.iter().all(|p| small.points.contains(p)));

        let big = line_cloud(2048);
        let down = resample(&big, 1024, 11).unwrap();
        assert_eq!(down, resample(&big, 1024, 11).unwrap());
        let mut keys = sorted_keys(&down);
        keys.dedup();
        assert_eq!(keys.len(), 1024);

        assert!(matches!(resample(&PointCloud::default(), 4, 0), Err(Error::InsufficientSupport(0))));
    }

    #[test]
    fn shuffle_cases() {
        let one = line_cloud(1);
        assert_eq!(shuffle_points(&one, 5), one);
        let c = line_cloud(1024);
        let s = shuffle_points(&c, 5);
        assert_eq!(sorted_keys(&s), sorted_keys(&c));
        assert_ne!(s, shuffle_points(&c, 6));
    }

    #[test]
    fn xyz_round_trip_skips_comments() {
        let text = "# header\n1 2 3\n\n4.5 -6 7e-1\n";
        let c = PointCloud::parse_xyz(text, Path::new("c.xyz")).unwrap();
        assert_eq!(c.points[1], Vector3::new(4.5, -6.0, 0.7));
        assert_eq!(PointCloud::parse_xyz(&c.to_xyz(), Path::new("c.xyz")).unwrap(), c);
        let err = PointCloud::parse_xyz("1 2\n", Path::new("c.xyz")).unwrap_err();
        assert!(err.to_string().contains("c.xyz:1"));
    }
}
