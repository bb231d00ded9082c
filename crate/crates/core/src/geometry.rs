//! Rigid poses, proper symmetry groups and the symmetry-aware pose distance.
//!
//! A pose is embedded as one or more representative vectors
//! `(t ‖ vec(R·Λ))`, where `Λ` is the symmetric square root of the model's
//! surface-point covariance. For a model whose surface samples are centered,
//! the Euclidean distance between two representatives equals the RMS
//! displacement of the surface samples between the two poses, so the
//! distance is a physical length in meters. Symmetric objects own one
//! representative per group element and the distance is the minimum over
//! pairs; objects of revolution use a closed-form minimization instead.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::TriangleMesh;
use crate::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Angular steps used when a continuous symmetry group has to be averaged.
pub const REVOLUTION_STEPS: usize = 64;

/// Surface samples of an object of revolution are replicated under this
/// cyclic subgroup. Any order ≥ 3 makes the second-moment tensor exactly
/// invariant under the full continuous group.
const REVOLUTION_REPLICAS: usize = 4;

/// Fraction of the model diameter below which a pose counts as correct.
pub const TP_THRESHOLD_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseJson", into = "PoseJson")]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    r: [f64; 9],
    t: [f64; 3],
}

impl TryFrom<PoseJson> for Pose {
    type Error = Error;

    fn try_from(j: PoseJson) -> Result<Self> {
        Pose::new(
            Matrix3::from_row_slice(&j.r),
            Vector3::new(j.t[0], j.t[1], j.t[2]),
        )
    }
}

impl From<Pose> for PoseJson {
    fn from(p: Pose) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = p.rotation[(i, j)];
            }
        }
        PoseJson {
            r,
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Pose {
    /// Validated constructor: `rotation` must be orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation is not a proper orthonormal matrix: {rotation:?}"
            )));
        }
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation_about(axis, angle),
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Pose with a uniformly distributed rotation and the given translation.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, translation: Vector3<f64>) -> Pose {
        Pose {
            rotation: random_rotation(rng),
            translation,
        }
    }
}

pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Uniform rotation via Shoemake's subgroup algorithm.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = nalgebra::Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Proper rotational symmetry group of an object, expressed in its model frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymmetryJson", into = "SymmetryJson")]
pub enum Symmetry {
    None,
    Cyclic { order: usize, axis: Vector3<f64> },
    Revolution { axis: Vector3<f64> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum SymmetryJson {
    None,
    Cyclic { order: usize, axis: [f64; 3] },
    Revolution { axis: [f64; 3] },
}

impl TryFrom<SymmetryJson> for Symmetry {
    type Error = Error;

    fn try_from(j: SymmetryJson) -> Result<Self> {
        let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
        match j {
            SymmetryJson::None => Ok(Symmetry::None),
            SymmetryJson::Cyclic { order, axis } => Symmetry::cyclic(order, v(axis)),
            SymmetryJson::Revolution { axis } => Symmetry::revolution(v(axis)),
        }
    }
}

impl From<Symmetry> for SymmetryJson {
    fn from(s: Symmetry) -> Self {
        let a = |v: Vector3<f64>| [v.x, v.y, v.z];
        match s {
            Symmetry::None => SymmetryJson::None,
            Symmetry::Cyclic { order, axis } => SymmetryJson::Cyclic {
                order,
                axis: a(axis),
            },
            Symmetry::Revolution { axis } => SymmetryJson::Revolution { axis: a(axis) },
        }
    }
}

fn check_axis(axis: &Vector3<f64>) -> Result<()> {
    if (axis.norm() - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::InvalidSymmetry(format!(
            "axis must be a unit vector, got norm {}",
            axis.norm()
        )));
    }
    Ok(())
}

impl Symmetry {
    pub fn cyclic(order: usize, axis: Vector3<f64>) -> Result<Self> {
        check_axis(&axis)?;
        if order < 2 {
            return Err(Error::InvalidSymmetry(format!(
                "cyclic order must be ≥ 2, got {order}"
            )));
        }
        Ok(Symmetry::Cyclic { order, axis })
    }

    pub fn revolution(axis: Vector3<f64>) -> Result<Self> {
        check_axis(&axis)?;
        Ok(Symmetry::Revolution { axis })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Symmetry::None => "none",
            Symmetry::Cyclic { .. } => "cyclic",
            Symmetry::Revolution { .. } => "revolution",
        }
    }

    pub fn axis(&self) -> Option<Vector3<f64>> {
        match *self {
            Symmetry::None => None,
            Symmetry::Cyclic { axis, .. } | Symmetry::Revolution { axis } => Some(axis),
        }
    }

    /// Group elements; a revolution group is discretized into
    /// [`REVOLUTION_STEPS`] rotations.
    pub fn elements(&self) -> Vec<Matrix3<f64>> {
        match *self {
            Symmetry::None => vec![Matrix3::identity()],
            Symmetry::Cyclic { order, axis } => cyclic_elements(order, &axis),
            Symmetry::Revolution { axis } => cyclic_elements(REVOLUTION_STEPS, &axis),
        }
    }

    fn replication_elements(&self) -> Vec<Matrix3<f64>> {
        match *self {
            Symmetry::Revolution { axis } => cyclic_elements(REVOLUTION_REPLICAS, &axis),
            _ => self.elements(),
        }
    }
}

fn cyclic_elements(order: usize, axis: &Vector3<f64>) -> Vec<Matrix3<f64>> {
    (0..order)
        .map(|j| {
            if j == 0 {
                Matrix3::identity()
            } else {
                rotation_about(axis, 2.0 * PI * j as f64 / order as f64)
            }
        })
        .collect()
}

/// A mesh in its centered model frame plus everything the distance needs.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    /// Mesh translated so that the surface-sample centroid is the origin.
    pub mesh: TriangleMesh,
    /// Centered surface samples, closed under the (replication) symmetry group.
    pub surface_samples: Vec<Vector3<f64>>,
    /// Offset subtracted from the input mesh coordinates.
    pub centroid: Vector3<f64>,
    pub radius: f64,
    pub diameter: f64,
    pub lambda: Matrix3<f64>,
    pub symmetry: Symmetry,
}

impl ObjectModel {
    /// Samples the surface and derives radius, diameter and `Λ`.
    ///
    /// Each base sample is replicated under the symmetry group (cyclic
    /// elements, or a 4-fold subgroup for revolution), so the sample
    /// covariance is exactly group-invariant; the total sample count is the
    /// requested count rounded up to a multiple of the replication order.
    pub fn build(mesh: &TriangleMesh, symmetry: Symmetry, n_samples: usize, seed: u64) -> Result<Self> {
        if n_samples < 100 {
            return Err(Error::DegenerateMesh(format!(
                "at least 100 surface samples required, got {n_samples}"
            )));
        }
        let area_centroid = mesh.surface_centroid()?;
        let centered = mesh.translated(&-area_centroid);

        let replicas = symmetry.replication_elements();
        let base = n_samples.div_ceil(replicas.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_samples = centered.sample_surface(base, &mut rng)?;
        let mut samples: Vec<Vector3<f64>> = replicas
            .iter()
            .flat_map(|m| base_samples.iter().map(move |x| m * x))
            .collect();

        let shift = samples.iter().sum::<Vector3<f64>>() / samples.len() as f64;
        for x in &mut samples {
            *x -= shift;
        }
        let mesh = centered.translated(&-shift);

        let radius = samples.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let diameter = max_pairwise_distance(&samples);

        let cov = samples.iter().map(|x| x * x.transpose()).sum::<Matrix3<f64>>() / samples.len() as f64;
        let lambda = symmetrize(&sqrt_psd(&cov), &symmetry);

        Ok(Self {
            mesh,
            surface_samples: samples,
            centroid: area_centroid + shift,
            radius,
            diameter,
            lambda,
            symmetry,
        })
    }

    /// `axisᵀ·Λ·axis` for objects of revolution, `None` otherwise.
    pub fn lambda_axis(&self) -> Option<f64> {
        match self.symmetry {
            Symmetry::Revolution { axis } => Some(axis.dot(&(self.lambda * axis))),
            _ => None,
        }
    }

    /// Eigenvalues of `Λ` in ascending order.
    pub fn lambda_eigenvalues(&self) -> [f64; 3] {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.lambda).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2]]
    }

    pub fn tp_threshold(&self) -> f64 {
        TP_THRESHOLD_FRACTION * self.diameter
    }
}

fn max_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

fn sqrt_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*m);
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
    let s = eig.eigenvectors * d * eig.eigenvectors.transpose();
    (s + s.transpose()) / 2.0
}

fn symmetrize(lambda: &Matrix3<f64>, symmetry: &Symmetry) -> Matrix3<f64> {
    let elements = symmetry.elements();
    let avg = elements
        .iter()
        .map(|m| m.transpose() * lambda * m)
        .sum::<Matrix3<f64>>()
        / elements.len() as f64;
    (avg + avg.transpose()) / 2.0
}

/// Euclidean embedding of one pose under one symmetry element.
#[derive(Debug, Clone, PartialEq)]
pub struct Representative(pub Vec<f64>);

impl Representative {
    pub fn distance(&self, other: &Representative) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn full_representative(t: &Vector3<f64>, r_lambda: &Matrix3<f64>) -> Representative {
    let mut v = Vec::with_capacity(12);
    v.extend_from_slice(t.as_slice());
    for i in 0..3 {
        for j in 0..3 {
            v.push(r_lambda[(i, j)]);
        }
    }
    Representative(v)
}

pub fn representatives(p: &Pose, model: &ObjectModel) -> Vec<Representative> {
    match model.symmetry {
        Symmetry::Revolution { axis } => {
            let lambda_axis = axis.dot(&(model.lambda * axis));
            let dir = lambda_axis * (p.rotation * axis);
            let mut v = Vec::with_capacity(6);
            v.extend_from_slice(p.translation.as_slice());
            v.extend_from_slice(dir.as_slice());
            vec![Representative(v)]
        }
        _ => model
            .symmetry
            .elements()
            .iter()
            .map(|m| full_representative(&p.translation, &(p.rotation * m * model.lambda)))
            .collect(),
    }
}

/// Frobenius part `‖R_a·Λ − R_b·M(φ)·Λ‖²` of the distance for an object of
/// revolution, as a function of the angle about the symmetry axis.
pub fn revolution_objective(a: &Pose, b: &Pose, model: &ObjectModel, phi: f64) -> f64 {
    let axis = model.symmetry.axis().unwrap_or_else(Vector3::z);
    let diff = a.rotation * model.lambda - b.rotation * rotation_about(&axis, phi) * model.lambda;
    diff.norm_squared()
}

/// Angle about the symmetry axis that minimizes [`revolution_objective`].
pub fn revolution_optimal_angle(a: &Pose, b: &Pose, model: &ObjectModel) -> f64 {
    let axis = model.symmetry.axis().unwrap_or_else(Vector3::z);
    let frame = axis_frame(&axis);
    let q = model.lambda * b.rotation.transpose() * a.rotation * model.lambda;
    let q = frame.transpose() * q * frame;
    let cos_coeff = q[(0, 0)] + q[(1, 1)];
    let sin_coeff = q[(1, 0)] - q[(0, 1)];
    sin_coeff.atan2(cos_coeff)
}

/// Orthonormal basis whose third column is `axis` (right-handed).
fn axis_frame(axis: &Vector3<f64>) -> Matrix3<f64> {
    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = helper.cross(axis).normalize();
    let e2 = axis.cross(&e1);
    Matrix3::from_columns(&[e1, e2, *axis])
}

/// Symmetry-aware distance between two poses of the same object, in meters.
pub fn pose_distance(a: &Pose, b: &Pose, model: &ObjectModel) -> f64 {
    match model.symmetry {
        Symmetry::Revolution { .. } => {
            let phi = revolution_optimal_angle(a, b, model);
            let frob = revolution_objective(a, b, model, phi).max(0.0);
            ((a.translation - b.translation).norm_squared() + frob).sqrt()
        }
        _ => {
            let ra = representatives(a, model);
            let rb = representatives(b, model);
            ra.iter()
                .flat_map(|x| rb.iter().map(move |y| x.distance(y)))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Valid,
    Invalid,
}

impl Label {
    pub fn is_valid(self) -> bool {
        self == Label::Valid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub model_id: String,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labeling {
    pub label: Label,
    pub distance: f64,
    pub matched_index: usize,
}

/// Labels a pose estimate against the scene's ground truth. The estimate is
/// valid iff its distance to the nearest instance is strictly below 10% of
/// the model diameter.
pub fn label_detection(theta_hat: &Pose, gts: &GroundTruthSet, model: &ObjectModel) -> Result<Labeling> {
    let (matched_index, distance) = gts
        .poses
        .iter()
        .enumerate()
        .map(|(i, gt)| (i, pose_distance(theta_hat, gt, model)))
        .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
        .ok_or(Error::EmptyGroundTruth)?;
    let label = if distance < model.tp_threshold() {
        Label::Valid
    } else {
        Label::Invalid
    };
    Ok(Labeling {
        label,
        distance,
        matched_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn cube_model(symmetry: Symmetry) -> ObjectModel {
        ObjectModel::build(&TriangleMesh::cuboid(Vector3::new(1.0, 1.0, 1.0)), symmetry, 4000, 7).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let t = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose::random(rng, t)
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = rng();
        for _ in 0..20 {
            let p = random_pose(&mut rng);
            assert_eq!(Pose::identity().compose(&p), p);
            let e = p.compose(&p.inverse());
            assert!((e.rotation - Matrix3::identity()).amax() < 1e-9);
            assert!(e.translation.amax() < 1e-9);
        }
    }

    #[test]
    fn compose_rotations_about_z() {
        let a = Pose::from_axis_angle(&Vector3::z(), PI / 6.0, Vector3::zeros());
        let b = Pose::from_axis_angle(&Vector3::z(), PI / 3.0, Vector3::zeros());
        let c = a.compose(&b);
        // Rz(90°) written out by hand.
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((c.rotation - expected).amax() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Pose::identity().inverse(), Pose::identity());
        let p = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p.inverse().translation, Vector3::new(-1.0, -2.0, -3.0));
        let mut rng = rng();
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let q = p.inverse().inverse();
            assert!((q.rotation - p.rotation).amax() < 1e-12);
            assert!((q.translation - p.translation).amax() < 1e-12);
        }
    }

    #[test]
    fn pose_validation_rejects_non_rotations() {
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn pose_json_round_trip() {
        let p = Pose::from_axis_angle(&Vector3::x(), 0.3, Vector3::new(0.1, 0.2, 2.0));
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with("{\"r\":["));
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert!((q.rotation - p.rotation).amax() < 1e-15);
        assert!(serde_json::from_str::<Pose>(r#"{"r":[2,0,0,0,1,0,0,0,1],"t":[0,0,0]}"#).is_err());
    }

    #[test]
    fn symmetry_json_and_validation() {
        let s: Symmetry = serde_json::from_str(r#"{"kind":"cyclic","order":4,"axis":[0,0,1]}"#).unwrap();
        assert_eq!(s, Symmetry::Cyclic { order: 4, axis: Vector3::z() });
        assert!(serde_json::from_str::<Symmetry>(r#"{"kind":"cyclic","order":1,"axis":[0,0,1]}"#).is_err());
        assert!(serde_json::from_str::<Symmetry>(r#"{"kind":"revolution","axis":[0,0,2]}"#).is_err());
        let none: Symmetry = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(none, Symmetry::None);
    }

    #[test]
    fn cube_model_quantities() {
        let m = ObjectModel::build(&TriangleMesh::cuboid(Vector3::new(1.0, 1.0, 1.0)), Symmetry::None, 10_000, 3).unwrap();
        let diag = 3f64.sqrt();
        assert!((m.diameter - diag).abs() / diag < 0.02, "{}", m.diameter);
        assert!(m.radius <= m.diameter && m.diameter <= 2.0 * m.radius);
        // Surface second moment per axis: (2·¼ + 4·1/12) / 6 = 5/36.
        let expected = 5f64.sqrt() / 6.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { expected } else { 0.0 };
                assert!((m.lambda[(i, j)] - target).abs() < 0.02 * expected, "{:?}", m.lambda);
            }
        }
        let c = m.surface_samples.iter().sum::<Vector3<f64>>() / m.surface_samples.len() as f64;
        assert!(c.norm() < 1e-12);
    }

    #[test]
    fn build_rejects_too_few_samples() {
        let cube = TriangleMesh::cuboid(Vector3::new(1.0, 1.0, 1.0));
        assert!(ObjectModel::build(&cube, Symmetry::None, 10, 0).is_err());
    }

    #[test]
    fn representative_counts() {
        let m = cube_model(Symmetry::cyclic(4, Vector3::z()).unwrap());
        let reps = representatives(&Pose::identity(), &m);
        assert_eq!(reps.len(), 4);
        let mut expected = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                expected.push(m.lambda[(i, j)]);
            }
        }
        assert_eq!(reps[0].0, expected);
        assert_eq!(representatives(&Pose::identity(), &cube_model(Symmetry::None)).len(), 1);
    }

    #[test]
    fn revolution_representative_ignores_spin() {
        let m = cube_model(Symmetry::revolution(Vector3::z()).unwrap());
        let base = representatives(&Pose::identity(), &m);
        assert_eq!(base.len(), 1);
        assert_eq!(base[0].0.len(), 6);
        let spun = Pose::from_axis_angle(&Vector3::z(), 1.234, Vector3::zeros());
        assert!(base[0].distance(&representatives(&spun, &m)[0]) < 1e-12);
    }

    #[test]
    fn cyclic_two_half_turn_has_same_representative_set() {
        let m = cube_model(Symmetry::cyclic(2, Vector3::z()).unwrap());
        let a = representatives(&Pose::identity(), &m);
        let b = representatives(&Pose::from_axis_angle(&Vector3::z(), PI, Vector3::zeros()), &m);
        for ra in &a {
            assert!(b.iter().any(|rb| ra.distance(rb) < 1e-12));
        }
    }

    #[test]
    fn distance_basic_properties() {
        let m = cube_model(Symmetry::None);
        let mut rng = rng();
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            assert!(pose_distance(&p, &p, &m) < 1e-12);
        }
        let a = Pose::identity();
        let b = Pose::from_translation(Vector3::new(0.3, 0.0, 0.0));
        assert!(close(pose_distance(&a, &b, &m), 0.3, 1e-12));
    }

    #[test]
    fn revolution_closed_form_beats_grid() {
        let m = cube_model(Symmetry::revolution(Vector3::new(0.0, 0.6, 0.8)).unwrap());
        let mut rng = rng();
        for _ in 0..20 {
            let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
            let best = revolution_objective(&a, &b, &m, revolution_optimal_angle(&a, &b, &m));
            for k in 0..720 {
                let phi = 2.0 * PI * k as f64 / 720.0;
                assert!(best <= revolution_objective(&a, &b, &m, phi) + 1e-12);
            }
        }
    }

    #[test]
    fn labeling_threshold_is_strict_and_ties_pick_first() {
        let m = cube_model(Symmetry::None);
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 3.0));
        let gts = GroundTruthSet {
            model_id: "cube".into(),
            poses: vec![gt, gt],
        };
        let exact = label_detection(&gt, &gts, &m).unwrap();
        assert_eq!((exact.label, exact.matched_index), (Label::Valid, 0));
        assert_eq!(exact.distance, 0.0);

        let shifted = Pose::from_translation(gt.translation + Vector3::new(m.tp_threshold(), 0.0, 0.0));
        assert_eq!(label_detection(&shifted, &gts, &m).unwrap().label, Label::Invalid);

        let empty = GroundTruthSet {
            model_id: "cube".into(),
            poses: vec![],
        };
        assert!(matches!(label_detection(&gt, &empty, &m), Err(Error::EmptyGroundTruth)));
    }
}
