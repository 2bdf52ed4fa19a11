//! Points, correspondences, rigid transforms and closed-form rigid alignment.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::svd3;

pub type Vec3 = Vector3<f64>;

/// Ordered list of finite 3D points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidScene(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Vec3;

    fn index(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }
}

/// A putative match between a source point `x` and a target point `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x: Vec3,
    pub y: Vec3,
}

impl Correspondence {
    pub fn new(x: Vec3, y: Vec3) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    /// The six coordinates `(x, y)`.
    pub fn as_array(&self) -> [f64; 6] {
        [self.x[0], self.x[1], self.x[2], self.y[0], self.y[1], self.y[2]]
    }
}

/// A proper rigid motion `p -> R p + t`. Serialized as a [`TransformRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRecord", try_from = "TransformRecord")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

pub const ROTATION_TOL: f64 = 1e-9;

impl RigidTransform {
    /// Validates orthonormality and `det = +1` within `ROTATION_TOL`.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOL)
    }

    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vec3, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidScene("transform has non-finite entries".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidScene(format!(
                "not a rotation: |R^T R - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// `R = Rz(c) * Ry(b) * Rx(a)` with angles in degrees.
    pub fn from_euler_deg(a: f64, b: f64, c: f64, translation: Vec3) -> Self {
        let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), a.to_radians());
        let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), b.to_radians());
        let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), c.to_radians());
        Self { rotation: (rz * ry * rx).into_inner(), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Mean squared residual `‖y − R x − t‖²` over `pairs`.
    pub fn mean_sq_residual(&self, pairs: &[Correspondence]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        pairs.iter().map(|c| (c.y - self.apply(&c.x)).norm_squared()).sum::<f64>() / pairs.len() as f64
    }

    pub fn residual(&self, c: &Correspondence) -> f64 {
        (c.y - self.apply(&c.x)).norm()
    }
}

/// Second singular value below this fraction of the first means the
/// centered source set is (numerically) collinear.
pub const DEGENERACY_RATIO: f64 = 1e-9;

/// Least-squares rigid alignment of `pairs` (x -> y).
///
/// Centers both sides, takes the SVD of the cross-covariance and corrects
/// a reflection by flipping the axis of the smallest singular value.
pub fn kabsch(pairs: &[Correspondence]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!("{} pairs, need at least 3", pairs.len())));
    }
    let n = pairs.len() as f64;
    let cx = pairs.iter().map(|c| c.x).sum::<Vec3>() / n;
    let cy = pairs.iter().map(|c| c.y).sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for c in pairs {
        h += (c.x - cx) * (c.y - cy).transpose();
    }
    let svd = svd3(&h);
    if svd.sigma[0] == 0.0 || svd.sigma[1] < DEGENERACY_RATIO * svd.sigma[0] {
        return Err(Error::DegenerateConfiguration("cross-covariance rank < 2".into()));
    }
    let d = (svd.v * svd.u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = svd.v * correction * svd.u.transpose();
    let translation = cy - rotation * cx;
    Ok(RigidTransform { rotation, translation })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    /// Row-major rotation.
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        let r = t.rotation();
        let mut rows = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rows[3 * i + j] = r[(i, j)];
            }
        }
        let tr = t.translation();
        TransformRecord { r: rows, t: [tr[0], tr[1], tr[2]] }
    }
}

impl TryFrom<&TransformRecord> for RigidTransform {
    type Error = Error;

    fn try_from(rec: &TransformRecord) -> Result<Self> {
        RigidTransform::new(Matrix3::from_row_slice(&rec.r), Vec3::from_row_slice(&rec.t))
    }
}

impl From<RigidTransform> for TransformRecord {
    fn from(t: RigidTransform) -> Self {
        (&t).into()
    }
}

impl TryFrom<TransformRecord> for RigidTransform {
    type Error = Error;

    /// Accepts rotations orthonormal to 1e-6, enough for values printed to
    /// limited precision by other tools.
    fn try_from(rec: TransformRecord) -> Result<Self> {
        RigidTransform::with_tolerance(Matrix3::from_row_slice(&rec.r), Vec3::from_row_slice(&rec.t), 1e-6)
    }
}

/// Generator settings echoed into each scene file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub noise_sigma: f64,
    pub inlier_ratio: f64,
    /// Upper bound on `‖y − R x − t‖` for every labeled inlier.
    #[serde(default)]
    pub jitter_bound: f64,
    #[serde(default)]
    pub hard_outlier_fraction: f64,
    #[serde(default)]
    pub partial: bool,
}

/// A source/target pair with putative correspondences and, for generated
/// scenes, ground truth. Label 0 is an outlier; label `m >= 1` is an inlier
/// of `gt_transforms[m - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub source: PointCloud,
    pub target: PointCloud,
    pub correspondences: Vec<Correspondence>,
    pub gt_labels: Vec<u32>,
    pub gt_transforms: Vec<RigidTransform>,
    pub meta: SceneMeta,
}

#[derive(Serialize, Deserialize)]
struct CorrRecord {
    x: [f64; 3],
    y: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    source: Vec<[f64; 3]>,
    target: Vec<[f64; 3]>,
    correspondences: Vec<CorrRecord>,
    #[serde(default)]
    gt_labels: Vec<u32>,
    #[serde(default)]
    gt_transforms: Vec<TransformRecord>,
    #[serde(default)]
    meta: SceneMeta,
}

fn to_arr(v: &Vec3) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

fn from_arr(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl LabeledScene {
    /// A scene carrying only correspondences (no clouds, no ground truth).
    pub fn unlabeled(correspondences: Vec<Correspondence>) -> Result<Self> {
        let scene = Self {
            source: PointCloud::default(),
            target: PointCloud::default(),
            correspondences,
            gt_labels: Vec::new(),
            gt_transforms: Vec::new(),
            meta: SceneMeta::default(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn is_labeled(&self) -> bool {
        !self.gt_labels.is_empty()
    }

    pub fn num_instances(&self) -> usize {
        self.gt_transforms.len()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.correspondences.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidScene(format!("correspondence {i} is not finite")));
        }
        if self.gt_labels.is_empty() {
            return Ok(());
        }
        if self.gt_labels.len() != self.correspondences.len() {
            return Err(Error::InvalidScene(format!(
                "{} labels for {} correspondences",
                self.gt_labels.len(),
                self.correspondences.len()
            )));
        }
        let m = self.gt_transforms.len() as u32;
        for (i, (&label, c)) in self.gt_labels.iter().zip(&self.correspondences).enumerate() {
            if label > m {
                return Err(Error::InvalidScene(format!("label {label} at {i} exceeds {m} instances")));
            }
            if label >= 1 && self.meta.jitter_bound > 0.0 {
                let r = self.gt_transforms[label as usize - 1].residual(c);
                if r > self.meta.jitter_bound * (1.0 + 1e-9) {
                    return Err(Error::InvalidScene(format!(
                        "inlier {i} has residual {r} above bound {}",
                        self.meta.jitter_bound
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SceneFile {
            source: self.source.points().iter().map(to_arr).collect(),
            target: self.target.points().iter().map(to_arr).collect(),
            correspondences: self
                .correspondences
                .iter()
                .map(|c| CorrRecord { x: to_arr(&c.x), y: to_arr(&c.y) })
                .collect(),
            gt_labels: self.gt_labels.clone(),
            gt_transforms: self.gt_transforms.iter().map(TransformRecord::from).collect(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(s)?;
        let scene = Self {
            source: PointCloud::new(file.source.iter().map(from_arr).collect())?,
            target: PointCloud::new(file.target.iter().map(from_arr).collect())?,
            correspondences: file
                .correspondences
                .iter()
                .map(|c| Correspondence::new(from_arr(&c.x), from_arr(&c.y)))
                .collect(),
            gt_labels: file.gt_labels,
            gt_transforms: file
                .gt_transforms
                .iter()
                .map(|r| RigidTransform::with_tolerance(Matrix3::from_row_slice(&r.r), from_arr(&r.t), 1e-6))
                .collect::<Result<_>>()?,
            meta: file.meta,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
