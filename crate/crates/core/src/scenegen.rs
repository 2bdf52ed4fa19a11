//! Seeded synthetic multi-instance scenes.
//!
//! A procedural source object (2–4 boxes, spheres or planes, scaled to unit
//! diameter) is copied into the target under 5–10 independent rigid motions
//! and mixed with uniform noise points. Each instance contributes
//! `round(N * inlier_ratio)` jittered true correspondences; the rest of the
//! `N` correspondences are outliers, uniform in the target volume or, for
//! the `hard_outlier_fraction` share, placed right on an instance surface
//! but paired with the wrong source point.

use nalgebra::Matrix3;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Correspondence, LabeledScene, PointCloud, RigidTransform, SceneMeta, Vec3};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub source_points: usize,
    pub instances_min: usize,
    pub instances_max: usize,
    /// Per-axis Euler angles are drawn uniformly from `[0, rotation_range_deg]`.
    pub rotation_range_deg: f64,
    /// Per-axis translation is drawn uniformly from `[0, translation_range]`.
    pub translation_range: f64,
    pub noise_points: usize,
    pub inlier_ratio_per_instance: f64,
    pub inlier_jitter_sigma: f64,
    pub num_correspondences: usize,
    pub hard_outlier_fraction: f64,
    /// Crop every instance copy by a random half-space through the source centroid.
    pub partial: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            source_points: 256,
            instances_min: 5,
            instances_max: 10,
            rotation_range_deg: 180.0,
            translation_range: 5.0,
            noise_points: 512,
            inlier_ratio_per_instance: 0.02,
            inlier_jitter_sigma: 0.005,
            num_correspondences: 1000,
            hard_outlier_fraction: 0.0,
            partial: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("gen: {msg}")));
        if !(self.inlier_ratio_per_instance > 0.0 && self.inlier_ratio_per_instance <= 1.0) {
            return bad("inlier_ratio_per_instance must be in (0, 1]");
        }
        if self.instances_min < 1 || self.instances_min > self.instances_max {
            return bad("need 1 <= instances_min <= instances_max");
        }
        if self.source_points < 3 || self.noise_points < 1 || self.num_correspondences < 1 {
            return bad("counts must be >= 1 (source_points >= 3)");
        }
        if !(0.0..=1.0).contains(&self.hard_outlier_fraction) {
            return bad("hard_outlier_fraction must be in [0, 1]");
        }
        if !(self.inlier_jitter_sigma >= 0.0 && self.rotation_range_deg >= 0.0 && self.translation_range >= 0.0) {
            return bad("jitter, rotation and translation ranges must be non-negative");
        }
        Ok(())
    }

    pub fn inliers_per_instance(&self) -> usize {
        (self.num_correspondences as f64 * self.inlier_ratio_per_instance).round() as usize
    }

    /// Seed of the `index`-th scene of a batch generated from this config.
    pub fn scene_seed(&self, index: u64) -> u64 {
        seed::child(self.seed, index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Primitive {
    Box,
    Sphere,
    Plane,
}

fn random_rotation(rng: &mut ChaCha8Rng, range_deg: f64) -> Matrix3<f64> {
    let mut angle = || if range_deg > 0.0 { rng.random_range(0.0..=range_deg) } else { 0.0 };
    let (a, b, c) = (angle(), angle(), angle());
    *RigidTransform::from_euler_deg(a, b, c, Vec3::zeros()).rotation()
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn sample_primitive(kind: Primitive, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let center = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let orient = random_rotation(rng, 360.0);
    let size = rng.random_range(0.2..0.6);
    let local: Vec<Vec3> = match kind {
        Primitive::Sphere => (0..count).map(|_| unit_vector(rng) * (size / 2.0)).collect(),
        Primitive::Plane => {
            let (w, h) = (size, size * rng.random_range(0.4..1.0));
            (0..count)
                .map(|_| Vec3::new(rng.random_range(-w / 2.0..w / 2.0), rng.random_range(-h / 2.0..h / 2.0), 0.0))
                .collect()
        }
        Primitive::Box => {
            let ext = Vec3::new(size, size * rng.random_range(0.3..1.0), size * rng.random_range(0.3..1.0)) / 2.0;
            // face areas for the three axis pairs
            let areas = [ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]];
            let total: f64 = areas.iter().sum();
            (0..count)
                .map(|_| {
                    let mut pick = rng.random_range(0.0..total);
                    let mut axis = 0;
                    while axis < 2 && pick >= areas[axis] {
                        pick -= areas[axis];
                        axis += 1;
                    }
                    let mut p = Vec3::new(
                        rng.random_range(-ext[0]..ext[0]),
                        rng.random_range(-ext[1]..ext[1]),
                        rng.random_range(-ext[2]..ext[2]),
                    );
                    p[axis] = if rng.random_bool(0.5) { ext[axis] } else { -ext[axis] };
                    p
                })
                .collect()
        }
    };
    local.into_iter().map(|p| orient * p + center).collect()
}

/// Procedural source object, centered and scaled to unit diameter.
fn generate_source(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let n_prims = rng.random_range(2..=4usize);
    let kinds = [Primitive::Box, Primitive::Sphere, Primitive::Plane];
    let mut prims: Vec<Primitive> = (0..n_prims).map(|_| kinds[rng.random_range(0..3)]).collect();
    if prims.iter().all(|&p| p == Primitive::Sphere) {
        prims[0] = Primitive::Box;
    }
    let mut points = Vec::with_capacity(n);
    for (i, &kind) in prims.iter().enumerate() {
        let count = n / n_prims + usize::from(i < n % n_prims);
        points.extend(sample_primitive(kind, count, rng));
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    for p in points.iter_mut() {
        *p -= centroid;
    }
    let mut diameter: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            diameter = diameter.max((points[i] - points[j]).norm_squared());
        }
    }
    let scale = 1.0 / diameter.sqrt().max(1e-12);
    points.iter_mut().for_each(|p| *p *= scale);
    points
}

/// Gaussian jitter with its norm truncated at `4 * sigma` by rejection.
fn jitter(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::zeros();
    }
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ) * sigma;
        if v.norm() <= 4.0 * sigma {
            return v;
        }
    }
}

fn sample_distinct(rng: &mut ChaCha8Rng, pool: &[usize], k: usize) -> Vec<usize> {
    if k <= pool.len() {
        index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

pub fn generate_scene(cfg: &GenConfig) -> Result<LabeledScene> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let source = generate_source(cfg.source_points, &mut rng);

    let m = rng.random_range(cfg.instances_min..=cfg.instances_max);
    let per_instance = cfg.inliers_per_instance();
    let n = cfg.num_correspondences;
    if m * per_instance > n {
        return Err(Error::InfeasibleConfig(format!(
            "{m} instances x {per_instance} inliers exceeds {n} correspondences"
        )));
    }

    let mut transforms = Vec::with_capacity(m);
    let mut visible: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut target = Vec::new();
    for _ in 0..m {
        let r = random_rotation(&mut rng, cfg.rotation_range_deg);
        let mut t = || if cfg.translation_range > 0.0 { rng.random_range(0.0..=cfg.translation_range) } else { 0.0 };
        let t = Vec3::new(t(), t(), t());
        let tr = RigidTransform::from_parts_unchecked(r, t);
        let keep: Vec<usize> = if cfg.partial {
            let dir = unit_vector(&mut rng);
            let kept: Vec<usize> = (0..source.len()).filter(|&i| source[i].dot(&dir) <= 0.0).collect();
            if kept.len() >= 3 { kept } else { (0..source.len()).collect() }
        } else {
            (0..source.len()).collect()
        };
        target.extend(keep.iter().map(|&i| tr.apply(&source[i])));
        transforms.push(tr);
        visible.push(keep);
    }

    let (lo, hi) = target.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let uniform_in_box = |rng: &mut ChaCha8Rng| {
        Vec3::from_fn(|k, _| if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] })
    };
    for _ in 0..cfg.noise_points {
        let p = uniform_in_box(&mut rng);
        target.push(p);
    }

    let sigma = cfg.inlier_jitter_sigma;
    let mut labeled: Vec<(Correspondence, u32)> = Vec::with_capacity(n);
    for (k, (tr, keep)) in transforms.iter().zip(&visible).enumerate() {
        for i in sample_distinct(&mut rng, keep, per_instance) {
            let x = source[i];
            let y = tr.apply(&x) + jitter(&mut rng, sigma);
            labeled.push((Correspondence::new(x, y), k as u32 + 1));
        }
    }

    let n_out = n - labeled.len();
    let n_hard = (cfg.hard_outlier_fraction * n_out as f64).round() as usize;
    let min_sep = (10.0 * sigma).max(1e-6);
    for o in 0..n_out {
        let x = source[rng.random_range(0..source.len())];
        let y = if o < n_hard {
            let inst = rng.random_range(0..m);
            let candidates: Vec<usize> =
                visible[inst].iter().copied().filter(|&j| (source[j] - x).norm() > min_sep).collect();
            if candidates.is_empty() {
                uniform_in_box(&mut rng)
            } else {
                let other = source[candidates[rng.random_range(0..candidates.len())]];
                let offset = unit_vector(&mut rng) * rng.random_range(0.0..=2.0 * sigma);
                transforms[inst].apply(&other) + offset
            }
        } else {
            uniform_in_box(&mut rng)
        };
        labeled.push((Correspondence::new(x, y), 0));
    }
    labeled.shuffle(&mut rng);

    let scene = LabeledScene {
        source: PointCloud::new(source)?,
        target: PointCloud::new(target)?,
        correspondences: labeled.iter().map(|(c, _)| *c).collect(),
        gt_labels: labeled.iter().map(|(_, l)| *l).collect(),
        gt_transforms: transforms,
        meta: SceneMeta {
            seed: cfg.seed,
            noise_sigma: sigma,
            inlier_ratio: cfg.inlier_ratio_per_instance,
            jitter_bound: 4.0 * sigma,
            hard_outlier_fraction: cfg.hard_outlier_fraction,
            partial: cfg.partial,
        },
    };
    scene.validate()?;
    Ok(scene)
}

/// Scene `index` of the batch rooted at `cfg.seed`.
pub fn scene_at(cfg: &GenConfig, index: u64) -> Result<LabeledScene> {
    generate_scene(&GenConfig { seed: cfg.scene_seed(index), ..cfg.clone() })
}

/// Scenes `0..count` of the batch rooted at `cfg.seed`, generated in parallel.
pub fn generate_batch(cfg: &GenConfig, count: usize) -> Result<Vec<LabeledScene>> {
    (0..count as u64).into_par_iter().map(|i| scene_at(cfg, i)).collect()
}

/// Counts of per-instance inlier fractions, bucketed by `bin_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `(bucket index, count)` ascending; bucket `b` covers `[b*w, (b+1)*w)`.
    pub bins: Vec<(u64, usize)>,
}

impl Histogram {
    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.1).sum()
    }

    /// Center of the most populated bucket (lowest on ties).
    pub fn mode(&self) -> Option<f64> {
        let mut best: Option<(u64, usize)> = None;
        for &(b, c) in &self.bins {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((b, c));
            }
        }
        best.map(|(b, _)| (b as f64 + 0.5) * self.bin_width)
    }
}

pub fn inlier_ratio_histogram(scenes: &[LabeledScene], bin_width: f64) -> Histogram {
    let mut counts = std::collections::BTreeMap::new();
    for scene in scenes {
        let n = scene.correspondences.len();
        if n == 0 {
            continue;
        }
        for m in 1..=scene.num_instances() as u32 {
            let k = scene.gt_labels.iter().filter(|&&l| l == m).count();
            let frac = k as f64 / n as f64;
            let bucket = (frac / bin_width + 1e-9).floor() as u64;
            *counts.entry(bucket).or_insert(0) += 1;
        }
    }
    Histogram { bin_width, bins: counts.into_iter().collect() }
}
