//! Per-cluster RANSAC and the end-to-end registration pipeline.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{spectral_cluster, ClusterConfig};
use crate::consistency::ConsistencyConfig;
use crate::error::{Error, Result};
use crate::featnet::{embed, NetParams};
use crate::geom::{kabsch, Correspondence, LabeledScene, RigidTransform};
use crate::prune::{prune, PruneConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub refit: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 50, inlier_threshold: 0.015, refit: true }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidConfig("ransac: need iterations >= 1 and inlier_threshold > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub transform: RigidTransform,
    /// Ascending indices of the consensus set.
    pub inliers: Vec<usize>,
}

/// Three-point RANSAC with a Kabsch solver; the first model reaching the
/// largest consensus wins, optionally refit on its consensus set.
pub fn ransac_fit(corrs: &[Correspondence], cfg: &RansacConfig, seed: u64) -> Result<RansacFit> {
    if corrs.len() < 3 {
        return Err(Error::TooFewPoints(corrs.len()));
    }
    let mut rng = seed::rng(seed);
    let mut best: Option<(RigidTransform, Vec<usize>)> = None;
    for _ in 0..cfg.iterations {
        let sample = index::sample(&mut rng, corrs.len(), 3);
        let triple: Vec<Correspondence> = sample.iter().map(|i| corrs[i]).collect();
        let Ok(model) = kabsch(&triple) else { continue };
        let inliers: Vec<usize> = (0..corrs.len()).filter(|&i| model.residual(&corrs[i]) <= cfg.inlier_threshold).collect();
        if best.as_ref().is_none_or(|(_, b)| inliers.len() > b.len()) {
            best = Some((model, inliers));
        }
    }
    let (mut transform, mut inliers) = best.ok_or(Error::NoValidModel)?;
    if cfg.refit && inliers.len() >= 3 {
        let set: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
        if let Ok(refined) = kabsch(&set) {
            transform = refined;
            inliers = (0..corrs.len()).filter(|&i| transform.residual(&corrs[i]) <= cfg.inlier_threshold).collect();
        }
    }
    Ok(RansacFit { transform, inliers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Deep,
    Beta,
    Oracle,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deep" => Ok(Mode::Deep),
            "beta" => Ok(Mode::Beta),
            "oracle" => Ok(Mode::Oracle),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Deep => "deep",
            Mode::Beta => "beta",
            Mode::Oracle => "oracle",
        })
    }
}

/// Where the per-correspondence embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    Deep(&'a NetParams),
    /// Spatial consistency only.
    Beta,
    /// Ground-truth labels: same-instance inliers have similarity 1, every
    /// other pair 0 (each outlier is its own class).
    Oracle,
    /// Unit-norm rows supplied by the caller, one per correspondence after downsampling.
    Given(&'a Array2<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Inputs with more correspondences are uniformly downsampled to this size.
    pub num_correspondences: usize,
    pub consistency: ConsistencyConfig,
    pub prune: PruneConfig,
    pub cluster: ClusterConfig,
    pub ransac: RansacConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_correspondences: 1000,
            consistency: ConsistencyConfig::default(),
            prune: PruneConfig::default(),
            cluster: ClusterConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_correspondences < 1 {
            return Err(Error::InvalidConfig("pipeline: num_correspondences must be >= 1".into()));
        }
        self.consistency.validate()?;
        self.prune.validate()?;
        self.cluster.validate()?;
        self.ransac.validate()
    }
}

/// Milliseconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub spatial_ms: f64,
    pub features_ms: f64,
    pub similarity_ms: f64,
    pub prune_ms: f64,
    pub cluster_ms: f64,
    pub ransac_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transforms: Vec<RigidTransform>,
    /// Per input correspondence: 1-based index into `transforms`, 0 when
    /// pruned, unassigned or dropped by downsampling.
    pub cluster_assignment: Vec<u32>,
    pub num_retained: usize,
    pub m_selected: usize,
    pub eigenvalues: Vec<f64>,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Seeded uniform subset of `0..n` of size `k`, ascending.
pub fn downsample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut idx = index::sample(&mut seed::rng(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Gram matrix of one-hot label features where each outlier has a
/// dimension of its own.
pub fn oracle_similarity(labels: &[u32]) -> Array2<f64> {
    let n = labels.len();
    Array2::from_shape_fn((n, n), |(i, j)| if i == j || (labels[i] > 0 && labels[i] == labels[j]) { 1.0 } else { 0.0 })
}

pub fn run_pipeline(scene: &LabeledScene, source: FeatureSource<'_>, cfg: &PipelineConfig, seed: u64) -> Result<RegistrationResult> {
    cfg.validate()?;
    let start = Instant::now();
    let n_in = scene.correspondences.len();
    if n_in == 0 {
        return Err(Error::TooFewPoints(0));
    }
    let keep = downsample_indices(n_in, cfg.num_correspondences, seed::stream(seed, "downsample"));
    let corrs: Vec<Correspondence> = keep.iter().map(|&i| scene.correspondences[i]).collect();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let beta = crate::consistency::spatial_consistency(&corrs, cfg.consistency.sigma_d);
    timings.spatial_ms = ms(t);

    let t = Instant::now();
    let s_f = match source {
        FeatureSource::Deep(params) => crate::consistency::feature_similarity(embed(params, &corrs, &beta)?.view())?,
        FeatureSource::Beta => Array2::ones(beta.dim()),
        FeatureSource::Oracle => {
            if !scene.is_labeled() {
                return Err(Error::MissingLabels);
            }
            let labels: Vec<u32> = keep.iter().map(|&i| scene.gt_labels[i]).collect();
            oracle_similarity(&labels)
        }
        FeatureSource::Given(f) => {
            if f.nrows() != corrs.len() {
                return Err(Error::ShapeMismatch(format!("{} feature rows for {} correspondences", f.nrows(), corrs.len())));
            }
            crate::consistency::feature_similarity(f.view())?
        }
    };
    timings.features_ms = ms(t);

    let t = Instant::now();
    let (_, s_hat) = crate::consistency::fuse_and_binarize(&beta, &s_f, cfg.consistency.tau_s)?;
    timings.similarity_ms = ms(t);

    let t = Instant::now();
    let retained = if cfg.prune.enabled { prune(&s_hat, cfg.prune.tau_n) } else { (0..corrs.len()).collect() };
    let s_hat_n = s_hat.select(Axis(0), &retained).select(Axis(1), &retained);
    timings.prune_ms = ms(t);

    let mut cluster_assignment = vec![0u32; n_in];
    let mut result = RegistrationResult {
        transforms: Vec::new(),
        cluster_assignment: Vec::new(),
        num_retained: retained.len(),
        m_selected: 0,
        eigenvalues: Vec::new(),
        timings: StageTimings::default(),
    };
    if retained.len() >= 2 {
        let t = Instant::now();
        let clusters = spectral_cluster(&s_hat_n, &cfg.cluster, seed::stream(seed, "kmeans"))?;
        timings.cluster_ms = ms(t);

        let t = Instant::now();
        let ransac_root = seed::stream(seed, "ransac");
        let fits: Vec<Option<(RigidTransform, Vec<usize>)>> = (1..=clusters.m as u32)
            .into_par_iter()
            .map(|c| {
                let members: Vec<usize> = (0..retained.len()).filter(|&r| clusters.assignment[r] == c).map(|r| retained[r]).collect();
                let sub: Vec<Correspondence> = members.iter().map(|&i| corrs[i]).collect();
                ransac_fit(&sub, &cfg.ransac, seed::child(ransac_root, c as u64)).ok().map(|fit| (fit.transform, members))
            })
            .collect();
        for (transform, members) in fits.into_iter().flatten() {
            result.transforms.push(transform);
            let id = result.transforms.len() as u32;
            for i in members {
                cluster_assignment[keep[i]] = id;
            }
        }
        timings.ransac_ms = ms(t);
        result.m_selected = clusters.m_selected;
        result.eigenvalues = clusters.eigenvalues;
    }
    timings.total_ms = ms(start);
    result.cluster_assignment = cluster_assignment;
    result.timings = timings;
    Ok(result)
}
