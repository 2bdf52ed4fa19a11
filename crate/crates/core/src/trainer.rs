//! Contrastive training of the embedding network: positive pairs inside an
//! instance, mined negatives outside it, squared hinge margins, Adam.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{spatial_consistency, ConsistencyConfig};
use crate::error::{Error, Result};
use crate::featnet::{backward, forward, NetConfig, NetParams};
use crate::geom::LabeledScene;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMining {
    #[default]
    Hardest,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub m_p: f64,
    pub m_n: f64,
    pub lr: f64,
    pub iterations: usize,
    pub batch_scenes: usize,
    pub negatives: NegativeMining,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { m_p: 0.1, m_n: 1.4, lr: 0.01, iterations: 2000, batch_scenes: 4, negatives: NegativeMining::Hardest }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_p >= 0.0 && self.m_p < self.m_n) {
            return Err(Error::InvalidConfig("loss: need 0 <= m_p < m_n".into()));
        }
        if !(self.lr > 0.0) || self.batch_scenes < 1 {
            return Err(Error::InvalidConfig("loss: need lr > 0 and batch_scenes >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSets {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

fn sq_dist(f: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    f.row(i).iter().zip(f.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Closest correspondence outside the anchor's instance (lowest index on ties).
pub fn hardest_negative(features: ArrayView2<f64>, labels: &[u32], anchor: usize) -> Option<usize> {
    let l = labels[anchor];
    let mut best: Option<(f64, usize)> = None;
    for j in 0..labels.len() {
        if labels[j] == l {
            continue;
        }
        let d = sq_dist(&features, anchor, j);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, j));
        }
    }
    best.map(|(_, j)| j)
}

/// One positive and one negative per inlier anchor. Anchors whose instance
/// has a single inlier are skipped; an error is returned only when no
/// positive pair can be formed at all.
pub fn build_pairs(features: ArrayView2<f64>, labels: &[u32], mining: NegativeMining, seed: u64) -> Result<PairSets> {
    if features.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} feature rows for {} labels", features.nrows(), labels.len())));
    }
    let mut rng = seed::rng(seed);
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            groups.entry(l).or_default().push(i);
        }
    }
    let mut pairs = PairSets::default();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let members = &groups[&l];
        if members.len() < 2 {
            continue;
        }
        let mut j = members[rng.random_range(0..members.len() - 1)];
        if j == i {
            j = members[members.len() - 1];
        }
        pairs.positives.push((i, j));
        let neg = match mining {
            NegativeMining::Hardest => hardest_negative(features, labels, i),
            NegativeMining::Random => {
                let outside = labels.len() - members.len();
                if outside == 0 {
                    None
                } else {
                    let mut k = rng.random_range(0..outside);
                    (0..labels.len()).find(|&c| {
                        if labels[c] == l {
                            return false;
                        }
                        if k == 0 {
                            return true;
                        }
                        k -= 1;
                        false
                    })
                }
            }
        };
        if let Some(n) = neg {
            pairs.negatives.push((i, n));
        }
    }
    if pairs.positives.is_empty() {
        return Err(Error::NoPositiveAvailable);
    }
    Ok(pairs)
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub pos_sim_mean: f64,
    pub neg_sim_mean: f64,
}

/// Mean squared hinge over positives plus mean squared hinge over
/// negatives, with its exact gradient. At `D = 0` the direction of a
/// negative pair is undefined and its gradient is taken as zero.
pub fn contrastive_loss(features: ArrayView2<f64>, pairs: &PairSets, m_p: f64, m_n: f64) -> LossOutput {
    let mut grad = Array2::zeros(features.dim());
    let mut loss = 0.0;
    let mut sims = [0.0, 0.0];
    for (which, list) in [&pairs.positives, &pairs.negatives].into_iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let w = 1.0 / list.len() as f64;
        for &(i, j) in list {
            sims[which] += features.row(i).dot(&features.row(j)) * w;
            let d = sq_dist(&features, i, j).sqrt();
            let (h, sign) = if which == 0 { (d - m_p, 1.0) } else { (m_n - d, -1.0) };
            if h <= 0.0 {
                continue;
            }
            loss += h * h * w;
            if d == 0.0 {
                continue;
            }
            let coef = sign * 2.0 * h * w / d;
            for c in 0..features.ncols() {
                let g = coef * (features[[i, c]] - features[[j, c]]);
                grad[[i, c]] += g;
                grad[[j, c]] -= g;
            }
        }
    }
    LossOutput { loss, grad, pos_sim_mean: sims[0], neg_sim_mean: sims[1] }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub loss: f64,
    pub pos_sim_mean: f64,
    pub hardneg_sim_mean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: NetParams,
    pub log: Vec<LogRecord>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * grad[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * grad[k] * grad[k];
            params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

struct SceneStep {
    loss: f64,
    grad: Vec<f64>,
    pos: f64,
    neg: f64,
}

fn scene_step(
    params: &NetParams,
    scene: &LabeledScene,
    loss_cfg: &LossConfig,
    consistency: &ConsistencyConfig,
    pair_seed: u64,
) -> Result<Option<SceneStep>> {
    let labels = scene.gt_labels.as_slice();
    let beta = spatial_consistency(&scene.correspondences, consistency.sigma_d);
    let tape = forward(params, &scene.correspondences, &beta)?;
    let pairs = match build_pairs(tape.features().view(), labels, loss_cfg.negatives, pair_seed) {
        Ok(p) => p,
        Err(Error::NoPositiveAvailable) => return Ok(None),
        Err(e) => return Err(e),
    };
    let out = contrastive_loss(tape.features().view(), &pairs, loss_cfg.m_p, loss_cfg.m_n);
    let grads = backward(params, &tape, out.grad.view())?;
    Ok(Some(SceneStep { loss: out.loss, grad: grads.params.to_flat(), pos: out.pos_sim_mean, neg: out.neg_sim_mean }))
}

/// Trains from `init` using scenes `it * batch_scenes + b` of
/// `scene_source`. Deterministic for a given seed: scenes are processed in
/// parallel but reduced in index order.
pub fn train_from<F>(
    init: NetParams,
    loss_cfg: &LossConfig,
    consistency: &ConsistencyConfig,
    scene_source: F,
    seed: u64,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutput>
where
    F: Fn(u64) -> Result<LabeledScene> + Sync,
{
    loss_cfg.validate()?;
    consistency.validate()?;
    let mut params = init;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len());
    let pair_root = seed::stream(seed, "pairs");
    let mut log = Vec::with_capacity(loss_cfg.iterations);
    for it in 0..loss_cfg.iterations {
        let batch = loss_cfg.batch_scenes;
        let iter_seed = seed::child(pair_root, it as u64);
        let steps: Vec<Option<SceneStep>> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let scene = scene_source((it * batch + b) as u64)?;
                if !scene.is_labeled() {
                    return Err(Error::MissingLabels);
                }
                scene_step(&params, &scene, loss_cfg, consistency, seed::child(iter_seed, b as u64))
            })
            .collect::<Result<_>>()?;
        let used: Vec<&SceneStep> = steps.iter().flatten().collect();
        let mut rec = LogRecord { iter: it, loss: 0.0, pos_sim_mean: 0.0, hardneg_sim_mean: 0.0 };
        if !used.is_empty() {
            let w = 1.0 / used.len() as f64;
            let mut grad = vec![0.0; flat.len()];
            for s in &used {
                for (g, x) in grad.iter_mut().zip(&s.grad) {
                    *g += x * w;
                }
                rec.loss += s.loss * w;
                rec.pos_sim_mean += s.pos * w;
                rec.hardneg_sim_mean += s.neg * w;
            }
            adam.step(&mut flat, &grad, loss_cfg.lr);
            params.set_flat(&flat);
        }
        on_log(&rec);
        log.push(rec);
    }
    Ok(TrainOutput { params, log })
}

pub fn train<F>(
    loss_cfg: &LossConfig,
    net_cfg: &NetConfig,
    consistency: &ConsistencyConfig,
    scene_source: F,
    seed: u64,
    on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutput>
where
    F: Fn(u64) -> Result<LabeledScene> + Sync,
{
    train_from(NetParams::init(net_cfg)?, loss_cfg, consistency, scene_source, seed, on_log)
}

/// Mean contrastive loss (hardest negatives) over fixed scenes.
pub fn validation_loss(
    params: &NetParams,
    scenes: &[LabeledScene],
    loss_cfg: &LossConfig,
    consistency: &ConsistencyConfig,
    seed: u64,
) -> Result<f64> {
    let cfg = LossConfig { negatives: NegativeMining::Hardest, ..loss_cfg.clone() };
    let losses: Vec<f64> = scenes
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let beta = spatial_consistency(&s.correspondences, consistency.sigma_d);
            let f = forward(params, &s.correspondences, &beta)?.into_features();
            let pairs = build_pairs(f.view(), &s.gt_labels, cfg.negatives, seed::child(seed, k as u64))?;
            Ok(contrastive_loss(f.view(), &pairs, cfg.m_p, cfg.m_n).loss)
        })
        .collect::<Result<_>>()?;
    if losses.is_empty() {
        return Err(Error::EmptyBenchmark);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGap {
    /// Mean cosine similarity over all same-instance inlier pairs.
    pub positive: f64,
    /// Mean over inlier anchors of the cosine similarity to the hardest negative.
    pub hardest_negative: f64,
    pub gap: f64,
}

pub fn similarity_gap(params: &NetParams, scenes: &[LabeledScene], consistency: &ConsistencyConfig) -> Result<SimilarityGap> {
    let per_scene: Vec<(f64, usize, f64, usize)> = scenes
        .par_iter()
        .map(|s| {
            let beta = spatial_consistency(&s.correspondences, consistency.sigma_d);
            let f = forward(params, &s.correspondences, &beta)?.into_features();
            let l = &s.gt_labels;
            let (mut ps, mut pc, mut ns, mut nc) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..l.len() {
                if l[i] == 0 {
                    continue;
                }
                for j in i + 1..l.len() {
                    if l[j] == l[i] {
                        ps += f.row(i).dot(&f.row(j));
                        pc += 1;
                    }
                }
                if let Some(n) = hardest_negative(f.view(), l, i) {
                    ns += f.row(i).dot(&f.row(n));
                    nc += 1;
                }
            }
            Ok((ps, pc, ns, nc))
        })
        .collect::<Result<_>>()?;
    let (ps, pc, ns, nc) = per_scene.iter().fold((0.0, 0, 0.0, 0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2, a.3 + s.3));
    if pc == 0 || nc == 0 {
        return Err(Error::NoPositiveAvailable);
    }
    let (positive, hardest_negative) = (ps / pc as f64, ns / nc as f64);
    Ok(SimilarityGap { positive, hardest_negative, gap: positive - hardest_negative })
}
