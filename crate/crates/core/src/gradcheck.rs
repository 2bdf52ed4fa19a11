//! Central-difference verification of the hand-written gradients.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::featnet::{backward, forward_input, NetConfig, NetParams, INPUT_DIM};
use crate::seed;
use crate::trainer::{build_pairs, contrastive_loss, NegativeMining};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Norm floor of the relative error; central differences at `STEP` carry
/// about 1e-10 of rounding noise per entry.
pub const FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seeds: Vec<u64>,
    pub n: usize,
    pub feature_dim: usize,
    pub blocks: usize,
    /// Scales the analytic gradients by 1.01 before comparing (negative control).
    pub perturb: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seeds: (0..5).collect(), n: 8, feature_dim: 8, blocks: 1, perturb: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub suite: String,
    pub seed: u64,
    pub tensor: String,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<TensorCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    /// `(suite, tensor, max relative error over seeds)` in first-seen order.
    pub fn max_per_tensor(&self) -> Vec<(String, String, f64)> {
        let mut out: Vec<(String, String, f64)> = Vec::new();
        for c in &self.checks {
            match out.iter_mut().find(|(s, t, _)| *s == c.suite && *t == c.tensor) {
                Some(entry) => entry.2 = entry.2.max(c.rel_err),
                None => out.push((c.suite.clone(), c.tensor.clone(), c.rel_err)),
            }
        }
        out
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    diff / norm(analytic).max(norm(numeric)).max(FLOOR)
}

/// Init weights plus random offsets on biases and normalization parameters
/// so that every tensor sees a generic point.
fn probe_params(cfg: &NetConfig, seed: u64) -> NetParams {
    let mut p = NetParams::init(cfg).expect("valid gradcheck config");
    let mut rng = seed::rng(seed::stream(seed, "gradcheck-offsets"));
    for (name, mut t) in p.tensors_mut() {
        if !name.ends_with("weight") && !name.contains("attention") {
            t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
        }
    }
    p
}

fn featnet_checks(opts: &GradcheckOptions, seed_value: u64) -> Vec<TensorCheck> {
    let cfg = NetConfig { blocks: opts.blocks, feature_dim: opts.feature_dim, attention_dim: None, init_seed: seed_value };
    let params = probe_params(&cfg, seed_value);
    let mut rng = seed::rng(seed::stream(seed_value, "gradcheck-input"));
    let n = opts.n;
    let input = Array2::from_shape_fn((n, INPUT_DIM), |_| rng.random_range(-1.0..1.0));
    let mut beta = Array2::eye(n);
    for i in 0..n {
        for j in 0..i {
            if rng.random_bool(0.5) {
                let b = rng.random_range(0.0..1.0);
                beta[[i, j]] = b;
                beta[[j, i]] = b;
            }
        }
    }
    let w = Array2::from_shape_fn((n, opts.feature_dim), |_| rng.random_range(-1.0..1.0));
    let loss = |p: &NetParams| (forward_input(p, input.clone(), &beta).expect("shapes").features() * &w).sum();
    let tape = forward_input(&params, input.clone(), &beta).expect("shapes");
    let analytic = backward(&params, &tape, w.view()).expect("shapes").params.to_flat();
    let flat = params.to_flat();
    let mut probe = params.clone();
    let mut checks = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensors() {
        let len = t.len();
        let mut numeric = Vec::with_capacity(len);
        for idx in offset..offset + len {
            let mut f = flat.clone();
            f[idx] += STEP;
            probe.set_flat(&f);
            let up = loss(&probe);
            f[idx] -= 2.0 * STEP;
            probe.set_flat(&f);
            let down = loss(&probe);
            numeric.push((up - down) / (2.0 * STEP));
        }
        let mut a = analytic[offset..offset + len].to_vec();
        if opts.perturb {
            a.iter_mut().for_each(|v| *v *= 1.01);
        }
        checks.push(TensorCheck { suite: "featnet".into(), seed: seed_value, tensor: name, rel_err: relative_error(&a, &numeric) });
        offset += len;
    }
    checks
}

fn loss_check(opts: &GradcheckOptions, seed_value: u64) -> TensorCheck {
    let mut rng = seed::rng(seed::stream(seed_value, "gradcheck-loss"));
    let (n, d) = (4 * opts.n, opts.feature_dim);
    let mut f = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    for mut r in f.outer_iter_mut() {
        let norm: f64 = r.dot(&r);
        let norm = norm.sqrt();
        r /= norm;
    }
    let labels: Vec<u32> = (0..n).map(|i| (i % 4) as u32).collect();
    let pairs = build_pairs(f.view(), &labels, NegativeMining::Hardest, seed_value).expect("pairs exist");
    let (m_p, m_n) = (0.1, 1.4);
    let mut analytic: Vec<f64> = contrastive_loss(f.view(), &pairs, m_p, m_n).grad.iter().copied().collect();
    if opts.perturb {
        analytic.iter_mut().for_each(|v| *v *= 1.01);
    }
    let mut numeric = Vec::with_capacity(n * d);
    for idx in 0..n * d {
        let (r, c) = (idx / d, idx % d);
        let mut up = f.clone();
        up[[r, c]] += STEP;
        let mut down = f.clone();
        down[[r, c]] -= STEP;
        numeric.push((contrastive_loss(up.view(), &pairs, m_p, m_n).loss - contrastive_loss(down.view(), &pairs, m_p, m_n).loss) / (2.0 * STEP));
    }
    TensorCheck { suite: "contrastive_loss".into(), seed: seed_value, tensor: "features".into(), rel_err: relative_error(&analytic, &numeric) }
}

pub fn run(opts: &GradcheckOptions) -> GradcheckReport {
    let mut checks = Vec::new();
    for &s in &opts.seeds {
        checks.extend(featnet_checks(opts, s));
        checks.push(loss_check(opts, s));
    }
    let passed = checks.iter().all(|c| c.rel_err < TOLERANCE);
    GradcheckReport { checks, tolerance: TOLERANCE, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_and_negative_control_fails() {
        let opts = GradcheckOptions { seeds: vec![0, 1], ..GradcheckOptions::default() };
        let report = run(&opts);
        assert!(report.passed, "{:?}", report.max_per_tensor());
        assert_eq!(report.max_per_tensor().len(), 2 + 11 + 1);
        let bad = run(&GradcheckOptions { perturb: true, ..opts });
        assert!(!bad.passed);
    }
}
