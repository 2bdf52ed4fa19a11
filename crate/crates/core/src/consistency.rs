//! Pairwise compatibility between correspondences.
//!
//! `beta` scores how well two correspondences preserve length under a rigid
//! motion, `s_f` is the cosine similarity of their embeddings, `s` the
//! elementwise product and `s_hat` its thresholded adjacency.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Correspondence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Length-difference scale of the spatial term.
    pub sigma_d: f64,
    /// Similarity threshold for the binary adjacency (inclusive).
    pub tau_s: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { sigma_d: 0.05, tau_s: 0.85 }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d > 0.0) {
            return Err(Error::InvalidConfig("consistency: sigma_d must be > 0".into()));
        }
        if !(self.tau_s > 0.0 && self.tau_s < 1.0) {
            return Err(Error::InvalidConfig("consistency: tau_s must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Symmetric 0/1 adjacency.
pub type BinaryMatrix = Array2<u8>;

#[derive(Debug, Clone)]
pub struct SimilarityMatrices {
    pub beta: Array2<f64>,
    pub s_f: Array2<f64>,
    pub s: Array2<f64>,
    pub s_hat: BinaryMatrix,
}

/// `beta_ij = max(0, 1 - d_ij^2 / sigma_d^2)` with
/// `d_ij = | ‖x_i − x_j‖ − ‖y_i − y_j‖ |`.
pub fn spatial_consistency(corrs: &[Correspondence], sigma_d: f64) -> Array2<f64> {
    let n = corrs.len();
    let inv = 1.0 / (sigma_d * sigma_d);
    let mut beta = Array2::zeros((n, n));
    for i in 0..n {
        beta[[i, i]] = 1.0;
        let (xi, yi) = (corrs[i].x, corrs[i].y);
        for j in i + 1..n {
            let d = ((xi - corrs[j].x).norm() - (yi - corrs[j].y).norm()).abs();
            let b = (1.0 - d * d * inv).max(0.0);
            beta[[i, j]] = b;
            beta[[j, i]] = b;
        }
    }
    beta
}

pub const UNIT_NORM_TOL: f64 = 1e-4;

/// Gram matrix of the feature rows, which must be unit length.
pub fn feature_similarity(features: ArrayView2<f64>) -> Result<Array2<f64>> {
    for (row, f) in features.outer_iter().enumerate() {
        let norm = f.dot(&f).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized { row, norm });
        }
    }
    let mut s_f = features.dot(&features.t());
    // exact symmetry regardless of summation order
    let n = s_f.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = s_f[[i, j]];
            s_f[[j, i]] = v;
        }
    }
    Ok(s_f)
}

/// `s = s_f ⊙ beta`; `s_hat_ij = [s_ij >= tau_s]` off the diagonal, 1 on it.
pub fn fuse_and_binarize(beta: &Array2<f64>, s_f: &Array2<f64>, tau_s: f64) -> Result<(Array2<f64>, BinaryMatrix)> {
    if beta.dim() != s_f.dim() || beta.nrows() != beta.ncols() {
        return Err(Error::ShapeMismatch(format!("beta {:?} vs s_f {:?}", beta.dim(), s_f.dim())));
    }
    let s = s_f * beta;
    let s_hat = binarize(&s, tau_s);
    Ok((s, s_hat))
}

pub fn binarize(s: &Array2<f64>, tau_s: f64) -> BinaryMatrix {
    Array2::from_shape_fn(s.dim(), |(i, j)| u8::from(i == j || s[[i, j]] >= tau_s))
}

/// All four matrices for `corrs`; `features = None` substitutes an
/// all-ones `s_f` so that `s = beta` (spatial-only mode).
pub fn similarity_matrices(
    corrs: &[Correspondence],
    features: Option<ArrayView2<f64>>,
    cfg: &ConsistencyConfig,
) -> Result<SimilarityMatrices> {
    let beta = spatial_consistency(corrs, cfg.sigma_d);
    let s_f = match features {
        Some(f) => {
            if f.nrows() != corrs.len() {
                return Err(Error::ShapeMismatch(format!("{} feature rows for {} correspondences", f.nrows(), corrs.len())));
            }
            feature_similarity(f)?
        }
        None => Array2::ones(beta.dim()),
    };
    let (s, s_hat) = fuse_and_binarize(&beta, &s_f, cfg.tau_s)?;
    Ok(SimilarityMatrices { beta, s_f, s, s_hat })
}

/// Dense row-major CSV dump for debugging.
pub fn write_dense_csv<T: std::fmt::Display>(m: &Array2<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in m.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{RigidTransform, Vec3};
    use rand::Rng;

    fn corr(x: [f64; 3], y: [f64; 3]) -> Correspondence {
        Correspondence::new(Vec3::from(x), Vec3::from(y))
    }

    #[test]
    fn rigid_pairs_are_fully_consistent() {
        let t = RigidTransform::from_euler_deg(10.0, 20.0, 30.0, Vec3::new(1.0, 2.0, 3.0));
        let xs = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.5, 0.0)];
        let corrs: Vec<_> = xs.iter().map(|x| Correspondence::new(*x, t.apply(x))).collect();
        let beta = spatial_consistency(&corrs, 0.05);
        assert!((beta[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamp_boundary_and_midpoint() {
        let sigma = 0.05;
        // |x0-x1| = 1; |y0-y1| = 1 + d
        let make = |d: f64| vec![corr([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]), corr([1.0, 0.0, 0.0], [1.0 + d, 0.0, 0.0])];
        assert!(spatial_consistency(&make(sigma), sigma)[[0, 1]].abs() < 1e-12);
        assert!((spatial_consistency(&make(sigma / 2.0), sigma)[[0, 1]] - 0.75).abs() < 1e-12);
        assert_eq!(spatial_consistency(&make(2.0 * sigma), sigma)[[0, 1]], 0.0);
    }

    #[test]
    fn feature_similarity_cases() {
        let f = ndarray::arr2(&[[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]);
        let s = feature_similarity(f.view()).unwrap();
        assert_eq!(s[[0, 1]], 1.0);
        assert_eq!(s[[0, 2]], -1.0);
        assert_eq!(s[[0, 3]], 0.0);
        let bad = ndarray::arr2(&[[1.0, 0.1]]);
        assert!(matches!(feature_similarity(bad.view()), Err(Error::NotNormalized { row: 0, .. })));
    }

    #[test]
    fn beta_only_mode_and_inclusive_threshold() {
        let beta = ndarray::arr2(&[[1.0, 0.85, 0.2], [0.85, 1.0, 0.9], [0.2, 0.9, 1.0]]);
        let ones = Array2::ones((3, 3));
        let (s, s_hat) = fuse_and_binarize(&beta, &ones, 0.85).unwrap();
        assert_eq!(s, beta);
        assert_eq!(s_hat, ndarray::arr2(&[[1, 1, 0], [1, 1, 1], [0, 1, 1]]));
    }

    #[test]
    fn random_fusion_properties() {
        let mut rng = crate::seed::rng(21);
        for _ in 0..100 {
            let n = 12;
            let mut beta = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
            let mut s_f = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
            for i in 0..n {
                beta[[i, i]] = 1.0;
                s_f[[i, i]] = 1.0;
                for j in 0..i {
                    beta[[i, j]] = beta[[j, i]];
                    s_f[[i, j]] = s_f[[j, i]];
                }
            }
            let (s, s_hat) = fuse_and_binarize(&beta, &s_f, 0.5).unwrap();
            assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(s_hat.iter().all(|&v| v <= 1));
            assert_eq!(s, s.t());
            assert_eq!(s_hat, s_hat.t());
            // raising tau_s never adds edges
            let higher = binarize(&s, 0.7);
            assert!(higher.iter().zip(s_hat.iter()).all(|(h, l)| h <= l));
        }
    }

    #[test]
    fn beta_invariant_under_rigid_motion() {
        let mut rng = crate::seed::rng(4);
        let corrs: Vec<_> = (0..30)
            .map(|_| {
                corr(
                    [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                    [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                )
            })
            .collect();
        let g = RigidTransform::from_euler_deg(33.0, 140.0, 71.0, Vec3::new(3.0, -1.0, 2.0));
        let moved: Vec<_> = corrs.iter().map(|c| Correspondence::new(g.apply(&c.x), c.y)).collect();
        let a = spatial_consistency(&corrs, 0.3);
        let b = spatial_consistency(&moved, 0.3);
        assert!((a - b).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn same_instance_inliers_are_compatible() {
        use crate::scenegen::{generate_batch, GenConfig};
        let cfg = GenConfig { seed: 77, inlier_jitter_sigma: 0.0025, ..GenConfig::default() };
        let scenes = generate_batch(&cfg, 5).unwrap();
        let (mut ok, mut total) = (0usize, 0usize);
        for scene in &scenes {
            let beta = spatial_consistency(&scene.correspondences, 0.05);
            let l = &scene.gt_labels;
            for i in 0..l.len() {
                for j in i + 1..l.len() {
                    if l[i] > 0 && l[i] == l[j] {
                        total += 1;
                        ok += usize::from(beta[[i, j]] >= 0.9);
                    }
                }
            }
        }
        assert!(ok as f64 / total as f64 >= 0.99, "{ok}/{total}");
    }
}
