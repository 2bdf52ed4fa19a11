//! Spectral grouping of the retained correspondences.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::consistency::BinaryMatrix;
use crate::error::{Error, Result};
use crate::linalg::{kmeans, sym_eig, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Largest cluster count considered by the eigengap rule.
    pub k_max: usize,
    pub min_cluster_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k_max: 20, min_cluster_size: 3 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 || self.min_cluster_size < 3 {
            return Err(Error::InvalidConfig("cluster: need k_max >= 1 and min_cluster_size >= 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Number of clusters kept after dropping small ones.
    pub m: usize,
    /// Eigengap estimate before small clusters were dropped.
    pub m_selected: usize,
    /// Per-node cluster id in `1..=m`, 0 for unassigned.
    pub assignment: Vec<u32>,
    /// Ascending spectrum of the normalized Laplacian.
    pub eigenvalues: Vec<f64>,
}

/// `I − D^{-1/2} S D^{-1/2}` with `D` the row sums of `S` (self-loops included).
pub fn normalized_laplacian(s_hat: &BinaryMatrix) -> Result<SymMatrix> {
    let n = s_hat.nrows();
    let inv_sqrt: Vec<f64> = s_hat
        .outer_iter()
        .map(|r| {
            let deg: f64 = r.iter().map(|&v| v as f64).sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    SymMatrix::from_fn(n, |i, j| {
        let a = s_hat[[i, j]] as f64 * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - a
        } else {
            -a
        }
    })
}

/// `argmax_k λ_{k+1} − λ_k` over `k ∈ [1, min(k_max, n − 1)]`, smaller `k` on ties.
pub fn select_m(eigenvalues: &[f64], k_max: usize) -> usize {
    let upper = k_max.min(eigenvalues.len().saturating_sub(1));
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=upper {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap > best.1 {
            best = (k, gap);
        }
    }
    best.0
}

const ZERO_ROW: f64 = 1e-10;

pub fn spectral_cluster(s_hat: &BinaryMatrix, cfg: &ClusterConfig, seed: u64) -> Result<ClusterResult> {
    let n = s_hat.nrows();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let eig = sym_eig(&normalized_laplacian(s_hat)?)?;
    let m_selected = select_m(&eig.eigenvalues, cfg.k_max);
    let mut embedding: Array2<f64> = eig.eigenvectors.slice(ndarray::s![.., ..m_selected]).to_owned();
    let mut nonzero = Vec::with_capacity(n);
    for (i, mut row) in embedding.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm > ZERO_ROW {
            row /= norm;
            nonzero.push(i);
        } else {
            row.fill(0.0);
        }
    }
    let mut raw = vec![usize::MAX; n];
    if !nonzero.is_empty() {
        let rows = embedding.select(Axis(0), &nonzero);
        let k = m_selected.min(nonzero.len());
        let km = kmeans(rows.view(), k, seed);
        for (&i, &c) in nonzero.iter().zip(&km.assignment) {
            raw[i] = c;
        }
        let mut radius = vec![0.0f64; k];
        for (r, &c) in km.assignment.iter().enumerate() {
            let d = (&rows.row(r) - &km.centroids.row(c)).mapv(|v| v * v).sum().sqrt();
            radius[c] = radius[c].max(d);
        }
        for i in 0..n {
            if raw[i] != usize::MAX {
                continue;
            }
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for c in 0..k {
                let d = km.centroids.row(c).mapv(|v| v * v).sum().sqrt();
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if best_d <= radius[best] {
                raw[i] = best;
            }
        }
    }
    // drop small clusters and relabel by first member
    let mut sizes = vec![0usize; m_selected];
    for &c in raw.iter().filter(|&&c| c != usize::MAX) {
        sizes[c] += 1;
    }
    let mut relabel = vec![0u32; m_selected];
    let mut m = 0;
    for &c in &raw {
        if c != usize::MAX && sizes[c] >= cfg.min_cluster_size && relabel[c] == 0 {
            m += 1;
            relabel[c] = m as u32;
        }
    }
    let assignment = raw.iter().map(|&c| if c == usize::MAX { 0 } else { relabel[c] }).collect();
    Ok(ClusterResult { m, m_selected, assignment, eigenvalues: eig.eigenvalues })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    pub(crate) fn blocks(sizes: &[usize], rng: &mut impl Rng) -> (BinaryMatrix, Vec<usize>) {
        let n: usize = sizes.iter().sum();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut truth = vec![0; n];
        let mut start = 0;
        for (b, &s) in sizes.iter().enumerate() {
            for &i in &perm[start..start + s] {
                truth[i] = b;
            }
            start += s;
        }
        let s = Array2::from_shape_fn((n, n), |(i, j)| u8::from(truth[i] == truth[j]));
        (s, truth)
    }

    fn union_find_components(s: &BinaryMatrix) -> usize {
        let n = s.nrows();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..n {
            for j in 0..i {
                if s[[i, j]] == 1 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    fn same_partition(a: &[u32], b: &[usize]) -> bool {
        let mut map = std::collections::HashMap::new();
        let mut back = std::collections::HashMap::new();
        a.iter().zip(b).all(|(&x, &y)| x != 0 && *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
    }

    #[test]
    fn identity_gives_zero_laplacian() {
        let l = normalized_laplacian(&Array2::eye(6)).unwrap();
        assert!(l.as_array().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn two_cliques_two_zero_eigenvalues() {
        let mut rng = crate::seed::rng(0);
        let (s, _) = blocks(&[5, 5], &mut rng);
        let eig = sym_eig(&normalized_laplacian(&s).unwrap()).unwrap();
        assert_eq!(eig.eigenvalues.iter().filter(|v| v.abs() < 1e-9).count(), 2);
    }

    #[test]
    fn spectrum_in_zero_two() {
        let mut rng = crate::seed::rng(1);
        for _ in 0..100 {
            let n = rng.random_range(2..25);
            let mut s: BinaryMatrix = Array2::eye(n);
            for i in 0..n {
                for j in 0..i {
                    if rng.random_bool(0.4) {
                        s[[i, j]] = 1;
                        s[[j, i]] = 1;
                    }
                }
            }
            let eig = sym_eig(&normalized_laplacian(&s).unwrap()).unwrap();
            assert!(eig.eigenvalues.iter().all(|&v| (-1e-10..=2.0 + 1e-8).contains(&v)));
            let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-9).count();
            assert_eq!(zeros, union_find_components(&s));
        }
    }

    #[test]
    fn select_m_examples() {
        assert_eq!(select_m(&[0.0, 0.0, 0.0, 0.9, 1.0, 1.1], 20), 3);
        assert_eq!(select_m(&[0.0, 1.0], 20), 1);
        assert_eq!(select_m(&[0.0, 0.5, 1.0], 20), 1);
        assert_eq!(select_m(&[0.0, 0.0, 0.0, 0.9, 1.0, 1.1], 2), 1);
    }

    #[test]
    fn single_clique() {
        let s: BinaryMatrix = Array2::ones((7, 7));
        let r = spectral_cluster(&s, &ClusterConfig::default(), 0).unwrap();
        assert_eq!(r.m, 1);
        assert!(r.assignment.iter().all(|&a| a == 1));
    }

    #[test]
    fn two_blocks_recovered() {
        let mut rng = crate::seed::rng(2);
        let (s, truth) = blocks(&[8, 9], &mut rng);
        let r = spectral_cluster(&s, &ClusterConfig::default(), 4).unwrap();
        assert_eq!(r.m, 2);
        assert!(same_partition(&r.assignment, &truth));
    }

    #[test]
    fn random_block_diagonal_recovered() {
        let mut rng = crate::seed::rng(3);
        for trial in 0..40 {
            let k = rng.random_range(1..=10);
            let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(3..=30)).collect();
            let (s, truth) = blocks(&sizes, &mut rng);
            let r = spectral_cluster(&s, &ClusterConfig::default(), trial).unwrap();
            assert_eq!(r.m, k, "sizes {sizes:?}");
            assert!(same_partition(&r.assignment, &truth));
        }
    }

    #[test]
    fn small_clusters_dropped() {
        let mut rng = crate::seed::rng(5);
        let (s, truth) = blocks(&[10, 2, 12], &mut rng);
        let r = spectral_cluster(&s, &ClusterConfig::default(), 0).unwrap();
        assert_eq!(r.m_selected, 3);
        assert_eq!(r.m, 2);
        for (a, t) in r.assignment.iter().zip(&truth) {
            assert_eq!(*a == 0, *t == 1);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(spectral_cluster(&Array2::ones((1, 1)), &ClusterConfig::default(), 0), Err(Error::TooFewPoints(1))));
    }

    #[test]
    fn deterministic() {
        let mut rng = crate::seed::rng(6);
        let n = 40;
        let mut s: BinaryMatrix = Array2::eye(n);
        for i in 0..n {
            for j in 0..i {
                if rng.random_bool(0.3) {
                    s[[i, j]] = 1;
                    s[[j, i]] = 1;
                }
            }
        }
        let a = spectral_cluster(&s, &ClusterConfig::default(), 9).unwrap();
        let b = spectral_cluster(&s, &ClusterConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }
}
