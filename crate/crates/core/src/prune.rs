//! Density pruning: keep correspondences with enough agreeing neighbours.

use serde::{Deserialize, Serialize};

use crate::consistency::BinaryMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    /// Minimum number of neighbours, the node itself not counted.
    pub tau_n: usize,
    /// When false the pipeline clusters the full adjacency.
    pub enabled: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { tau_n: 10, enabled: true }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_n < 1 {
            return Err(Error::InvalidConfig("prune: tau_n must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ascending indices whose row sum minus the self-loop is at least `tau_n`.
pub fn prune(s_hat: &BinaryMatrix, tau_n: usize) -> Vec<usize> {
    s_hat
        .outer_iter()
        .enumerate()
        .filter(|(i, row)| {
            let degree: usize = row.iter().map(|&v| v as usize).sum();
            degree - usize::from(row[*i] != 0) >= tau_n
        })
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn isolated_nodes_are_removed() {
        let s: BinaryMatrix = Array2::eye(30);
        assert!(prune(&s, 1).is_empty());
    }

    #[test]
    fn clique_survives() {
        let s: BinaryMatrix = Array2::ones((25, 25));
        assert_eq!(prune(&s, 10), (0..25).collect::<Vec<_>>());
        assert_eq!(prune(&s, 24).len(), 25);
        assert!(prune(&s, 25).is_empty());
    }

    #[test]
    fn clique_among_isolated_nodes() {
        let mut s: BinaryMatrix = Array2::eye(62);
        let members: Vec<usize> = (0..62).filter(|i| i % 5 == 0).take(12).collect();
        for &i in &members {
            for &j in &members {
                s[[i, j]] = 1;
            }
        }
        assert_eq!(prune(&s, 10), members);
    }

    #[test]
    fn monotone_in_tau() {
        let mut rng = crate::seed::rng(3);
        let n = 60;
        let mut s: BinaryMatrix = Array2::eye(n);
        for i in 0..n {
            for j in 0..i {
                if rng.random_bool(0.2) {
                    s[[i, j]] = 1;
                    s[[j, i]] = 1;
                }
            }
        }
        let mut prev = prune(&s, 1);
        for tau in 2..30 {
            let cur = prune(&s, tau);
            assert!(cur.iter().all(|i| prev.contains(i)));
            prev = cur;
        }
    }
}
