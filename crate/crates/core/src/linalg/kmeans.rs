use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::seed;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster index in `0..k` per row.
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd step.
    pub objective_history: Vec<f64>,
}

/// Lloyd's k-means with farthest-point seeding.
///
/// The first center is a seeded uniform pick; every further center is the
/// row farthest from the centers chosen so far (lowest index on ties).
/// Empty clusters are refilled with the row farthest from its own centroid,
/// so every one of the `k` clusters is non-empty on return.
///
/// Panics if `k == 0` or `k > rows.nrows()`.
pub fn kmeans(rows: ArrayView2<f64>, k: usize, seed: u64) -> KMeansResult {
    let n = rows.nrows();
    assert!(k >= 1 && k <= n, "kmeans needs 1 <= k <= n (k={k}, n={n})");

    let mut centroids = farthest_point_init(rows, k, seed);
    let mut assignment = vec![usize::MAX; n];
    let mut objective_history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut next: Vec<usize> = (0..n).map(|i| nearest(rows.row(i), &centroids).0).collect();
        repair_empty(rows, &centroids, &mut next, k);
        let changed = next != assignment;
        assignment = next;
        centroids = means(rows, &assignment, k);
        objective_history.push(objective(rows, &centroids, &assignment));
        if !changed {
            break;
        }
    }

    KMeansResult { assignment, centroids, iterations, objective_history }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.outer_iter().enumerate() {
        let d = sq_dist(row, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn farthest_point_init(rows: ArrayView2<f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = rows.nrows();
    let mut rng = seed::rng(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut min_dist: Vec<f64> = (0..n).map(|i| sq_dist(rows.row(i), rows.row(chosen[0]))).collect();
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in min_dist.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (next, _) = best.expect("k <= n leaves an unchosen row");
        chosen.push(next);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(rows.row(i), rows.row(next)));
        }
    }
    let mut centroids = Array2::zeros((k, rows.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&rows.row(i));
    }
    centroids
}

fn repair_empty(rows: ArrayView2<f64>, centroids: &Array2<f64>, assignment: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut donor: Option<(usize, f64)> = None;
        for (i, &a) in assignment.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(rows.row(i), centroids.row(a));
            if donor.is_none_or(|(_, bd)| d > bd) {
                donor = Some((i, d));
            }
        }
        let (i, _) = donor.expect("k <= n guarantees a cluster with two members");
        assignment[i] = empty;
    }
}

fn means(rows: ArrayView2<f64>, assignment: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((k, rows.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &a) in rows.outer_iter().zip(assignment) {
        let mut s = sums.row_mut(a);
        s += &row;
        counts[a] += 1;
    }
    for (mut s, &c) in sums.outer_iter_mut().zip(&counts) {
        if c > 0 {
            s /= c as f64;
        }
    }
    sums
}

fn objective(rows: ArrayView2<f64>, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    rows.outer_iter()
        .zip(assignment)
        .map(|(r, &a)| sq_dist(r, centroids.row(a)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, per: usize, centers: &[[f64; 2]], spread: f64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut rows = Array2::zeros((per * centers.len(), 2));
        let mut truth = Vec::new();
        for (b, c) in centers.iter().enumerate() {
            for i in 0..per {
                let r = b * per + i;
                rows[[r, 0]] = c[0] + noise.sample(&mut rng);
                rows[[r, 1]] = c[1] + noise.sample(&mut rng);
                truth.push(b);
            }
        }
        (rows, truth)
    }

    #[test]
    fn separated_blobs_recovered() {
        let (rows, truth) = blobs(1, 40, &[[0.0, 0.0], [10.0, 10.0]], 0.5);
        let res = kmeans(rows.view(), 2, 5);
        for i in 0..rows.nrows() {
            for j in 0..rows.nrows() {
                assert_eq!(truth[i] == truth[j], res.assignment[i] == res.assignment[j]);
            }
        }
    }

    #[test]
    fn n_equals_k_gives_singletons() {
        let rows = Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let mut a = kmeans(rows.view(), 4, 3).assignment;
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_rows_still_fill_every_cluster() {
        let rows = Array2::from_shape_vec((4, 1), vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        let res = kmeans(rows.view(), 3, 0);
        for c in 0..3 {
            assert!(res.assignment.contains(&c));
        }
    }

    #[test]
    fn single_cluster() {
        let (rows, _) = blobs(2, 10, &[[0.0, 0.0], [5.0, 5.0]], 1.0);
        let res = kmeans(rows.view(), 1, 9);
        assert!(res.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn objective_non_increasing() {
        for seed in 0..20 {
            let (rows, _) = blobs(seed, 30, &[[0.0, 0.0], [2.0, 0.5], [1.0, 2.0], [3.0, 3.0]], 0.8);
            let res = kmeans(rows.view(), 4, seed);
            for w in res.objective_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", res.objective_history);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (rows, _) = blobs(4, 25, &[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], 0.7);
        assert_eq!(kmeans(rows.view(), 3, 17).assignment, kmeans(rows.view(), 3, 17).assignment);
    }
}
