//! Compatibility-modulated softmax attention.
//!
//! Logits are `(q_i·k_j / sqrt(a)) * beta_ij`. Wherever `beta_ij = 0` the
//! logit is exactly zero, so every such column of row `i` shares one
//! probability `pc_i`. Those columns are handled through the column sum of
//! `V`, which keeps the cost proportional to the non-zeros of `beta` while
//! staying identical to the dense softmax.

use ndarray::{Array1, Array2};

/// Row-compressed non-zero pattern of a compatibility matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBeta {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseBeta {
    pub fn from_dense(beta: &Array2<f64>) -> Self {
        let n = beta.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let b = beta[[i, j]];
                if b != 0.0 {
                    cols.push(j);
                    vals.push(b);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[[i, self.cols[e]]] = self.vals[e];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AttentionTape {
    /// Probability of each stored entry.
    pub probs: Vec<f64>,
    /// Shared probability of the zero-compatibility columns of each row.
    pub pc: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Returns `P V` and the probabilities needed by [`attention_backward`].
pub fn attention_forward(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, beta: &SparseBeta) -> (Array2<f64>, AttentionTape) {
    let n = beta.n;
    let (a, d) = (q.ncols(), v.ncols());
    let scale = 1.0 / (a as f64).sqrt();
    let (qs, ks, vs) = (q.as_slice().unwrap(), k.as_slice().unwrap(), v.as_slice().unwrap());
    let vsum: Array1<f64> = v.sum_axis(ndarray::Axis(0));
    let mut probs = vec![0.0; beta.nnz()];
    let mut pc = vec![0.0; n];
    let mut agg = Array2::zeros((n, d));
    let out = agg.as_slice_mut().unwrap();
    for i in 0..n {
        let range = beta.row_ptr[i]..beta.row_ptr[i + 1];
        let zeros = n - range.len();
        let qi = &qs[i * a..(i + 1) * a];
        let mut mx = if zeros > 0 { 0.0 } else { f64::NEG_INFINITY };
        for e in range.clone() {
            let j = beta.cols[e];
            let l = dot(qi, &ks[j * a..(j + 1) * a]) * scale * beta.vals[e];
            probs[e] = l;
            mx = mx.max(l);
        }
        let mut z = zeros as f64 * (-mx).exp();
        for p in &mut probs[range.clone()] {
            *p = (*p - mx).exp();
            z += *p;
        }
        for p in &mut probs[range.clone()] {
            *p /= z;
        }
        pc[i] = if zeros > 0 { (-mx).exp() / z } else { 0.0 };
        let row = &mut out[i * d..(i + 1) * d];
        if pc[i] != 0.0 {
            axpy(pc[i], vsum.as_slice().unwrap(), row);
        }
        for e in range {
            let j = beta.cols[e];
            axpy(probs[e] - pc[i], &vs[j * d..(j + 1) * d], row);
        }
    }
    (agg, AttentionTape { probs, pc })
}

/// Gradients with respect to `q`, `k` and `v` given the upstream gradient
/// of the aggregated values.
pub fn attention_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    agg: &Array2<f64>,
    beta: &SparseBeta,
    tape: &AttentionTape,
    d_agg: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let n = beta.n;
    let (a, d) = (q.ncols(), v.ncols());
    let scale = 1.0 / (a as f64).sqrt();
    let (qs, ks, vs) = (q.as_slice().unwrap(), k.as_slice().unwrap(), v.as_slice().unwrap());
    let (aggs, dags) = (agg.as_slice().unwrap(), d_agg.as_slice().unwrap());
    let mut dq = Array2::zeros((n, a));
    let mut dk = Array2::zeros((n, a));
    let mut dv = Array2::zeros((n, d));
    let mut shared = vec![0.0; d];
    {
        let (dqs, dks, dvs) = (dq.as_slice_mut().unwrap(), dk.as_slice_mut().unwrap(), dv.as_slice_mut().unwrap());
        for i in 0..n {
            let gi = &dags[i * d..(i + 1) * d];
            let r = dot(gi, &aggs[i * d..(i + 1) * d]);
            let pci = tape.pc[i];
            if pci != 0.0 {
                axpy(pci, gi, &mut shared);
            }
            let qi = &qs[i * a..(i + 1) * a];
            for e in beta.row_ptr[i]..beta.row_ptr[i + 1] {
                let j = beta.cols[e];
                let p = tape.probs[e];
                let vj = &vs[j * d..(j + 1) * d];
                let ds = p * (dot(gi, vj) - r) * beta.vals[e] * scale;
                axpy(ds, &ks[j * a..(j + 1) * a], &mut dqs[i * a..(i + 1) * a]);
                axpy(ds, qi, &mut dks[j * a..(j + 1) * a]);
                axpy(p - pci, gi, &mut dvs[j * d..(j + 1) * d]);
            }
        }
    }
    dv += &ndarray::ArrayView1::from(&shared[..]);
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dense_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, beta: &Array2<f64>) -> Array2<f64> {
        let scale = 1.0 / (q.ncols() as f64).sqrt();
        let mut logits = q.dot(&k.t()) * scale * beta;
        for mut row in logits.outer_iter_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - mx).exp());
            let z = row.sum();
            row /= z;
        }
        logits.dot(v)
    }

    fn random_case(rng: &mut impl Rng, n: usize, a: usize, d: usize, density: f64) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let q = Array2::from_shape_fn((n, a), |_| rng.random_range(-1.0..1.0));
        let k = Array2::from_shape_fn((n, a), |_| rng.random_range(-1.0..1.0));
        let v = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let mut beta = Array2::zeros((n, n));
        for i in 0..n {
            beta[[i, i]] = 1.0;
            for j in 0..i {
                if rng.random_bool(density) {
                    let b = rng.random_range(0.0..1.0);
                    beta[[i, j]] = b;
                    beta[[j, i]] = b;
                }
            }
        }
        (q, k, v, beta)
    }

    #[test]
    fn matches_dense_softmax() {
        let mut rng = crate::seed::rng(3);
        for density in [0.0, 0.1, 0.5, 1.0] {
            let (q, k, v, beta) = random_case(&mut rng, 17, 4, 6, density);
            let (agg, _) = attention_forward(&q, &k, &v, &SparseBeta::from_dense(&beta));
            let want = dense_attention(&q, &k, &v, &beta);
            assert!((&agg - &want).iter().all(|x| x.abs() < 1e-12), "density {density}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::seed::rng(8);
        let (q, k, v, beta) = random_case(&mut rng, 9, 3, 4, 0.4);
        let sb = SparseBeta::from_dense(&beta);
        let w = Array2::from_shape_fn((9, 4), |_| rng.random_range(-1.0..1.0));
        let loss = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>| (dense_attention(q, k, v, &beta) * &w).sum();
        let (agg, tape) = attention_forward(&q, &k, &v, &sb);
        let (dq, dk, dv) = attention_backward(&q, &k, &v, &agg, &sb, &tape, &w);
        let h = 1e-6;
        for (which, grad) in [(0, &dq), (1, &dk), (2, &dv)] {
            let base = [&q, &k, &v][which];
            for idx in 0..base.len() {
                let (r, c) = (idx / base.ncols(), idx % base.ncols());
                let mut plus = [q.clone(), k.clone(), v.clone()];
                let mut minus = plus.clone();
                plus[which][[r, c]] += h;
                minus[which][[r, c]] -= h;
                let num = (loss(&plus[0], &plus[1], &plus[2]) - loss(&minus[0], &minus[1], &minus[2])) / (2.0 * h);
                assert!((num - grad[[r, c]]).abs() < 1e-7, "tensor {which} entry ({r},{c}): {num} vs {}", grad[[r, c]]);
            }
        }
    }

    #[test]
    fn identity_beta_averages_uniformly_off_diagonal() {
        let mut rng = crate::seed::rng(1);
        let (q, k, v, _) = random_case(&mut rng, 5, 2, 3, 0.0);
        let beta = Array2::eye(5);
        let (agg, tape) = attention_forward(&q, &k, &v, &SparseBeta::from_dense(&beta));
        let want = dense_attention(&q, &k, &v, &beta);
        assert!((&agg - &want).iter().all(|x| x.abs() < 1e-12));
        for i in 0..5 {
            let p_self = tape.probs[i];
            assert!((p_self + 4.0 * tape.pc[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_round_trip() {
        let beta = ndarray::arr2(&[[1.0, 0.0, 0.3], [0.0, 1.0, 0.0], [0.3, 0.0, 1.0]]);
        let sb = SparseBeta::from_dense(&beta);
        assert_eq!(sb.nnz(), 5);
        assert_eq!(sb.to_dense(), beta);
    }
}
