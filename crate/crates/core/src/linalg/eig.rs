use ndarray::Array2;

use crate::error::{Error, Result};

/// A symmetric matrix. Symmetry is enforced at construction by averaging
/// `a` with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c {
            return Err(Error::ShapeMismatch(format!("matrix is {r}x{c}, not square")));
        }
        if r == 0 {
            return Err(Error::ShapeMismatch("empty matrix".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("matrix has non-finite entries".into()));
        }
        let data = (&a + &a.t()) * 0.5;
        Ok(Self { data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((n, n), |(i, j)| f(i, j)))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Eigenvalues ascending; eigenvectors are the columns of `eigenvectors`,
/// each with its first non-negligible component positive.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Array2<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> Array2<f64> {
        let v = &self.eigenvectors;
        let mut vl = v.clone();
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            vl.column_mut(k).mapv_inplace(|x| x * lambda);
        }
        vl.dot(&v.t())
    }
}

const QL_MAX_ITER_PER_VALUE: usize = 64;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Full eigendecomposition of a symmetric matrix by Householder
/// tridiagonalization followed by implicit QL with Wilkinson-style shifts.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomposition> {
    let n = a.n();
    let mut v: Vec<Vec<f64>> = a.as_array().outer_iter().map(|r| r.to_vec()).collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n == 1 {
        return Ok(finish(vec![v[0][0]], vec![vec![1.0]]));
    }
    tridiagonalize(&mut v, &mut d, &mut e);
    // rows of `vt` are the eigenvector estimates
    let mut vt = transpose(&v);
    tridiagonal_ql(&mut d, &mut e, &mut vt)?;
    Ok(finish(d, vt))
}

/// Cyclic Jacobi eigendecomposition. Slower than [`sym_eig`] but built
/// from entirely different arithmetic, which makes it a useful cross-check.
pub fn sym_eig_jacobi(a: &SymMatrix) -> Result<EigenDecomposition> {
    let n = a.n();
    let mut m: Vec<Vec<f64>> = a.as_array().outer_iter().map(|r| r.to_vec()).collect();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[p][q] * m[p][q])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p][q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (mp, mq) = (row[p], row[q]);
                    row[p] = c * mp - s * mq;
                    row[q] = s * mp + c * mq;
                }
                for k in 0..n {
                    let (mp, mq) = (m[p][k], m[q][k]);
                    m[p][k] = c * mp - s * mq;
                    m[q][k] = s * mp + c * mq;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure(JACOBI_MAX_SWEEPS));
    }
    let d = (0..n).map(|i| m[i][i]).collect();
    Ok(finish(d, transpose(&v)))
}

fn transpose(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = v.len();
    (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect()
}

/// Sorts ascending (stable, so ties keep solver order) and fixes signs.
fn finish(d: Vec<f64>, vt: Vec<Vec<f64>>) -> EigenDecomposition {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let mut eigenvectors = Array2::zeros((n, n));
    let mut eigenvalues = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        eigenvalues.push(d[k]);
        let vec = &vt[k];
        let sign = vec
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for (row, &x) in vec.iter().enumerate() {
            eigenvectors[[row, col]] = sign * x;
        }
    }
    EigenDecomposition { eigenvalues, eigenvectors }
}

/// Householder reduction to tridiagonal form. On return `d` holds the
/// diagonal, `e[1..]` the sub-diagonal and `v` the accumulated orthogonal
/// transform (columns).
fn tridiagonalize(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1]);

    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for x in d[..i].iter_mut() {
                *x /= scale;
                h += *x * *x;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);

            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k][i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal (`d`, `e`). `vt` holds eigenvector
/// estimates as rows and is updated in place.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], vt: &mut [Vec<f64>]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER_PER_VALUE {
                    return Err(Error::ConvergenceFailure(QL_MAX_ITER_PER_VALUE));
                }
                let g0 = d[l];
                let mut p = (d[l + 1] - g0) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g0 - d[l];
                for x in d[l + 2..].iter_mut() {
                    *x -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (lo, hi) = vt.split_at_mut(i + 1);
                    let row_i = &mut lo[i];
                    let row_next = &mut hi[0];
                    for (a, b) in row_i.iter_mut().zip(row_next.iter_mut()) {
                        let hv = *b;
                        *b = s * *a + c * hv;
                        *a = c * *a - s * hv;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let mut rng = crate::seed::rng(seed);
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        SymMatrix::new(a).unwrap()
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check(a: &SymMatrix, eig: &EigenDecomposition) {
        let n = a.n();
        let norm = a.norm();
        let recon = eig.reconstruct() - a.as_array();
        assert!(max_abs(&recon) <= 1e-8 * norm, "reconstruction {}", max_abs(&recon));
        let vtv = eig.eigenvectors.t().dot(&eig.eigenvectors) - Array2::<f64>::eye(n);
        assert!(max_abs(&vtv) <= 1e-8);
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    /// Determinant by cofactor expansion.
    fn det(a: &[Vec<f64>]) -> f64 {
        let n = a.len();
        if n == 1 {
            return a[0][0];
        }
        (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> = a[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &x)| x).collect())
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[0][j] * det(&minor)
            })
            .sum()
    }

    #[test]
    fn identity_spectrum() {
        let a = SymMatrix::new(Array2::eye(3)).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_sorted() {
        let a = SymMatrix::from_fn(3, |i, j| if i == j { [3.0, 1.0, 2.0][i] } else { 0.0 }).unwrap();
        for eig in [sym_eig(&a).unwrap(), sym_eig_jacobi(&a).unwrap()] {
            assert_eq!(eig.eigenvalues, vec![1.0, 2.0, 3.0]);
            check(&a, &eig);
        }
    }

    #[test]
    fn single_entry() {
        let a = SymMatrix::from_fn(1, |_, _| -4.5).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert_eq!(eig.eigenvalues, vec![-4.5]);
        assert_eq!(eig.eigenvectors[[0, 0]], 1.0);
    }

    #[test]
    fn random_reconstruction_and_trace() {
        for seed in 0..20 {
            let a = random_sym(20, seed);
            let eig = sym_eig(&a).unwrap();
            check(&a, &eig);
            let trace: f64 = a.as_array().diag().sum();
            let sum: f64 = eig.eigenvalues.iter().sum();
            assert!((trace - sum).abs() <= 1e-8 * a.norm());
        }
    }

    #[test]
    fn product_matches_cofactor_determinant() {
        for n in 1..=5 {
            let a = random_sym(n, 100 + n as u64);
            let rows: Vec<Vec<f64>> = a.as_array().outer_iter().map(|r| r.to_vec()).collect();
            let eig = sym_eig(&a).unwrap();
            let prod: f64 = eig.eigenvalues.iter().product();
            assert!((prod - det(&rows)).abs() <= 1e-6, "n={n}");
        }
    }

    #[test]
    fn jacobi_agrees_with_ql() {
        for seed in 0..10 {
            let a = random_sym(12, 500 + seed);
            let ql = sym_eig(&a).unwrap();
            let jac = sym_eig_jacobi(&a).unwrap();
            check(&a, &jac);
            for (x, y) in ql.eigenvalues.iter().zip(&jac.eigenvalues) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sign_convention() {
        let a = random_sym(8, 3);
        let eig = sym_eig(&a).unwrap();
        for col in eig.eigenvectors.columns() {
            let first = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn deterministic() {
        let a = random_sym(30, 9);
        let e1 = sym_eig(&a).unwrap();
        let e2 = sym_eig(&a).unwrap();
        assert_eq!(e1.eigenvalues, e2.eigenvalues);
        assert_eq!(e1.eigenvectors, e2.eigenvectors);
    }

    #[test]
    fn degenerate_spectrum_block_matrix() {
        // two disjoint all-ones blocks: eigenvalues 0 (n-2 times) and block sizes
        let a = SymMatrix::from_fn(7, |i, j| if (i < 3) == (j < 3) { 1.0 } else { 0.0 }).unwrap();
        let eig = sym_eig(&a).unwrap();
        check(&a, &eig);
        let top: Vec<f64> = eig.eigenvalues[5..].to_vec();
        assert!((top[0] - 3.0).abs() < 1e-12 && (top[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_square() {
        assert!(SymMatrix::new(Array2::zeros((2, 3))).is_err());
    }
}
