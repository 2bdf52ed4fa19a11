use nalgebra::{Matrix3, Vector3};

/// Singular value decomposition `m = u * diag(sigma) * v^T` of a 3×3 matrix.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    /// Non-negative, descending.
    pub sigma: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u * Matrix3::from_diagonal(&self.sigma) * self.v.transpose()
    }
}

const MAX_SWEEPS: usize = 64;
// Singular values below this fraction of the largest are treated as zero
// when completing U.
const RANK_TOL: f64 = 1e-13;

/// One-sided (Hestenes) Jacobi SVD.
///
/// Columns of `m` are orthogonalized by plane rotations accumulated into `v`;
/// the column norms are the singular values. Rank-deficient inputs get their
/// null directions of `u` completed to an orthonormal basis.
pub fn svd3(m: &Matrix3<f64>) -> Svd3 {
    let mut w = *m;
    let mut v = Matrix3::<f64>::identity();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = w.column(p).norm_squared();
            let beta = w.column(q).norm_squared();
            let gamma = w.column(p).dot(&w.column(q));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            rotate_columns(&mut w, p, q, c, s);
            rotate_columns(&mut v, p, q, c, s);
        }
        if !rotated {
            break;
        }
    }

    let norms = Vector3::new(w.column(0).norm(), w.column(1).norm(), w.column(2).norm());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let mut sigma = Vector3::zeros();
    let mut v_sorted = Matrix3::zeros();
    let mut w_sorted = Matrix3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        v_sorted.set_column(dst, &v.column(src));
        w_sorted.set_column(dst, &w.column(src));
    }

    let sigma_max = sigma[0];
    let rank = if sigma_max == 0.0 {
        0
    } else {
        (0..3).filter(|&k| sigma[k] > RANK_TOL * sigma_max).count()
    };
    for k in rank..3 {
        sigma[k] = 0.0;
    }

    let mut u = Matrix3::zeros();
    for k in 0..rank {
        let mut col: Vector3<f64> = w_sorted.column(k) / sigma[k];
        for j in 0..k {
            let prev = u.column(j).into_owned();
            col -= prev * prev.dot(&col);
        }
        u.set_column(k, &col.normalize());
    }
    complete_basis(&mut u, rank);

    Svd3 { u, sigma, v: v_sorted }
}

fn rotate_columns(m: &mut Matrix3<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..3 {
        let mp = m[(r, p)];
        let mq = m[(r, q)];
        m[(r, p)] = c * mp - s * mq;
        m[(r, q)] = s * mp + c * mq;
    }
}

/// Fills columns `rank..3` of `u` so that all three columns are orthonormal.
fn complete_basis(u: &mut Matrix3<f64>, rank: usize) {
    match rank {
        0 => *u = Matrix3::identity(),
        1 => {
            let u0 = u.column(0).into_owned();
            // axis least aligned with u0
            let mut axis = 0;
            for k in 1..3 {
                if u0[k].abs() < u0[axis].abs() {
                    axis = k;
                }
            }
            let mut e = Vector3::zeros();
            e[axis] = 1.0;
            let u1 = (e - u0 * u0.dot(&e)).normalize();
            u.set_column(1, &u1);
            u.set_column(2, &u0.cross(&u1));
        }
        2 => {
            let u2 = u.column(0).cross(&u.column(1)).normalize();
            u.set_column(2, &u2);
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn check(m: &Matrix3<f64>) {
        let svd = svd3(m);
        let scale = m.abs().max().max(1.0);
        assert!((svd.reconstruct() - m).abs().max() <= 1e-10 * scale);
        assert!((svd.u.transpose() * svd.u - Matrix3::identity()).abs().max() < 1e-12);
        assert!((svd.v.transpose() * svd.v - Matrix3::identity()).abs().max() < 1e-12);
        assert!(svd.sigma[0] >= svd.sigma[1] && svd.sigma[1] >= svd.sigma[2]);
        assert!(svd.sigma[2] >= 0.0);
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = svd3(&Matrix3::identity());
        assert_eq!(svd.sigma, Vector3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn zero_matrix() {
        let svd = svd3(&Matrix3::zeros());
        assert_eq!(svd.sigma, Vector3::zeros());
        check(&Matrix3::zeros());
    }

    #[test]
    fn rank_deficient_inputs() {
        let a = Vector3::new(1.0, 2.0, -0.5);
        let b = Vector3::new(0.3, -1.0, 2.0);
        check(&(a * b.transpose()));
        check(&(a * b.transpose() + b * a.transpose()));
        check(&Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn random_matrices_reconstruct() {
        let mut rng = crate::seed::rng(11);
        for _ in 0..1000 {
            let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            check(&m);
        }
    }
}
