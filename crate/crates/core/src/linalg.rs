//! Dense linear-algebra helpers shared by the schemes and validators.

use nalgebra::{DMatrix, DVector, Dyn, LU};

/// Relative singularity threshold for per-step linear systems.
pub const SINGULARITY_TOL: f64 = 1e-12;

/// Returns `(sigma_min, sigma_max)` of a square matrix.
pub fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// `sigma_min / sigma_max`, or 0 for the zero matrix.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    let (min, max) = extreme_singular_values(m);
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

pub fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vector(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Thin SVD `m = u diag(sigma) v^T` with orthonormal columns in `u` and `v`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    /// Decomposes a square matrix. The LAPACK-style bidiagonal SVD is tried
    /// first; if its reconstruction is inaccurate (it occasionally returns
    /// wrong singular vectors for exactly rank-deficient input) the
    /// one-sided Jacobi method is used instead.
    pub fn new(m: &DMatrix<f64>) -> Svd {
        let scale = m.amax();
        if scale > 0.0 {
            let svd = m.clone().svd(true, true);
            if let (Some(u), Some(v_t)) = (svd.u, svd.v_t) {
                let fast = Svd {
                    u,
                    sigma: svd.singular_values,
                    v: v_t.transpose(),
                };
                if fast.reconstruction_error(m) <= 1e-13 * scale * m.nrows().max(1) as f64 {
                    return fast;
                }
            }
        }
        jacobi_svd(m)
    }

    pub fn reconstruction_error(&self, m: &DMatrix<f64>) -> f64 {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        (us * self.v.transpose() - m).amax()
    }
}

/// One-sided (Hestenes) Jacobi SVD of a square matrix.
fn jacobi_svd(m: &DMatrix<f64>) -> Svd {
    let n = m.ncols();
    let mut w = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
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
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = DVector::zeros(n);
    let mut u = DMatrix::zeros(m.nrows(), n);
    for k in 0..n {
        let s = w.column(k).norm();
        sigma[k] = s;
        if s > 0.0 {
            u.set_column(k, &(w.column(k) / s));
        }
    }
    // Order by decreasing singular value and complete u to an orthonormal basis.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let sigma = DVector::from_iterator(n, order.iter().map(|&k| sigma[k]));
    let v = DMatrix::from_columns(&order.iter().map(|&k| v.column(k)).collect::<Vec<_>>());
    let mut u = DMatrix::from_columns(&order.iter().map(|&k| u.column(k)).collect::<Vec<_>>());
    complete_basis(&mut u, &sigma);
    Svd { u, sigma, v }
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// Replaces the columns of `u` belonging to zero singular values with an
/// orthonormal completion (Gram-Schmidt against the unit vectors).
fn complete_basis(u: &mut DMatrix<f64>, sigma: &DVector<f64>) {
    let n = u.nrows();
    let mut filled = sigma.iter().take_while(|s| **s > 0.0).count();
    let mut e = 0;
    while filled < u.ncols() && e < n {
        let mut x = DVector::<f64>::zeros(n);
        x[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for k in 0..filled {
                let proj = u.column(k).dot(&x);
                x -= u.column(k) * proj;
            }
        }
        let norm = x.norm();
        if norm > 1e-8 {
            u.set_column(filled, &(x / norm));
            filled += 1;
        }
    }
}

/// A partial-pivoted LU factorization that has passed the singularity check.
#[derive(Clone, Debug)]
pub struct Factorized {
    lu: LU<f64, Dyn, Dyn>,
    matrix: DMatrix<f64>,
}

impl Factorized {
    /// Factors `m`, or returns the observed `sigma_min / sigma_max` when it
    /// falls below [`SINGULARITY_TOL`].
    pub fn new(m: DMatrix<f64>) -> Result<Self, f64> {
        let ratio = inverse_condition(&m);
        if ratio.is_nan() || ratio < SINGULARITY_TOL {
            return Err(ratio);
        }
        Ok(Factorized {
            lu: m.clone().lu(),
            matrix: m,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Solves `M x = rhs` and returns `(x, ||M x - rhs||)`.
    pub fn solve(&self, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
        let x = self
            .lu
            .solve(rhs)
            .unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN));
        let residual = (&self.matrix * &x - rhs).norm();
        (x, residual)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu
            .solve(rhs)
            .unwrap_or_else(|| DMatrix::from_element(rhs.nrows(), rhs.ncols(), f64::NAN))
    }
}
