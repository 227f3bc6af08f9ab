//! Pseudo-inverse and projector construction for a possibly singular,
//! time-dependent leading matrix `A(t)`.
//!
//! For every `t` we build the Moore-Penrose inverse `A⁻` from a thin SVD and
//! derive the orthogonal projectors
//!
//! ```text
//! P = A⁻A      (onto the dynamic subspace, Ker A = Im Q)
//! Q = I - P
//! R = I - AA⁻  (along Im A, extracts the constraints)
//! ```
//!
//! Numerical rank is the count of singular values above
//! `rank_tol * sigma_max * d`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{is_finite_matrix, Svd};

/// Default relative rank cutoff.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// A time-dependent dense `d × d` matrix.
#[derive(Clone)]
pub struct MatrixFn {
    dim: usize,
    constant: bool,
    eval: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>,
}

impl MatrixFn {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MatrixFn {
            dim,
            constant: false,
            eval: Arc::new(f),
        }
    }

    /// A matrix that does not depend on `t`. Consumers may cache anything
    /// derived from it.
    pub fn constant(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "MatrixFn must be square");
        let dim = m.nrows();
        MatrixFn {
            dim,
            constant: true,
            eval: Arc::new(move |_| m.clone()),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self::constant(DMatrix::zeros(dim, dim))
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        (self.eval)(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }
}

impl fmt::Debug for MatrixFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixFn")
            .field("dim", &self.dim)
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

/// `A⁻`, `P`, `Q`, `R` and the numerical rank of `A` at one time point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorSet {
    pub t: f64,
    pub a_pinv: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rank: usize,
    /// Largest singular value of `A(t)`.
    pub sigma_max: f64,
}

/// Frobenius norms of the defect in each projector identity.
#[derive(Clone, Debug, Default)]
pub struct IdentityResiduals {
    pub p_idempotent: f64,
    pub r_idempotent: f64,
    pub q_complement: f64,
    pub r_annihilates_a: f64,
    pub pinv_a_is_p: f64,
    pub a_pinv_is_i_minus_r: f64,
    pub pinv_reflexive: f64,
    pub a_reflexive: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        [
            self.p_idempotent,
            self.r_idempotent,
            self.q_complement,
            self.r_annihilates_a,
            self.pinv_a_is_p,
            self.a_pinv_is_i_minus_r,
            self.pinv_reflexive,
            self.a_reflexive,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl ProjectorSet {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// Absolute tolerance for the identities: `rank_tol * sigma_max * d`.
    pub fn tolerance(&self, rank_tol: f64) -> f64 {
        rank_tol * self.sigma_max * self.dim() as f64
    }

    pub fn residuals(&self, a: &DMatrix<f64>) -> IdentityResiduals {
        let d = self.dim();
        let id = DMatrix::<f64>::identity(d, d);
        IdentityResiduals {
            p_idempotent: (&self.p * &self.p - &self.p).norm(),
            r_idempotent: (&self.r * &self.r - &self.r).norm(),
            q_complement: (&id - &self.p - &self.q).norm(),
            r_annihilates_a: (&self.r * a).norm(),
            pinv_a_is_p: (&self.a_pinv * a - &self.p).norm(),
            a_pinv_is_i_minus_r: (a * &self.a_pinv - (&id - &self.r)).norm(),
            pinv_reflexive: (&self.a_pinv * a * &self.a_pinv - &self.a_pinv).norm(),
            a_reflexive: (a * &self.a_pinv * a - a).norm(),
        }
    }

    /// True when every identity holds within [`ProjectorSet::tolerance`].
    pub fn satisfies_invariants(&self, a: &DMatrix<f64>, rank_tol: f64) -> bool {
        // A zero matrix has sigma_max = 0; allow a floor of machine epsilon.
        let tol = self
            .tolerance(rank_tol)
            .max(f64::EPSILON * self.dim() as f64);
        self.residuals(a).max() <= tol
    }
}

/// Moore-Penrose projectors of an already-evaluated matrix.
pub fn projectors_of(a: &DMatrix<f64>, t: f64, rank_tol: f64) -> Result<ProjectorSet> {
    if !is_finite_matrix(a) {
        return Err(Error::NonFiniteMatrix { t });
    }
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::Dimension(format!(
            "A({t}) is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let svd = Svd::new(a);
    let sigma = &svd.sigma;
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rank_tol * sigma_max * d as f64;

    let mut a_pinv = DMatrix::zeros(d, d);
    let mut p = DMatrix::zeros(d, d);
    let mut range = DMatrix::zeros(d, d);
    let mut rank = 0;
    for k in 0..sigma.len() {
        if sigma_max == 0.0 || sigma[k] <= cutoff {
            continue;
        }
        rank += 1;
        let uk = svd.u.column(k);
        let vk = svd.v.column(k);
        a_pinv += vk * uk.transpose() / sigma[k];
        p += vk * vk.transpose();
        range += uk * uk.transpose();
    }
    let id = DMatrix::<f64>::identity(d, d);
    if rank == d {
        // Full rank: the projectors are exact.
        p = id.clone();
        range = id.clone();
    }
    // Projector entries are O(1); round-off below d·eps is cleared so that
    // structurally zero entries are exactly zero.
    let snap = |m: DMatrix<f64>| {
        m.map(|x| {
            if x.abs() <= d as f64 * f64::EPSILON {
                0.0
            } else {
                x
            }
        })
    };
    let p = snap(p);
    let q = &id - &p;
    let r = snap(&id - range);
    Ok(ProjectorSet {
        t,
        a_pinv,
        p,
        q,
        r,
        rank,
        sigma_max,
    })
}

/// Builds the projector set for `A(t)`.
pub fn compute_projectors(a: &MatrixFn, t: f64, rank_tol: f64) -> Result<ProjectorSet> {
    projectors_of(&a.eval(t), t, rank_tol)
}

/// Default finite-difference step for `P'(t)`.
pub fn default_fd_step(t: f64) -> f64 {
    1e-6 * t.abs().max(1.0)
}

/// Finite-difference derivative of a projector-valued function that also
/// reports rank. Central where `t - step >= 0`, forward otherwise.
pub(crate) fn fd_projector_derivative<F>(p_at: F, t: f64, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> Result<(DMatrix<f64>, usize)>,
{
    let (lo_t, hi_t) = if t - step >= 0.0 {
        (t - step, t + step)
    } else {
        (t, t + step)
    };
    let (p_lo, r_lo) = p_at(lo_t)?;
    let (p_hi, r_hi) = p_at(hi_t)?;
    if r_lo != r_hi {
        return Err(Error::RankChange {
            t0: lo_t,
            rank0: r_lo,
            t1: hi_t,
            rank1: r_hi,
        });
    }
    Ok((p_hi - p_lo) / (hi_t - lo_t))
}

/// Finite-difference approximation of `P'(t)` where `P = A⁻A`.
pub fn projector_derivative(
    a: &MatrixFn,
    t: f64,
    fd_step: f64,
    rank_tol: f64,
) -> Result<DMatrix<f64>> {
    let d = a.dim();
    if a.is_constant() {
        return Ok(DMatrix::zeros(d, d));
    }
    fd_projector_derivative(
        |s| compute_projectors(a, s, rank_tol).map(|ps| (ps.p, ps.rank)),
        t,
        fd_step,
    )
}

/// Outcome of checking that `P(t)` is constant over a sample of times.
#[derive(Clone, Debug)]
pub struct A13Report {
    pub max_derivative_norm: f64,
    pub constant_rank: bool,
    pub ranks: Vec<usize>,
    pub tol: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Samples `||P'(t)||` and `rank A(t)` and flags whether `P' = 0` holds
/// within `tol` with a constant rank. Never fails; problems land in `notes`.
pub fn check_a13(a: &MatrixFn, sample_times: &[f64], tol: f64) -> A13Report {
    let mut max_norm = 0.0_f64;
    let mut ranks = Vec::with_capacity(sample_times.len());
    let mut notes = Vec::new();
    let mut derivative_ok = true;
    for &t in sample_times {
        match compute_projectors(a, t, DEFAULT_RANK_TOL) {
            Ok(ps) => ranks.push(ps.rank),
            Err(e) => {
                notes.push(format!("t = {t}: {e}"));
                derivative_ok = false;
                continue;
            }
        }
        match projector_derivative(a, t, default_fd_step(t), DEFAULT_RANK_TOL) {
            Ok(dp) => max_norm = max_norm.max(dp.norm()),
            Err(e) => {
                notes.push(format!("t = {t}: {e}"));
                derivative_ok = false;
            }
        }
    }
    let constant_rank = ranks.windows(2).all(|w| w[0] == w[1]);
    if !constant_rank {
        notes.push(format!("rank of A varies over samples: {ranks:?}"));
    }
    if !derivative_ok {
        max_norm = f64::INFINITY;
    }
    let pass = derivative_ok && constant_rank && max_norm <= tol && !sample_times.is_empty();
    A13Report {
        max_derivative_norm: max_norm,
        constant_rank,
        ranks,
        tol,
        pass,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    fn example_a() -> MatrixFn {
        MatrixFn::new(2, |t| {
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, t * t + 1.0, 0.0])
        })
    }

    fn example3d_a() -> MatrixFn {
        MatrixFn::new(3, |t| {
            DMatrix::from_row_slice(
                3,
                3,
                &[1.0, 0.0, 0.0, -1.0, 0.0, t * t + 1.0, 0.0, 0.0, 0.0],
            )
        })
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert!((a - b).amax() <= tol, "\n{a}\nvs\n{b}");
    }

    #[test]
    fn two_by_two_singular_example() {
        let a = example_a();
        let ps = compute_projectors(&a, 1.0, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ps.rank, 1);
        assert_close(
            &ps.a_pinv,
            &DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]),
            1e-15,
        );
        assert_close(
            &ps.p,
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            1e-15,
        );
        assert!((&ps.r * a.eval(1.0)).norm() < 1e-15);
        assert!(ps.satisfies_invariants(&a.eval(1.0), DEFAULT_RANK_TOL));
    }

    #[test]
    fn identity_gives_trivial_projectors() {
        let a = MatrixFn::identity(3);
        let ps = compute_projectors(&a, 0.7, DEFAULT_RANK_TOL).unwrap();
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(ps.rank, 3);
        assert_close(&ps.a_pinv, &id, 1e-15);
        assert_close(&ps.p, &id, 1e-15);
        assert!(ps.q.amax() < 1e-15);
        assert!(ps.r.amax() < 1e-15);
    }

    #[test]
    fn three_dim_example_at_origin() {
        let ps = compute_projectors(&example3d_a(), 0.0, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ps.rank, 2);
        assert_close(
            &ps.a_pinv,
            &DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]),
            1e-12,
        );
        assert_close(&ps.p, &diag(&[1.0, 0.0, 1.0]), 1e-12);
        assert_close(&ps.r, &diag(&[0.0, 0.0, 1.0]), 1e-12);
    }

    #[test]
    fn non_finite_matrix_is_rejected() {
        let a = MatrixFn::new(2, |_| {
            DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0])
        });
        assert_eq!(
            compute_projectors(&a, 0.0, DEFAULT_RANK_TOL),
            Err(Error::NonFiniteMatrix { t: 0.0 })
        );
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let ps = compute_projectors(&MatrixFn::zeros(2), 0.0, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ps.rank, 0);
        assert_eq!(ps.p, DMatrix::zeros(2, 2));
        assert_eq!(ps.r, DMatrix::identity(2, 2));
        assert!(ps.satisfies_invariants(&DMatrix::zeros(2, 2), DEFAULT_RANK_TOL));
    }

    #[test]
    fn derivative_vanishes_for_constant_projector() {
        let dp = projector_derivative(&example_a(), 0.5, 1e-5, DEFAULT_RANK_TOL).unwrap();
        assert!(dp.norm() <= 1e-8);
        let dp = projector_derivative(&example3d_a(), 0.3, default_fd_step(0.3), DEFAULT_RANK_TOL)
            .unwrap();
        assert!(dp.norm() <= 1e-8);
        let c = MatrixFn::constant(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(
            projector_derivative(&c, 0.4, 1e-6, DEFAULT_RANK_TOL).unwrap(),
            DMatrix::zeros(2, 2)
        );
    }

    #[test]
    fn derivative_detects_rotating_projector() {
        // P(t) projects onto (cos t, sin t); P'(0) = [[0,1],[1,0]].
        let a = MatrixFn::new(2, |t: f64| {
            let (s, c) = t.sin_cos();
            DMatrix::from_row_slice(2, 2, &[c * c, c * s, c * s, s * s])
        });
        let dp = projector_derivative(&a, 0.0, 1e-6, DEFAULT_RANK_TOL).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((dp - expected).amax() < 1e-5);
    }

    #[test]
    fn derivative_across_rank_change_fails() {
        let a = MatrixFn::new(2, |t| diag(&[t, 1.0]));
        let err = projector_derivative(&a, 0.0, 1e-6, DEFAULT_RANK_TOL).unwrap_err();
        assert!(matches!(
            err,
            Error::RankChange {
                rank0: 1,
                rank1: 2,
                ..
            }
        ));
    }

    #[test]
    fn a13_diagnostics() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let rep = check_a13(&example3d_a(), &times, 1e-6);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.constant_rank);
        assert!(rep.ranks.iter().all(|&r| r == 2));

        let drop = MatrixFn::new(2, |t| diag(&[t, 1.0]));
        let rep = check_a13(&drop, &times, 1e-6);
        assert!(!rep.pass);
        assert!(!rep.constant_rank);

        let rep = check_a13(&MatrixFn::identity(4), &times, 1e-6);
        assert!(rep.pass);
        assert_eq!(rep.ranks[0], 4);
    }

    #[test]
    fn projectors_are_deterministic() {
        let a = example3d_a();
        let p1 = compute_projectors(&a, 0.37, DEFAULT_RANK_TOL).unwrap();
        let p2 = compute_projectors(&a, 0.37, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p1, p2);
    }
}
