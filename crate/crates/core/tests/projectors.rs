use nalgebra::{DMatrix, DVector};
use sdae_core::brownian::standard_normals;
use sdae_core::projector::{compute_projectors, projectors_of, MatrixFn, DEFAULT_RANK_TOL};

fn example3d_a(t: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[1.0, 0.0, 0.0, -1.0, 0.0, t * t + 1.0, 0.0, 0.0, 0.0],
    )
}

fn gaussian(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_vec(rows, cols, standard_normals(seed, 0, rows * cols))
}

/// Random `d × d` matrices of rank `r < d` built as a product of factors.
fn rank_deficient(k: u64) -> (DMatrix<f64>, usize) {
    let d = 2 + (k % 7) as usize;
    let r = (k / 7) as usize % d;
    let a = if r == 0 {
        DMatrix::zeros(d, d)
    } else {
        gaussian(2 * k + 1, d, r) * gaussian(2 * k + 2, r, d)
    };
    (a, r)
}

#[test]
fn random_rank_deficient_matrices_satisfy_identities() {
    for k in 0..200 {
        let (a, r) = rank_deficient(k);
        let ps = projectors_of(&a, 0.0, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ps.rank, r, "matrix {k}");
        let res = ps.residuals(&a);
        assert!(
            ps.satisfies_invariants(&a, DEFAULT_RANK_TOL),
            "matrix {k} (d = {}, r = {r}): {res:?}, tol {}",
            a.nrows(),
            ps.tolerance(DEFAULT_RANK_TOL)
        );
        assert_eq!(ps.q, DMatrix::identity(a.nrows(), a.nrows()) - &ps.p);
    }
}

#[test]
fn nonsingular_pinv_is_the_inverse() {
    for k in 0..50 {
        let d = 2 + (k % 7) as usize;
        let a = gaussian(1000 + k, d, d) + DMatrix::identity(d, d) * 3.0;
        let ps = projectors_of(&a, 0.0, DEFAULT_RANK_TOL).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        let rel = (&ps.a_pinv - &inv).norm() / inv.norm();
        assert!(rel < 1e-10, "matrix {k}: relative difference {rel}");
        assert_eq!(ps.rank, d);
    }
}

#[test]
fn three_dim_closed_forms_hold_over_the_horizon() {
    let a = MatrixFn::new(3, example3d_a);
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let c = 1.0 / (t * t + 1.0);
        let ps = compute_projectors(&a, t, DEFAULT_RANK_TOL).unwrap();
        let pinv = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, c, c, 0.0]);
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0]));
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 1.0]));
        assert!((&ps.a_pinv - pinv).amax() <= 1e-12, "t = {t}");
        assert!((&ps.p - p).amax() <= 1e-12, "t = {t}");
        assert!((&ps.r - r).amax() <= 1e-12, "t = {t}");
        assert!(ps.satisfies_invariants(&example3d_a(t), DEFAULT_RANK_TOL));
    }
}

#[test]
fn two_dim_example_over_the_horizon() {
    let a = MatrixFn::new(2, |t| {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, t * t + 1.0, 0.0])
    });
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let ps = compute_projectors(&a, t, DEFAULT_RANK_TOL).unwrap();
        let pinv = DMatrix::from_row_slice(2, 2, &[0.0, 1.0 / (t * t + 1.0), 0.0, 0.0]);
        assert!((&ps.a_pinv - pinv).amax() <= 1e-12);
        assert!(ps.satisfies_invariants(&a.eval(t), DEFAULT_RANK_TOL));
    }
}
