//! A three-dimensional index-1 test system with a singular, time-dependent
//! mass matrix
//!
//! ```text
//! A(t) = [ 1 0 0 ; -1 0 t²+1 ; 0 0 0 ],   ζ = (1, -2, 1),   T = 1
//! μ(t, Y) = ( -y1 - y1³,  y1 + y1³ + y3,  y1 + y2 + y3 )
//! g(t, Y) = [ √2 y1²  0  0 ; -√2 y1² + y2  y1 + y3  y1 ; 0 0 0 ]
//! ```
//!
//! Written with the whole drift in `f`, `A - hB = A` is singular and the
//! semi-implicit step is ill-posed. The registered model therefore moves the
//! linear part of the drift into `B` and keeps the cubic terms in `f`; the
//! total drift `BY + f` is unchanged.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::SQRT_2;

use crate::problem::SdaeProblem;
use crate::projector::MatrixFn;

pub const NAME: &str = "example3d";
pub const UNSPLIT_NAME: &str = "example3d-unsplit";

fn mass() -> MatrixFn {
    MatrixFn::new(3, |t| {
        DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, -1.0, 0.0, t * t + 1.0, 0.0, 0.0, 0.0],
        )
    })
}

fn diffusion(_t: f64, y: &DVector<f64>) -> DMatrix<f64> {
    let s = SQRT_2 * y[0] * y[0];
    DMatrix::from_row_slice(
        3,
        3,
        &[s, 0.0, 0.0, -s + y[1], y[0] + y[2], y[0], 0.0, 0.0, 0.0],
    )
}

fn zeta() -> DVector<f64> {
    DVector::from_vec(vec![1.0, -2.0, 1.0])
}

/// The linear part of the drift, carried by `B`.
pub fn linear_drift() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0])
}

/// The model with its `B`/`f` split registered.
pub fn example3d() -> SdaeProblem {
    SdaeProblem::new(
        NAME,
        mass(),
        MatrixFn::constant(linear_drift()),
        |_, y: &DVector<f64>| {
            let c = y[0] * y[0] * y[0];
            DVector::from_vec(vec![-c, c, 0.0])
        },
        diffusion,
        3,
        zeta(),
        1.0,
    )
    .expect("example3d dimensions are consistent")
    .with_note(
        "B-split: B = [[-1,0,0],[1,0,1],[1,1,1]] carries the linear drift, f = (-y1^3, y1^3, 0)",
    )
}

/// The same system with `B = 0` and the full drift in `f`.
pub fn example3d_unsplit() -> SdaeProblem {
    SdaeProblem::new(
        UNSPLIT_NAME,
        mass(),
        MatrixFn::zeros(3),
        |_, y: &DVector<f64>| {
            let c = y[0] * y[0] * y[0];
            DVector::from_vec(vec![-y[0] - c, y[0] + c + y[2], y[0] + y[1] + y[2]])
        },
        diffusion,
        3,
        zeta(),
        1.0,
    )
    .expect("example3d dimensions are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{sample_states, sample_times};

    #[test]
    fn split_preserves_total_drift() {
        let a = example3d();
        let b = example3d_unsplit();
        for y in sample_states(&a, 10, 2.0, 3) {
            for t in sample_times(1.0, 5) {
                let diff = a.total_drift(t, &y) - b.total_drift(t, &y);
                assert!(diff.amax() < 1e-12);
            }
        }
    }

    #[test]
    fn diffusion_third_row_vanishes() {
        let p = example3d();
        for y in sample_states(&p, 20, 3.0, 9) {
            let g = p.diffusion(0.4, &y);
            assert!(g.row(2).iter().all(|v| *v == 0.0));
        }
    }
}
