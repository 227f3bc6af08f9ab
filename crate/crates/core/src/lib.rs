//! Simulation of index-1 stochastic differential-algebraic equations
//!
//! ```text
//! A(t) dY = [B(t) Y + f(t, Y)] dt + g(t, Y) dW,   Y(0) = ζ
//! ```
//!
//! with a singular leading matrix `A(t)`, using a semi-implicit Euler scheme
//! that needs a single linear solve with `A - hB` per step. A projector-split
//! formulation of the same recursion is provided as an independent check,
//! together with structural validators and a pathwise-convergence harness.

pub mod brownian;
pub mod convergence;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod models;
pub mod problem;
pub mod projector;

pub use brownian::{BrownianPath, NoiseIncrements};
pub use convergence::{
    increment_moments, pathwise_error, run_sample, run_study, ConvergenceReport, Study,
    StudyConfig, StudySummary,
};
pub use error::{Error, Result};
pub use integrators::{integrate, step_dual, step_primary, DualState, Scheme, Trajectory};
pub use problem::{validate, SdaeProblem, ValidationConfig, ValidationReport};
pub use projector::{compute_projectors, MatrixFn, ProjectorSet};
