//! Ready-made problem instances, addressable by name.

pub mod example3d;
pub mod heat2d;

use nalgebra::{DMatrix, DVector};

pub use example3d::{example3d, example3d_unsplit};
pub use heat2d::{build_heat2d, default_porosity, Heat2dSpec, PorosityField};

use crate::error::{Error, Result};
use crate::problem::SdaeProblem;
use crate::projector::MatrixFn;

pub const BROKEN_INDEX1: &str = "broken-index1";
pub const ORNSTEIN_UHLENBECK: &str = "ornstein-uhlenbeck";

/// Names accepted by [`by_name`].
pub const MODEL_NAMES: [&str; 5] = [
    example3d::NAME,
    example3d::UNSPLIT_NAME,
    heat2d::NAME,
    BROKEN_INDEX1,
    ORNSTEIN_UHLENBECK,
];

/// Parameters used by the parametrised models; ignored by the others.
#[derive(Clone, Debug)]
pub struct ModelOptions {
    pub m: usize,
    pub diffusion: f64,
    pub noise_amp: f64,
    pub porosity: Option<PorosityField>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            m: 20,
            diffusion: 100.0,
            noise_amp: 1e-4,
            porosity: None,
        }
    }
}

impl ModelOptions {
    pub fn heat2d_spec(&self) -> Result<Heat2dSpec> {
        let porosity = match &self.porosity {
            Some(p) => p.clone(),
            None => default_porosity(self.m)?,
        };
        Ok(Heat2dSpec {
            m: self.m,
            diffusion: self.diffusion,
            noise_amp: self.noise_amp,
            porosity,
            horizon: 1.0,
        })
    }
}

/// A two-dimensional system whose noise drives the algebraic row; it fails
/// the index-1 check by construction.
pub fn broken_index1() -> SdaeProblem {
    SdaeProblem::new(
        BROKEN_INDEX1,
        MatrixFn::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))),
        MatrixFn::constant(-DMatrix::identity(2, 2)),
        |_, _| DVector::zeros(2),
        |_, _| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        1,
        DVector::from_vec(vec![1.0, 0.0]),
        1.0,
    )
    .expect("consistent dimensions")
}

/// `dY = -Y dt + sigma dW`, `Y(0) = 1`.
pub fn ornstein_uhlenbeck(sigma: f64) -> SdaeProblem {
    SdaeProblem::new(
        ORNSTEIN_UHLENBECK,
        MatrixFn::identity(1),
        MatrixFn::constant(-DMatrix::identity(1, 1)),
        |_, _| DVector::zeros(1),
        move |_, _| DMatrix::from_element(1, 1, sigma),
        1,
        DVector::from_element(1, 1.0),
        1.0,
    )
    .expect("consistent dimensions")
}

pub fn by_name(name: &str, opts: &ModelOptions) -> Result<SdaeProblem> {
    match name {
        example3d::NAME => Ok(example3d()),
        example3d::UNSPLIT_NAME => Ok(example3d_unsplit()),
        heat2d::NAME => build_heat2d(&opts.heat2d_spec()?),
        BROKEN_INDEX1 => Ok(broken_index1()),
        ORNSTEIN_UHLENBECK => Ok(ornstein_uhlenbeck(1.0)),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}
