//! SDAE instances `A(t) dY = [B(t) Y + f(t, Y)] dt + g(t, Y) dW` and the
//! structural checks the schemes rely on.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::brownian::standard_normals;
use crate::error::{Error, Result};
use crate::linalg::extreme_singular_values;
use crate::projector::{
    check_a13, compute_projectors, default_fd_step, fd_projector_derivative, projector_derivative,
    projectors_of, MatrixFn, ProjectorSet, DEFAULT_RANK_TOL,
};

/// States with a larger Euclidean norm abort integration.
pub const GUARD_RADIUS: f64 = 1e8;

pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// User-supplied `(A⁻, P, R)` replacing the Moore-Penrose default.
#[derive(Clone, Debug)]
pub struct ProjectorOverride {
    pub a_pinv: MatrixFn,
    pub p: MatrixFn,
    pub r: MatrixFn,
}

#[derive(Clone)]
pub struct SdaeProblem {
    pub name: String,
    pub d: usize,
    pub d1: usize,
    pub horizon: f64,
    pub a: MatrixFn,
    pub b: MatrixFn,
    pub f: DriftFn,
    pub g: DiffusionFn,
    pub zeta: DVector<f64>,
    pub projector_override: Option<ProjectorOverride>,
    /// Free-form remarks attached by the model builder (e.g. how the linear
    /// drift was split between `B` and `f`).
    pub notes: Vec<String>,
}

impl fmt::Debug for SdaeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdaeProblem")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("d1", &self.d1)
            .field("horizon", &self.horizon)
            .field("zeta", &self.zeta.as_slice())
            .finish_non_exhaustive()
    }
}

impl SdaeProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F, G>(
        name: impl Into<String>,
        a: MatrixFn,
        b: MatrixFn,
        f: F,
        g: G,
        d1: usize,
        zeta: DVector<f64>,
        horizon: f64,
    ) -> Result<Self>
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let d = zeta.len();
        if a.dim() != d || b.dim() != d {
            return Err(Error::Dimension(format!(
                "A is {0}x{0}, B is {1}x{1}, but zeta has length {d}",
                a.dim(),
                b.dim()
            )));
        }
        if d1 == 0 {
            return Err(Error::Dimension(
                "noise dimension must be at least 1".into(),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "horizon {horizon} must be finite and positive"
            )));
        }
        Ok(SdaeProblem {
            name: name.into(),
            d,
            d1,
            horizon,
            a,
            b,
            f: Arc::new(f),
            g: Arc::new(g),
            zeta,
            projector_override: None,
            notes: Vec::new(),
        })
    }

    pub fn with_projector_override(mut self, ov: ProjectorOverride) -> Self {
        self.projector_override = Some(ov);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn drift(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        (self.f)(t, y)
    }

    pub fn diffusion(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        (self.g)(t, y)
    }

    /// `B(t) Y + f(t, Y)`.
    pub fn total_drift(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        self.b.eval(t) * y + self.drift(t, y)
    }

    /// True when `A` and `B` are both time-independent and no time-dependent
    /// override is installed.
    pub fn is_autonomous_linear_part(&self) -> bool {
        let ov_const = self
            .projector_override
            .as_ref()
            .is_none_or(|ov| ov.a_pinv.is_constant() && ov.p.is_constant() && ov.r.is_constant());
        self.a.is_constant() && self.b.is_constant() && ov_const
    }

    /// Projectors at `t`: the override if installed, Moore-Penrose otherwise.
    pub fn projectors(&self, t: f64, rank_tol: f64) -> Result<ProjectorSet> {
        match &self.projector_override {
            None => compute_projectors(&self.a, t, rank_tol),
            Some(ov) => {
                let a = self.a.eval(t);
                let base = projectors_of(&a, t, rank_tol)?;
                let p = ov.p.eval(t);
                let d = self.d;
                Ok(ProjectorSet {
                    t,
                    a_pinv: ov.a_pinv.eval(t),
                    q: DMatrix::identity(d, d) - &p,
                    p,
                    r: ov.r.eval(t),
                    rank: base.rank,
                    sigma_max: base.sigma_max,
                })
            }
        }
    }

    /// Finite-difference `P'(t)` of whichever projector family is in use.
    pub fn projector_derivative(&self, t: f64, rank_tol: f64) -> Result<DMatrix<f64>> {
        let step = default_fd_step(t);
        match &self.projector_override {
            None => projector_derivative(&self.a, t, step, rank_tol),
            Some(ov) if ov.p.is_constant() => Ok(DMatrix::zeros(self.d, self.d)),
            Some(_) => fd_projector_derivative(
                |s| self.projectors(s, rank_tol).map(|ps| (ps.p, ps.rank)),
                t,
                step,
            ),
        }
    }
}

/// Outcome of one structural check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub pass: bool,
    /// The quantity compared against the tolerance (residual, determinant,
    /// singular value or derivative norm, depending on the check).
    pub value: f64,
    pub tol: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "pass" } else { "FAIL" };
        write!(
            f,
            "{verdict} (value {:.6e}, tol {:.1e})",
            self.value, self.tol
        )
    }
}

fn require_samples(times: &[f64], states: &[DVector<f64>]) -> Result<()> {
    if times.is_empty() || states.is_empty() {
        return Err(Error::InvalidSpec(
            "validation needs at least one time and one state".into(),
        ));
    }
    Ok(())
}

/// Projectors for each sample time, computed once when `A` is constant.
fn projectors_for(p: &SdaeProblem, times: &[f64], rank_tol: f64) -> Result<Vec<ProjectorSet>> {
    if p.is_autonomous_linear_part() {
        let ps = p.projectors(times[0], rank_tol)?;
        return Ok(times.iter().map(|_| ps.clone()).collect());
    }
    times.iter().map(|&t| p.projectors(t, rank_tol)).collect()
}

/// Noise-free constraints: `max ||R g|| / (1 + ||g||)` over `times × states`.
pub fn check_index1(
    p: &SdaeProblem,
    times: &[f64],
    states: &[DVector<f64>],
    tol: f64,
) -> Result<Check> {
    require_samples(times, states)?;
    let projs = projectors_for(p, times, DEFAULT_RANK_TOL)?;
    let mut worst = 0.0_f64;
    for (&t, ps) in times.iter().zip(&projs) {
        for y in states {
            let g = p.diffusion(t, y);
            let r = (&ps.r * &g).norm() / (1.0 + g.norm());
            worst = if r.is_nan() {
                f64::INFINITY
            } else {
                worst.max(r)
            };
        }
    }
    Ok(Check {
        pass: worst <= tol,
        value: worst,
        tol,
    })
}

/// `J = A + R (B + f_Y)` with `f_Y` from central differences.
pub fn constraint_jacobian(
    p: &SdaeProblem,
    t: f64,
    y: &DVector<f64>,
    ps: &ProjectorSet,
) -> DMatrix<f64> {
    let d = p.d;
    let eps = 1e-6 * (1.0 + y.norm());
    let mut mu_y = p.b.eval(t);
    let mut yp = y.clone();
    for k in 0..d {
        yp[k] = y[k] + eps;
        let fp = p.drift(t, &yp);
        yp[k] = y[k] - eps;
        let fm = p.drift(t, &yp);
        yp[k] = y[k];
        let col = (fp - fm) / (2.0 * eps);
        let mut target = mu_y.column_mut(k);
        target += col;
    }
    p.a.eval(t) + &ps.r * mu_y
}

/// Sampled global invertibility of the constraint Jacobian: passes when
/// `min |det J| >= tol` and the sign of `det J` never changes.
/// Returns the check plus every sampled determinant.
pub fn check_jacobian(
    p: &SdaeProblem,
    times: &[f64],
    states: &[DVector<f64>],
    tol: f64,
) -> Result<(Check, Vec<f64>)> {
    require_samples(times, states)?;
    let projs = projectors_for(p, times, DEFAULT_RANK_TOL)?;
    let mut dets = Vec::with_capacity(times.len() * states.len());
    for (&t, ps) in times.iter().zip(&projs) {
        for y in states {
            dets.push(constraint_jacobian(p, t, y, ps).lu().determinant());
        }
    }
    let min_abs = dets.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    let sign_constant = dets.iter().all(|d| *d > 0.0) || dets.iter().all(|d| *d < 0.0);
    let min_abs = if min_abs.is_nan() { 0.0 } else { min_abs };
    Ok((
        Check {
            pass: sign_constant && min_abs >= tol,
            value: min_abs,
            tol,
        },
        dets,
    ))
}

/// `min sigma_min(A(t) - h B(t))` over `times`.
pub fn check_iteration_matrix(p: &SdaeProblem, h: f64, times: &[f64], tol: f64) -> Check {
    let eval = |t: f64| {
        let m = p.a.eval(t) - p.b.eval(t) * h;
        extreme_singular_values(&m).0
    };
    let min = if p.a.is_constant() && p.b.is_constant() {
        times.first().map(|&t| eval(t)).unwrap_or(f64::NAN)
    } else {
        times.iter().map(|&t| eval(t)).fold(f64::INFINITY, f64::min)
    };
    Check {
        pass: h > 0.0 && min >= tol,
        value: min,
        tol,
    }
}

#[derive(Clone, Debug)]
pub struct ValidationConfig {
    pub rank_tol: f64,
    pub index1_tol: f64,
    pub jacobian_tol: f64,
    pub iteration_tol: f64,
    pub a13_tol: f64,
    /// Step size for the iteration-matrix check; `None` uses `T / 256`.
    pub h: Option<f64>,
    pub n_times: usize,
    pub n_perturbations: usize,
    pub perturbation_std: f64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            rank_tol: DEFAULT_RANK_TOL,
            index1_tol: 1e-10,
            jacobian_tol: 1e-8,
            iteration_tol: 1e-10,
            a13_tol: 1e-6,
            h: None,
            n_times: 11,
            n_perturbations: 20,
            perturbation_std: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub problem: String,
    pub index1: Check,
    pub jacobian: Check,
    pub iteration_matrix: Check,
    pub a13: Check,
    pub samples: usize,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.index1.pass && self.jacobian.pass && self.iteration_matrix.pass && self.a13.pass
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem: {}", self.problem)?;
        writeln!(f, "samples: {}", self.samples)?;
        writeln!(f, "index-1 (max |Rg|/(1+|g|)): {}", self.index1)?;
        writeln!(f, "jacobian (min |det J|):     {}", self.jacobian)?;
        writeln!(f, "iteration matrix (sigma):   {}", self.iteration_matrix)?;
        writeln!(f, "projector drift (|P'|):     {}", self.a13)?;
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

/// Equispaced sample times on `[0, T]`.
pub fn sample_times(horizon: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count)
            .map(|k| horizon * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// `zeta` followed by `count` Gaussian perturbations of it.
pub fn sample_states(p: &SdaeProblem, count: usize, std: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut out = vec![p.zeta.clone()];
    for k in 0..count {
        let z = standard_normals(seed, k as u64, p.d);
        out.push(&p.zeta + DVector::from_vec(z) * std);
    }
    out
}

fn failed_check(tol: f64) -> Check {
    Check {
        pass: false,
        value: f64::NAN,
        tol,
    }
}

/// Runs every structural check on the default sample set. Never fails;
/// errors from individual checks are recorded as failed entries.
pub fn validate(p: &SdaeProblem, cfg: &ValidationConfig) -> ValidationReport {
    let times = sample_times(p.horizon, cfg.n_times.max(1));
    let states = sample_states(p, cfg.n_perturbations, cfg.perturbation_std, cfg.seed);
    let mut notes = p.notes.clone();

    let index1 = check_index1(p, &times, &states, cfg.index1_tol).unwrap_or_else(|e| {
        notes.push(format!("index-1 check aborted: {e}"));
        failed_check(cfg.index1_tol)
    });
    let jacobian = match check_jacobian(p, &times, &states, cfg.jacobian_tol) {
        Ok((check, dets)) => {
            let lo = dets.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = dets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            notes.push(format!("det J ranges over [{lo:.6e}, {hi:.6e}]"));
            check
        }
        Err(e) => {
            notes.push(format!("jacobian check aborted: {e}"));
            failed_check(cfg.jacobian_tol)
        }
    };
    let h = cfg.h.unwrap_or(p.horizon / 256.0);
    let iteration_matrix = check_iteration_matrix(p, h, &times, cfg.iteration_tol);

    let a13 = match &p.projector_override {
        None => {
            let rep = check_a13(&p.a, &times, cfg.a13_tol);
            notes.extend(rep.notes.iter().cloned());
            Check {
                pass: rep.pass,
                value: rep.max_derivative_norm,
                tol: cfg.a13_tol,
            }
        }
        Some(_) => {
            let mut worst = 0.0_f64;
            for &t in &times {
                match p.projector_derivative(t, cfg.rank_tol) {
                    Ok(dp) => worst = worst.max(dp.norm()),
                    Err(e) => {
                        notes.push(format!("t = {t}: {e}"));
                        worst = f64::INFINITY;
                    }
                }
            }
            Check {
                pass: worst <= cfg.a13_tol,
                value: worst,
                tol: cfg.a13_tol,
            }
        }
    };

    ValidationReport {
        problem: p.name.clone(),
        index1,
        jacobian,
        iteration_matrix,
        a13,
        samples: times.len() * states.len(),
        notes,
    }
}
