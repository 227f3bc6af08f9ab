//! The semi-implicit Euler scheme
//!
//! ```text
//! (A(t_i) - h B(t_i)) X_{i+1} = A(t_i) X_i + h f(t_i, X_i) + g(t_i, X_i) ΔW_i,   X_0 = ζ
//! ```
//!
//! and its projector-split counterpart, which advances the dynamic part
//! `u = P X` through a regular SDE and recovers the algebraic part
//! `v = Q X` from the linearised constraint at every step:
//!
//! ```text
//! M = -(A + RB)⁻¹ R B,   c = -(A + RB)⁻¹ R f(t_i, X_i),   K = P' + A⁻B
//! [I - h K (I + M)] u_{i+1} = u_i + h K c + h A⁻ f(t_i, X_i) + A⁻ g(t_i, X_i) ΔW_i
//! v_{i+1} = M u_{i+1} + c
//! ```
//!
//! All matrices in the dual step are frozen at `t_i`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::brownian::{BrownianPath, NoiseIncrements};
use crate::error::{Error, Result};
use crate::linalg::{is_finite_matrix, is_finite_vector, Factorized};
use crate::problem::{SdaeProblem, GUARD_RADIUS};
use crate::projector::{projectors_of, ProjectorSet, DEFAULT_RANK_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Primary,
    Dual,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Primary => "primary",
            Scheme::Dual => "dual",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(Scheme::Primary),
            "dual" => Ok(Scheme::Dual),
            other => Err(Error::Parse(format!(
                "unknown scheme '{other}' (expected primary or dual)"
            ))),
        }
    }
}

/// Grid values produced by one scheme run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub scheme: Scheme,
    /// `||lhs · x - rhs||` of the linear solve in each step.
    pub solve_residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory has at least the initial state")
    }

    pub fn max_norm(&self) -> f64 {
        self.states.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// Max over the grid of `||x_i - y_i||`; both runs must share a grid.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.states.len() != other.states.len() {
            return Err(Error::GridMismatch(format!(
                "{} vs {} grid points",
                self.states.len(),
                other.states.len()
            )));
        }
        Ok(self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Writes `t,x_1,...,x_d` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|k| format!("x_{k}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t:.16e}")?;
            for v in x.iter() {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads a file written by [`Trajectory::write_csv`]. Diagnostics are
    /// not part of the format and come back empty.
    pub fn read_csv<R: BufRead>(input: R, scheme: Scheme) -> Result<Self> {
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() < 2 {
                return Err(Error::Parse(format!(
                    "line {}: too few columns",
                    lineno + 1
                )));
            }
            times.push(vals[0]);
            states.push(DVector::from_column_slice(&vals[1..]));
        }
        Ok(Trajectory {
            times,
            states,
            scheme,
            solve_residuals: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

/// Result of a single primary step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub x: DVector<f64>,
    pub residual: f64,
}

fn finite_coefficients(
    p: &SdaeProblem,
    t: f64,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = p.drift(t, x);
    if f.len() != p.d || !is_finite_vector(&f) {
        return Err(Error::NonFiniteCoefficient { t, which: "f" });
    }
    let g = p.diffusion(t, x);
    if g.nrows() != p.d || g.ncols() != p.d1 || !is_finite_matrix(&g) {
        return Err(Error::NonFiniteCoefficient { t, which: "g" });
    }
    Ok((f, g))
}

fn guard(t: f64, x: &DVector<f64>) -> Result<()> {
    let norm = x.norm();
    if norm.is_nan() || norm > GUARD_RADIUS {
        return Err(Error::Overflow { t, norm });
    }
    Ok(())
}

/// `A(t_i) - h B(t_i)` factored, together with `A(t_i)`.
struct PrimaryOperator {
    a: DMatrix<f64>,
    lhs: Factorized,
}

impl PrimaryOperator {
    fn assemble(p: &SdaeProblem, t: f64, h: f64) -> Result<Self> {
        let a = p.a.eval(t);
        let b = p.b.eval(t);
        if !is_finite_matrix(&a) || !is_finite_matrix(&b) {
            return Err(Error::NonFiniteMatrix { t });
        }
        let lhs = Factorized::new(&a - b * h)
            .map_err(|ratio| Error::SingularIterationMatrix { t, ratio })?;
        Ok(PrimaryOperator { a, lhs })
    }

    fn apply(
        &self,
        p: &SdaeProblem,
        t: f64,
        h: f64,
        x: &DVector<f64>,
        dw: &DVector<f64>,
    ) -> Result<StepOutput> {
        let (f, g) = finite_coefficients(p, t, x)?;
        let rhs = &self.a * x + f * h + g * dw;
        let (x_next, residual) = self.lhs.solve(&rhs);
        guard(t + h, &x_next)?;
        Ok(StepOutput {
            x: x_next,
            residual,
        })
    }
}

/// One step of the semi-implicit Euler scheme from `(t_i, x_i)`.
pub fn step_primary(
    p: &SdaeProblem,
    t_i: f64,
    h: f64,
    x_i: &DVector<f64>,
    dw: &DVector<f64>,
) -> Result<StepOutput> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidResolution(format!(
            "step size {h} must be positive"
        )));
    }
    if dw.len() != p.d1 || x_i.len() != p.d {
        return Err(Error::Dimension(format!(
            "state has length {} (expected {}), increment has length {} (expected {})",
            x_i.len(),
            p.d,
            dw.len(),
            p.d1
        )));
    }
    guard(t_i, x_i)?;
    PrimaryOperator::assemble(p, t_i, h)?.apply(p, t_i, h, x_i, dw)
}

/// Dynamic and algebraic components `(u, v)` with `X = u + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub t: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl DualState {
    pub fn x(&self) -> DVector<f64> {
        &self.u + &self.v
    }
}

/// Everything in the dual step that depends only on `t_i` and `h`.
struct DualOperator {
    ps: ProjectorSet,
    /// `A + RB`
    constraint: Factorized,
    /// `-(A + RB)⁻¹ R B`
    m: DMatrix<f64>,
    /// `P' + A⁻ B`
    k: DMatrix<f64>,
    /// `I - h K (I + M)`
    lhs: Factorized,
}

impl DualOperator {
    fn assemble(p: &SdaeProblem, t: f64, h: f64, rank_tol: f64) -> Result<Self> {
        let d = p.d;
        let a = p.a.eval(t);
        let b = p.b.eval(t);
        if !is_finite_matrix(&a) || !is_finite_matrix(&b) {
            return Err(Error::NonFiniteMatrix { t });
        }
        let ps = match p.projector_override {
            None => projectors_of(&a, t, rank_tol)?,
            Some(_) => p.projectors(t, rank_tol)?,
        };
        let dp = p.projector_derivative(t, rank_tol)?;
        let rb = &ps.r * &b;
        let constraint = Factorized::new(&a + &rb)
            .map_err(|ratio| Error::SingularConstraintMatrix { t, ratio })?;
        let m = -constraint.solve_matrix(&rb);
        let k = dp + &ps.a_pinv * &b;
        let id = DMatrix::<f64>::identity(d, d);
        let lhs = Factorized::new(&id - (&k * (&id + &m)) * h)
            .map_err(|ratio| Error::SingularIterationMatrix { t, ratio })?;
        Ok(DualOperator {
            ps,
            constraint,
            m,
            k,
            lhs,
        })
    }

    fn apply(
        &self,
        p: &SdaeProblem,
        t: f64,
        t_next: f64,
        h: f64,
        state: &DualState,
        dw: &DVector<f64>,
    ) -> Result<(DualState, f64)> {
        let x = state.x();
        let (f, g) = finite_coefficients(p, t, &x)?;
        let f_hat = &self.ps.a_pinv * &f;
        let noise = &self.ps.a_pinv * (g * dw);
        let f1 = &self.ps.r * &f;
        let c = -self.constraint.solve(&f1).0;
        let rhs = &state.u + (&self.k * &c) * h + f_hat * h + noise;
        let (u, residual) = self.lhs.solve(&rhs);
        let v = &self.m * &u + c;
        let next = DualState { t: t_next, u, v };
        guard(t_next, &next.x())?;
        Ok((next, residual))
    }
}

/// One step of the projector-split scheme.
pub fn step_dual(
    p: &SdaeProblem,
    t_i: f64,
    t_next: f64,
    h: f64,
    state: &DualState,
    dw: &DVector<f64>,
) -> Result<DualState> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidResolution(format!(
            "step size {h} must be positive"
        )));
    }
    if dw.len() != p.d1 {
        return Err(Error::Dimension(format!(
            "increment has length {}, expected {}",
            dw.len(),
            p.d1
        )));
    }
    DualOperator::assemble(p, t_i, h, DEFAULT_RANK_TOL)?
        .apply(p, t_i, t_next, h, state, dw)
        .map(|(s, _)| s)
}

/// `u_0 = P(0) ζ`, `v_0 = Q(0) ζ`, plus the constraint residual
/// `||R(0) (B(0) ζ + f(0, ζ))||` of the initial data.
pub fn dual_initial_state(p: &SdaeProblem, rank_tol: f64) -> Result<(DualState, f64)> {
    let ps = p.projectors(0.0, rank_tol)?;
    let mu = p.total_drift(0.0, &p.zeta);
    let residual = (&ps.r * mu).norm();
    Ok((
        DualState {
            t: 0.0,
            u: &ps.p * &p.zeta,
            v: &ps.q * &p.zeta,
        },
        residual,
    ))
}

#[derive(Clone, Debug)]
pub struct IntegratorConfig {
    pub rank_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Integrates over `[0, T]` with `n` steps driven by the coarsened path.
pub fn integrate(
    p: &SdaeProblem,
    n: usize,
    path: &BrownianPath,
    scheme: Scheme,
) -> Result<Trajectory> {
    if n == 0 || !path.n_fine().is_multiple_of(n) {
        return Err(Error::InvalidResolution(format!(
            "{n} steps does not divide the path resolution {}",
            path.n_fine()
        )));
    }
    let inc = path.coarsen(n)?;
    integrate_increments(p, &inc, scheme, &IntegratorConfig::default())
}

/// Integrates with one step per row of `inc`.
pub fn integrate_increments(
    p: &SdaeProblem,
    inc: &NoiseIncrements,
    scheme: Scheme,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if inc.d1() != p.d1 {
        return Err(Error::Dimension(format!(
            "noise has {} components, problem expects {}",
            inc.d1(),
            p.d1
        )));
    }
    if (inc.horizon() - p.horizon).abs() > 1e-12 * p.horizon {
        return Err(Error::GridMismatch(format!(
            "path horizon {} differs from problem horizon {}",
            inc.horizon(),
            p.horizon
        )));
    }
    guard(0.0, &p.zeta)?;
    match scheme {
        Scheme::Primary => run_primary(p, inc, cfg),
        Scheme::Dual => run_dual(p, inc, cfg),
    }
}

fn grid(p: &SdaeProblem, n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 * p.horizon / n as f64).collect()
}

fn run_primary(
    p: &SdaeProblem,
    inc: &NoiseIncrements,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let n = inc.steps();
    let h = p.horizon / n as f64;
    let times = grid(p, n);
    let mut states = Vec::with_capacity(n + 1);
    let mut residuals = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    states.push(p.zeta.clone());

    let cached = if p.a.is_constant() && p.b.is_constant() {
        Some(PrimaryOperator::assemble(p, 0.0, h).map_err(|e| e.at_step(0))?)
    } else {
        None
    };
    let mut last_rank = None;
    for i in 0..n {
        let t = times[i];
        let fresh;
        let op = match &cached {
            Some(op) => op,
            None => {
                fresh = PrimaryOperator::assemble(p, t, h).map_err(|e| e.at_step(i))?;
                let rank = projectors_of(&fresh.a, t, cfg.rank_tol)
                    .map(|ps| ps.rank)
                    .map_err(|e| e.at_step(i))?;
                if last_rank.is_some_and(|r| r != rank) {
                    let msg = format!("rank of A changes to {rank} at step {i} (t = {t})");
                    log::warn!("{}: {msg}", p.name);
                    warnings.push(msg);
                }
                last_rank = Some(rank);
                &fresh
            }
        };
        let out = op
            .apply(p, t, h, &states[i], &inc.dw(i))
            .map_err(|e| e.at_step(i))?;
        residuals.push(out.residual);
        states.push(out.x);
    }
    Ok(Trajectory {
        times,
        states,
        scheme: Scheme::Primary,
        solve_residuals: residuals,
        warnings,
    })
}

fn run_dual(p: &SdaeProblem, inc: &NoiseIncrements, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let n = inc.steps();
    let h = p.horizon / n as f64;
    let times = grid(p, n);
    let mut warnings = Vec::new();

    let (mut state, init_residual) =
        dual_initial_state(p, cfg.rank_tol).map_err(|e| e.at_step(0))?;
    if init_residual > 1e-8 * (1.0 + p.zeta.norm()) {
        let msg =
            format!("initial state violates the t = 0 constraint (residual {init_residual:.3e})");
        log::warn!("{}: {msg}", p.name);
        warnings.push(msg);
    }

    let cached = if p.is_autonomous_linear_part() {
        Some(DualOperator::assemble(p, 0.0, h, cfg.rank_tol).map_err(|e| e.at_step(0))?)
    } else {
        None
    };
    let rank0 = match &cached {
        Some(op) => op.ps.rank,
        None => p.projectors(0.0, cfg.rank_tol)?.rank,
    };

    let mut states = Vec::with_capacity(n + 1);
    let mut residuals = Vec::with_capacity(n);
    states.push(p.zeta.clone());
    for i in 0..n {
        let t = times[i];
        let fresh;
        let op = match &cached {
            Some(op) => op,
            None => {
                fresh = DualOperator::assemble(p, t, h, cfg.rank_tol).map_err(|e| e.at_step(i))?;
                if fresh.ps.rank != rank0 {
                    return Err(Error::RankChange {
                        t0: 0.0,
                        rank0,
                        t1: t,
                        rank1: fresh.ps.rank,
                    }
                    .at_step(i));
                }
                &fresh
            }
        };
        let (next, residual) = op
            .apply(p, t, times[i + 1], h, &state, &inc.dw(i))
            .map_err(|e| e.at_step(i))?;
        residuals.push(residual);
        states.push(next.x());
        state = next;
    }
    Ok(Trajectory {
        times,
        states,
        scheme: Scheme::Dual,
        solve_residuals: residuals,
        warnings,
    })
}

/// Per-step discrete constraint residual
/// `||R(t_i) [B(t_i) X_{i+1} + f(t_i, X_i)]|| / (1 + ||X_{i+1}||)`.
pub fn constraint_residuals(p: &SdaeProblem, traj: &Trajectory) -> Result<Vec<f64>> {
    let n = traj.steps();
    let fixed = if p.is_autonomous_linear_part() {
        Some((p.projectors(0.0, DEFAULT_RANK_TOL)?.r, p.b.eval(0.0)))
    } else {
        None
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = traj.times[i];
        let (r, b) = match &fixed {
            Some((r, b)) => (r.clone(), b.clone()),
            None => (p.projectors(t, DEFAULT_RANK_TOL)?.r, p.b.eval(t)),
        };
        let x_next = &traj.states[i + 1];
        let res = (&r * (b * x_next + p.drift(t, &traj.states[i]))).norm();
        out.push(res / (1.0 + x_next.norm()));
    }
    Ok(out)
}
