//! Pathwise strong-convergence experiments.
//!
//! A single Brownian path is drawn at the reference resolution `n_ref`; the
//! scheme run on that grid stands in for the exact solution, and coarser runs
//! on the dyadically coarsened path are compared to it on their own grid
//! points. The decay rate is fitted per sample because the constant in the
//! pathwise bound is itself random.

use std::io::Write;

use rayon::prelude::*;

use crate::brownian::BrownianPath;
use crate::error::{Error, Result};
use crate::integrators::{
    constraint_residuals, integrate_increments, IntegratorConfig, Scheme, Trajectory,
};
use crate::problem::SdaeProblem;

/// Max over the coarse grid of the distance to the reference at the same time.
pub fn pathwise_error(coarse: &Trajectory, reference: &Trajectory) -> Result<f64> {
    let (nc, nr) = (coarse.steps(), reference.steps());
    if nc == 0 || nr % nc != 0 {
        return Err(Error::GridMismatch(format!(
            "{nc} coarse steps do not nest in {nr} reference steps"
        )));
    }
    let (tc, tr) = (coarse.times[nc], reference.times[nr]);
    if (tc - tr).abs() > 1e-12 * tr.abs().max(1.0) {
        return Err(Error::GridMismatch(format!(
            "horizons differ: {tc} vs {tr}"
        )));
    }
    let stride = nr / nc;
    Ok(coarse
        .states
        .iter()
        .enumerate()
        .map(|(i, x)| (x - &reference.states[i * stride]).norm())
        .fold(0.0, f64::max))
}

/// Least-squares fit of `ln error = intercept - rate · ln n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub rate: f64,
    pub intercept: f64,
}

/// Fits over the pairs whose error is positive and finite; both fields are
/// NaN when fewer than two such pairs exist.
pub fn fit_rate(resolutions: &[usize], errors: &[f64]) -> LogLogFit {
    let pts: Vec<(f64, f64)> = resolutions
        .iter()
        .zip(errors)
        .filter(|(_, e)| e.is_finite() && **e > 0.0)
        .map(|(&n, &e)| ((n as f64).ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return LogLogFit {
            rate: f64::NAN,
            intercept: f64::NAN,
        };
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return LogLogFit {
            rate: f64::NAN,
            intercept: f64::NAN,
        };
    }
    let slope = sxy / sxx;
    LogLogFit {
        rate: -slope,
        intercept: my - slope * mx,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub n_ref: usize,
    pub resolutions: Vec<usize>,
    /// One entry per resolution; empty when the sample failed.
    pub errors: Vec<f64>,
    pub rate: f64,
    pub intercept: f64,
    pub status: SampleStatus,
    /// Worst normalised discrete-constraint residual over every trajectory
    /// of the sample, when requested.
    pub max_constraint_residual: Option<f64>,
}

impl ConvergenceReport {
    pub fn is_ok(&self) -> bool {
        self.status == SampleStatus::Ok
    }

    pub fn has_rate(&self) -> bool {
        self.is_ok() && self.rate.is_finite()
    }

    pub fn status_label(&self) -> &'static str {
        match (&self.status, self.rate.is_finite()) {
            (SampleStatus::Failed(_), _) => "failed",
            (SampleStatus::Ok, true) => "ok",
            (SampleStatus::Ok, false) => "undefined",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub n_ref: usize,
    pub resolutions: Vec<usize>,
    pub scheme: Scheme,
    pub parallel: bool,
    pub check_constraints: bool,
}

impl StudyConfig {
    pub fn new(n_ref: usize, resolutions: Vec<usize>) -> Self {
        StudyConfig {
            n_ref,
            resolutions,
            scheme: Scheme::Primary,
            parallel: false,
            check_constraints: false,
        }
    }

    /// Resolutions `2^5 .. 2^10` against `n_ref = 2^14`.
    pub fn desk_scale() -> Self {
        Self::new(1 << 14, (5..=10).map(|k| 1usize << k).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_ref.is_power_of_two() {
            return Err(Error::InvalidResolution(format!(
                "n_ref = {} is not a power of two",
                self.n_ref
            )));
        }
        if self.resolutions.is_empty() {
            return Err(Error::InvalidResolution("no resolutions given".into()));
        }
        if let Some(bad) = self
            .resolutions
            .iter()
            .find(|&&n| n == 0 || !self.n_ref.is_multiple_of(n))
        {
            return Err(Error::InvalidResolution(format!(
                "resolution {bad} does not divide n_ref = {}",
                self.n_ref
            )));
        }
        Ok(())
    }
}

fn sample_inner(p: &SdaeProblem, seed: u64, cfg: &StudyConfig) -> Result<(Vec<f64>, Option<f64>)> {
    let path = BrownianPath::generate(seed, p.horizon, cfg.n_ref, p.d1)?;
    let icfg = IntegratorConfig::default();
    let mut worst_constraint: Option<f64> = None;
    let mut track = |traj: &Trajectory| -> Result<()> {
        if cfg.check_constraints {
            let w = constraint_residuals(p, traj)?
                .into_iter()
                .fold(0.0, f64::max);
            worst_constraint = Some(worst_constraint.map_or(w, |c: f64| c.max(w)));
        }
        Ok(())
    };
    let reference = integrate_increments(p, path.increments(), cfg.scheme, &icfg)?;
    track(&reference)?;
    let mut errors = Vec::with_capacity(cfg.resolutions.len());
    for &n in &cfg.resolutions {
        let coarse = integrate_increments(p, &path.coarsen(n)?, cfg.scheme, &icfg)?;
        track(&coarse)?;
        errors.push(pathwise_error(&coarse, &reference)?);
    }
    Ok((errors, worst_constraint))
}

/// One pathwise-convergence sample. Integration failures are reported in
/// the status rather than returned as errors.
pub fn run_sample_with(p: &SdaeProblem, seed: u64, cfg: &StudyConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let (errors, status, worst) = match sample_inner(p, seed, cfg) {
        Ok((errors, worst)) => (errors, SampleStatus::Ok, worst),
        Err(e) => {
            log::warn!("{}: sample {seed} failed: {e}", p.name);
            (Vec::new(), SampleStatus::Failed(e.to_string()), None)
        }
    };
    let fit = fit_rate(&cfg.resolutions, &errors);
    Ok(ConvergenceReport {
        seed,
        n_ref: cfg.n_ref,
        resolutions: cfg.resolutions.clone(),
        errors,
        rate: fit.rate,
        intercept: fit.intercept,
        status,
        max_constraint_residual: worst,
    })
}

pub fn run_sample(
    p: &SdaeProblem,
    seed: u64,
    n_ref: usize,
    resolutions: &[usize],
) -> Result<ConvergenceReport> {
    run_sample_with(p, seed, &StudyConfig::new(n_ref, resolutions.to_vec()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudySummary {
    pub mean_rate: f64,
    /// Sample standard deviation; 0 for a single sample.
    pub std_rate: f64,
    pub successful: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Study {
    pub n_ref: usize,
    pub resolutions: Vec<usize>,
    pub horizon: f64,
    pub reports: Vec<ConvergenceReport>,
    pub summary: StudySummary,
}

pub fn summarize(reports: &[ConvergenceReport]) -> StudySummary {
    let rates: Vec<f64> = reports
        .iter()
        .filter(|r| r.has_rate())
        .map(|r| r.rate)
        .collect();
    let k = rates.len();
    let mean = if k == 0 {
        f64::NAN
    } else {
        rates.iter().sum::<f64>() / k as f64
    };
    let std = match k {
        0 => f64::NAN,
        1 => 0.0,
        _ => (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt(),
    };
    StudySummary {
        mean_rate: mean,
        std_rate: std,
        successful: reports.iter().filter(|r| r.is_ok()).count(),
        failed: reports.iter().filter(|r| !r.is_ok()).count(),
    }
}

/// Runs one sample per seed, in parallel when `cfg.parallel` is set. The
/// result depends only on the inputs, never on scheduling.
pub fn run_study_with(p: &SdaeProblem, seeds: &[u64], cfg: &StudyConfig) -> Result<Study> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidSpec("a study needs at least one seed".into()));
    }
    let reports: Result<Vec<ConvergenceReport>> = if cfg.parallel {
        seeds
            .par_iter()
            .map(|&s| run_sample_with(p, s, cfg))
            .collect()
    } else {
        seeds.iter().map(|&s| run_sample_with(p, s, cfg)).collect()
    };
    let reports = reports?;
    Ok(Study {
        n_ref: cfg.n_ref,
        resolutions: cfg.resolutions.clone(),
        horizon: p.horizon,
        summary: summarize(&reports),
        reports,
    })
}

pub fn run_study(
    p: &SdaeProblem,
    seeds: &[u64],
    n_ref: usize,
    resolutions: &[usize],
    parallel: bool,
) -> Result<Study> {
    let mut cfg = StudyConfig::new(n_ref, resolutions.to_vec());
    cfg.parallel = parallel;
    run_study_with(p, seeds, &cfg)
}

impl Study {
    /// Mean error per resolution over successful samples.
    pub fn mean_errors(&self) -> Vec<f64> {
        let ok: Vec<&ConvergenceReport> = self.reports.iter().filter(|r| r.is_ok()).collect();
        (0..self.resolutions.len())
            .map(|k| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| r.errors[k]).sum::<f64>() / ok.len() as f64
                }
            })
            .collect()
    }

    /// `seed,n,h,error`, one row per successful sample and resolution.
    pub fn write_samples_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seed,n,h,error")?;
        for r in self.reports.iter().filter(|r| r.is_ok()) {
            for (&n, e) in r.resolutions.iter().zip(&r.errors) {
                let h = self.horizon / n as f64;
                writeln!(out, "{},{n},{h:.16e},{e:.16e}", r.seed)?;
            }
        }
        Ok(())
    }

    /// `seed,rate,intercept,status`.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seed,rate,intercept,status")?;
        for r in &self.reports {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{}",
                r.seed,
                r.rate,
                r.intercept,
                r.status_label()
            )?;
        }
        Ok(())
    }

    /// `log2n,log10_mean_error` for a log-log error plot.
    pub fn write_loglog_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "log2n,log10_mean_error")?;
        for (&n, e) in self.resolutions.iter().zip(self.mean_errors()) {
            if e > 0.0 && e.is_finite() {
                writeln!(out, "{:.16e},{:.16e}", (n as f64).log2(), e.log10())?;
            }
        }
        Ok(())
    }
}

/// Mean squared increments of the numerical solution at several lags.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementMoments {
    pub n: usize,
    pub lags: Vec<usize>,
    /// `E ||X_{i+k} - X_i||²`, averaged over admissible `i` and over seeds.
    pub mean_sq: Vec<f64>,
    /// Slope of `ln mean_sq` against `ln (k h)`.
    pub slope: f64,
    pub samples: usize,
    pub failed: usize,
}

/// Runs `n` steps for every seed on a path drawn directly at resolution `n`
/// and estimates the increment moments. Seeds whose integration fails are
/// skipped and counted.
pub fn increment_moments(
    p: &SdaeProblem,
    seeds: &[u64],
    n: usize,
    lags: &[usize],
    scheme: Scheme,
) -> Result<IncrementMoments> {
    if lags.is_empty() || lags.iter().any(|&k| k == 0 || k > n) {
        return Err(Error::InvalidResolution(format!(
            "lags {lags:?} must lie in 1..={n}"
        )));
    }
    let per_seed: Vec<Option<Vec<f64>>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Option<Vec<f64>>> {
            let path = BrownianPath::generate(seed, p.horizon, n, p.d1)?;
            let traj = match integrate_increments(
                p,
                path.increments(),
                scheme,
                &IntegratorConfig::default(),
            ) {
                Ok(traj) => traj,
                Err(e) => {
                    log::warn!("{}: seed {seed} failed: {e}", p.name);
                    return Ok(None);
                }
            };
            Ok(Some(
                lags.iter()
                    .map(|&k| {
                        let sum: f64 = (0..=n - k)
                            .map(|i| (&traj.states[i + k] - &traj.states[i]).norm_squared())
                            .sum();
                        sum / (n - k + 1) as f64
                    })
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let ok: Vec<&Vec<f64>> = per_seed.iter().flatten().collect();
    let mean_sq: Vec<f64> = (0..lags.len())
        .map(|j| ok.iter().map(|m| m[j]).sum::<f64>() / ok.len() as f64)
        .collect();
    Ok(IncrementMoments {
        n,
        lags: lags.to_vec(),
        slope: -fit_rate(lags, &mean_sq).rate,
        mean_sq,
        samples: ok.len(),
        failed: per_seed.len() - ok.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn traj(states: Vec<Vec<f64>>) -> Trajectory {
        let n = states.len() - 1;
        Trajectory {
            times: (0..=n).map(|i| i as f64 / n as f64).collect(),
            states: states.into_iter().map(DVector::from_vec).collect(),
            scheme: Scheme::Primary,
            solve_residuals: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let t = traj(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
        assert_eq!(pathwise_error(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn constant_shift_gives_its_norm() {
        let r = traj(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
        let c = traj(vec![vec![3.0, 5.0], vec![7.0, 9.0]]);
        // coarse point 1 sits on reference point 2
        let shifted = traj(vec![vec![3.0, 5.0], vec![5.0, 7.0], vec![7.0, 9.0]]);
        assert_eq!(pathwise_error(&c, &r).unwrap(), 5.0);
        assert_eq!(pathwise_error(&shifted, &r).unwrap(), 5.0);
    }

    #[test]
    fn non_nested_grids_are_rejected() {
        let r = traj(vec![vec![0.0]; 4]);
        let c = traj(vec![vec![0.0]; 3]);
        assert!(matches!(
            pathwise_error(&c, &r),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn fit_recovers_power_law() {
        let ns: Vec<usize> = (5..=10).map(|k| 1 << k).collect();
        let errs: Vec<f64> = ns.iter().map(|&n| 3.7 * (n as f64).powf(-0.5)).collect();
        let fit = fit_rate(&ns, &errs);
        assert!((fit.rate - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_with_single_point_is_undefined() {
        let fit = fit_rate(&[64], &[0.1]);
        assert!(fit.rate.is_nan());
        let fit = fit_rate(&[64, 128], &[0.0, 0.1]);
        assert!(fit.rate.is_nan());
    }

    #[test]
    fn summary_of_one_sample() {
        let r = ConvergenceReport {
            seed: 1,
            n_ref: 8,
            resolutions: vec![2, 4],
            errors: vec![0.2, 0.1],
            rate: 1.0,
            intercept: 0.0,
            status: SampleStatus::Ok,
            max_constraint_residual: None,
        };
        let s = summarize(&[r]);
        assert_eq!(s.mean_rate, 1.0);
        assert_eq!(s.std_rate, 0.0);
        assert_eq!((s.successful, s.failed), (1, 0));
    }

    #[test]
    fn config_rejects_non_dividing_resolution() {
        let cfg = StudyConfig::new(1024, vec![32, 48]);
        assert!(matches!(cfg.validate(), Err(Error::InvalidResolution(_))));
        assert!(StudyConfig::new(1000, vec![10]).validate().is_err());
        assert!(StudyConfig::desk_scale().validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_is_invariant_under_error_scaling(
                errs in proptest::collection::vec(1e-6f64..1.0, 6),
                scale in 1e-3f64..1e3,
            ) {
                let ns: Vec<usize> = (5..=10).map(|k| 1 << k).collect();
                let a = fit_rate(&ns, &errs);
                let scaled: Vec<f64> = errs.iter().map(|e| e * scale).collect();
                let b = fit_rate(&ns, &scaled);
                prop_assert!((a.rate - b.rate).abs() < 1e-9);
                prop_assert!((b.intercept - a.intercept - scale.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn brownian_increments_scale_linearly_in_lag() {
        use crate::projector::MatrixFn;
        use nalgebra::DMatrix;
        let w = SdaeProblem::new(
            "brownian",
            MatrixFn::identity(1),
            MatrixFn::zeros(1),
            |_, _| DVector::zeros(1),
            |_, _| DMatrix::from_element(1, 1, 1.0),
            1,
            DVector::zeros(1),
            1.0,
        )
        .unwrap();
        let seeds: Vec<u64> = (0..200).collect();
        let m = increment_moments(&w, &seeds, 256, &[1, 2, 4, 8, 16], Scheme::Primary).unwrap();
        assert_eq!(m.samples, 200);
        assert!((m.slope - 1.0).abs() < 0.05, "slope {}", m.slope);
        assert!((m.mean_sq[0] * 256.0 - 1.0).abs() < 0.05);
        assert!(increment_moments(&w, &seeds, 8, &[16], Scheme::Primary).is_err());
    }
}
