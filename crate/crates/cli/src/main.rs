use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sdae_core::brownian::BrownianPath;
use sdae_core::convergence::{run_study_with, StudyConfig};
use sdae_core::integrators::{constraint_residuals, integrate};
use sdae_core::models::heat2d::{impermeable_nodes, write_grid};
use sdae_core::models::{build_heat2d, by_name, ModelOptions, PorosityField};
use sdae_core::problem::{validate, ValidationConfig};
use sdae_core::projector::DEFAULT_RANK_TOL;
use sdae_core::{Error, Scheme, SdaeProblem};

#[derive(Parser, Debug)]
#[command(
    name = "sdae",
    version,
    about = "Semi-implicit simulation of index-1 stochastic DAEs"
)]
struct Cli {
    /// Directory for CSV output.
    #[arg(long, global = true, env = "SDAE_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one path and write trajectory.csv.
    Simulate(SimulateArgs),
    /// Pathwise convergence study over several seeds.
    Converge(ConvergeArgs),
    /// Porous-media demo: porosity plus final fields with and without noise.
    Heat2d(Heat2dArgs),
    /// Structural validation of a model.
    Check(CheckArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Grid cells per side (heat2d).
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Diffusion coefficient (heat2d).
    #[arg(long, default_value_t = 100.0)]
    diffusion: f64,
    /// Noise amplitude (heat2d).
    #[arg(long, default_value_t = 1e-4)]
    noise_amp: f64,
    /// Porosity grid CSV (heat2d); overrides the built-in pattern.
    #[arg(long)]
    porosity: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    n: usize,
    /// Resolution of the underlying Brownian path.
    #[arg(long, default_value_t = 1 << 14)]
    n_fine: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = Scheme::Primary)]
    scheme: Scheme,
    #[command(flatten)]
    model_args: ModelArgs,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long)]
    model: String,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1 << 14)]
    n_ref: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128, 256, 512, 1024])]
    resolutions: Vec<usize>,
    #[arg(long, default_value_t = Scheme::Primary)]
    scheme: Scheme,
    /// Run samples in parallel (the default).
    #[arg(long, overrides_with = "serial")]
    parallel: bool,
    /// Run samples one after another.
    #[arg(long, overrides_with = "parallel")]
    serial: bool,
    #[command(flatten)]
    model_args: ModelArgs,
}

#[derive(Args, Debug)]
struct Heat2dArgs {
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    noise_amp: f64,
    #[arg(long, default_value_t = 100.0)]
    diffusion: f64,
    #[arg(long)]
    porosity: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    index1_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    jacobian_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    iteration_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    a13_tol: f64,
    /// Step size for the iteration-matrix check (default T/256).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model_args: ModelArgs,
}

/// Usage problems exit with 2, model and integration failures with 1.
enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_porosity(path: &Path) -> CliResult<PorosityField> {
    let file =
        File::open(path).map_err(|e| usage(format!("--porosity {}: {e}", path.display())))?;
    PorosityField::read_csv(BufReader::new(file))
        .map_err(|e| usage(format!("--porosity {}: {e}", path.display())))
}

fn model_options(args: &ModelArgs) -> CliResult<ModelOptions> {
    let porosity = args.porosity.as_deref().map(load_porosity).transpose()?;
    if let Some(p) = &porosity {
        if p.m != args.m {
            return Err(usage(format!(
                "--porosity grid has m = {}, but --m is {}",
                p.m, args.m
            )));
        }
    }
    Ok(ModelOptions {
        m: args.m,
        diffusion: args.diffusion,
        noise_amp: args.noise_amp,
        porosity,
    })
}

fn resolve_model(name: &str, args: &ModelArgs) -> CliResult<SdaeProblem> {
    let opts = model_options(args)?;
    by_name(name, &opts).map_err(|e| match e {
        Error::UnknownModel(_) | Error::InvalidSpec(_) => usage(format!("--model {name}: {e}")),
        other => other.into(),
    })
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn finish(mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().context("flushing output")?;
    Ok(())
}

fn simulate(out: &Path, args: &SimulateArgs) -> CliResult<()> {
    if !args.n_fine.is_power_of_two() {
        return Err(usage(format!(
            "--n-fine {} must be a power of two",
            args.n_fine
        )));
    }
    if args.n == 0 || !args.n_fine.is_multiple_of(args.n) {
        return Err(usage(format!(
            "--n {} must divide --n-fine {}",
            args.n, args.n_fine
        )));
    }
    let p = resolve_model(&args.model, &args.model_args)?;
    let path = BrownianPath::generate(args.seed, p.horizon, args.n_fine, p.d1)?;
    let traj = integrate(&p, args.n, &path, args.scheme)
        .with_context(|| format!("integrating {} with the {} scheme", p.name, args.scheme))?;
    for w in &traj.warnings {
        log::warn!("{w}");
    }
    let mut file = create(out, "trajectory.csv")?;
    traj.write_csv(&mut file)?;
    finish(file)?;
    println!(
        "{}: {} steps, final state norm {:.6e}, wrote {}",
        p.name,
        traj.steps(),
        traj.final_state().norm(),
        out.join("trajectory.csv").display()
    );
    Ok(())
}

fn converge(out: &Path, args: &ConvergeArgs) -> CliResult<()> {
    if args.seeds.is_empty() {
        return Err(usage("--seeds must list at least one seed"));
    }
    let mut cfg = StudyConfig::new(args.n_ref, args.resolutions.clone());
    cfg.scheme = args.scheme;
    cfg.parallel = !args.serial;
    cfg.check_constraints = true;
    cfg.validate()
        .map_err(|e| usage(format!("--n-ref/--resolutions: {e}")))?;
    let p = resolve_model(&args.model, &args.model_args)?;
    let study = run_study_with(&p, &args.seeds, &cfg)?;

    let mut f = create(out, "samples.csv")?;
    study.write_samples_csv(&mut f)?;
    finish(f)?;
    let mut f = create(out, "summary.csv")?;
    study.write_summary_csv(&mut f)?;
    finish(f)?;
    let mut f = create(out, "loglog.csv")?;
    study.write_loglog_csv(&mut f)?;
    finish(f)?;

    for r in &study.reports {
        let rate = if r.has_rate() {
            format!("{:.4}", r.rate)
        } else {
            "undefined".to_string()
        };
        let residual = r
            .max_constraint_residual
            .map(|c| format!(", max constraint residual {c:.3e}"))
            .unwrap_or_default();
        println!(
            "seed {}: rate {rate} ({}){residual}",
            r.seed,
            r.status_label()
        );
    }
    let s = &study.summary;
    if s.successful > 0 && s.mean_rate.is_finite() {
        println!(
            "mean rate {:.4} +/- {:.4} over {} successful samples ({} failed)",
            s.mean_rate, s.std_rate, s.successful, s.failed
        );
    } else {
        println!(
            "mean rate undefined ({} successful, {} failed)",
            s.successful, s.failed
        );
    }
    Ok(())
}

fn heat2d(out: &Path, args: &Heat2dArgs) -> CliResult<()> {
    let model_args = ModelArgs {
        m: args.m,
        diffusion: args.diffusion,
        noise_amp: args.noise_amp,
        porosity: args.porosity.clone(),
    };
    let opts = model_options(&model_args)?;
    let spec = opts
        .heat2d_spec()
        .map_err(|e| usage(format!("--m {}: {e}", args.m)))?;
    let noisy = build_heat2d(&spec).map_err(|e| usage(e.to_string()))?;
    let quiet =
        build_heat2d(&spec.clone().with_noise_amp(0.0)).map_err(|e| usage(e.to_string()))?;
    if args.n == 0 || !args.n.is_power_of_two() {
        return Err(usage(format!("--n {} must be a power of two", args.n)));
    }
    let path = BrownianPath::generate(args.seed, spec.horizon, args.n, noisy.d1)?;

    let mut f = create(out, "porosity.csv")?;
    spec.porosity.write_csv(&mut f)?;
    finish(f)?;

    let algebraic = impermeable_nodes(&spec);
    for (p, name) in [(&noisy, "heat2d_noise.csv"), (&quiet, "heat2d_nonoise.csv")] {
        let traj = integrate(p, args.n, &path, Scheme::Primary)
            .with_context(|| format!("integrating heat2d for {name}"))?;
        let worst = constraint_residuals(p, &traj)?
            .into_iter()
            .fold(0.0, f64::max);
        let mut f = create(out, name)?;
        write_grid(traj.final_state().as_slice(), spec.m, &mut f)?;
        finish(f)?;
        println!(
            "{name}: {} steps, {} algebraic nodes, max constraint residual {worst:.3e}",
            traj.steps(),
            algebraic.len()
        );
    }
    Ok(())
}

fn check(args: &CheckArgs) -> CliResult<bool> {
    let p = resolve_model(&args.model, &args.model_args)?;
    let cfg = ValidationConfig {
        rank_tol: args.rank_tol,
        index1_tol: args.index1_tol,
        jacobian_tol: args.jacobian_tol,
        iteration_tol: args.iteration_tol,
        a13_tol: args.a13_tol,
        h: args.h,
        seed: args.seed,
        ..ValidationConfig::default()
    };
    let report = validate(&p, &cfg);
    print!("{report}");
    Ok(report.all_pass())
}

fn run(cli: &Cli) -> CliResult<ExitCode> {
    let out = cli.output_dir.as_path();
    match &cli.command {
        Command::Simulate(a) => simulate(out, a)?,
        Command::Converge(a) => converge(out, a)?,
        Command::Heat2d(a) => heat2d(out, a)?,
        Command::Check(a) => {
            if !check(a)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
