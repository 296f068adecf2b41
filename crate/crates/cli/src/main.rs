//! `spincm`: simulate the discrete spin Calogero-Moser map, verify
//! trajectories, run the continuum-limit study and the spinless check.
//!
//! Exit codes: 0 success, 1 input error, 2 truncated run, 3 failed checks.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use spincm::continuous::ContinuousState;
use spincm::convergence::{run_study, Branch, ConvergenceSpec};
use spincm::discrete::{run, Predictor, StepperConfig};
use spincm::io::{parse_instance, parse_trajectory, trajectory_to_json};
use spincm::linalg::CMatrix;
use spincm::report::VerificationReport;
use spincm::state::{random_instance, ModelParams, SpinState, Trajectory};
use spincm::verify::{check_spinless_reduction, verify_trajectory, Tolerances, VerifyOptions};

const EXIT_INPUT: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "spincm",
    version,
    about = "Discrete-time spin Calogero-Moser simulations and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the discrete map and write the trajectory.
    Simulate(SimulateArgs),
    /// Run the identity checks on a trajectory file.
    Verify(VerifyArgs),
    /// Compare discrete runs against the continuous flow as the step shrinks.
    Converge(ConvergeArgs),
    /// Simulate a spinless (N = 1) system and check the position-only equation.
    Spinless(SpinlessArgs),
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Instance file (JSON).
    #[arg(long, conflicts_with_all = ["seed", "np", "nspin"])]
    instance: Option<PathBuf>,
    /// Seed for a random instance.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of particles of a random instance.
    #[arg(long)]
    np: Option<usize>,
    /// Spin dimension of a random instance.
    #[arg(long)]
    nspin: Option<usize>,
    /// Radius of the disk random positions are drawn from.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Discrete-flow parameter as RE,IM; overrides the instance file.
    #[arg(long, value_parser = parse_complex)]
    mu: Option<Complex64>,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Newton tolerance (relative sup-norm residual).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum, default_value_t = PredictorArg::Spectral)]
    predictor: PredictorArg,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output path; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    /// Trajectory file (JSON).
    trajectory: PathBuf,
    /// Report path; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = VerifyOptions::default().z_seed)]
    z_seed: u64,
    #[arg(long, default_value_t = VerifyOptions::default().x_seed)]
    x_seed: u64,
    /// Multiply every tolerance by this factor.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Spin dimension of the built-in two-particle data when no source is given.
    #[arg(long = "pair-nspin", default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pair_nspin: u8,
    /// Step sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 5e-3, 2.5e-3])]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    horizon: f64,
    #[arg(long, value_enum, default_value_t = BranchArg::Plus)]
    branch: BranchArg,
    #[arg(long, default_value_t = 10)]
    rk4_substeps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpinlessArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Report path; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Plus,
    Minus,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Spectral,
    Shift,
    Extrapolate,
}

fn parse_complex(text: &str) -> Result<Complex64, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    let z = match parts.as_slice() {
        [re] => Complex64::new(num(re)?, 0.0),
        [re, im] => Complex64::new(num(re)?, num(im)?),
        _ => return Err(format!("expected RE,IM, got {text:?}")),
    };
    if z.re.is_finite() && z.im.is_finite() {
        Ok(z)
    } else {
        Err(format!("{text:?} is not finite"))
    }
}

/// Failure carrying its exit code.
struct Exit(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Exit {
    fn from(e: E) -> Self {
        Exit(EXIT_INPUT, e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Converge(a) => converge(a),
        Command::Spinless(a) => spinless(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn load_source(src: &SourceArgs) -> anyhow::Result<Option<(ModelParams, SpinState)>> {
    if let Some(path) = &src.instance {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let inst = parse_instance(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(Some((inst.params, inst.state)));
    }
    match (src.seed, src.np, src.nspin) {
        (None, None, None) => Ok(None),
        (Some(seed), Some(np), Some(n)) => {
            let params = ModelParams::new(np, n, Complex64::new(3.0, 1.0))?;
            let state = random_instance(&params, seed, src.spread)?;
            Ok(Some((params, state)))
        }
        _ => bail!("a random instance needs all of --seed, --np and --nspin"),
    }
}

fn run_source(args: &RunArgs) -> anyhow::Result<(ModelParams, SpinState, StepperConfig)> {
    let (mut params, state) =
        load_source(&args.source)?.ok_or_else(|| anyhow!("give --instance or --seed/--np/--nspin"))?;
    if let Some(mu) = args.mu {
        params = params.with_mu(mu)?;
    }
    let mut config = StepperConfig {
        predictor: match args.predictor {
            PredictorArg::Spectral => Predictor::Spectral,
            PredictorArg::Shift => Predictor::ShiftByInverseMu,
            PredictorArg::Extrapolate => Predictor::LinearExtrapolation,
        },
        ..Default::default()
    };
    if let Some(t) = args.tol {
        config.newton_tol = t;
    }
    if let Some(m) = args.max_iters {
        config.max_iters = m;
    }
    config.validate()?;
    Ok((params, state, config))
}

/// Run the stepper, logging each step; a truncated run is returned with the
/// error that stopped it.
fn simulate_run(
    params: &ModelParams,
    state: &SpinState,
    config: &StepperConfig,
    steps: usize,
) -> Result<(Trajectory, Option<String>), Exit> {
    let (traj, err) = match run(state, steps, params, config) {
        Ok(t) => (t, None),
        Err(f) if f.partial.is_empty() => return Err(Exit(EXIT_INPUT, anyhow!(f.error))),
        Err(f) => (f.partial, Some(f.error.to_string())),
    };
    for (k, m) in traj.steps.iter().enumerate() {
        eprintln!(
            "step {:>4}: {} iterations, residual {:.3e} ({})",
            k + 1,
            m.iterations,
            m.residual,
            m.predictor
        );
    }
    Ok((traj, err))
}

fn write_out(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => output::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<(), Exit> {
    let (params, state, config) = run_source(&args.run)?;
    let (traj, err) = simulate_run(&params, &state, &config, args.run.steps)?;
    let text = match args.format {
        Format::Json => trajectory_to_json(&traj) + "\n",
        Format::Csv => output::trajectory_csv(&traj)?,
    };
    write_out(args.out.as_deref(), &text)?;
    match err {
        None => Ok(()),
        Some(e) => Err(Exit(
            EXIT_PARTIAL,
            anyhow!("stopped after {} of {} steps: {e}", traj.len() - 1, args.run.steps),
        )),
    }
}

fn finish_report(report: &VerificationReport, out: Option<&Path>) -> Result<(), Exit> {
    eprint!("{report}");
    write_out(out, &(report.to_json() + "\n"))?;
    if report.all_pass() {
        Ok(())
    } else {
        Err(Exit(
            EXIT_FAILED,
            anyhow!("failed checks: {}", report.failures().join(", ")),
        ))
    }
}

fn verify(args: VerifyArgs) -> Result<(), Exit> {
    let path = &args.trajectory;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let traj = parse_trajectory(&text).with_context(|| format!("parsing {}", path.display()))?;
    if !args.tol_scale.is_finite() || args.tol_scale <= 0.0 {
        return Err(Exit(EXIT_INPUT, anyhow!("--tol-scale must be positive")));
    }
    let opts = VerifyOptions {
        z_seed: args.z_seed,
        x_seed: args.x_seed,
        tol: Tolerances::default().scaled(args.tol_scale),
        ..Default::default()
    };
    let report = verify_trajectory(&traj, &opts)?;
    finish_report(&report, args.out.as_deref())
}

/// Two particles at `y = ±1` at rest.
fn resting_pair(n_spin: u8) -> ContinuousState {
    let c = |re: f64| Complex64::new(re, 0.0);
    let (a, b) = if n_spin == 1 {
        (CMatrix::from_element(2, 1, c(1.0)), CMatrix::from_element(2, 1, c(1.0)))
    } else {
        (
            CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.5), c(0.3), c(1.0)]),
            CMatrix::from_row_slice(2, 2, &[c(0.6), c(0.8), c(0.2), c(0.94)]),
        )
    };
    ContinuousState {
        t: 0.0,
        y: vec![c(-1.0), c(1.0)],
        ydot: vec![c(0.0); 2],
        a,
        b,
    }
}

fn converge(args: ConvergeArgs) -> Result<(), Exit> {
    let initial = match load_source(&args.source)? {
        Some((_, s)) => ContinuousState::from_spin(&s, 0.0),
        None => resting_pair(args.pair_nspin),
    };
    let branch = match args.branch {
        BranchArg::Plus => Branch::Plus,
        BranchArg::Minus => Branch::Minus,
    };
    let mut spec = ConvergenceSpec::new(initial, args.eps, args.horizon, branch);
    spec.rk4_substeps = args.rk4_substeps;
    let study = run_study(&spec)?;
    for r in &study.runs {
        match (r.deviation, &r.error) {
            (Some(d), _) => eprintln!("eps {:.3e}: {} steps, deviation {d:.3e}", r.eps, r.steps),
            (None, Some(e)) => eprintln!("eps {:.3e}: failed: {e}", r.eps),
            (None, None) => {}
        }
    }
    match study.slope {
        Some(s) => eprintln!("slope {s:.4}, monotone {}, pass {}", study.monotone, study.pass),
        None => eprintln!("slope undefined, exact {}, pass {}", study.exact, study.pass),
    }
    let text = serde_json::to_string_pretty(&study).context("serializing study")? + "\n";
    write_out(args.out.as_deref(), &text)?;
    if study.any_failed() {
        Err(Exit(EXIT_PARTIAL, anyhow!("some runs did not complete")))
    } else if !study.pass {
        Err(Exit(
            EXIT_FAILED,
            anyhow!("deviations do not converge at the required rate"),
        ))
    } else {
        Ok(())
    }
}

fn spinless(args: SpinlessArgs) -> Result<(), Exit> {
    let (params, state, config) = run_source(&args.run)?;
    if params.n_spin != 1 {
        return Err(Exit(
            EXIT_INPUT,
            anyhow!("spinless needs N = 1, got N = {}", params.n_spin),
        ));
    }
    let (traj, err) = simulate_run(&params, &state, &config, args.run.steps)?;
    if let Some(e) = err {
        return Err(Exit(
            EXIT_PARTIAL,
            anyhow!("stopped after {} steps: {e}", traj.len() - 1),
        ));
    }
    let report = check_spinless_reduction(&traj, &Tolerances::default())?;
    if let Some(r) = report.residual("spinless_eom") {
        eprintln!("max spinless residual {r:.3e}");
    }
    finish_report(&report, args.out.as_deref())
}
