//! `dilated`: runs LLN/CLT fixed-point iterations, Fourier distances,
//! observable limits and the property self-check from the command line.
//!
//! Exit codes: 0 converged / all checks passed, 1 self-check failure,
//! 2 configuration error or measure outside the fibre, 3 divergence,
//! 4 iteration budget exhausted or inconclusive verdict, 5 unbounded
//! observable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dilated::cltsys::{
    central_limit, observable_clt, CltError, CltSystem, ConvergenceReport, Kind, Observable, ObservableConfig,
    Sampler, TargetTolerance, Verdict,
};
use dilated::measure::{fourier_l_distance, DualGrid, GaussianMeasure, GridConfig, LatticeMeasure, Measure};
use dilated::selfcheck::{run_suite, SelfCheckOptions, Suite};

const EXIT_SELFCHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_UNBOUNDED: u8 = 5;

#[derive(Parser)]
#[command(name = "dilated", version, about = "Central limits as fixed points of rescaled self-convolution")]
struct Cli {
    /// Seed for samplers and property suites.
    #[arg(long, env = "DILATED_SEED", default_value_t = 42, global = true)]
    seed: u64,
    /// Worker threads (outputs do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for report.json and convergence.csv.
    #[arg(long, default_value = ".", global = true)]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate μ ↦ (1/√2)⋆(μ∗μ) toward N(0, Var μ).
    Clt(RunArgs),
    /// Iterate μ ↦ (1/2)⋆(μ∗μ) toward δ_{E μ}.
    Lln(RunArgs),
    /// Print the Fourier l-distance between two measures ("inf" when the
    /// moment gate fires).
    Distance(DistanceArgs),
    /// Central limit of a bounded observable of a sampled base measure.
    Observable(ObservableArgs),
    /// Run the property suites; one summary line per suite.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Use twice as many radii and random directions.
    #[arg(long)]
    grid_dense: bool,
    /// Smallest dual radius [default: 0.01].
    #[arg(long)]
    grid_r_min: Option<f64>,
    /// Largest dual radius [default: 100].
    #[arg(long)]
    grid_r_max: Option<f64>,
    /// Number of log-spaced radii [default: 64].
    #[arg(long)]
    grid_radii: Option<usize>,
    /// Random directions beyond the ± axes, 2-d only [default: 14].
    #[arg(long)]
    grid_dirs: Option<usize>,
}

impl GridArgs {
    fn config(&self) -> GridConfig {
        let mut c = if self.grid_dense { GridConfig::dense() } else { GridConfig::default() };
        if let Some(v) = self.grid_r_min {
            c.r_min = v;
        }
        if let Some(v) = self.grid_r_max {
            c.r_max = v;
        }
        if let Some(v) = self.grid_radii {
            c.n_radii = v;
        }
        if let Some(v) = self.grid_dirs {
            c.n_random_dirs = v;
        }
        c
    }
}

const MEASURE_HELP: &str = "Measure: dirac:<x>, rademacher, bernoulli:<p>, uniform:<a>,<b>,<n>, \
gaussian:<mean>,<var> or lattice:@<file.json>";

#[derive(Args)]
struct RunArgs {
    #[arg(long, help = MEASURE_HELP)]
    measure: Option<String>,
    /// Exponent of the Fourier distance [default: 2.5 for clt, 1.5 for lln].
    #[arg(long)]
    l: Option<f64>,
    /// Iteration budget [default: 20 for clt, 15 for lln].
    #[arg(long)]
    iters: Option<usize>,
    /// Absolute tolerance on the final distance to the limit; without it the
    /// contraction bound d₀·ratioᴺ·slack is used.
    #[arg(long)]
    tol: Option<f64>,
    /// Slack factor of the contraction bound.
    #[arg(long, default_value_t = 1.1)]
    slack: f64,
    /// Override the dilation factor [default: 1/2 for lln, 1/√2 for clt];
    /// a wrong factor should be flagged by drift or divergence.
    #[arg(long)]
    rescale: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct DistanceArgs {
    #[arg(help = MEASURE_HELP)]
    a: String,
    #[arg(help = MEASURE_HELP)]
    b: String,
    /// Exponent, in [1, 3).
    #[arg(long, default_value_t = 2.5)]
    l: f64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Circle,
    TwoPoint,
}

#[derive(Args)]
struct ObservableArgs {
    #[arg(long, value_enum, default_value_t = SamplerArg::Circle)]
    sampler: SamplerArg,
    /// Observable: cos, sin, identity, poly:<c0>,<c1>,… or const:<c>.
    #[arg(long = "H", default_value = "cos")]
    h: String,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 2048)]
    bins: usize,
    /// Largest |H| accepted on a sample.
    #[arg(long, default_value_t = 1e6)]
    bound: f64,
    #[arg(long, default_value_t = 2.5)]
    l: f64,
    #[arg(long, default_value_t = 15)]
    iters: usize,
    /// Absolute tolerance on the final distance to N(0, Var H).
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Quantale,
    Metric,
    Psd,
    Theta,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Quantale => Suite::Quantale,
            SuiteArg::Metric => Suite::Metric,
            SuiteArg::Psd => Suite::Psd,
            SuiteArg::Theta => Suite::Theta,
        }
    }
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Run only these suites (repeatable) [default: all].
    #[arg(long, value_enum)]
    suite: Vec<SuiteArg>,
    /// Add a quantale whose tensor breaks the unit law.
    #[arg(long)]
    break_unit: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

fn number(s: &str, what: &str) -> Result<f64, Failure> {
    s.trim().parse().map_err(|_| Failure::config(format!("{what}: `{s}` is not a number")))
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',').map(|x| number(x, what)).collect()
}

fn parse_measure(spec: &str) -> Result<Measure, Failure> {
    let (head, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let bad = |e: dilated::measure::MeasureError| Failure::config(format!("measure `{spec}`: {e}"));
    let arity = |args: &[f64], n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(Failure::config(format!("measure `{spec}` takes {n} argument(s)")))
        }
    };
    match head {
        "rademacher" if rest.is_empty() => Ok(Measure::Lattice(LatticeMeasure::rademacher())),
        "dirac" => Measure::dirac(&[number(rest, spec)?]).map_err(bad),
        "bernoulli" => Ok(Measure::Lattice(LatticeMeasure::bernoulli(number(rest, spec)?).map_err(bad)?)),
        "uniform" => {
            let v = numbers(rest, spec)?;
            arity(&v, 3)?;
            if v[2] < 1.0 || v[2].fract() != 0.0 {
                return Err(Failure::config(format!("measure `{spec}`: atom count must be a positive integer")));
            }
            Ok(Measure::Lattice(LatticeMeasure::uniform(v[0], v[1], v[2] as usize).map_err(bad)?))
        }
        "gaussian" => {
            let v = numbers(rest, spec)?;
            arity(&v, 2)?;
            Ok(Measure::Gaussian(GaussianMeasure::scalar(v[0], v[1]).map_err(bad)?))
        }
        "lattice" => {
            let path = rest
                .strip_prefix('@')
                .ok_or_else(|| Failure::config(format!("measure `{spec}`: expected lattice:@<file>")))?;
            let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{path}: {e}")))?;
            let m: Measure = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{path}: {e}")))?;
            m.validate().map_err(bad)?;
            Ok(m)
        }
        _ => Err(Failure::config(format!("unknown measure `{spec}`"))),
    }
}

fn parse_observable(spec: &str) -> Result<Observable, Failure> {
    match spec.split_once(':') {
        None => match spec {
            "cos" => Ok(Observable::Cos),
            "sin" => Ok(Observable::Sin),
            "identity" => Ok(Observable::Identity),
            _ => Err(Failure::config(format!("unknown observable `{spec}`"))),
        },
        Some(("poly", c)) => Ok(Observable::Poly(numbers(c, spec)?)),
        Some(("const", c)) => Ok(Observable::Const(number(c, spec)?)),
        Some(_) => Err(Failure::config(format!("unknown observable `{spec}`"))),
    }
}

fn clt_failure(e: CltError) -> Failure {
    let code = match e {
        CltError::DivergenceDetected { .. } => EXIT_DIVERGED,
        CltError::MaxIterationsExceeded { .. } => EXIT_NOT_CONVERGED,
        CltError::UnboundedObservable { .. } => EXIT_UNBOUNDED,
        _ => EXIT_CONFIG,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn write_outputs(dir: &Path, header: Value, report: &ConvergenceReport) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::config(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let mut doc = header;
    doc["report"] = serde_json::to_value(report).expect("reports serialize");
    let mut text = serde_json::to_string_pretty(&doc).expect("reports serialize");
    text.push('\n');
    fs::write(dir.join("report.json"), text).map_err(io)?;
    fs::write(dir.join("convergence.csv"), report.to_csv()).map_err(io)?;
    Ok(())
}

/// Writes whatever report the run produced and maps it to an exit code.
fn finish(dir: &Path, header: Value, result: Result<ConvergenceReport, CltError>) -> Result<(), Failure> {
    let report = match &result {
        Ok(r) => Some(r),
        Err(e) => e.report(),
    };
    if let Some(r) = report {
        write_outputs(dir, header, r)?;
        println!(
            "{} l={} iterations={} d_to_target={:e} target_tol={:e} verdict={}",
            r.kind,
            r.l,
            r.iterations,
            r.final_distance(),
            r.target_tol,
            json!(r.verdict).as_str().unwrap_or("?")
        );
    }
    match result {
        Ok(r) if r.verdict == Verdict::Converged => Ok(()),
        Ok(r) => Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: format!("verdict {:?}: grading drift {:e}", r.verdict, r.max_drift()),
        }),
        Err(e) => Err(clt_failure(e)),
    }
}

fn run_limit(kind: Kind, args: &RunArgs, cli: &Cli) -> Result<(), Failure> {
    let (spec, l, iters) = match kind {
        Kind::Clt => ("rademacher", 2.5, 20),
        Kind::Lln => ("bernoulli:0.3", 1.5, 15),
    };
    let spec = args.measure.as_deref().unwrap_or(spec);
    let (l, iters) = (args.l.unwrap_or(l), args.iters.unwrap_or(iters));
    let mu0 = parse_measure(spec)?;
    let grid = DualGrid::new(mu0.dim(), args.grid.config()).map_err(|e| Failure::config(e.to_string()))?;
    let mut sys = CltSystem::with_grid(kind, l, grid).map_err(clt_failure)?;
    if let Some(r) = args.rescale {
        if !(r.is_finite() && r > 0.0) {
            return Err(Failure::config(format!("rescale must be positive, got {r}")));
        }
        sys = sys.with_rescale(r);
    }
    let target = match args.tol {
        Some(t) => TargetTolerance::Absolute(t),
        None => TargetTolerance::ContractionBound { slack: args.slack },
    };
    let header = json!({
        "command": kind.to_string(),
        "config": {
            "measure": spec,
            "l": l,
            "iters": iters,
            "tol": args.tol,
            "slack": args.slack,
            "rescale": sys.rescale(),
            "grid": args.grid.config(),
        },
    });
    finish(&cli.out_dir, header, central_limit(&sys, &mu0, iters, target))
}

fn run_distance(args: &DistanceArgs) -> Result<(), Failure> {
    let (a, b) = (parse_measure(&args.a)?, parse_measure(&args.b)?);
    if a.dim() != b.dim() {
        return Err(Failure::config("measures live in different dimensions"));
    }
    let grid = DualGrid::new(a.dim(), args.grid.config()).map_err(|e| Failure::config(e.to_string()))?;
    let d = fourier_l_distance(&a, &b, args.l, &grid).map_err(|e| Failure::config(e.to_string()))?;
    println!("{d}");
    if d.is_infinite() {
        eprintln!("moment gate: the measures disagree on a moment of order below l = {}", args.l);
    }
    Ok(())
}

fn run_observable(args: &ObservableArgs, cli: &Cli) -> Result<(), Failure> {
    let grid = DualGrid::new(1, args.grid.config()).map_err(|e| Failure::config(e.to_string()))?;
    let sys = CltSystem::with_grid(Kind::Clt, args.l, grid).map_err(clt_failure)?;
    let config = ObservableConfig {
        sampler: match args.sampler {
            SamplerArg::Circle => Sampler::Circle,
            SamplerArg::TwoPoint => Sampler::TwoPoint,
        },
        observable: parse_observable(&args.h)?,
        n_samples: args.samples,
        n_bins: args.bins,
        bound: args.bound,
        seed: cli.seed,
        max_iter: args.iters,
        target: TargetTolerance::Absolute(args.tol),
    };
    let header = json!({
        "command": "observable",
        "config": {
            "sampler": config.sampler,
            "observable": config.observable,
            "samples": args.samples,
            "bins": args.bins,
            "bound": args.bound,
            "seed": cli.seed,
            "l": args.l,
            "iters": args.iters,
            "tol": args.tol,
            "grid": args.grid.config(),
        },
    });
    finish(&cli.out_dir, header, observable_clt(&sys, &config))
}

fn run_selfcheck(args: &SelfcheckArgs, cli: &Cli) -> Result<(), Failure> {
    let suites: Vec<Suite> = if args.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        args.suite.iter().map(|&s| s.into()).collect()
    };
    let opts = SelfCheckOptions {
        seed: cli.seed,
        break_unit: args.break_unit,
    };
    let mut first_failure = None;
    for suite in suites {
        let out = run_suite(suite, opts);
        match &out.failure {
            None => println!("{}: ok ({} checks)", suite.name(), out.checks),
            Some(f) => {
                println!("{}: FAIL ({} checks): {f}", suite.name(), out.checks);
                first_failure.get_or_insert_with(|| format!("{} suite: {f}", suite.name()));
            }
        }
    }
    match first_failure {
        None => Ok(()),
        Some(message) => Err(Failure {
            code: EXIT_SELFCHECK,
            message,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::Clt(args) => run_limit(Kind::Clt, args, &cli),
        Command::Lln(args) => run_limit(Kind::Lln, args, &cli),
        Command::Distance(args) => run_distance(args),
        Command::Observable(args) => run_observable(args, &cli),
        Command::Selfcheck(args) => run_selfcheck(args, &cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
