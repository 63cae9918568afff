use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eivsos::bench::{self, ExperimentConfig, InitialState, PlantSpec, Sweep};
use eivsos::semialg::{build_eiv_set, sample_consistent_plants, PiSpec};
use eivsos::synth::{method_report, verify, Controller, Method, Outcome};
use eivsos::sysdata::{least_squares_plant, load_trajectory, save_trajectory, NoiseBounds};
use eivsos::Error;

const INFEASIBLE: u8 = 1;
const USAGE: u8 = 2;
const SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "eivsos", version, about = "Robust controller synthesis from noisy input-state data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one noisy trajectory and write it as JSON.
    Simulate(SimulateArgs),
    /// Synthesize a controller from a trajectory file.
    Synth(SynthArgs),
    /// Check a controller against a plant and, optionally, plants consistent with data.
    Verify(VerifyArgs),
    /// Run a Monte Carlo experiment described by a config file.
    Montecarlo(RunArgs),
    /// Run the H2 experiment of a config file (the method is forced to h2).
    H2sweep(RunArgs),
    /// Print certificate sizes q, sigma0, sigma_i, mu.
    Sizes(SizesArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum X0 {
    First,
    Uniform,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Preset name or plant JSON file.
    #[arg(long, default_value = "single-input")]
    plant: String,
    /// Number of samples T.
    #[arg(short = 'T', long, default_value_t = 8)]
    horizon: usize,
    #[arg(long, default_value_t = 0.0)]
    eps_x: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_u: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_w: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trial index inside the seed's stream (matches Monte Carlo trial numbering).
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[arg(long, value_enum, default_value = "first")]
    x0: X0,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PiArgs {
    /// Compactifying set: none, ball or box.
    #[arg(long, default_value = "none")]
    pi: String,
    /// Ball radius (defaults to a multiple of the least-squares norm).
    #[arg(long)]
    radius: Option<f64>,
    /// Box half width around least squares.
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
}

impl PiArgs {
    fn spec(&self) -> Result<PiSpec, Error> {
        match self.pi.as_str() {
            "none" => Ok(PiSpec::None),
            "ball" => Ok(PiSpec::Ball { radius: self.radius }),
            "box" => Ok(PiSpec::Box { half_width: self.half_width }),
            other => Err(Error::InvalidArgument(format!("unknown --pi {other:?} (none, ball, box)"))),
        }
    }
}

#[derive(clap::Args)]
struct SynthArgs {
    /// ss-full, ss-alt, ss-alt-sparse, qs-full, qs-alt, h2, hinf or rate-min.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    traj: PathBuf,
    /// Relaxation degree.
    #[arg(short, long, default_value_t = 1)]
    d: u32,
    /// Superstability margin.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    /// Minimize the worst-case rate instead of stopping at the first certificate.
    #[arg(long)]
    rate_min: bool,
    #[command(flatten)]
    pi: PiArgs,
    /// Known plant entry, e.g. `A[1,1]=0.6863`; repeatable.
    #[arg(long = "known", value_parser = parse_known)]
    known: Vec<(String, f64)>,
    /// Plant supplying the H2 performance channels.
    #[arg(long)]
    plant: Option<String>,
    /// Write the controller JSON here.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Print the controller JSON instead of the summary.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    controller: PathBuf,
    /// Preset name or plant JSON file.
    #[arg(long)]
    plant: String,
    /// Also test plants sampled from the consistency set of this trajectory.
    #[arg(long)]
    traj: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the summary as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(clap::Args)]
struct SizesArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(short = 'n', default_value_t = 2)]
    n: usize,
    #[arg(short = 'm', default_value_t = 1)]
    m: usize,
    #[arg(short = 'd', default_value_t = 1)]
    d: u32,
    /// Horizon (only the Full certificates depend on it).
    #[arg(short = 'T', default_value_t = 8)]
    horizon: usize,
    /// Print every block as `role,count,size`.
    #[arg(long)]
    csv: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_known(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn plant_spec(s: &str) -> PlantSpec {
    if Path::new(s).is_file() {
        PlantSpec::File { path: s.into() }
    } else {
        PlantSpec::Preset(s.into())
    }
}

#[derive(Debug)]
enum Failure {
    Infeasible,
    Solver(String),
    Input(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(msg) => Failure::Solver(msg),
            other => Failure::Input(other),
        }
    }
}

type Run = Result<(), Failure>;

fn simulate(a: SimulateArgs) -> Run {
    let mut cfg = ExperimentConfig::new("", Method::SsAlt, a.horizon, NoiseBounds::new(a.eps_x, a.eps_u, a.eps_w));
    cfg.plant = plant_spec(&a.plant);
    cfg.seed = a.seed;
    cfg.trials = a.trial + 1;
    cfg.x0 = match a.x0 {
        X0::First => InitialState::First,
        X0::Uniform => InitialState::Uniform,
    };
    cfg.validate()?;
    let plant = cfg.plant.resolve()?;
    let traj = bench::trial_trajectory(&cfg, &plant, &cfg.cells()[0], a.trial)?;
    match a.out {
        Some(p) => save_trajectory(&traj, &p)?,
        None => println!("{}", traj.to_json()?),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Run {
    let traj = load_trajectory(&a.traj)?;
    let plant = match &a.plant {
        Some(s) => plant_spec(s).resolve()?,
        None => least_squares_plant(&traj)?,
    };
    if plant.n() != traj.n() || plant.m() != traj.m() {
        return Err(Error::Dimension(format!(
            "plant is {}x{}, trajectory has n = {}, m = {}",
            plant.n(),
            plant.m(),
            traj.n(),
            traj.m()
        ))
        .into());
    }
    let mut cfg = ExperimentConfig::new("", a.method, traj.horizon(), traj.bounds.clone());
    cfg.d = a.d;
    cfg.delta = a.delta;
    cfg.pi = a.pi.spec()?;
    cfg.known = a.known.into_iter().collect::<BTreeMap<_, _>>();
    let mut o = cfg.synth_options()?;
    o.rate_min |= a.rate_min;
    if o.rate_min && !matches!(a.method, Method::SsFull | Method::SsAlt | Method::SsAltSparse | Method::RateMin) {
        return Err(Error::InvalidArgument(format!("--rate-min applies to superstabilization, not {}", a.method.name())).into());
    }
    let outcome = bench::run_with_options(a.method, &plant, &traj, &o)?;
    let ctrl = match &outcome {
        Outcome::Feasible(c) => c,
        Outcome::Infeasible => {
            println!("status: infeasible");
            return Err(Failure::Infeasible);
        }
        Outcome::Unknown(st) => {
            println!("status: unknown");
            return Err(Failure::Solver(format!("solver stopped with status {st:?}")));
        }
    };
    if let Some(p) = &a.out {
        std::fs::write(p, ctrl.to_json()?).map_err(Error::from)?;
    }
    if a.json {
        println!("{}", ctrl.to_json()?);
    } else {
        print_controller(ctrl);
    }
    Ok(())
}

fn print_controller(c: &Controller) {
    println!("status: feasible");
    println!("method: {}", c.method);
    if let Some(l) = c.lambda {
        println!("lambda: {l:.6}");
    }
    if let Some(g) = c.gamma {
        println!("gamma: {g:.6}");
    }
    for i in 0..c.k.nrows() {
        let row: Vec<String> = c.k.row(i).iter().map(|v| format!("{v:.6}")).collect();
        println!("K[{}]: {}", i + 1, row.join(" "));
    }
    println!("iterations: {}", c.stats.iterations);
    println!("wall: {:.3}s", c.wall_seconds);
}

fn verify_cmd(a: VerifyArgs) -> Run {
    let ctrl = Controller::from_json(&std::fs::read_to_string(&a.controller).map_err(Error::from)?)?;
    let truth = plant_spec(&a.plant).resolve()?;
    if ctrl.k.nrows() != truth.m() || ctrl.k.ncols() != truth.n() {
        return Err(Error::Dimension(format!("K is {}x{}, plant expects {}x{}", ctrl.k.nrows(), ctrl.k.ncols(), truth.m(), truth.n())).into());
    }
    let samples = match &a.traj {
        Some(p) => {
            let traj = load_trajectory(p)?;
            sample_consistent_plants(&build_eiv_set(&traj)?, &truth, a.samples, a.seed)?
        }
        None => Vec::new(),
    };
    let v = verify(&ctrl, &truth, &samples)?;
    println!("{}", serde_json::to_string_pretty(&v).map_err(Error::from)?);
    if v.passed(ctrl.class) {
        Ok(())
    } else {
        Err(Failure::Infeasible)
    }
}

fn run(a: RunArgs, h2: bool) -> Run {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.output.is_some() {
        cfg.output = a.output;
    }
    if h2 && cfg.sweep.is_none() {
        cfg.sweep = Some(Sweep::NoiseSets(bench::standard_noise_sets()));
    }
    let (table, _) = if h2 { bench::run_h2_sweep(&cfg)? } else { bench::run_montecarlo(&cfg)? };
    if a.csv {
        print!("{}", table.to_csv()?);
    } else {
        print!("{}", table.render());
    }
    Ok(())
}

fn sizes(a: SizesArgs) -> Run {
    let r = method_report(a.method, a.n, a.m, a.horizon, a.d)?;
    if a.csv {
        print!("{}", r.to_csv()?);
    } else {
        let [q, s0, si, mu] = r.headline();
        println!("{q},{s0},{si},{mu}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Synth(a) => synth(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Montecarlo(a) => run(a, false),
        Command::H2sweep(a) => run(a, true),
        Command::Sizes(a) => sizes(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Infeasible) => ExitCode::from(INFEASIBLE),
        Err(Failure::Solver(msg)) => {
            eprintln!("error: solver failure: {msg}");
            ExitCode::from(SOLVER)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE)
        }
    }
}
