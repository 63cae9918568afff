//! Monte Carlo experiments: many noisy trajectories of one plant, one
//! synthesis method per trajectory, aggregated into success-rate and median
//! tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyalg::VarId;
use crate::semialg::PiSpec;
use crate::synth::*;
use crate::sysdata::*;

/// A preset name, explicit matrices (row lists) or a JSON plant file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantSpec {
    Preset(String),
    Matrices { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    File { path: PathBuf },
}

impl PlantSpec {
    pub fn resolve(&self) -> Result<Plant> {
        match self {
            PlantSpec::Preset(name) => presets::by_name(name),
            PlantSpec::Matrices { a, b } => Plant::new(from_rows(a)?, from_rows(b)?),
            PlantSpec::File { path } => {
                let f: PlantFile = serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                f.into_plant()
            }
        }
    }
}

/// Plant file: row lists, with optional performance channels `c`, `d`, `e`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantFile {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Option<Vec<Vec<f64>>>,
    d: Option<Vec<Vec<f64>>>,
    e: Option<Vec<Vec<f64>>>,
}

impl PlantFile {
    fn into_plant(self) -> Result<Plant> {
        let p = Plant::new(from_rows(&self.a)?, from_rows(&self.b)?)?;
        match (self.c, self.d, self.e) {
            (None, None, None) => Ok(p),
            (Some(c), Some(d), Some(e)) => p.with_performance(from_rows(&c)?, from_rows(&d)?, from_rows(&e)?),
            _ => Err(Error::Parse("plant file: c, d and e must be given together".into())),
        }
    }
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let c = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialState {
    /// `x_1 = [1, 0, ..., 0]`.
    #[default]
    First,
    /// Uniform on `[-1, 1]^n`, drawn per trial.
    Uniform,
    Fixed { x0: Vec<f64> },
}

/// Parameter varied across the rows of a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "param", content = "values")]
pub enum Sweep {
    Eps(Vec<f64>),
    Horizon(Vec<usize>),
    NoiseSets(Vec<NoiseBounds>),
}

fn default_trials() -> usize {
    50
}

fn default_d() -> u32 {
    1
}

fn default_delta() -> f64 {
    1e-3
}

fn default_bounds() -> NoiseBounds {
    NoiseBounds::zero()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    #[serde(default = "default_bounds")]
    pub bounds: NoiseBounds,
    /// Number of samples T.
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub method: Method,
    #[serde(default = "default_d")]
    pub d: u32,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub pi: PiSpec,
    /// Known plant entries, e.g. `"A[1,1]": 0.6863`.
    #[serde(default)]
    pub known: BTreeMap<String, f64>,
    #[serde(default)]
    pub x0: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// Directory receiving the per-trial and summary CSV files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(plant: &str, method: Method, horizon: usize, bounds: NoiseBounds) -> Self {
        ExperimentConfig {
            plant: PlantSpec::Preset(plant.into()),
            bounds,
            horizon,
            trials: default_trials(),
            seed: 0,
            method,
            d: default_d(),
            delta: default_delta(),
            pi: PiSpec::None,
            known: BTreeMap::new(),
            x0: InitialState::First,
            sweep: None,
            output: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidArgument("horizon must be at least 2".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidArgument("relaxation degree d must be at least 1".into()));
        }
        if let PlantSpec::File { path } = &self.plant {
            if !path.exists() {
                return Err(Error::InvalidArgument(format!("plant file {} does not exist", path.display())));
            }
        }
        let plant = self.plant.resolve()?;
        if let InitialState::Fixed { x0 } = &self.x0 {
            if x0.len() != plant.n() {
                return Err(Error::Dimension(format!("x0 has {} entries, plant has n = {}", x0.len(), plant.n())));
            }
        }
        self.known_vars()?;
        for c in self.cells() {
            c.bounds.validate(c.horizon)?;
        }
        Ok(())
    }

    fn known_vars(&self) -> Result<std::collections::HashMap<VarId, f64>> {
        self.known.iter().map(|(k, v)| Ok((k.parse::<VarId>()?, *v))).collect()
    }

    /// One config per table row.
    pub fn cells(&self) -> Vec<Cell> {
        let one = |param: &str, value: f64, bounds: NoiseBounds, horizon: usize| Cell { param: param.into(), value, bounds, horizon };
        match &self.sweep {
            None => vec![one("eps", self.bounds.eps_x.max(), self.bounds.clone(), self.horizon)],
            Some(Sweep::Eps(v)) => v
                .iter()
                .map(|e| one("eps", *e, NoiseBounds { eps_x: EpsX::Uniform(*e), ..self.bounds.clone() }, self.horizon))
                .collect(),
            Some(Sweep::Horizon(v)) => v.iter().map(|t| one("T", *t as f64, self.bounds.clone(), *t)).collect(),
            Some(Sweep::NoiseSets(v)) => {
                v.iter().enumerate().map(|(i, b)| one("set", (i + 1) as f64, b.clone(), self.horizon)).collect()
            }
        }
    }

    pub fn synth_options(&self) -> Result<SynthOptions> {
        let certifier = match self.method {
            Method::SsFull | Method::QsFull => Certifier::Full,
            Method::SsAltSparse => Certifier::AltSparse,
            _ => Certifier::Alt,
        };
        let mut o = SynthOptions::new(certifier, self.d);
        o.delta = self.delta;
        o.pi = self.pi.clone();
        o.known = self.known_vars()?;
        o.rate_min = self.method == Method::RateMin;
        Ok(o)
    }
}

/// One row of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub param: String,
    pub value: f64,
    pub bounds: NoiseBounds,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    pub lambda: Option<f64>,
    pub gamma_clp: Option<f64>,
    pub gamma_worst: Option<f64>,
    pub wall_ms: f64,
    /// `||A + BK||_inf` at the true plant (superstable methods).
    pub lambda_clp: Option<f64>,
}

impl TrialRecord {
    pub fn is_feasible(&self) -> bool {
        self.status == "feasible"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub param: String,
    pub value: f64,
    pub method: String,
    pub trials: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub unknown: usize,
    /// Percentage of feasible trials.
    pub success_rate: f64,
    pub median_lambda: Option<f64>,
    pub median_lambda_clp: Option<f64>,
    pub median_gamma_clp: Option<f64>,
    pub median_gamma_worst: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub title: String,
    pub rows: Vec<TableRow>,
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[k] } else { 0.5 * (s[k - 1] + s[k]) })
}

impl TableRow {
    pub fn from_trials(cell: &Cell, method: Method, recs: &[TrialRecord], wall_seconds: f64) -> Self {
        let count = |s: &str| recs.iter().filter(|r| r.status == s).count();
        let feasible = count("feasible");
        let infeasible = count("infeasible");
        let med = |f: fn(&TrialRecord) -> Option<f64>| {
            median(&recs.iter().filter(|r| r.is_feasible()).filter_map(f).collect::<Vec<_>>())
        };
        TableRow {
            param: cell.param.clone(),
            value: cell.value,
            method: method.name().into(),
            trials: recs.len(),
            feasible,
            infeasible,
            unknown: recs.len() - feasible - infeasible,
            success_rate: 100.0 * feasible as f64 / recs.len().max(1) as f64,
            median_lambda: med(|r| r.lambda),
            median_lambda_clp: med(|r| r.lambda_clp),
            median_gamma_clp: med(|r| r.gamma_clp),
            median_gamma_worst: med(|r| r.gamma_worst),
            wall_seconds,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

impl ResultTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Plain text rendering, one line per row.
    pub fn render(&self) -> String {
        let mut s = format!("{}\n", self.title);
        let _ = writeln!(
            s,
            "{:>6} {:>8} {:>10} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
            "param", "value", "method", "feas", "infeas", "unk", "rate%", "lambda", "lam_clp", "g_clp", "g_worst", "wall_s"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6} {:>8} {:>10} {:>6} {:>6} {:>6} {:>8.1} {:>8} {:>8} {:>8} {:>8} {:>9.1}",
                r.param,
                r.value,
                r.method,
                r.feasible,
                r.infeasible,
                r.unknown,
                r.success_rate,
                fmt_opt(r.median_lambda),
                fmt_opt(r.median_lambda_clp),
                fmt_opt(r.median_gamma_clp),
                fmt_opt(r.median_gamma_worst),
                r.wall_seconds
            );
        }
        s
    }
}

pub fn trials_csv(recs: &[TrialRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in recs {
        w.serialize(r)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).map_err(|e| Error::Parse(e.to_string()))
}

fn initial_state(cfg: &ExperimentConfig, n: usize, stream: NoiseStream) -> DVector<f64> {
    match &cfg.x0 {
        InitialState::First => {
            let mut x = DVector::zeros(n);
            x[0] = 1.0;
            x
        }
        InitialState::Uniform => uniform_state(n, stream),
        InitialState::Fixed { x0 } => DVector::from_column_slice(x0),
    }
}

/// Trajectory of one trial; deterministic in `(seed, trial)`.
pub fn trial_trajectory(cfg: &ExperimentConfig, plant: &Plant, cell: &Cell, trial: usize) -> Result<Trajectory> {
    let stream = NoiseStream::new(cfg.seed, trial as u64);
    let x0 = initial_state(cfg, plant.n(), stream);
    let u = uniform_inputs(plant.m(), cell.horizon, stream);
    Ok(simulate_with_draws(plant, &x0, &u, &cell.bounds, stream)?.0)
}

/// Runs the configured method on a trajectory.
pub fn run_method(cfg: &ExperimentConfig, plant: &Plant, traj: &Trajectory) -> Result<Outcome> {
    run_with_options(cfg.method, plant, traj, &cfg.synth_options()?)
}

/// Dispatches on `method`; `plant` only supplies the performance channels.
pub fn run_with_options(method: Method, plant: &Plant, traj: &Trajectory, o: &SynthOptions) -> Result<Outcome> {
    match method {
        Method::SsFull | Method::SsAlt | Method::SsAltSparse | Method::RateMin => superstabilize(traj, o),
        Method::QsFull | Method::QsAlt => quadratic_stabilize(traj, o),
        Method::H2 => {
            let ch = H2Channels::from_plant(plant).unwrap_or_else(|_| H2Channels::standard(plant.n(), plant.m()));
            h2_worst(traj, &ch, o)
        }
        Method::Hinf => hinf_worst(traj, &HinfChannels::standard(plant.n(), plant.m()), o),
    }
}

pub fn run_trial(cfg: &ExperimentConfig, plant: &Plant, cell: &Cell, trial: usize) -> TrialRecord {
    let start = Instant::now();
    let mut rec = TrialRecord {
        trial,
        seed: cfg.seed,
        status: "error".into(),
        lambda: None,
        gamma_clp: None,
        gamma_worst: None,
        wall_ms: 0.0,
        lambda_clp: None,
    };
    let out = trial_trajectory(cfg, plant, cell, trial).and_then(|t| run_method(cfg, plant, &t));
    match out {
        Ok(o) => {
            rec.status = o.label().into();
            if let Some(c) = o.controller() {
                match c.class {
                    StabilityClass::Superstable => {
                        rec.lambda = c.lambda;
                        rec.lambda_clp = Some(linf_operator_norm(&c.closed_loop(plant)));
                    }
                    StabilityClass::H2 => {
                        let ch = H2Channels::from_plant(plant).unwrap_or_else(|_| H2Channels::standard(plant.n(), plant.m()));
                        rec.gamma_worst = c.gamma;
                        rec.gamma_clp = Some(closed_loop_h2(plant, &ch, &c.k));
                    }
                    StabilityClass::Hinf => {
                        rec.gamma_worst = c.gamma;
                        rec.gamma_clp = Some(closed_loop_hinf(plant, &HinfChannels::standard(plant.n(), plant.m()), &c.k));
                    }
                    StabilityClass::Quadratic => {}
                }
            }
        }
        Err(_) => rec.status = "error".into(),
    }
    rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    rec
}

/// Trials of one cell, in trial order.
pub fn run_cell(cfg: &ExperimentConfig, plant: &Plant, cell: &Cell) -> Vec<TrialRecord> {
    (0..cfg.trials).into_par_iter().map(|k| run_trial(cfg, plant, cell, k)).collect()
}

/// Every cell of the config; per-trial and summary CSVs are written when
/// `output` is set.
pub fn run_montecarlo(cfg: &ExperimentConfig) -> Result<(ResultTable, Vec<Vec<TrialRecord>>)> {
    cfg.validate()?;
    let plant = cfg.plant.resolve()?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for cell in cfg.cells() {
        let start = Instant::now();
        let recs = run_cell(cfg, &plant, &cell);
        rows.push(TableRow::from_trials(&cell, cfg.method, &recs, start.elapsed().as_secs_f64()));
        all.push(recs);
    }
    let table = ResultTable { title: format!("{} over {} trials (seed {})", cfg.method.name(), cfg.trials, cfg.seed), rows };
    if let Some(dir) = &cfg.output {
        write_outputs(dir, cfg, &table, &all)?;
    }
    Ok((table, all))
}

/// H2 medians; the config method is forced to `h2`.
pub fn run_h2_sweep(cfg: &ExperimentConfig) -> Result<(ResultTable, Vec<Vec<TrialRecord>>)> {
    let mut c = cfg.clone();
    c.method = Method::H2;
    run_montecarlo(&c)
}

/// The six noise sets combining state, input and process noise.
pub fn standard_noise_sets() -> Vec<NoiseBounds> {
    vec![
        NoiseBounds::new(0.03, 0.0, 0.0),
        NoiseBounds::new(0.0, 0.02, 0.0),
        NoiseBounds::new(0.0, 0.0, 0.05),
        NoiseBounds::new(0.03, 0.02, 0.0),
        NoiseBounds::new(0.0, 0.02, 0.05),
        NoiseBounds::new(0.03, 0.02, 0.05),
    ]
}

fn write_outputs(dir: &Path, cfg: &ExperimentConfig, table: &ResultTable, all: &[Vec<TrialRecord>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let name = cfg.method.name();
    for (row, recs) in table.rows.iter().zip(all) {
        let file = dir.join(format!("{name}_{}_{}_trials.csv", row.param, row.value));
        std::fs::write(file, trials_csv(recs)?)?;
    }
    std::fs::write(dir.join(format!("{name}_summary.csv")), table.to_csv()?)?;
    std::fs::write(dir.join(format!("{name}_summary.txt")), table.render())?;
    Ok(())
}
