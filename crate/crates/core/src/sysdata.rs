//! Plants, noisy trajectories, simulation and trajectory files.

use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// x_{t+1} = A x_t + B u_t + E w_t, z_t = C x_t + D u_t.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<DMatrix<f64>>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square and nonempty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {n}xm with m >= 1, got {}x{}", b.nrows(), b.ncols())));
        }
        Ok(Plant { a, b, c: None, d: None, e: None })
    }

    /// Attaches performance channels; shapes are checked against (n, m).
    pub fn with_performance(mut self, c: DMatrix<f64>, d: DMatrix<f64>, e: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (self.n(), self.m());
        if c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != m || e.nrows() != n {
            return Err(Error::Dimension("performance matrices do not match the plant".into()));
        }
        self.c = Some(c);
        self.d = Some(d);
        self.e = Some(e);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }

    pub fn validate(&self) -> Result<()> {
        Plant::new(self.a.clone(), self.b.clone())?;
        if let (Some(c), Some(d), Some(e)) = (&self.c, &self.d, &self.e) {
            self.clone().with_performance(c.clone(), d.clone(), e.clone())?;
        }
        Ok(())
    }
}

/// Named plants from the numerical examples.
pub mod presets {
    use super::*;

    fn a() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.6863, 0.3968, 0.3456, 1.0388])
    }

    /// Open-loop unstable 2-state plant with a single input.
    pub fn single_input() -> Plant {
        Plant::new(a(), DMatrix::from_column_slice(2, 1, &[0.4192, 0.6852])).unwrap()
    }

    /// Same A with two inputs; the plant used for the Monte Carlo and H2 tables.
    pub fn two_input() -> Plant {
        Plant::new(a(), DMatrix::from_row_slice(2, 2, &[0.4170, 0.0001, 0.7203, 0.3023])).unwrap()
    }

    /// `two_input` with C = I, D = [0; I], E = I.
    pub fn two_input_h2() -> Plant {
        let p = two_input();
        let c = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let d = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        p.with_performance(c, d, DMatrix::identity(2, 2)).unwrap()
    }

    /// Spring-mass-damper with k = m = b = 1, used as a discrete-time model as given.
    pub fn spring_mass_damper() -> Plant {
        Plant::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
            .unwrap()
    }

    pub fn by_name(name: &str) -> Result<Plant> {
        match name {
            "single-input" => Ok(single_input()),
            "two-input" => Ok(two_input()),
            "two-input-h2" => Ok(two_input_h2()),
            "spring-mass-damper" => Ok(spring_mass_damper()),
            _ => Err(Error::InvalidArgument(format!(
                "unknown plant preset `{name}` (single-input, two-input, two-input-h2, spring-mass-damper)"
            ))),
        }
    }
}

/// State noise bound: one value for all times or one per time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsX {
    Uniform(f64),
    PerTime(Vec<f64>),
}

impl EpsX {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            EpsX::Uniform(e) => *e,
            EpsX::PerTime(v) => v[t],
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            EpsX::Uniform(e) => *e,
            EpsX::PerTime(v) => v.iter().cloned().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBounds {
    pub eps_x: EpsX,
    pub eps_u: f64,
    pub eps_w: f64,
}

impl NoiseBounds {
    pub fn state_only(eps: f64) -> Self {
        NoiseBounds { eps_x: EpsX::Uniform(eps), eps_u: 0.0, eps_w: 0.0 }
    }

    pub fn new(eps_x: f64, eps_u: f64, eps_w: f64) -> Self {
        NoiseBounds { eps_x: EpsX::Uniform(eps_x), eps_u, eps_w }
    }

    pub fn zero() -> Self {
        Self::state_only(0.0)
    }

    pub fn validate(&self, t: usize) -> Result<()> {
        let bad = |v: f64| !(v >= 0.0) || !v.is_finite();
        if bad(self.eps_u) || bad(self.eps_w) {
            return Err(Error::InvalidArgument("noise bounds must be finite and nonnegative".into()));
        }
        match &self.eps_x {
            EpsX::Uniform(e) if bad(*e) => Err(Error::InvalidArgument("eps_x must be finite and nonnegative".into())),
            EpsX::PerTime(v) if v.len() != t => {
                Err(Error::InvalidArgument(format!("per-time eps_x has length {}, expected T = {t}", v.len())))
            }
            EpsX::PerTime(v) if v.iter().any(|e| bad(*e)) => {
                Err(Error::InvalidArgument("eps_x must be finite and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_state_only(&self) -> bool {
        self.eps_u == 0.0 && self.eps_w == 0.0
    }
}

/// Observed data: states at times 1..T and inputs at times 1..T-1.
/// Column `k` holds time `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub xhat: DMatrix<f64>,
    pub uhat: DMatrix<f64>,
    pub bounds: NoiseBounds,
    /// One-based sample times; states at other times are not observed.
    pub sample_times: Option<Vec<usize>>,
    /// One-based subsystem label per transition.
    pub switch_labels: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn new(xhat: DMatrix<f64>, uhat: DMatrix<f64>, bounds: NoiseBounds) -> Result<Self> {
        let t = Trajectory { xhat, uhat, bounds, sample_times: None, switch_labels: None };
        t.validate()?;
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.xhat.nrows()
    }

    pub fn m(&self) -> usize {
        self.uhat.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.xhat.ncols()
    }

    pub fn x(&self, k: usize) -> DVector<f64> {
        self.xhat.column(k).into_owned()
    }

    pub fn u(&self, k: usize) -> DVector<f64> {
        self.uhat.column(k).into_owned()
    }

    pub fn with_sample_times(mut self, times: Vec<usize>) -> Result<Self> {
        self.sample_times = Some(times);
        self.validate()?;
        Ok(self)
    }

    pub fn with_switch_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.switch_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: NoiseBounds) -> Result<Self> {
        self.bounds = bounds;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        if t < 2 {
            return Err(Error::InvalidArgument(format!("trajectory needs T >= 2, got {t}")));
        }
        if self.n() == 0 || self.m() == 0 {
            return Err(Error::Dimension("n and m must be positive".into()));
        }
        if self.uhat.ncols() != t - 1 {
            return Err(Error::Dimension(format!("uhat has {} columns, expected T-1 = {}", self.uhat.ncols(), t - 1)));
        }
        self.bounds.validate(t)?;
        if let Some(s) = &self.sample_times {
            if s.is_empty() || s.iter().any(|v| *v < 1 || *v > t) || s.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument("sample_times must be strictly increasing within 1..T".into()));
            }
        }
        if let Some(l) = &self.switch_labels {
            if l.len() != t - 1 || l.iter().any(|v| *v < 1) {
                return Err(Error::InvalidArgument("switch_labels must have length T-1 with labels >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TrajectoryFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TrajectoryFile = serde_json::from_str(s).map_err(|e| Error::Parse(format!("trajectory: {e}")))?;
        f.into_trajectory()
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    n: usize,
    m: usize,
    #[serde(rename = "T")]
    t: usize,
    xhat: Vec<Vec<f64>>,
    uhat: Vec<Vec<f64>>,
    eps_x: EpsX,
    eps_u: f64,
    eps_w: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_times: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    switch_labels: Option<Vec<usize>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>> {
    if rows.len() != r {
        return Err(Error::Parse(format!("field `{name}`: expected {r} rows, found {}", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::Parse(format!("field `{name}`: row {} has {} entries, expected {c}", i + 1, row.len())));
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl From<&Trajectory> for TrajectoryFile {
    fn from(t: &Trajectory) -> Self {
        TrajectoryFile {
            n: t.n(),
            m: t.m(),
            t: t.horizon(),
            xhat: rows_of(&t.xhat),
            uhat: rows_of(&t.uhat),
            eps_x: t.bounds.eps_x.clone(),
            eps_u: t.bounds.eps_u,
            eps_w: t.bounds.eps_w,
            sample_times: t.sample_times.clone(),
            switch_labels: t.switch_labels.clone(),
        }
    }
}

impl TrajectoryFile {
    fn into_trajectory(self) -> Result<Trajectory> {
        if self.t < 2 {
            return Err(Error::Parse(format!("field `T`: need T >= 2, found {}", self.t)));
        }
        let xhat = from_rows("xhat", &self.xhat, self.n, self.t)?;
        let uhat = from_rows("uhat", &self.uhat, self.m, self.t - 1)?;
        let t = Trajectory {
            xhat,
            uhat,
            bounds: NoiseBounds { eps_x: self.eps_x, eps_u: self.eps_u, eps_w: self.eps_w },
            sample_times: self.sample_times,
            switch_labels: self.switch_labels,
        };
        t.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(t)
    }
}

pub fn save_trajectory(t: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, t.to_json()?)?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let s = std::fs::read_to_string(path)?;
    Trajectory::from_json(&s).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Counter-based random streams: `(seed, trial)` selects a ChaCha stream and
/// the time index selects a block offset inside it, so any draw can be
/// regenerated independently of the others.
#[derive(Clone, Copy, Debug)]
pub struct NoiseStream {
    pub seed: u64,
    pub trial: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trial: u64) -> Self {
        NoiseStream { seed, trial }
    }

    /// Generator for one (time, channel) cell.
    pub fn rng(&self, time: usize, channel: u8) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.trial);
        r.set_word_pos(((time as u128) << 24) | ((channel as u128) << 16));
        r
    }
}

const CH_X: u8 = 0;
const CH_U: u8 = 1;
const CH_W: u8 = 2;
const CH_INPUT: u8 = 3;
const CH_X0: u8 = 4;

fn uniform_vec(rng: &mut ChaCha8Rng, k: usize, eps: f64) -> DVector<f64> {
    DVector::from_fn(k, |_, _| if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 })
}

/// Noise actually drawn during a simulation, kept for witness checks.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraws {
    pub dx: DMatrix<f64>,
    pub du: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

/// Simulates and returns the observed trajectory.
pub fn simulate(plant: &Plant, x0: &DVector<f64>, inputs: &DMatrix<f64>, bounds: &NoiseBounds, seed: u64) -> Result<Trajectory> {
    Ok(simulate_with_draws(plant, x0, inputs, bounds, NoiseStream::new(seed, 0))?.0)
}

/// Simulation with true states x_{t+1} = A x_t + B u_t + w_t, observations
/// xhat = x + dx and uhat = u + du, all noise uniform on its bound.
pub fn simulate_with_draws(
    plant: &Plant,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    bounds: &NoiseBounds,
    stream: NoiseStream,
) -> Result<(Trajectory, NoiseDraws)> {
    plant.validate()?;
    let (n, m) = (plant.n(), plant.m());
    let t = inputs.ncols() + 1;
    if x0.len() != n || inputs.nrows() != m {
        return Err(Error::Dimension("x0 or inputs do not match the plant".into()));
    }
    bounds.validate(t)?;
    let mut x = DMatrix::zeros(n, t);
    x.set_column(0, x0);
    let mut w = DMatrix::zeros(n, t - 1);
    for k in 0..t - 1 {
        let wk = uniform_vec(&mut stream.rng(k, CH_W), n, bounds.eps_w);
        let next = &plant.a * x.column(k) + &plant.b * inputs.column(k) + &wk;
        x.set_column(k + 1, &next);
        w.set_column(k, &wk);
    }
    let mut dx = DMatrix::zeros(n, t);
    for k in 0..t {
        dx.set_column(k, &uniform_vec(&mut stream.rng(k, CH_X), n, bounds.eps_x.at(k)));
    }
    let mut du = DMatrix::zeros(m, t - 1);
    for k in 0..t - 1 {
        du.set_column(k, &uniform_vec(&mut stream.rng(k, CH_U), m, bounds.eps_u));
    }
    let traj = Trajectory::new(&x + &dx, inputs + &du, bounds.clone())?;
    Ok((traj, NoiseDraws { dx, du, w }))
}

/// Inputs uniform on [-1, 1]^m for T-1 steps.
pub fn uniform_inputs(m: usize, t: usize, stream: NoiseStream) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(m, t - 1);
    for k in 0..t - 1 {
        u.set_column(k, &uniform_vec(&mut stream.rng(k, CH_INPUT), m, 1.0));
    }
    u
}

/// Initial state uniform on [-1, 1]^n.
pub fn uniform_state(n: usize, stream: NoiseStream) -> DVector<f64> {
    uniform_vec(&mut stream.rng(0, CH_X0), n, 1.0)
}

/// Eigenvalues of A sorted by real part, then imaginary part.
pub fn open_loop_eigs(plant: &Plant) -> Vec<Complex<f64>> {
    eigenvalues(&plant.a)
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut e: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    e.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    e
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// max_i sum_j |M_ij|
pub fn linf_operator_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Least-squares plant [A B] = X+ [X; U]^+ from the observed (uniformly
/// sampled) data.
pub fn least_squares_plant(traj: &Trajectory) -> Result<Plant> {
    let (n, m, t) = (traj.n(), traj.m(), traj.horizon());
    let xp = traj.xhat.columns(1, t - 1).into_owned();
    let mut z = DMatrix::zeros(n + m, t - 1);
    z.view_mut((0, 0), (n, t - 1)).copy_from(&traj.xhat.columns(0, t - 1));
    z.view_mut((n, 0), (m, t - 1)).copy_from(&traj.uhat);
    let pinv = z.pseudo_inverse(1e-12).map_err(|e| Error::Numerical(e.to_string()))?;
    let ab = xp * pinv;
    Plant::new(ab.columns(0, n).into_owned(), ab.columns(n, m).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_cells_are_independent_of_order() {
        let s = NoiseStream::new(7, 3);
        let a: f64 = s.rng(5, CH_X).random();
        let _: f64 = s.rng(1, CH_X).random();
        let b: f64 = s.rng(5, CH_X).random();
        assert_eq!(a, b);
        let c: f64 = NoiseStream::new(7, 4).rng(5, CH_X).random();
        assert_ne!(a, c);
    }
}
