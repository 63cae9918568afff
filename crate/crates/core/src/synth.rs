//! Controller synthesis from data: superstabilization, quadratic
//! stabilization, worst-case H2 and H-infinity, and the model-based
//! benchmarks used to judge them.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{min_eig, ConicProgram, SolveStats, SolveStatus, Tolerances};
use crate::error::{Error, Result};
use crate::polyalg::{monomial_basis, PolyMatrix, VarId};
use crate::psatz::{
    add_lmi, compile, poly_times_decisions, AffMatrix, AffPoly, Affine, DecisionMatrix, GramReport, SosConstraint,
    DEFAULT_EPS_SHIFT,
};
use crate::robustalt::{
    alt_gram_report, build_alt_allnoise, build_alt_nonuniform, build_alt_psatz, build_alt_sparse, AltOptions, AltVariant,
};
use crate::semialg::{
    apply_partial_info, build_allnoise_set, build_eiv_set, build_missing_data_set, build_pi, build_switched_set,
    PiSpec, PlantSymbols, SemiAlgSet,
};
use crate::sysdata::{linf_operator_norm, spectral_radius, Plant, Trajectory};

/// Floor on the Lyapunov-type matrix `Y`.
pub const Y_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SsFull,
    SsAlt,
    SsAltSparse,
    QsFull,
    QsAlt,
    H2,
    Hinf,
    RateMin,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown method {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SsFull => "ss-full",
            Method::SsAlt => "ss-alt",
            Method::SsAltSparse => "ss-alt-sparse",
            Method::QsFull => "qs-full",
            Method::QsAlt => "qs-alt",
            Method::H2 => "h2",
            Method::Hinf => "hinf",
            Method::RateMin => "rate-min",
        }
    }
}

/// How robust positivity over the consistent plants is certified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certifier {
    /// Putinar/Scherer over the full consistency set, noise symbols included.
    Full,
    /// Theorem of alternatives, noise eliminated.
    #[default]
    Alt,
    /// Alternatives with per-row groups (scalar targets only).
    AltSparse,
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub certifier: Certifier,
    pub d: u32,
    pub delta: f64,
    pub pi: PiSpec,
    pub eps_shift: f64,
    pub rate_min: bool,
    pub known: HashMap<VarId, f64>,
    pub tol: Tolerances,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            certifier: Certifier::Alt,
            d: 1,
            delta: 1e-3,
            pi: PiSpec::None,
            eps_shift: DEFAULT_EPS_SHIFT,
            rate_min: false,
            known: HashMap::new(),
            tol: Tolerances::default(),
        }
    }
}

impl SynthOptions {
    pub fn new(certifier: Certifier, d: u32) -> Self {
        SynthOptions { certifier, d, ..Default::default() }
    }

    pub fn rate_min(mut self) -> Self {
        self.rate_min = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityClass {
    Superstable,
    Quadratic,
    H2,
    Hinf,
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        if rows.iter().any(|v| v.len() != c) {
            return Err("ragged matrix".into());
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&to_rows(m), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            serde::Serialize::serialize(&m.as_ref().map(to_rows), s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
            match Option::<Vec<Vec<f64>>>::deserialize(d)? {
                Some(rows) => from_rows(&rows).map(Some).map_err(serde::de::Error::custom),
                None => Ok(None),
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Controller {
    pub method: String,
    pub class: StabilityClass,
    #[serde(with = "rows")]
    pub k: DMatrix<f64>,
    /// Certified worst-case rate (superstable class).
    pub lambda: Option<f64>,
    /// Certified worst-case norm bound (H2 / H-infinity).
    pub gamma: Option<f64>,
    #[serde(with = "rows::opt", default)]
    pub y: Option<DMatrix<f64>>,
    #[serde(with = "rows::opt", default)]
    pub s: Option<DMatrix<f64>>,
    #[serde(with = "rows::opt", default)]
    pub z: Option<DMatrix<f64>>,
    pub stats: SolveStats,
    pub wall_seconds: f64,
    #[serde(default)]
    pub verification: Option<Verification>,
    /// Certified targets with the decisions substituted; each is positive
    /// definite on every consistent plant.
    #[serde(skip)]
    pub certified: Vec<PolyMatrix>,
}

impl Controller {
    /// Closed loop under this controller's sign convention (`A - BK` for
    /// the H-infinity program, `A + BK` otherwise).
    pub fn closed_loop(&self, plant: &Plant) -> DMatrix<f64> {
        match self.class {
            StabilityClass::Hinf => &plant.a - &plant.b * &self.k,
            _ => plant.closed_loop(&self.k),
        }
    }

    /// Smallest eigenvalue over the certified targets at a plant.
    pub fn certified_min_eig(&self, plant: &Plant) -> Result<f64> {
        let at = PlantSymbols::new(plant.n(), plant.m()).assignment(plant);
        let mut lo = f64::INFINITY;
        for t in &self.certified {
            lo = lo.min(min_eig(&t.evaluate(&at)?));
        }
        Ok(lo)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Controller> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Debug)]
pub enum Outcome {
    Feasible(Box<Controller>),
    Infeasible,
    /// The solver stopped without a verdict.
    Unknown(SolveStatus),
}

impl Outcome {
    pub fn controller(&self) -> Option<&Controller> {
        match self {
            Outcome::Feasible(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Outcome::Feasible(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Feasible(_) => "feasible",
            Outcome::Infeasible => "infeasible",
            Outcome::Unknown(_) => "unknown",
        }
    }
}

/// Performance channels for H2: `z = C x + D u`, disturbance through `E`.
#[derive(Clone, Debug)]
pub struct H2Channels {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl H2Channels {
    pub fn from_plant(p: &Plant) -> Result<Self> {
        match (&p.c, &p.d, &p.e) {
            (Some(c), Some(d), Some(e)) => Ok(H2Channels { c: c.clone(), d: d.clone(), e: e.clone() }),
            _ => Err(Error::InvalidArgument("plant has no performance channels (C, D, E)".into())),
        }
    }

    /// `C = [I; 0]`, `D = [0; I]`, `E = I`.
    pub fn standard(n: usize, m: usize) -> Self {
        let r = n + m;
        let mut c = DMatrix::zeros(r, n);
        let mut d = DMatrix::zeros(r, m);
        for i in 0..n {
            c[(i, i)] = 1.0;
        }
        for i in 0..m {
            d[(n + i, i)] = 1.0;
        }
        H2Channels { c, d, e: DMatrix::identity(n, n) }
    }

    fn check(&self, n: usize, m: usize) -> Result<()> {
        let r = self.c.nrows();
        if self.c.ncols() != n || self.d.shape() != (r, m) || self.e.nrows() != n {
            return Err(Error::Dimension("performance channels do not match the plant".into()));
        }
        Ok(())
    }
}

/// H-infinity channels: `z = C x - D1 u + D2 w` (the `-` matches `A - BK`).
#[derive(Clone, Debug)]
pub struct HinfChannels {
    pub c: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl HinfChannels {
    pub fn standard(n: usize, m: usize) -> Self {
        let h = H2Channels::standard(n, m);
        let r = h.c.nrows();
        HinfChannels { c: h.c, d1: h.d, d2: DMatrix::zeros(r, n), e: h.e }
    }

    fn check(&self, n: usize, m: usize) -> Result<()> {
        let (r, e) = (self.c.nrows(), self.e.ncols());
        if self.c.ncols() != n || self.d1.shape() != (r, m) || self.d2.shape() != (r, e) || self.e.nrows() != n {
            return Err(Error::Dimension("H-infinity channels do not match the plant".into()));
        }
        Ok(())
    }
}

/// Where robust positivity is imposed.
enum Robust {
    Full { set: SemiAlgSet, d: u32, eps: f64 },
    Alt { traj: Trajectory, sym: PlantSymbols, opts: AltOptions, sparse: bool },
    Known { at: HashMap<VarId, f64>, eps: f64 },
}

impl Robust {
    fn from_data(traj: &Trajectory, sym: &PlantSymbols, o: &SynthOptions) -> Result<Robust> {
        traj.validate()?;
        if o.d == 0 {
            return Err(Error::InvalidArgument("relaxation degree d must be at least 1".into()));
        }
        Ok(match o.certifier {
            Certifier::Full => {
                let set = if traj.sample_times.is_some() {
                    build_missing_data_set(traj)?
                } else if traj.bounds.is_state_only() {
                    build_eiv_set(traj)?
                } else {
                    build_allnoise_set(traj)?
                };
                Robust::Full { set: apply_partial_info(&set, &o.known), d: o.d, eps: o.eps_shift }
            }
            Certifier::Alt | Certifier::AltSparse => {
                let pi = build_pi(&o.pi, traj, sym)?;
                let opts = AltOptions { d: o.d, pi, eps_shift: o.eps_shift };
                Robust::Alt { traj: traj.clone(), sym: sym.clone(), opts, sparse: o.certifier == Certifier::AltSparse }
            }
        })
    }

    fn known(plant: &Plant) -> Robust {
        let at = PlantSymbols::new(plant.n(), plant.m()).assignment(plant);
        Robust::Known { at, eps: DEFAULT_EPS_SHIFT }
    }

    /// Degree for free polynomial decisions (the superstability lift).
    fn lift_degree(&self) -> u32 {
        match self {
            Robust::Full { d, .. } => 2 * d,
            Robust::Alt { opts, .. } => 2 * opts.d,
            Robust::Known { .. } => 0,
        }
    }

    fn require(&self, prog: &mut ConicProgram, q: &AffMatrix) -> Result<()> {
        match self {
            Robust::Full { set, d, eps } => {
                compile(prog, &SosConstraint::new(q.clone(), set.clone(), *d).with_eps_shift(*eps))?;
            }
            Robust::Alt { traj, sym, opts, sparse } => {
                if *sparse {
                    build_alt_sparse(prog, q, traj, sym, opts)?;
                } else if traj.sample_times.is_some() {
                    build_alt_nonuniform(prog, q, traj, sym, opts)?;
                } else if traj.bounds.is_state_only() {
                    build_alt_psatz(prog, q, traj, sym, opts)?;
                } else {
                    build_alt_allnoise(prog, q, traj, sym, opts)?;
                }
            }
            Robust::Known { at, eps } => {
                let mut c = q.substitute_values(at);
                for i in 0..c.size() {
                    c.get_mut(i, i).add_poly(&crate::polyalg::Poly::constant(-eps), 1.0);
                }
                add_lmi(prog, &c, None)?;
            }
        }
        Ok(())
    }
}

fn free_decisions(prog: &mut ConicProgram, rows: usize, cols: usize) -> DecisionMatrix {
    let v = prog.add_free(rows * cols, None);
    DecisionMatrix::from_fn(rows, cols, |i, j| Affine::var(v[i * cols + j]))
}

fn sym_decisions(prog: &mut ConicProgram, n: usize) -> DecisionMatrix {
    let v = prog.add_free(n * (n + 1) / 2, None);
    DecisionMatrix::from_fn(n, n, |i, j| Affine::var(v[crate::polyalg::packed_index(n, i.min(j), i.max(j))]))
}

/// `Y = Yp + floor I` with `Yp` PSD.
fn pd_decisions(prog: &mut ConicProgram, n: usize) -> DecisionMatrix {
    let blk = prog.add_psd(n);
    DecisionMatrix::from_fn(n, n, |i, j| {
        let mut a = Affine::var(blk.var(i, j));
        if i == j {
            a.constant += Y_FLOOR;
        }
        a
    })
}

/// Polynomial in the unknown plant entries with free coefficients.
fn free_poly(prog: &mut ConicProgram, sym: &PlantSymbols, degree: u32) -> Result<AffPoly> {
    let basis = monomial_basis(&sym.vars(), degree)?;
    let v = prog.add_free(basis.len(), None);
    let mut p = AffPoly::zero();
    for (m, var) in basis.into_iter().zip(v) {
        p.add_term(m, &Affine::var(var), 1.0);
    }
    Ok(p)
}

/// Row and element targets of the superstability lift for one plant.
fn superstability_targets(
    prog: &mut ConicProgram,
    sym: &PlantSymbols,
    k: &DecisionMatrix,
    bound: &Affine,
    degree: u32,
) -> Result<Vec<AffMatrix>> {
    let n = sym.n;
    let bk = poly_times_decisions(&sym.b, k);
    let mut out = Vec::with_capacity(n + 2 * n * n);
    for i in 0..n {
        let mut row = AffPoly::from_affine(bound.clone());
        for j in 0..n {
            let mij = free_poly(prog, sym, degree)?;
            row.add(&mij, -1.0);
            let mut cl = AffPoly::from_poly(&sym.a[(i, j)]);
            cl.add(&bk[i][j], 1.0);
            let mut plus = mij.clone();
            plus.add(&cl, -1.0);
            let mut minus = mij;
            minus.add(&cl, 1.0);
            out.push(AffMatrix::scalar(plus));
            out.push(AffMatrix::scalar(minus));
        }
        out.push(AffMatrix::scalar(row));
    }
    Ok(out)
}

/// `[[Y - W, AY + sign BS], [*, Y]]`.
fn lyapunov_target(sym: &PlantSymbols, y: &DecisionMatrix, s: &DecisionMatrix, w: Option<&DMatrix<f64>>, sign: f64) -> AffMatrix {
    let n = sym.n;
    let ay = poly_times_decisions(&sym.a, y);
    let bs = poly_times_decisions(&sym.b, s);
    let mut t = AffMatrix::zeros(2 * n);
    for i in 0..n {
        for j in i..n {
            let mut top = AffPoly::from_affine(y.get(i, j).clone());
            if let Some(w) = w {
                top.add_poly(&crate::polyalg::Poly::constant(w[(i, j)]), -1.0);
            }
            *t.get_mut(i, j) = top;
            *t.get_mut(n + i, n + j) = AffPoly::from_affine(y.get(i, j).clone());
        }
        for j in 0..n {
            let mut off = ay[i][j].clone();
            off.add(&bs[i][j], sign);
            *t.get_mut(i, n + j) = off;
        }
    }
    t
}

fn solve_program(prog: &ConicProgram, tol: &Tolerances) -> Result<std::result::Result<crate::conic::SolveResult, Outcome>> {
    let r = prog.solve(tol)?;
    Ok(match r.status {
        s if s.is_solved() => Ok(r),
        SolveStatus::Infeasible => Err(Outcome::Infeasible),
        s => Err(Outcome::Unknown(s)),
    })
}

fn recover_gain(y: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if min_eig(y) < 0.5 * Y_FLOOR {
        return Err(Error::Numerical("recovered Y is not positive definite".into()));
    }
    let inv = y.clone().try_inverse().ok_or_else(|| Error::Numerical("recovered Y is singular".into()))?;
    Ok(s * inv)
}

fn certified_values(targets: &[AffMatrix], x: &[f64]) -> Vec<PolyMatrix> {
    targets.iter().map(|t| t.at(x)).collect()
}

fn symbols_for(traj: &Trajectory, o: &SynthOptions) -> Result<PlantSymbols> {
    PlantSymbols::new(traj.n(), traj.m()).with_known(&o.known)
}

/// When the feasibility program stalls (typically weak infeasibility) the
/// rate is minimized instead: its optimum either meets `1 - delta`, or its
/// dual bound proves that no certificate with that rate exists.
fn superstabilize_with(robust: &Robust, sym: &PlantSymbols, o: &SynthOptions, method: &str) -> Result<Outcome> {
    let start = Instant::now();
    let (out, _) = superstabilize_once(robust, sym, o, method)?;
    if o.rate_min || !matches!(out, Outcome::Unknown(_)) {
        return Ok(out);
    }
    let target = 1.0 - o.delta;
    let (rated, bound) = superstabilize_once(robust, sym, &SynthOptions { rate_min: true, ..o.clone() }, method)?;
    Ok(match rated {
        Outcome::Feasible(mut c) if c.lambda.is_some_and(|l| l <= target) => {
            c.wall_seconds = start.elapsed().as_secs_f64();
            Outcome::Feasible(c)
        }
        Outcome::Feasible(_) if bound.is_some_and(|b| b > target + RATE_BOUND_MARGIN) => Outcome::Infeasible,
        Outcome::Infeasible => Outcome::Infeasible,
        _ => out,
    })
}

/// Slack required between the dual bound on the rate and `1 - delta`.
const RATE_BOUND_MARGIN: f64 = 1e-6;

/// One solve; also returns the dual objective of a solved program.
fn superstabilize_once(robust: &Robust, sym: &PlantSymbols, o: &SynthOptions, method: &str) -> Result<(Outcome, Option<f64>)> {
    let start = Instant::now();
    let mut prog = ConicProgram::new(method);
    let k = free_decisions(&mut prog, sym.m, sym.n);
    let (bound, lam) = if o.rate_min {
        let v = prog.add_nonneg(1)[0];
        prog.add_objective(v, 1.0);
        (Affine::var(v), Some(v))
    } else {
        (Affine::constant(1.0 - o.delta), None)
    };
    let targets = superstability_targets(&mut prog, sym, &k, &bound, robust.lift_degree())?;
    for t in &targets {
        robust.require(&mut prog, t)?;
    }
    let r = match solve_program(&prog, &o.tol)? {
        Ok(r) => r,
        Err(out) => return Ok((out, None)),
    };
    let dual = r.dual_objective;
    let c = Outcome::Feasible(Box::new(Controller {
        method: method.into(),
        class: StabilityClass::Superstable,
        k: k.value(&r.x),
        lambda: Some(lam.map_or(1.0 - o.delta, |v| r.x[v])),
        gamma: None,
        y: None,
        s: None,
        z: None,
        stats: r.stats.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        verification: None,
        certified: certified_values(&targets, &r.x),
    }));
    Ok((c, Some(dual)))
}

/// Superstabilizing controller for every plant consistent with the data; with
/// `rate_min` the certified rate `lambda` is minimized.
pub fn superstabilize(traj: &Trajectory, o: &SynthOptions) -> Result<Outcome> {
    let sym = symbols_for(traj, o)?;
    let robust = Robust::from_data(traj, &sym, o)?;
    let name = match (o.certifier, o.rate_min) {
        (_, true) => "rate-min",
        (Certifier::Full, _) => "ss-full",
        (Certifier::Alt, _) => "ss-alt",
        (Certifier::AltSparse, _) => "ss-alt-sparse",
    };
    superstabilize_with(&robust, &sym, o, name)
}

pub fn ss_full(traj: &Trajectory, d: u32, delta: f64) -> Result<Outcome> {
    superstabilize(traj, &SynthOptions { delta, ..SynthOptions::new(Certifier::Full, d) })
}

pub fn ss_alt(traj: &Trajectory, d: u32, delta: f64, pi: PiSpec) -> Result<Outcome> {
    superstabilize(traj, &SynthOptions { delta, pi, ..SynthOptions::new(Certifier::Alt, d) })
}

/// Minimizes the certified rate; returns `(lambda, controller)` when feasible.
pub fn rate_minimize(certifier: Certifier, traj: &Trajectory, d: u32) -> Result<Outcome> {
    superstabilize(traj, &SynthOptions::new(certifier, d).rate_min())
}

/// One gain that superstabilizes every subsystem of a switched plant, with
/// switching labels taken from the trajectory (full certificates).
pub fn superstabilize_switched(traj: &Trajectory, n_s: usize, o: &SynthOptions) -> Result<Outcome> {
    let start = Instant::now();
    let set = apply_partial_info(&build_switched_set(traj, n_s)?, &o.known);
    let robust = Robust::Full { set, d: o.d, eps: o.eps_shift };
    let mut prog = ConicProgram::new("ss-switched");
    let k = free_decisions(&mut prog, traj.m(), traj.n());
    let bound = Affine::constant(1.0 - o.delta);
    let mut targets = Vec::new();
    for s in 0..n_s {
        let sym = PlantSymbols::for_subsystem(traj.n(), traj.m(), s);
        targets.extend(superstability_targets(&mut prog, &sym, &k, &bound, 2 * o.d)?);
    }
    for t in &targets {
        robust.require(&mut prog, t)?;
    }
    let r = match solve_program(&prog, &o.tol)? {
        Ok(r) => r,
        Err(out) => return Ok(out),
    };
    Ok(Outcome::Feasible(Box::new(Controller {
        method: "ss-switched".into(),
        class: StabilityClass::Superstable,
        k: k.value(&r.x),
        lambda: Some(1.0 - o.delta),
        gamma: None,
        y: None,
        s: None,
        z: None,
        stats: r.stats.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        verification: None,
        certified: Vec::new(),
    })))
}

fn quadratic_with(robust: &Robust, sym: &PlantSymbols, o: &SynthOptions, method: &str) -> Result<Outcome> {
    let start = Instant::now();
    let mut prog = ConicProgram::new(method);
    let y = pd_decisions(&mut prog, sym.n);
    let s = free_decisions(&mut prog, sym.m, sym.n);
    let target = lyapunov_target(sym, &y, &s, None, 1.0);
    robust.require(&mut prog, &target)?;
    let r = match solve_program(&prog, &o.tol)? {
        Ok(r) => r,
        Err(out) => return Ok(out),
    };
    let (yv, sv) = (y.value(&r.x), s.value(&r.x));
    Ok(Outcome::Feasible(Box::new(Controller {
        method: method.into(),
        class: StabilityClass::Quadratic,
        k: recover_gain(&yv, &sv)?,
        lambda: None,
        gamma: None,
        y: Some(yv),
        s: Some(sv),
        z: None,
        stats: r.stats.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        verification: None,
        certified: certified_values(&[target], &r.x),
    })))
}

/// Quadratically stabilizing controller `K = S Y^-1` for every consistent plant.
pub fn quadratic_stabilize(traj: &Trajectory, o: &SynthOptions) -> Result<Outcome> {
    if o.certifier == Certifier::AltSparse {
        return Err(Error::Unsupported("the group-sparse certificate handles scalar targets only".into()));
    }
    let sym = symbols_for(traj, o)?;
    let robust = Robust::from_data(traj, &sym, o)?;
    let name = if o.certifier == Certifier::Full { "qs-full" } else { "qs-alt" };
    quadratic_with(&robust, &sym, o, name)
}

pub fn qs_full(traj: &Trajectory, d: u32) -> Result<Outcome> {
    quadratic_stabilize(traj, &SynthOptions::new(Certifier::Full, d))
}

pub fn qs_alt(traj: &Trajectory, d: u32, pi: PiSpec) -> Result<Outcome> {
    quadratic_stabilize(traj, &SynthOptions { pi, ..SynthOptions::new(Certifier::Alt, d) })
}

fn h2_with(robust: &Robust, sym: &PlantSymbols, ch: &H2Channels, o: &SynthOptions, method: &str) -> Result<Outcome> {
    ch.check(sym.n, sym.m)?;
    let start = Instant::now();
    let (n, r) = (sym.n, ch.c.nrows());
    let mut prog = ConicProgram::new(method);
    let y = pd_decisions(&mut prog, n);
    let s = free_decisions(&mut prog, sym.m, n);
    let z = sym_decisions(&mut prog, r);
    let t = prog.add_free(1, None)[0];
    let eet = &ch.e * ch.e.transpose();
    let target = lyapunov_target(sym, &y, &s, Some(&eet), 1.0);
    robust.require(&mut prog, &target)?;
    // [[Z, CY + DS], [*, Y]] >= 0
    let cyds = y.left_mul(&ch.c).add(&s.left_mul(&ch.d), 1.0);
    let perf = crate::psatz::block_lmi(&[vec![Some(&z), Some(&cyds)], vec![None, Some(&y)]])?;
    add_lmi(&mut prog, &perf, None)?;
    let mut trace = vec![(t, 1.0)];
    for i in 0..r {
        for (v, c) in &z.get(i, i).terms {
            trace.push((*v, -c));
        }
    }
    prog.add_ge(trace, 0.0, None)?;
    prog.add_objective(t, 1.0);
    let res = match solve_program(&prog, &o.tol)? {
        Ok(r) => r,
        Err(out) => return Ok(out),
    };
    let (yv, sv) = (y.value(&res.x), s.value(&res.x));
    Ok(Outcome::Feasible(Box::new(Controller {
        method: method.into(),
        class: StabilityClass::H2,
        k: recover_gain(&yv, &sv)?,
        lambda: None,
        gamma: Some(res.x[t].max(0.0).sqrt()),
        y: Some(yv),
        s: Some(sv),
        z: Some(z.value(&res.x)),
        stats: res.stats.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        verification: None,
        certified: certified_values(&[target], &res.x),
    })))
}

/// Worst-case H2 synthesis over the consistent plants; `gamma` is the
/// certified bound.
pub fn h2_worst(traj: &Trajectory, ch: &H2Channels, o: &SynthOptions) -> Result<Outcome> {
    if o.certifier == Certifier::AltSparse {
        return Err(Error::Unsupported("the group-sparse certificate handles scalar targets only".into()));
    }
    let sym = symbols_for(traj, o)?;
    let robust = Robust::from_data(traj, &sym, o)?;
    h2_with(&robust, &sym, ch, o, "h2")
}

/// Optimal H2 state feedback for one known plant.
pub fn h2_known(plant: &Plant, ch: &H2Channels) -> Result<Outcome> {
    let sym = PlantSymbols::new(plant.n(), plant.m());
    h2_with(&Robust::known(plant), &sym, ch, &SynthOptions::default(), "h2-known")
}

fn hinf_with(robust: &Robust, sym: &PlantSymbols, ch: &HinfChannels, o: &SynthOptions, method: &str) -> Result<Outcome> {
    ch.check(sym.n, sym.m)?;
    let start = Instant::now();
    let (n, e, r) = (sym.n, ch.e.ncols(), ch.c.nrows());
    let mut prog = ConicProgram::new(method);
    let y = pd_decisions(&mut prog, n);
    let s = free_decisions(&mut prog, sym.m, n);
    let g = prog.add_free(1, None)[0];
    prog.add_objective(g, 1.0);
    let size = 2 * n + e + r;
    let mut t = AffMatrix::zeros(size);
    let base = lyapunov_target(sym, &y, &s, None, -1.0);
    for (i, j, p) in base.entries() {
        *t.get_mut(i, j) = p.clone();
    }
    let c = |v: f64| AffPoly::constant(v);
    for i in 0..n {
        for k in 0..e {
            *t.get_mut(i, 2 * n + k) = c(ch.e[(i, k)]);
        }
    }
    // Y C' - S' D1'
    let yc = y.left_mul(&ch.c).add(&s.left_mul(&ch.d1), -1.0).transpose();
    for i in 0..n {
        for k in 0..r {
            *t.get_mut(n + i, 2 * n + e + k) = AffPoly::from_affine(yc.get(i, k).clone());
        }
    }
    for k in 0..e {
        *t.get_mut(2 * n + k, 2 * n + k) = AffPoly::from_affine(Affine::var(g));
        for l in 0..r {
            *t.get_mut(2 * n + k, 2 * n + e + l) = c(ch.d2[(l, k)]);
        }
    }
    for k in 0..r {
        *t.get_mut(2 * n + e + k, 2 * n + e + k) = AffPoly::from_affine(Affine::var(g));
    }
    robust.require(&mut prog, &t)?;
    let res = match solve_program(&prog, &o.tol)? {
        Ok(r) => r,
        Err(out) => return Ok(out),
    };
    let (yv, sv) = (y.value(&res.x), s.value(&res.x));
    Ok(Outcome::Feasible(Box::new(Controller {
        method: method.into(),
        class: StabilityClass::Hinf,
        k: recover_gain(&yv, &sv)?,
        lambda: None,
        gamma: Some(res.x[g]),
        y: Some(yv),
        s: Some(sv),
        z: None,
        stats: res.stats.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        verification: None,
        certified: certified_values(&[t], &res.x),
    })))
}

/// Worst-case H-infinity synthesis; the closed loop is `A - BK`.
pub fn hinf_worst(traj: &Trajectory, ch: &HinfChannels, o: &SynthOptions) -> Result<Outcome> {
    if o.certifier == Certifier::AltSparse {
        return Err(Error::Unsupported("the group-sparse certificate handles scalar targets only".into()));
    }
    let sym = symbols_for(traj, o)?;
    let robust = Robust::from_data(traj, &sym, o)?;
    hinf_with(&robust, &sym, ch, o, "hinf")
}

pub fn hinf_known(plant: &Plant, ch: &HinfChannels) -> Result<Outcome> {
    let sym = PlantSymbols::new(plant.n(), plant.m());
    hinf_with(&Robust::known(plant), &sym, ch, &SynthOptions::default(), "hinf-known")
}

/// Quadratic stabilization of a single known plant.
pub fn qs_known(plant: &Plant) -> Result<Outcome> {
    let sym = PlantSymbols::new(plant.n(), plant.m());
    quadratic_with(&Robust::known(plant), &sym, &SynthOptions::default(), "qs-known")
}

/// `min_K ||A + BK||_inf` as a linear program; returns `(lambda, K)`.
pub fn model_based_benchmark(plant: &Plant) -> Result<(f64, DMatrix<f64>)> {
    plant.validate()?;
    let (n, m) = (plant.n(), plant.m());
    let mut lp = ConicProgram::new("model-based");
    let k = lp.add_free(m * n, None);
    let mm = lp.add_free(n * n, None);
    let lam = lp.add_nonneg(1)[0];
    for i in 0..n {
        let mut row = vec![(lam, 1.0)];
        row.extend((0..n).map(|j| (mm[i * n + j], -1.0)));
        lp.add_ge(row, 0.0, None)?;
        for j in 0..n {
            for sign in [1.0, -1.0] {
                // M_ij - sign (A + BK)_ij >= 0
                let mut c = vec![(mm[i * n + j], 1.0)];
                c.extend((0..m).map(|l| (k[l * n + j], -sign * plant.b[(i, l)])));
                lp.add_ge(c, sign * plant.a[(i, j)], None)?;
            }
        }
    }
    lp.add_objective(lam, 1.0);
    let r = lp.solve(&Tolerances::default())?;
    if !r.status.is_solved() {
        return Err(Error::Numerical(format!("benchmark LP ended with {:?}", r.status)));
    }
    Ok((r.x[lam], DMatrix::from_fn(m, n, |l, j| r.x[k[l * n + j]])))
}

/// Discrete-time H2 norm of `(A_cl, E, C_cl)`; infinite when unstable.
pub fn h2_norm(a_cl: &DMatrix<f64>, e: &DMatrix<f64>, c_cl: &DMatrix<f64>) -> f64 {
    if spectral_radius(a_cl) >= 1.0 {
        return f64::INFINITY;
    }
    let n = a_cl.nrows();
    // vec(P) = (I - A kron A)^-1 vec(E E')
    let kron = a_cl.kronecker(a_cl);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let q = e * e.transpose();
    let rhs = DVector::from_iterator(n * n, q.iter().copied());
    let Some(p) = lhs.lu().solve(&rhs) else {
        return f64::INFINITY;
    };
    let p = DMatrix::from_iterator(n, n, p.iter().copied());
    (c_cl * p * c_cl.transpose()).trace().max(0.0).sqrt()
}

/// H2 norm of the true plant under `u = K x`.
pub fn closed_loop_h2(plant: &Plant, ch: &H2Channels, k: &DMatrix<f64>) -> f64 {
    h2_norm(&plant.closed_loop(k), &ch.e, &(&ch.c + &ch.d * k))
}

fn sigma_max_at(a: &DMatrix<f64>, e: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, w: f64) -> f64 {
    let n = a.nrows();
    let z = Complex::new(w.cos(), w.sin());
    let zi = DMatrix::<Complex<f64>>::identity(n, n) * z - a.map(|v| Complex::new(v, 0.0));
    let Some(inv) = zi.try_inverse() else {
        return f64::INFINITY;
    };
    let g = c.map(|v| Complex::new(v, 0.0)) * inv * e.map(|v| Complex::new(v, 0.0)) + d.map(|v| Complex::new(v, 0.0));
    g.singular_values().max()
}

/// Discrete-time H-infinity norm by a frequency grid refined with
/// golden-section search around the peak; infinite when unstable.
pub fn hinf_norm(a: &DMatrix<f64>, e: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    if spectral_radius(a) >= 1.0 {
        return f64::INFINITY;
    }
    let grid = 2000;
    let step = std::f64::consts::PI / grid as f64;
    let (mut best_w, mut best) = (0.0, 0.0);
    for k in 0..=grid {
        let w = k as f64 * step;
        let v = sigma_max_at(a, e, c, d, w);
        if v > best {
            best = v;
            best_w = w;
        }
    }
    let (mut lo, mut hi) = ((best_w - step).max(0.0), (best_w + step).min(std::f64::consts::PI));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let (x1, x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
        if sigma_max_at(a, e, c, d, x1) > sigma_max_at(a, e, c, d, x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    best.max(sigma_max_at(a, e, c, d, 0.5 * (lo + hi)))
}

/// H-infinity norm of the true plant under this program's `A - BK` convention.
pub fn closed_loop_hinf(plant: &Plant, ch: &HinfChannels, k: &DMatrix<f64>) -> f64 {
    let a = &plant.a - &plant.b * k;
    let c = &ch.c - &ch.d1 * k;
    hinf_norm(&a, &ch.e, &c, &ch.d2)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Verification {
    pub linf_norm: f64,
    pub spectral_radius: f64,
    /// `||x_t||_inf <= g^(t/n) ||x_0||_inf` along a simulated closed loop,
    /// with `g = ||A_cl||_inf`; None when `g >= 1`.
    pub decay_envelope: Option<bool>,
    /// Smallest eigenvalue of the certified targets over the true and
    /// sampled plants.
    pub certified_min_eig: Option<f64>,
    /// Largest closed-loop spectral radius over the sampled plants.
    pub sampled_max_radius: Option<f64>,
    pub sampled_max_linf: Option<f64>,
    pub samples: usize,
}

impl Verification {
    /// Whether every check that applies to the controller's class passed.
    pub fn passed(&self, class: StabilityClass) -> bool {
        let cert = self.certified_min_eig.is_none_or(|v| v > 0.0);
        match class {
            StabilityClass::Superstable => {
                self.linf_norm < 1.0 && self.sampled_max_linf.is_none_or(|v| v < 1.0) && cert
            }
            _ => self.spectral_radius < 1.0 && self.sampled_max_radius.is_none_or(|v| v < 1.0) && cert,
        }
    }
}

fn decay_check(a_cl: &DMatrix<f64>, steps: usize) -> Option<bool> {
    let g = linf_operator_norm(a_cl);
    if g >= 1.0 {
        return None;
    }
    let n = a_cl.nrows() as f64;
    let mut x = DVector::zeros(a_cl.nrows());
    x[0] = 1.0;
    for t in 1..=steps {
        x = a_cl * x;
        if x.amax() > g.powf(t as f64 / n) * (1.0 + 1e-9) + 1e-15 {
            return Some(false);
        }
    }
    Some(true)
}

/// Checks a controller at the true plant and at sampled consistent plants.
pub fn verify(ctrl: &Controller, truth: &Plant, samples: &[Plant]) -> Result<Verification> {
    let a_cl = ctrl.closed_loop(truth);
    let mut v = Verification {
        linf_norm: linf_operator_norm(&a_cl),
        spectral_radius: spectral_radius(&a_cl),
        decay_envelope: decay_check(&a_cl, 50),
        samples: samples.len(),
        ..Default::default()
    };
    if !ctrl.certified.is_empty() {
        let mut lo = ctrl.certified_min_eig(truth)?;
        for p in samples {
            lo = lo.min(ctrl.certified_min_eig(p)?);
        }
        v.certified_min_eig = Some(lo);
    }
    if !samples.is_empty() {
        let cls: Vec<DMatrix<f64>> = samples.iter().map(|p| ctrl.closed_loop(p)).collect();
        v.sampled_max_radius = Some(cls.iter().map(spectral_radius).fold(0.0, f64::max));
        v.sampled_max_linf = Some(cls.iter().map(linf_operator_norm).fold(0.0, f64::max));
    }
    Ok(v)
}

/// Certificate sizes of a method: `[q, sigma0, sigma_i, mu]` and counts.
/// Full programs depend on the horizon; alternatives sizes do not.
pub fn method_report(method: Method, n: usize, m: usize, t: usize, d: u32) -> Result<GramReport> {
    let p = n * (n + m) + n * t;
    let full = |s: usize| {
        let ineqs = vec![1u32; 2 * n * t];
        let eqs = vec![2u32; n * (t - 1)];
        GramReport::putinar(p, d, s, &ineqs, &eqs)
    };
    if t < 2 {
        return Err(Error::InvalidArgument("horizon must be at least 2".into()));
    }
    Ok(match method {
        Method::SsFull => full(1),
        Method::QsFull => full(2 * n),
        Method::SsAlt | Method::RateMin => alt_gram_report(AltVariant::Measurement, n, m, t, d, 1),
        Method::SsAltSparse => alt_gram_report(AltVariant::Sparse, n, m, t, d, 1),
        Method::QsAlt | Method::H2 => alt_gram_report(AltVariant::Measurement, n, m, t, d, 2 * n),
        Method::Hinf => {
            // size 2n + e + r with e = n and r = n + m
            alt_gram_report(AltVariant::Measurement, n, m, t, d, 2 * n + n + (n + m))
        }
    })
}

/// Number of certificates a method compiles.
pub fn certificate_count(method: Method, n: usize) -> usize {
    match method {
        Method::SsFull | Method::SsAlt | Method::SsAltSparse | Method::RateMin => n + 2 * n * n,
        _ => 1,
    }
}
