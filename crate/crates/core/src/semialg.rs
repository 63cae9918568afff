//! Consistency sets: the plants and noise values that could have produced a
//! trajectory, as basic semialgebraic sets in the symbols of `polyalg`.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conic::{ConicProgram, SolveStatus, Tolerances};
use crate::error::{Error, Result};
use crate::polyalg::{Poly, PolyRect, VarId, VarKind};
use crate::sysdata::{least_squares_plant, Plant, Trajectory};

/// `{ x : g_i(x) >= 0, h_j(x) = 0 }` over the listed symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiAlgSet {
    pub vars: Vec<VarId>,
    pub ineqs: Vec<Poly>,
    pub eqs: Vec<Poly>,
    pub name: String,
}

impl SemiAlgSet {
    pub fn new(name: impl Into<String>, vars: Vec<VarId>) -> Self {
        SemiAlgSet { vars, ineqs: Vec::new(), eqs: Vec::new(), name: name.into() }
    }

    /// Every symbol used by a constraint must be declared.
    pub fn validate(&self) -> Result<()> {
        let declared: BTreeSet<VarId> = self.vars.iter().copied().collect();
        if declared.len() != self.vars.len() {
            return Err(Error::InvalidArgument(format!("set `{}` declares a symbol twice", self.name)));
        }
        for p in self.ineqs.iter().chain(&self.eqs) {
            if let Some(v) = p.vars().into_iter().find(|v| !declared.contains(v)) {
                return Err(Error::InvalidArgument(format!("set `{}` uses undeclared symbol {v}", self.name)));
            }
        }
        Ok(())
    }

    pub fn plant_vars(&self) -> Vec<VarId> {
        self.vars.iter().copied().filter(|v| v.kind.is_plant()).collect()
    }

    pub fn noise_vars(&self) -> Vec<VarId> {
        self.vars.iter().copied().filter(|v| v.kind.is_noise()).collect()
    }

    /// Largest constraint violation at a point (0 for members).
    pub fn violation(&self, at: &HashMap<VarId, f64>) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for g in &self.ineqs {
            worst = worst.max(-g.evaluate(at)?);
        }
        for h in &self.eqs {
            worst = worst.max(h.evaluate(at)?.abs());
        }
        Ok(worst)
    }

    pub fn contains(&self, at: &HashMap<VarId, f64>, tol: f64) -> Result<bool> {
        Ok(self.violation(at)? <= tol)
    }

    /// Text dump in the polynomial serialization.
    pub fn to_text(&self) -> String {
        let mut s = format!("set {}\nvars", self.name);
        for v in &self.vars {
            s.push(' ');
            s.push_str(&v.to_string());
        }
        s.push('\n');
        for g in &self.ineqs {
            s.push_str(&format!("ineq {g}\n"));
        }
        for h in &self.eqs {
            s.push_str(&format!("eq {h}\n"));
        }
        s
    }
}

/// The symbolic plant `(A, B)` of one subsystem. Entries bound to known
/// values are constants instead of symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantSymbols {
    pub n: usize,
    pub m: usize,
    pub a: PolyRect,
    pub b: PolyRect,
    pub known: HashMap<VarId, f64>,
    sys: usize,
}

impl PlantSymbols {
    pub fn new(n: usize, m: usize) -> Self {
        Self::for_subsystem(n, m, 0)
    }

    pub fn for_subsystem(n: usize, m: usize, sys: usize) -> Self {
        PlantSymbols {
            n,
            m,
            a: PolyRect::symbols(n, n, |i, j| VarId::a(i, j).with_sys(sys)),
            b: PolyRect::symbols(n, m, |i, j| VarId::b(i, j).with_sys(sys)),
            known: HashMap::new(),
            sys,
        }
    }

    pub fn with_known(mut self, known: &HashMap<VarId, f64>) -> Result<Self> {
        for (v, x) in known {
            let (i, j) = (v.i as usize, v.j as usize);
            match v.kind {
                VarKind::A if v.sys as usize == self.sys && i < self.n && j < self.n => {
                    self.a[(i, j)] = Poly::constant(*x)
                }
                VarKind::B if v.sys as usize == self.sys && i < self.n && j < self.m => {
                    self.b[(i, j)] = Poly::constant(*x)
                }
                _ => return Err(Error::InvalidArgument(format!("{v} is not an entry of this plant"))),
            }
            self.known.insert(*v, *x);
        }
        Ok(self)
    }

    /// Unknown entries in canonical order (A row-major, then B).
    pub fn vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let v = VarId::a(i, j).with_sys(self.sys);
                if !self.known.contains_key(&v) {
                    out.push(v);
                }
            }
        }
        for i in 0..self.n {
            for j in 0..self.m {
                let v = VarId::b(i, j).with_sys(self.sys);
                if !self.known.contains_key(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Unknown entries of row `i` of `(A, B)`.
    pub fn row_group(&self, i: usize) -> Vec<VarId> {
        self.vars().into_iter().filter(|v| v.i as usize == i).collect()
    }

    /// `x_{t+1} - A x_t - B u_t` (or with any given vectors).
    pub fn residual(&self, next: &[f64], x: &[f64], u: &[f64]) -> Vec<Poly> {
        let ax = self.a.mul_vec(x);
        let bu = self.b.mul_vec(u);
        (0..self.n).map(|i| &(&Poly::constant(next[i]) - &ax[i]) - &bu[i]).collect()
    }

    pub fn assignment(&self, p: &Plant) -> HashMap<VarId, f64> {
        let mut at = HashMap::new();
        for i in 0..self.n {
            for j in 0..self.n {
                at.insert(VarId::a(i, j).with_sys(self.sys), p.a[(i, j)]);
            }
            for j in 0..self.m {
                at.insert(VarId::b(i, j).with_sys(self.sys), p.b[(i, j)]);
            }
        }
        at
    }
}

fn col(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    m.column(k).iter().copied().collect()
}

fn push_box(set: &mut SemiAlgSet, v: VarId, eps: f64) {
    set.ineqs.push(Poly::var(v) + Poly::constant(eps));
    set.ineqs.push(Poly::constant(eps) - Poly::var(v));
}

/// `A dx_t` as polynomials, one per row.
fn a_times_dx(sym: &PlantSymbols, t: usize) -> Vec<Poly> {
    (0..sym.n)
        .map(|i| {
            let mut acc = Poly::zero();
            for j in 0..sym.n {
                acc += &(&sym.a[(i, j)] * &Poly::var(VarId::dx(j, t)));
            }
            acc
        })
        .collect()
}

/// Measurement-noise consistency set over `(A, B, dx)`: `|dx_ti| <= eps_x` and
/// `0 = -dx_{t+1} + A dx_t + (xhat_{t+1} - A xhat_t - B u_t)`.
pub fn build_eiv_set(traj: &Trajectory) -> Result<SemiAlgSet> {
    traj.validate()?;
    if !traj.bounds.is_state_only() {
        return Err(Error::InvalidArgument(
            "input or process noise is nonzero; use build_allnoise_set for this trajectory".into(),
        ));
    }
    let times: Vec<usize> = (1..=traj.horizon()).collect();
    sampled_set("eiv", traj, &times)
}

fn sampled_set(name: &str, traj: &Trajectory, times: &[usize]) -> Result<SemiAlgSet> {
    let (n, m) = (traj.n(), traj.m());
    let sym = PlantSymbols::new(n, m);
    let mut vars = sym.vars();
    for &t in times {
        for i in 0..n {
            vars.push(VarId::dx(i, t - 1));
        }
    }
    let mut set = SemiAlgSet::new(name, vars);
    for &t in times {
        for i in 0..n {
            push_box(&mut set, VarId::dx(i, t - 1), traj.bounds.eps_x.at(t - 1));
        }
    }
    for w in times.windows(2) {
        let (t0, t1) = (w[0] - 1, w[1] - 1);
        let r = (t1 - t0) as u32;
        let ar = sym.a.pow(r);
        let h = transition_residual(&sym, &ar, traj, t0, t1);
        for i in 0..n {
            let mut e = h[i].clone() - Poly::var(VarId::dx(i, t1));
            for j in 0..n {
                e += &(&ar[(i, j)] * &Poly::var(VarId::dx(j, t0)));
            }
            set.eqs.push(e);
        }
    }
    Ok(set)
}

/// `xhat_{t1} - A^r xhat_{t0} - sum_k A^{r-1-k} B u_{t0+k}` with `r = t1 - t0`
/// (zero-based times).
pub fn transition_residual(sym: &PlantSymbols, ar: &PolyRect, traj: &Trajectory, t0: usize, t1: usize) -> Vec<Poly> {
    let n = sym.n;
    let r = t1 - t0;
    let mut h: Vec<Poly> = col(&traj.xhat, t1).into_iter().map(Poly::constant).collect();
    let ax = ar.mul_vec(&col(&traj.xhat, t0));
    for i in 0..n {
        h[i] -= &ax[i];
    }
    let mut apow = PolyRect::identity(n);
    for k in (0..r).rev() {
        // A^{r-1-k} B u_{t0+k}, accumulated with increasing powers
        let bu = apow.matmul(&sym.b).mul_vec(&col(&traj.uhat, t0 + k));
        for i in 0..n {
            h[i] -= &bu[i];
        }
        if k > 0 {
            apow = apow.matmul(&sym.a);
        }
    }
    h
}

/// Consistency set with measurement, input and process noise over
/// `(A, B, dx, du, w)`. The symbol `w` enters the dynamics with a positive
/// sign; since the bounds are symmetric it corresponds to the negated
/// simulator disturbance.
pub fn build_allnoise_set(traj: &Trajectory) -> Result<SemiAlgSet> {
    traj.validate()?;
    let (n, m, t) = (traj.n(), traj.m(), traj.horizon());
    let sym = PlantSymbols::new(n, m);
    let mut vars = sym.vars();
    for k in 0..t {
        vars.extend((0..n).map(|i| VarId::dx(i, k)));
    }
    for k in 0..t - 1 {
        vars.extend((0..m).map(|i| VarId::du(i, k)));
    }
    for k in 0..t - 1 {
        vars.extend((0..n).map(|i| VarId::w(i, k)));
    }
    let mut set = SemiAlgSet::new("allnoise", vars);
    for k in 0..t {
        for i in 0..n {
            push_box(&mut set, VarId::dx(i, k), traj.bounds.eps_x.at(k));
        }
    }
    for k in 0..t - 1 {
        for i in 0..m {
            push_box(&mut set, VarId::du(i, k), traj.bounds.eps_u);
        }
    }
    for k in 0..t - 1 {
        for i in 0..n {
            push_box(&mut set, VarId::w(i, k), traj.bounds.eps_w);
        }
    }
    for k in 0..t - 1 {
        let h = sym.residual(&col(&traj.xhat, k + 1), &col(&traj.xhat, k), &col(&traj.uhat, k));
        let adx = a_times_dx(&sym, k);
        for i in 0..n {
            let mut e = h[i].clone() - Poly::var(VarId::dx(i, k + 1)) + adx[i].clone() + Poly::var(VarId::w(i, k));
            for j in 0..m {
                e += &(&sym.b[(i, j)] * &Poly::var(VarId::du(j, k)));
            }
            set.eqs.push(e);
        }
    }
    Ok(set)
}

/// States observed only at `sample_times`; gaps of `r` steps use `A^r`.
pub fn build_missing_data_set(traj: &Trajectory) -> Result<SemiAlgSet> {
    traj.validate()?;
    let times = traj
        .sample_times
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no sample_times".into()))?;
    if !traj.bounds.is_state_only() {
        return Err(Error::InvalidArgument("missing-data sets support measurement noise only".into()));
    }
    sampled_set("missing-data", traj, times)
}

/// Switched plant: transition `t` uses subsystem `switch_labels[t]`.
pub fn build_switched_set(traj: &Trajectory, n_s: usize) -> Result<SemiAlgSet> {
    traj.validate()?;
    let labels = traj
        .switch_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no switch_labels".into()))?;
    if n_s == 0 || labels.iter().any(|l| *l > n_s) {
        return Err(Error::InvalidArgument(format!("switch labels must lie in 1..{n_s}")));
    }
    if !traj.bounds.is_state_only() {
        return Err(Error::InvalidArgument("switched sets support measurement noise only".into()));
    }
    let (n, m, t) = (traj.n(), traj.m(), traj.horizon());
    let syms: Vec<PlantSymbols> = (0..n_s).map(|s| PlantSymbols::for_subsystem(n, m, s)).collect();
    let mut vars: Vec<VarId> = syms.iter().flat_map(|s| s.vars()).collect();
    for k in 0..t {
        vars.extend((0..n).map(|i| VarId::dx(i, k)));
    }
    let mut set = SemiAlgSet::new("switched", vars);
    for k in 0..t {
        for i in 0..n {
            push_box(&mut set, VarId::dx(i, k), traj.bounds.eps_x.at(k));
        }
    }
    for k in 0..t - 1 {
        let sym = &syms[labels[k] - 1];
        let h = sym.residual(&col(&traj.xhat, k + 1), &col(&traj.xhat, k), &col(&traj.uhat, k));
        let adx = a_times_dx(sym, k);
        for i in 0..n {
            set.eqs.push(h[i].clone() - Poly::var(VarId::dx(i, k + 1)) + adx[i].clone());
        }
    }
    Ok(set)
}

/// Substitutes known plant entries; keys not declared in the set are ignored.
pub fn apply_partial_info(set: &SemiAlgSet, known: &HashMap<VarId, f64>) -> SemiAlgSet {
    let known: HashMap<VarId, f64> = known.iter().filter(|(v, _)| set.vars.contains(v)).map(|(k, v)| (*k, *v)).collect();
    SemiAlgSet {
        vars: set.vars.iter().copied().filter(|v| !known.contains_key(v)).collect(),
        ineqs: set.ineqs.iter().map(|p| p.substitute_values(&known)).collect(),
        eqs: set.eqs.iter().map(|p| p.substitute_values(&known)).collect(),
        name: format!("{}+known", set.name),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Membership {
    Member,
    NonMember,
    /// The LP solver did not reach a verdict.
    Unknown,
}

/// Decides whether a fixed plant belongs to the projection of the set onto
/// `(A, B)`: with the plant substituted the constraints are affine in the
/// noise symbols, so this is an LP feasibility problem.
pub fn membership_lp(set: &SemiAlgSet, plant: &Plant) -> Result<Membership> {
    let sym = PlantSymbols::new(plant.n(), plant.m());
    let at = sym.assignment(plant);
    if let Some(v) = set.plant_vars().iter().find(|v| !at.contains_key(v)) {
        return Err(Error::Unsupported(format!("membership for sets with plant symbol {v}")));
    }
    let noise: Vec<VarId> = set.vars.iter().copied().filter(|v| !v.kind.is_plant()).collect();
    let mut lp = ConicProgram::new(format!("membership:{}", set.name));
    let cols = lp.add_free(noise.len(), None);
    let index: HashMap<VarId, usize> = noise.iter().copied().zip(cols).collect();
    let linear = |p: &Poly| -> Result<(Vec<(usize, f64)>, f64)> {
        let q = p.substitute_values(&at);
        if q.degree() > 1 {
            return Err(Error::InvalidArgument("constraint is not affine in the noise once the plant is fixed".into()));
        }
        let mut coeffs = Vec::new();
        for (mono, c) in q.terms() {
            if let Some(&(v, _)) = mono.factors().first() {
                coeffs.push((index[&v], c));
            }
        }
        Ok((coeffs, q.constant_term()))
    };
    for g in &set.ineqs {
        let (c, k) = linear(g)?;
        if c.is_empty() {
            if k < -1e-9 {
                return Ok(Membership::NonMember);
            }
            continue;
        }
        lp.add_ge(c, -k, None)?;
    }
    for h in &set.eqs {
        let (c, k) = linear(h)?;
        if c.is_empty() {
            if k.abs() > 1e-9 {
                return Ok(Membership::NonMember);
            }
            continue;
        }
        lp.add_row(c, -k, None)?;
    }
    let r = lp.solve(&Tolerances::default())?;
    Ok(match r.status {
        s if s.is_solved() => Membership::Member,
        SolveStatus::Infeasible => Membership::NonMember,
        _ => Membership::Unknown,
    })
}

/// `radius - sum v^2` over the listed symbols.
pub fn ball_constraint(vars: &[VarId], radius: f64) -> Poly {
    let mut p = Poly::constant(radius);
    for v in vars {
        p -= &Poly::var(*v).pow(2);
    }
    p
}

/// Appends the redundant ball constraint over the plant symbols of the set.
pub fn archimedean_wrap(set: &SemiAlgSet, radius: f64) -> Result<SemiAlgSet> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument("Archimedean radius must be positive".into()));
    }
    let mut out = set.clone();
    out.ineqs.push(ball_constraint(&set.plant_vars(), radius));
    Ok(out)
}

/// A-priori plant set used by the alternatives certificates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PiSpec {
    /// Certificates are globally SOS.
    #[default]
    None,
    /// `R - ||(A,B)||^2 >= 0`; the radius defaults to `default_radius`.
    Ball { radius: Option<f64> },
    /// `w^2 - (v - v_ls)^2 >= 0` for every entry, centered at least squares.
    Box { half_width: f64 },
}

/// `4 ||(A,B)_LS||_F^2` from the least-squares plant of the data.
pub fn default_radius(traj: &Trajectory) -> Result<f64> {
    let ls = least_squares_plant(traj)?;
    Ok(4.0 * (ls.a.norm_squared() + ls.b.norm_squared()))
}

/// Builds Π over the unknown entries of `sym`, or None in no-Π mode.
pub fn build_pi(spec: &PiSpec, traj: &Trajectory, sym: &PlantSymbols) -> Result<Option<SemiAlgSet>> {
    let vars = sym.vars();
    match spec {
        PiSpec::None => Ok(None),
        PiSpec::Ball { radius } => {
            let r = match radius {
                Some(r) => *r,
                None => default_radius(traj)?,
            };
            let mut s = SemiAlgSet::new("pi-ball", vars.clone());
            s.ineqs.push(ball_constraint(&vars, r));
            Ok(Some(s))
        }
        PiSpec::Box { half_width } => {
            let ls = least_squares_plant(traj)?;
            let at = sym.assignment(&ls);
            let mut s = SemiAlgSet::new("pi-box", vars.clone());
            for v in &vars {
                let d = Poly::var(*v) - Poly::constant(at[v]);
                s.ineqs.push(Poly::constant(half_width * half_width) - d.pow(2));
            }
            Ok(Some(s))
        }
    }
}

/// Restricts Π to the symbols in `group` (the projection of a ball is the ball
/// of the same radius; box constraints are kept per entry).
pub fn project_pi(pi: &SemiAlgSet, group: &[VarId]) -> SemiAlgSet {
    let keep: BTreeSet<VarId> = group.iter().copied().collect();
    let mut out = SemiAlgSet::new(format!("{}|group", pi.name), group.to_vec());
    for g in &pi.ineqs {
        let vars = g.vars();
        if vars.iter().all(|v| keep.contains(v)) {
            out.ineqs.push(g.clone());
        } else if vars.iter().any(|v| keep.contains(v)) {
            // drop the squares of the other symbols
            let others: HashMap<VarId, f64> = vars.iter().filter(|v| !keep.contains(v)).map(|v| (*v, 0.0)).collect();
            out.ineqs.push(g.substitute_values(&others));
        }
    }
    out
}

fn plant_with(center: &Plant, vars: &[VarId], x: &[f64]) -> Plant {
    let mut p = center.clone();
    for (v, val) in vars.iter().zip(x) {
        match v.kind {
            VarKind::A => p.a[(v.i as usize, v.j as usize)] = *val,
            VarKind::B => p.b[(v.i as usize, v.j as usize)] = *val,
            _ => {}
        }
    }
    p
}

/// Draws plants in the projection of `set` by random rays from `center`
/// (which must be a member): the exit distance along each ray is bracketed by
/// bisection, a uniform point on the segment is drawn, and it is kept only if
/// `membership_lp` accepts it.
pub fn sample_consistent_plants(set: &SemiAlgSet, center: &Plant, count: usize, seed: u64) -> Result<Vec<Plant>> {
    if membership_lp(set, center)? != Membership::Member {
        return Err(Error::InvalidArgument("sampling center is not consistent with the data".into()));
    }
    let vars = set.plant_vars();
    let sym = PlantSymbols::new(center.n(), center.m());
    let at = sym.assignment(center);
    let x0: Vec<f64> = vars.iter().map(|v| at[v]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let member = |x: &[f64]| -> Result<bool> { Ok(membership_lp(set, &plant_with(center, &vars, x))? == Membership::Member) };
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 50 * count + 100 {
            return Err(Error::Numerical(format!("only {} of {count} consistent plants found", out.len())));
        }
        let mut dir: Vec<f64> = (0..vars.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        dir.iter_mut().for_each(|v| *v /= norm);
        let point = |t: f64| -> Vec<f64> { x0.iter().zip(&dir).map(|(a, d)| a + t * d).collect() };
        let (mut lo, mut hi) = (0.0, 1e-3);
        while hi < 10.0 && member(&point(hi))? {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..10 {
            let mid = 0.5 * (lo + hi);
            if member(&point(mid))? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = rng.random_range(0.0..=1.0) * lo;
        let x = point(t);
        if member(&x)? {
            out.push(plant_with(center, &vars, &x));
        }
    }
    Ok(out)
}
