//! Theorem-of-alternatives certificates: robust positivity of a target
//! `q(A, B)` over every plant consistent with the data, with the noise
//! variables eliminated in favour of multipliers in `(A, B)` only.
//!
//! Measurement noise only: with `zeta+-` WSOS over Π and `mu` free,
//!
//! ```text
//! zeta+_1i - zeta-_1i = sum_j A_ji mu_1j
//! zeta+_ti - zeta-_ti = sum_j A_ji mu_tj - mu_{t-1,i}
//! zeta+_Ti - zeta-_Ti = -mu_{T-1,i}
//! Q = -q + sum eps_t (zeta+_ti + zeta-_ti) + sum mu_ti h_ti
//! -Q - eps_shift I  WSOS over Π
//! ```
//!
//! where `h_t = xhat_{t+1} - A xhat_t - B u_t`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::conic::{ConicProgram, SolveResult};
use crate::error::{Error, Result};
use crate::polyalg::{binomial, Poly, PolyMatrix, PolyRect, VarId};
use crate::psatz::{AffMatrix, BasisCache, FreeMatrix, GramReport, Identity, Role, Wsos, DEFAULT_EPS_SHIFT};
use crate::semialg::{project_pi, transition_residual, PlantSymbols, SemiAlgSet};
use crate::sysdata::Trajectory;

#[derive(Clone, Debug)]
pub struct AltOptions {
    pub d: u32,
    /// Π; None certifies globally (no-Π mode).
    pub pi: Option<SemiAlgSet>,
    pub eps_shift: f64,
}

impl AltOptions {
    pub fn new(d: u32) -> Self {
        AltOptions { d, pi: None, eps_shift: DEFAULT_EPS_SHIFT }
    }

    pub fn with_pi(mut self, pi: Option<SemiAlgSet>) -> Self {
        self.pi = pi;
        self
    }
}

/// Multipliers and rows of one alternatives certificate.
#[derive(Clone, Debug)]
pub struct AltBundle {
    pub s: usize,
    /// `(zeta+, zeta-)` per (sample, state component), sample-major.
    pub zeta: Vec<(Wsos, Wsos)>,
    /// Signed multipliers of the dynamics, per (transition, component).
    pub mu: Vec<FreeMatrix>,
    /// All-noise only: `(mu+, mu-)` with `mu+ - mu- = mu`.
    pub mu_pm: Vec<(Wsos, Wsos)>,
    /// All-noise only: `(psi+, psi-)` per (transition, input).
    pub psi: Vec<(Wsos, Wsos)>,
    /// Certificate of `-Q - eps_shift I`.
    pub sigma: Wsos,
    pub linking_rows: Vec<usize>,
    pub q_rows: Vec<usize>,
    pub target: AffMatrix,
    pub eps_shift: f64,
}

impl AltBundle {
    /// Largest equality residual over the linking rows.
    pub fn linking_residual(&self, prog: &ConicProgram, r: &SolveResult) -> f64 {
        row_residual(prog, &self.linking_rows, &r.x)
    }

    pub fn q_residual(&self, prog: &ConicProgram, r: &SolveResult) -> f64 {
        row_residual(prog, &self.q_rows, &r.x)
    }

    /// Gram matrices of every SOS multiplier.
    pub fn gram_values(&self, r: &SolveResult) -> Vec<nalgebra::DMatrix<f64>> {
        let mut out = Vec::new();
        let mut push = |w: &Wsos| out.extend(w.gram_blocks().map(|g| r.psd_value(&g.block)));
        for (a, b) in self.zeta.iter().chain(&self.mu_pm).chain(&self.psi) {
            push(a);
            push(b);
        }
        push(&self.sigma);
        out
    }

    pub fn gram_blocks(&self) -> usize {
        let c = |w: &Wsos| w.gram_blocks().count();
        self.zeta.iter().chain(&self.mu_pm).chain(&self.psi).map(|(a, b)| c(a) + c(b)).sum::<usize>() + c(&self.sigma)
    }

    pub fn sigma_value(&self, x: &[f64]) -> PolyMatrix {
        self.sigma.value(x)
    }
}

fn row_residual(prog: &ConicProgram, rows: &[usize], x: &[f64]) -> f64 {
    rows.iter()
        .map(|&r| {
            let row = &prog.rows()[r];
            (row.coeffs.iter().map(|(v, a)| a * x[*v]).sum::<f64>() - row.rhs).abs()
        })
        .fold(0.0, f64::max)
}

fn plant_only(id: &Identity) -> Result<()> {
    id.check_symbols(|v| v.kind.is_plant())
        .map_err(|e| Error::Numerical(format!("noise symbol survived elimination: {e}")))
}

fn check_target(q: &AffMatrix, sym: &PlantSymbols, d: u32) -> Result<()> {
    let allowed: BTreeSet<VarId> = sym.vars().into_iter().collect();
    if let Some(v) = q.symbols().into_iter().find(|v| !allowed.contains(v)) {
        return Err(Error::InvalidArgument(format!("target may only depend on the unknown plant entries, found {v}")));
    }
    if q.degree() > 2 * d {
        return Err(Error::InvalidArgument(format!("degree {d} is too small for a target of degree {}", q.degree())));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("alternatives certificates need d >= 1".into()));
    }
    Ok(())
}

fn pi_parts(pi: &Option<SemiAlgSet>) -> (Vec<Poly>, Vec<Poly>) {
    match pi {
        Some(p) => (p.ineqs.clone(), p.eqs.clone()),
        None => (Vec::new(), Vec::new()),
    }
}

struct Transition {
    /// Power of A mapping the earlier sample to the later one.
    lift: PolyRect,
    h: Vec<Poly>,
}

fn transitions(sym: &PlantSymbols, traj: &Trajectory, times: &[usize]) -> Vec<Transition> {
    times
        .windows(2)
        .map(|w| {
            let (t0, t1) = (w[0] - 1, w[1] - 1);
            let lift = sym.a.pow((t1 - t0) as u32);
            let h = transition_residual(sym, &lift, traj, t0, t1);
            Transition { lift, h }
        })
        .collect()
}

fn one() -> Poly {
    Poly::constant(1.0)
}

/// Shared construction for uniform and non-uniform sampling.
fn build_measurement(
    prog: &mut ConicProgram,
    q: &AffMatrix,
    traj: &Trajectory,
    sym: &PlantSymbols,
    times: &[usize],
    opts: &AltOptions,
) -> Result<AltBundle> {
    check_target(q, sym, opts.d)?;
    let (n, s, d) = (sym.n, q.size(), opts.d);
    let (pi_g, pi_h) = pi_parts(&opts.pi);
    let mut bases = BasisCache::new(sym.vars());
    let trans = transitions(sym, traj, times);
    let k = times.len();

    let mut zeta = Vec::with_capacity(k * n);
    for _ in 0..k * n {
        let tag = prog.new_tag();
        let p = Wsos::new(prog, &mut bases, &pi_g, &pi_h, d, s, Some(tag))?;
        let m = Wsos::new(prog, &mut bases, &pi_g, &pi_h, d, s, Some(tag))?;
        zeta.push((p, m));
    }
    // mu times A^r must stay within degree 2d
    let mut mu = Vec::with_capacity((k - 1) * n);
    for w in times.windows(2) {
        let r = (w[1] - w[0]) as u32;
        let deg = (2 * d).checked_sub(r).ok_or_else(|| {
            Error::Unsupported(format!("a gap of {r} steps needs relaxation degree d >= {}", r.div_ceil(2)))
        })?;
        let basis = bases.get(deg)?;
        for _ in 0..n {
            let tag = prog.new_tag();
            mu.push(FreeMatrix::new(prog, basis.clone(), s, Some(tag)));
        }
    }

    let mut linking_rows = Vec::new();
    for kk in 0..k {
        for i in 0..n {
            let mut id = Identity::new(s);
            let (zp, zm) = &zeta[kk * n + i];
            zp.add_to(&mut id, &one(), 1.0);
            zm.add_to(&mut id, &one(), -1.0);
            if kk + 1 < k {
                let lift = &trans[kk].lift;
                for j in 0..n {
                    if !lift[(j, i)].is_zero() {
                        id.add_free(&mu[kk * n + j], &lift[(j, i)], -1.0);
                    }
                }
            }
            if kk > 0 {
                id.add_free(&mu[(kk - 1) * n + i], &one(), 1.0);
            }
            plant_only(&id)?;
            let tag = prog.new_tag();
            linking_rows.extend(id.emit(prog, Some(tag))?);
        }
    }

    let sigma_tag = prog.new_tag();
    let sigma = Wsos::new(prog, &mut bases, &pi_g, &pi_h, d, s, Some(sigma_tag))?;
    let mut id = Identity::new(s);
    id.add_matrix(q, &one(), 1.0);
    for (kk, &t) in times.iter().enumerate() {
        let eps = traj.bounds.eps_x.at(t - 1);
        for i in 0..n {
            let (zp, zm) = &zeta[kk * n + i];
            zp.add_to(&mut id, &one(), -eps);
            zm.add_to(&mut id, &one(), -eps);
        }
    }
    for (g, tr) in trans.iter().enumerate() {
        for i in 0..n {
            id.add_free(&mu[g * n + i], &tr.h[i], -1.0);
        }
    }
    id.add_identity(-opts.eps_shift, &one());
    sigma.add_to(&mut id, &one(), -1.0);
    plant_only(&id)?;
    let q_rows = id.emit(prog, Some(sigma_tag))?;
    Ok(AltBundle {
        s,
        zeta,
        mu,
        mu_pm: Vec::new(),
        psi: Vec::new(),
        sigma,
        linking_rows,
        q_rows,
        target: q.clone(),
        eps_shift: opts.eps_shift,
    })
}

/// Measurement-noise alternatives certificate for `q(A,B) > 0` over every
/// consistent plant.
pub fn build_alt_psatz(
    prog: &mut ConicProgram,
    q: &AffMatrix,
    traj: &Trajectory,
    sym: &PlantSymbols,
    opts: &AltOptions,
) -> Result<AltBundle> {
    traj.validate()?;
    if !traj.bounds.is_state_only() {
        return Err(Error::InvalidArgument("input or process noise present; use build_alt_allnoise".into()));
    }
    let times: Vec<usize> = (1..=traj.horizon()).collect();
    build_measurement(prog, q, traj, sym, &times, opts)
}

/// Non-uniformly sampled states: gaps of `r` steps link through `(A^r)'`.
pub fn build_alt_nonuniform(
    prog: &mut ConicProgram,
    q: &AffMatrix,
    traj: &Trajectory,
    sym: &PlantSymbols,
    opts: &AltOptions,
) -> Result<AltBundle> {
    traj.validate()?;
    let times = traj
        .sample_times
        .clone()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no sample_times".into()))?;
    if !traj.bounds.is_state_only() {
        return Err(Error::InvalidArgument("non-uniform sampling supports measurement noise only".into()));
    }
    if times.len() < 2 {
        return Err(Error::InvalidArgument("need at least two sample times".into()));
    }
    build_measurement(prog, q, traj, sym, &times, opts)
}

/// Measurement, input and process noise. The multiplier of each dynamics row
/// is split as `mu = mu+ - mu-` with `mu+-` WSOS; the input multipliers obey
/// `psi+_tk - psi-_tk = sum_i B_ik mu_ti`, and
/// `Q = -q + sum eps_x (zeta+ + zeta-) + eps_u (psi+ + psi-) + eps_w (mu+ + mu-) + sum mu h`.
pub fn build_alt_allnoise(
    prog: &mut ConicProgram,
    q: &AffMatrix,
    traj: &Trajectory,
    sym: &PlantSymbols,
    opts: &AltOptions,
) -> Result<AltBundle> {
    traj.validate()?;
    check_target(q, sym, opts.d)?;
    let (n, m, s, d) = (sym.n, sym.m, q.size(), opts.d);
    let t_len = traj.horizon();
    let (pi_g, pi_h) = pi_parts(&opts.pi);
    let mut bases = BasisCache::new(sym.vars());
    let times: Vec<usize> = (1..=t_len).collect();
    let trans = transitions(sym, traj, &times);

    let pair = |prog: &mut ConicProgram, bases: &mut BasisCache| -> Result<(Wsos, Wsos)> {
        let tag = prog.new_tag();
        Ok((
            Wsos::new(prog, bases, &pi_g, &pi_h, d, s, Some(tag))?,
            Wsos::new(prog, bases, &pi_g, &pi_h, d, s, Some(tag))?,
        ))
    };
    let mut zeta = Vec::with_capacity(t_len * n);
    for _ in 0..t_len * n {
        zeta.push(pair(prog, &mut bases)?);
    }
    let mut mu_pm = Vec::with_capacity((t_len - 1) * n);
    for _ in 0..(t_len - 1) * n {
        mu_pm.push(pair(prog, &mut bases)?);
    }
    let mut psi = Vec::with_capacity((t_len - 1) * m);
    for _ in 0..(t_len - 1) * m {
        psi.push(pair(prog, &mut bases)?);
    }
    let mu_basis = bases.get(2 * d - 1)?;
    let mut mu = Vec::with_capacity((t_len - 1) * n);
    for _ in 0..(t_len - 1) * n {
        let tag = prog.new_tag();
        mu.push(FreeMatrix::new(prog, mu_basis.clone(), s, Some(tag)));
    }

    let mut linking_rows = Vec::new();
    let mut emit = |prog: &mut ConicProgram, id: Identity| -> Result<()> {
        plant_only(&id)?;
        let tag = prog.new_tag();
        linking_rows.extend(id.emit(prog, Some(tag))?);
        Ok(())
    };
    for t in 0..t_len {
        for i in 0..n {
            let mut id = Identity::new(s);
            let (zp, zm) = &zeta[t * n + i];
            zp.add_to(&mut id, &one(), 1.0);
            zm.add_to(&mut id, &one(), -1.0);
            if t + 1 < t_len {
                for j in 0..n {
                    if !sym.a[(j, i)].is_zero() {
                        id.add_free(&mu[t * n + j], &sym.a[(j, i)], -1.0);
                    }
                }
            }
            if t > 0 {
                id.add_free(&mu[(t - 1) * n + i], &one(), 1.0);
            }
            emit(prog, id)?;
        }
    }
    for t in 0..t_len - 1 {
        for i in 0..n {
            let mut id = Identity::new(s);
            let (p, mm) = &mu_pm[t * n + i];
            p.add_to(&mut id, &one(), 1.0);
            mm.add_to(&mut id, &one(), -1.0);
            id.add_free(&mu[t * n + i], &one(), -1.0);
            emit(prog, id)?;
        }
        for k in 0..m {
            let mut id = Identity::new(s);
            let (p, mm) = &psi[t * m + k];
            p.add_to(&mut id, &one(), 1.0);
            mm.add_to(&mut id, &one(), -1.0);
            for i in 0..n {
                if !sym.b[(i, k)].is_zero() {
                    id.add_free(&mu[t * n + i], &sym.b[(i, k)], -1.0);
                }
            }
            emit(prog, id)?;
        }
    }

    let sigma_tag = prog.new_tag();
    let sigma = Wsos::new(prog, &mut bases, &pi_g, &pi_h, d, s, Some(sigma_tag))?;
    let mut id = Identity::new(s);
    id.add_matrix(q, &one(), 1.0);
    for t in 0..t_len {
        let eps = traj.bounds.eps_x.at(t);
        for i in 0..n {
            let (zp, zm) = &zeta[t * n + i];
            zp.add_to(&mut id, &one(), -eps);
            zm.add_to(&mut id, &one(), -eps);
        }
    }
    for t in 0..t_len - 1 {
        for i in 0..n {
            let (p, mm) = &mu_pm[t * n + i];
            p.add_to(&mut id, &one(), -traj.bounds.eps_w);
            mm.add_to(&mut id, &one(), -traj.bounds.eps_w);
            id.add_free(&mu[t * n + i], &trans[t].h[i], -1.0);
        }
        for k in 0..m {
            let (p, mm) = &psi[t * m + k];
            p.add_to(&mut id, &one(), -traj.bounds.eps_u);
            mm.add_to(&mut id, &one(), -traj.bounds.eps_u);
        }
    }
    id.add_identity(-opts.eps_shift, &one());
    sigma.add_to(&mut id, &one(), -1.0);
    plant_only(&id)?;
    let q_rows = id.emit(prog, Some(sigma_tag))?;
    Ok(AltBundle {
        s,
        zeta,
        mu,
        mu_pm,
        psi,
        sigma,
        linking_rows,
        q_rows,
        target: q.clone(),
        eps_shift: opts.eps_shift,
    })
}

/// Group-sparse certificate for scalar targets: group `g` holds row `g` of
/// `(A, B)`. Every zeta is a sum of per-group WSOS pieces, each mu row lives
/// in its own group, and `-Q - eps_shift` is a sum of per-group WSOS terms.
#[derive(Clone, Debug)]
pub struct SparseBundle {
    /// `zeta[(t * n + k) * n + g]` is the group-`g` piece of `(zeta+, zeta-)_tk`.
    pub zeta: Vec<(Wsos, Wsos)>,
    pub mu: Vec<FreeMatrix>,
    pub sigma: Vec<Wsos>,
    pub linking_rows: Vec<usize>,
    pub q_rows: Vec<usize>,
}

impl SparseBundle {
    pub fn max_gram(&self) -> usize {
        self.zeta
            .iter()
            .flat_map(|(a, b)| a.gram_blocks().chain(b.gram_blocks()))
            .chain(self.sigma.iter().flat_map(|w| w.gram_blocks()))
            .map(|g| g.block.size)
            .max()
            .unwrap_or(0)
    }
}

/// `pis[g]`: Π restricted to group `g` (None for no-Π mode). The target must
/// be scalar.
pub fn build_alt_sparse(
    prog: &mut ConicProgram,
    q: &AffMatrix,
    traj: &Trajectory,
    sym: &PlantSymbols,
    opts: &AltOptions,
) -> Result<SparseBundle> {
    if q.size() != 1 {
        return Err(Error::Unsupported("the group-sparse certificate handles scalar targets only".into()));
    }
    traj.validate()?;
    if !traj.bounds.is_state_only() {
        return Err(Error::InvalidArgument("the group-sparse certificate supports measurement noise only".into()));
    }
    check_target(q, sym, opts.d)?;
    let (n, d) = (sym.n, opts.d);
    let t_len = traj.horizon();
    let groups: Vec<Vec<VarId>> = (0..n).map(|g| sym.row_group(g)).collect();
    let pis: Vec<(Vec<Poly>, Vec<Poly>)> = groups
        .iter()
        .map(|g| match &opts.pi {
            Some(pi) => {
                let p = project_pi(pi, g);
                (p.ineqs, p.eqs)
            }
            None => (Vec::new(), Vec::new()),
        })
        .collect();
    let mut bases: Vec<BasisCache> = groups.iter().map(|g| BasisCache::new(g.clone())).collect();
    let times: Vec<usize> = (1..=t_len).collect();
    let trans = transitions(sym, traj, &times);

    let mut zeta = Vec::with_capacity(t_len * n * n);
    for _ in 0..t_len * n {
        let tag = prog.new_tag();
        for g in 0..n {
            let (gi, hi) = &pis[g];
            zeta.push((
                Wsos::new(prog, &mut bases[g], gi, hi, d, 1, Some(tag))?,
                Wsos::new(prog, &mut bases[g], gi, hi, d, 1, Some(tag))?,
            ));
        }
    }
    let mut mu = Vec::with_capacity((t_len - 1) * n);
    for _ in 0..t_len - 1 {
        for b in bases.iter_mut() {
            let tag = prog.new_tag();
            mu.push(FreeMatrix::new(prog, b.get(2 * d - 1)?, 1, Some(tag)));
        }
    }
    let mut linking_rows = Vec::new();
    for t in 0..t_len {
        for k in 0..n {
            let mut id = Identity::new(1);
            for g in 0..n {
                let (zp, zm) = &zeta[(t * n + k) * n + g];
                zp.add_to(&mut id, &one(), 1.0);
                zm.add_to(&mut id, &one(), -1.0);
            }
            if t + 1 < t_len {
                for j in 0..n {
                    if !sym.a[(j, k)].is_zero() {
                        id.add_free(&mu[t * n + j], &sym.a[(j, k)], -1.0);
                    }
                }
            }
            if t > 0 {
                id.add_free(&mu[(t - 1) * n + k], &one(), 1.0);
            }
            plant_only(&id)?;
            let tag = prog.new_tag();
            linking_rows.extend(id.emit(prog, Some(tag))?);
        }
    }
    let sigma_tag = prog.new_tag();
    let mut sigma = Vec::with_capacity(n);
    for g in 0..n {
        let (gi, hi) = &pis[g];
        sigma.push(Wsos::new(prog, &mut bases[g], gi, hi, d, 1, Some(sigma_tag))?);
    }
    let mut id = Identity::new(1);
    id.add_matrix(q, &one(), 1.0);
    for t in 0..t_len {
        let eps = traj.bounds.eps_x.at(t);
        for k in 0..n {
            for g in 0..n {
                let (zp, zm) = &zeta[(t * n + k) * n + g];
                zp.add_to(&mut id, &one(), -eps);
                zm.add_to(&mut id, &one(), -eps);
            }
        }
    }
    for (t, tr) in trans.iter().enumerate() {
        for i in 0..n {
            id.add_free(&mu[t * n + i], &tr.h[i], -1.0);
        }
    }
    id.add_identity(-opts.eps_shift, &one());
    for w in &sigma {
        w.add_to(&mut id, &one(), -1.0);
    }
    plant_only(&id)?;
    let q_rows = id.emit(prog, Some(sigma_tag))?;
    Ok(SparseBundle { zeta, mu, sigma, linking_rows, q_rows })
}

/// Which alternatives program a size report describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AltVariant {
    Measurement,
    AllNoise,
    Sparse,
}

/// Sizes of one alternatives certificate (no-Π mode), per the degree budget
/// above: zeta and sigma Grams on degree-`d` bases, mu free of degree `2d-1`.
pub fn alt_gram_report(variant: AltVariant, n: usize, m: usize, t: usize, d: u32, s: usize) -> GramReport {
    let d = d as usize;
    let nu = s * (s + 1) / 2;
    let mut r = GramReport::default();
    match variant {
        AltVariant::Measurement | AltVariant::AllNoise => {
            let pa = n * (n + m);
            r.push(Role::Target, 1, nu * binomial(pa + 2 * d, 2 * d));
            r.push(Role::Sigma0, 1, s * binomial(pa + d, d));
            let sos = match variant {
                AltVariant::Measurement => 2 * n * t,
                _ => 2 * n * t + 2 * (n + m) * (t - 1),
            };
            r.push(Role::SigmaI, sos, s * binomial(pa + d, d));
            r.push(Role::Mu, n * (t - 1), nu * binomial(pa + 2 * d - 1, 2 * d - 1));
        }
        AltVariant::Sparse => {
            let pg = n + m;
            r.push(Role::Target, 1, binomial(n * (n + m) + 2 * d, 2 * d));
            r.push(Role::Sigma0, n, binomial(pg + d, d));
            r.push(Role::SigmaI, 2 * n * t * n, binomial(pg + d, d));
            r.push(Role::Mu, n * (t - 1), binomial(pg + 2 * d - 1, 2 * d - 1));
        }
    }
    r
}
