//! Positivstellensatz certificates compiled into conic programs.
//!
//! A target `P(x)` (scalar or symmetric matrix, with coefficients affine in
//! decision variables) is certified over `K = {g >= 0, h = 0}` by
//! `P - eps I = sigma0 + sum sigma_i g_i + sum phi_j h_j`, matched
//! coefficient-wise.

mod affine;
mod identity;

use serde::{Deserialize, Serialize};

pub use affine::{poly_times_decisions, AffMatrix, AffPoly, Affine, DecisionMatrix};
pub use identity::{eq_degree, ineq_half_degree, Basis, BasisCache, FreeMatrix, GramBlock, Identity, Wsos};

use crate::conic::ConicProgram;
use crate::error::{Error, Result};
use crate::polyalg::{binomial, Monomial, Poly, PolyMatrix, VarId};
use crate::semialg::SemiAlgSet;

pub const DEFAULT_EPS_SHIFT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateKind {
    PutinarScalar,
    SchererMatrix,
    ScalarizedPmi,
}

#[derive(Clone, Debug)]
pub struct SosConstraint {
    pub target: AffMatrix,
    pub set: SemiAlgSet,
    pub degree: u32,
    pub kind: CertificateKind,
    pub eps_shift: f64,
}

impl SosConstraint {
    pub fn new(target: AffMatrix, set: SemiAlgSet, degree: u32) -> Self {
        let kind = if target.size() == 1 { CertificateKind::PutinarScalar } else { CertificateKind::SchererMatrix };
        SosConstraint { target, set, degree, kind, eps_shift: DEFAULT_EPS_SHIFT }
    }

    pub fn with_kind(mut self, kind: CertificateKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_eps_shift(mut self, eps: f64) -> Self {
        self.eps_shift = eps;
        self
    }
}

/// A compiled certificate: the multipliers and the rows matching coefficients.
#[derive(Clone, Debug)]
pub struct Compiled {
    /// The constraint actually compiled (after scalarization, if any).
    pub effective: SosConstraint,
    pub wsos: Wsos,
    pub rows: Vec<usize>,
    pub tag: u32,
}

impl Compiled {
    /// Largest coefficient mismatch between `P(x) - eps I` and the expanded
    /// certificate at a primal point.
    pub fn reconstruction_error(&self, x: &[f64]) -> f64 {
        let c = &self.effective;
        let s = c.target.size();
        let lhs = c.target.at(x).add(&PolyMatrix::identity(s).scale(-c.eps_shift));
        let rhs = self.wsos.value(x);
        lhs.entries().map(|(i, j, p)| p.max_abs_diff(rhs.get(i, j))).fold(0.0, f64::max)
    }

    /// Gram matrices of the SOS multipliers (sigma0 first).
    pub fn grams<'a>(&'a self, r: &'a crate::conic::SolveResult) -> impl Iterator<Item = nalgebra::DMatrix<f64>> + 'a {
        self.wsos.gram_blocks().map(move |g| r.psd_value(&g.block))
    }
}

fn check(c: &SosConstraint) -> Result<()> {
    c.set.validate()?;
    let declared: std::collections::BTreeSet<VarId> = c.set.vars.iter().copied().collect();
    if let Some(v) = c.target.symbols().into_iter().find(|v| !declared.contains(v)) {
        return Err(Error::InvalidArgument(format!("target uses {v}, which is not a symbol of the set")));
    }
    if c.target.degree() > 2 * c.degree {
        return Err(Error::InvalidArgument(format!(
            "degree {} is too small for a target of degree {}",
            c.degree,
            c.target.degree()
        )));
    }
    if c.eps_shift < 0.0 {
        return Err(Error::InvalidArgument("eps_shift must be nonnegative".into()));
    }
    Ok(())
}

fn compile_with(prog: &mut ConicProgram, c: SosConstraint) -> Result<Compiled> {
    check(&c)?;
    let s = c.target.size();
    let tag = prog.new_tag();
    let mut bases = BasisCache::new(c.set.vars.clone());
    let wsos = Wsos::new(prog, &mut bases, &c.set.ineqs, &c.set.eqs, c.degree, s, Some(tag))?;
    let mut id = Identity::new(s);
    let one = Poly::constant(1.0);
    id.add_matrix(&c.target, &one, 1.0);
    id.add_identity(-c.eps_shift, &one);
    wsos.add_to(&mut id, &one, -1.0);
    let rows = id.emit(prog, Some(tag))?;
    Ok(Compiled { effective: c, wsos, rows, tag })
}

/// Scalar target over a set.
pub fn compile_putinar(prog: &mut ConicProgram, c: &SosConstraint) -> Result<Compiled> {
    if c.target.size() != 1 {
        return Err(Error::InvalidArgument("Putinar certificates need a scalar target".into()));
    }
    compile_with(prog, c.clone())
}

/// Matrix target with SOS-matrix multipliers of the same size.
pub fn compile_scherer(prog: &mut ConicProgram, c: &SosConstraint) -> Result<Compiled> {
    compile_with(prog, c.clone())
}

/// Matrix target handled as the scalar `y' P y` over `K x {|y|^2 = 1}`.
pub fn compile_scalarized(prog: &mut ConicProgram, c: &SosConstraint) -> Result<Compiled> {
    let scalar = scalarize(c)?;
    compile_with(prog, scalar)
}

/// The scalarized constraint: auxiliary symbols `y`, target
/// `y'(P - eps I)y` and the extra equality `|y|^2 - 1 = 0`.
pub fn scalarize(c: &SosConstraint) -> Result<SosConstraint> {
    let s = c.target.size();
    let base = c.set.vars.iter().filter(|v| v.kind == crate::polyalg::VarKind::AUX).count();
    let y: Vec<VarId> = (0..s).map(|k| VarId::aux(base + k)).collect();
    let mut t = AffPoly::zero();
    for (i, j, p) in c.target.entries() {
        let mono = Poly::monomial(Monomial::from_factors([(y[i], 1), (y[j], 1)]), if i == j { 1.0 } else { 2.0 });
        t.add(&p.mul_poly(&mono), 1.0);
    }
    let mut sq = Poly::zero();
    for v in &y {
        sq += &Poly::var(*v).pow(2);
    }
    t.add_poly(&sq, -c.eps_shift);
    let mut set = c.set.clone();
    set.vars.extend(y);
    set.eqs.push(sq - Poly::constant(1.0));
    set.name = format!("{}*sphere", set.name);
    let out = SosConstraint {
        target: AffMatrix::scalar(t),
        set,
        degree: c.degree,
        kind: CertificateKind::PutinarScalar,
        eps_shift: 0.0,
    };
    check(&out)?;
    Ok(out)
}

pub fn compile(prog: &mut ConicProgram, c: &SosConstraint) -> Result<Compiled> {
    match c.kind {
        CertificateKind::PutinarScalar => compile_putinar(prog, c),
        CertificateKind::SchererMatrix => compile_scherer(prog, c),
        CertificateKind::ScalarizedPmi => compile_scalarized(prog, c),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Coefficient-matching equalities of one certificate.
    Target,
    Sigma0,
    SigmaI,
    Mu,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Target => "target",
            Role::Sigma0 => "sigma0",
            Role::SigmaI => "sigma_i",
            Role::Mu => "mu",
        }
    }
}

/// One kind of multiplier: `count` instances of `size` (Gram side for SOS
/// roles, number of free coefficients for `Mu`, equality count for `Target`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramEntry {
    pub role: Role,
    pub count: usize,
    pub size: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramReport {
    pub entries: Vec<GramEntry>,
}

impl GramReport {
    pub fn push(&mut self, role: Role, count: usize, size: usize) {
        if count > 0 {
            self.entries.push(GramEntry { role, count, size });
        }
    }

    /// Largest size for a role (0 if absent).
    pub fn size(&self, role: Role) -> usize {
        self.entries.iter().filter(|e| e.role == role).map(|e| e.size).max().unwrap_or(0)
    }

    pub fn count(&self, role: Role) -> usize {
        self.entries.iter().filter(|e| e.role == role).map(|e| e.count).sum()
    }

    /// The four headline numbers (equalities, sigma0, sigma_i, mu).
    pub fn headline(&self) -> [usize; 4] {
        [self.size(Role::Target), self.size(Role::Sigma0), self.size(Role::SigmaI), self.size(Role::Mu)]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["role", "count", "size"])?;
        for e in &self.entries {
            w.write_record([e.role.label().to_string(), e.count.to_string(), e.size.to_string()])?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .map_err(|e| Error::Parse(e.to_string()))
    }

    /// Sizes of a Putinar/Scherer certificate over `p` symbols.
    pub fn putinar(p: usize, d: u32, s: usize, ineq_degrees: &[u32], eq_degrees: &[u32]) -> GramReport {
        let nu = s * (s + 1) / 2;
        let d = d as usize;
        let mut r = GramReport::default();
        r.push(Role::Target, 1, nu * binomial(p + 2 * d, 2 * d));
        r.push(Role::Sigma0, 1, s * binomial(p + d, d));
        let mut by_size = std::collections::BTreeMap::<(Role, usize), usize>::new();
        for g in ineq_degrees {
            if let Some(h) = ineq_half_degree(d as u32, *g) {
                *by_size.entry((Role::SigmaI, s * binomial(p + h as usize, h as usize))).or_default() += 1;
            }
        }
        for h in eq_degrees {
            if let Some(e) = eq_degree(d as u32, *h) {
                *by_size.entry((Role::Mu, nu * binomial(p + e as usize, e as usize))).or_default() += 1;
            }
        }
        for ((role, size), count) in by_size {
            r.push(role, count, size);
        }
        r
    }
}

/// Sizes of a certificate without building it.
pub fn gram_report(c: &SosConstraint) -> Result<GramReport> {
    let c = match c.kind {
        CertificateKind::ScalarizedPmi => scalarize(c)?,
        _ => c.clone(),
    };
    let gi: Vec<u32> = c.set.ineqs.iter().map(|g| g.degree()).collect();
    let hj: Vec<u32> = c.set.eqs.iter().map(|h| h.degree()).collect();
    Ok(GramReport::putinar(c.set.vars.len(), c.degree, c.target.size(), &gi, &hj))
}

/// Symmetric matrix `[[a, b], [b', c]]` of decision expressions as a constant
/// `AffMatrix` (no symbols); used for plain LMIs.
pub fn block_lmi(blocks: &[Vec<Option<&DecisionMatrix>>]) -> Result<AffMatrix> {
    let k = blocks.len();
    let mut sizes = vec![0usize; k];
    for (i, row) in blocks.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Dimension("block LMI is not square".into()));
        }
        if let Some(m) = row[i] {
            sizes[i] = m.rows;
        }
    }
    let offsets: Vec<usize> = sizes.iter().scan(0, |acc, s| {
        let o = *acc;
        *acc += s;
        Some(o)
    }).collect();
    let n: usize = sizes.iter().sum();
    let mut out = AffMatrix::zeros(n);
    for (bi, row) in blocks.iter().enumerate() {
        for (bj, m) in row.iter().enumerate().skip(bi) {
            if let Some(m) = m {
                if m.rows != sizes[bi] || m.cols != sizes[bj] {
                    return Err(Error::Dimension(format!("block ({bi},{bj}) has the wrong shape")));
                }
                for i in 0..m.rows {
                    for j in 0..m.cols {
                        let (gi, gj) = (offsets[bi] + i, offsets[bj] + j);
                        if bi == bj && j < i {
                            continue;
                        }
                        *out.get_mut(gi, gj) = AffPoly::from_affine(m.get(i, j).clone());
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adds `M(x) >= 0` for a constant (symbol-free) affine matrix by tying each
/// entry to a fresh PSD block. Returns the block.
pub fn add_lmi(prog: &mut ConicProgram, m: &AffMatrix, tag: Option<u32>) -> Result<crate::conic::PsdBlock> {
    if !m.symbols().is_empty() {
        return Err(Error::InvalidArgument("add_lmi needs a symbol-free matrix".into()));
    }
    let blk = prog.add_psd(m.size());
    for (i, j, p) in m.entries() {
        let mut a = p.terms().find(|(mono, _)| mono.is_one()).map(|(_, a)| a.clone()).unwrap_or_default();
        a.terms.push((blk.var(i, j), -1.0));
        prog.add_row(a.terms, -a.constant, tag)?;
    }
    Ok(blk)
}
