//! Coefficient matching: polynomial-matrix identities turned into program rows.

use std::collections::HashMap;
use std::sync::Arc;

use super::affine::{AffMatrix, Affine};
use crate::conic::{ConicProgram, PsdBlock};
use crate::error::{Error, Result};
use crate::polyalg::{monomial_basis, packed_index, Monomial, Poly, PolyMatrix, VarId};

/// A monomial basis with its pairwise products cached.
#[derive(Debug)]
pub struct Basis {
    pub monomials: Vec<Monomial>,
    products: Vec<Monomial>,
}

impl Basis {
    pub fn new(vars: &[VarId], degree: u32) -> Result<Arc<Basis>> {
        Ok(Self::from_monomials(monomial_basis(vars, degree)?))
    }

    pub fn from_monomials(monomials: Vec<Monomial>) -> Arc<Basis> {
        let l = monomials.len();
        let mut products = Vec::with_capacity(l * (l + 1) / 2);
        for a in 0..l {
            for b in a..l {
                products.push(monomials[a].mul(&monomials[b]));
            }
        }
        Arc::new(Basis { monomials, products })
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    fn product(&self, a: usize, b: usize) -> &Monomial {
        &self.products[packed_index(self.len(), a, b)]
    }
}

/// An SOS matrix `v(x)' G v(x)` of size `s`: Gram index `a * s + k` pairs basis
/// monomial `a` with matrix row `k`.
#[derive(Clone, Debug)]
pub struct GramBlock {
    pub block: PsdBlock,
    pub basis: Arc<Basis>,
    pub s: usize,
}

impl GramBlock {
    pub fn new(prog: &mut ConicProgram, basis: Arc<Basis>, s: usize) -> Self {
        let block = prog.add_psd(basis.len() * s);
        GramBlock { block, basis, s }
    }

    /// Calls `f(monomial, slot, var, coeff)` for every Gram entry.
    fn for_each(&self, mut f: impl FnMut(&Monomial, usize, usize, f64)) {
        let (l, s) = (self.basis.len(), self.s);
        for a in 0..l {
            for b in a..l {
                let mono = self.basis.product(a, b);
                for k1 in 0..s {
                    let l0 = if a == b { k1 } else { 0 };
                    for l1 in l0..s {
                        let (i, j) = (a * s + k1, b * s + l1);
                        let c = if i != j && k1 == l1 { 2.0 } else { 1.0 };
                        f(mono, packed_index(s, k1, l1), self.block.var(i, j), c);
                    }
                }
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> PolyMatrix {
        let mut out = PolyMatrix::zeros(self.s);
        let s = self.s;
        let mut slots: Vec<Poly> = vec![Poly::zero(); s * (s + 1) / 2];
        self.for_each(|mono, slot, var, c| slots[slot].add_term(mono.clone(), c * x[var]));
        for i in 0..s {
            for j in i..s {
                out.set(i, j, std::mem::take(&mut slots[packed_index(s, i, j)]));
            }
        }
        out
    }
}

/// Symmetric matrix polynomial with free coefficients on a basis.
#[derive(Clone, Debug)]
pub struct FreeMatrix {
    /// Variable for (basis index a, packed slot p) at `a * nu + p`.
    pub vars: Vec<usize>,
    pub basis: Arc<Basis>,
    pub s: usize,
}

impl FreeMatrix {
    pub fn new(prog: &mut ConicProgram, basis: Arc<Basis>, s: usize, tag: Option<u32>) -> Self {
        let nu = s * (s + 1) / 2;
        let vars = prog.add_free(basis.len() * nu, tag);
        FreeMatrix { vars, basis, s }
    }

    pub fn nu(&self) -> usize {
        self.s * (self.s + 1) / 2
    }

    pub fn value(&self, x: &[f64]) -> PolyMatrix {
        let mut out = PolyMatrix::zeros(self.s);
        let nu = self.nu();
        for i in 0..self.s {
            for j in i..self.s {
                let p = packed_index(self.s, i, j);
                let poly = Poly::from_terms(
                    self.basis.monomials.iter().enumerate().map(|(a, m)| (m.clone(), x[self.vars[a * nu + p]])),
                );
                out.set(i, j, poly);
            }
        }
        out
    }
}

/// `sigma0 + sum sigma_k g_k + sum phi_j h_j`: an element of the truncated
/// quadratic module of a set, with matrix size `s`.
#[derive(Clone, Debug)]
pub struct Wsos {
    pub s: usize,
    pub sigma0: GramBlock,
    pub sigmas: Vec<(GramBlock, Poly)>,
    pub phis: Vec<(FreeMatrix, Poly)>,
}

/// Multiplier degree budget for a constraint of degree `deg` under a total
/// budget `2d`: half-degree `d - ceil(deg/2)` for inequalities.
pub fn ineq_half_degree(d: u32, deg: u32) -> Option<u32> {
    d.checked_sub(deg.div_ceil(2))
}

pub fn eq_degree(d: u32, deg: u32) -> Option<u32> {
    (2 * d).checked_sub(deg)
}

/// Caches bases by (degree) for one variable list.
pub struct BasisCache {
    vars: Vec<VarId>,
    cache: HashMap<u32, Arc<Basis>>,
}

impl BasisCache {
    pub fn new(vars: Vec<VarId>) -> Self {
        BasisCache { vars, cache: HashMap::new() }
    }

    pub fn vars(&self) -> &[VarId] {
        &self.vars
    }

    pub fn get(&mut self, degree: u32) -> Result<Arc<Basis>> {
        if let Some(b) = self.cache.get(&degree) {
            return Ok(b.clone());
        }
        let b = Basis::new(&self.vars, degree)?;
        self.cache.insert(degree, b.clone());
        Ok(b)
    }
}

impl Wsos {
    /// Declares the multipliers. Inequality multipliers whose degree budget is
    /// negative are omitted, as are equality multipliers.
    pub fn new(
        prog: &mut ConicProgram,
        bases: &mut BasisCache,
        ineqs: &[Poly],
        eqs: &[Poly],
        d: u32,
        s: usize,
        tag: Option<u32>,
    ) -> Result<Self> {
        let sigma0 = GramBlock::new(prog, bases.get(d)?, s);
        let mut sigmas = Vec::with_capacity(ineqs.len());
        for g in ineqs {
            if let Some(h) = ineq_half_degree(d, g.degree()) {
                sigmas.push((GramBlock::new(prog, bases.get(h)?, s), g.clone()));
            }
        }
        let mut phis = Vec::with_capacity(eqs.len());
        for h in eqs {
            if let Some(e) = eq_degree(d, h.degree()) {
                phis.push((FreeMatrix::new(prog, bases.get(e)?, s, tag), h.clone()));
            }
        }
        Ok(Wsos { s, sigma0, sigmas, phis })
    }

    /// identity += scale * mult * self
    pub fn add_to(&self, id: &mut Identity, mult: &Poly, scale: f64) {
        id.add_gram(&self.sigma0, mult, scale);
        for (g, p) in &self.sigmas {
            id.add_gram(g, &(p * mult), scale);
        }
        for (f, p) in &self.phis {
            id.add_free(f, &(p * mult), scale);
        }
    }

    pub fn value(&self, x: &[f64]) -> PolyMatrix {
        let mut out = self.sigma0.value(x);
        for (g, p) in &self.sigmas {
            out = out.add(&g.value(x).map(|e| e * p));
        }
        for (f, p) in &self.phis {
            out = out.add(&f.value(x).map(|e| e * p));
        }
        out
    }

    pub fn gram_blocks(&self) -> impl Iterator<Item = &GramBlock> {
        std::iter::once(&self.sigma0).chain(self.sigmas.iter().map(|(g, _)| g))
    }
}

/// Accumulates `sum (terms) = 0` for an `s x s` symmetric polynomial matrix,
/// one affine expression per (monomial, packed entry).
#[derive(Debug)]
pub struct Identity {
    s: usize,
    map: HashMap<Monomial, Vec<Affine>>,
}

impl Identity {
    pub fn new(s: usize) -> Self {
        Identity { s, map: HashMap::new() }
    }

    pub fn size(&self) -> usize {
        self.s
    }

    fn slots(&mut self, m: Monomial) -> &mut Vec<Affine> {
        let nu = self.s * (self.s + 1) / 2;
        self.map.entry(m).or_insert_with(|| vec![Affine::zero(); nu])
    }

    pub fn add_matrix(&mut self, t: &AffMatrix, mult: &Poly, scale: f64) {
        assert_eq!(t.size(), self.s, "identity size mismatch");
        let s = self.s;
        for (i, j, p) in t.entries() {
            let slot = packed_index(s, i, j);
            for (m, a) in p.terms() {
                for (m2, c) in mult.terms() {
                    self.slots(m.mul(m2))[slot].add_scaled(a, c * scale);
                }
            }
        }
    }

    /// Adds `c * I` (times `mult`).
    pub fn add_identity(&mut self, c: f64, mult: &Poly) {
        let s = self.s;
        for (m2, v) in mult.terms() {
            let slots = self.slots(m2.clone());
            for i in 0..s {
                slots[packed_index(s, i, i)].constant += c * v;
            }
        }
    }

    pub fn add_gram(&mut self, g: &GramBlock, mult: &Poly, scale: f64) {
        assert_eq!(g.s, self.s, "identity size mismatch");
        let mult: Vec<(Monomial, f64)> = mult.terms().map(|(m, c)| (m.clone(), c * scale)).collect();
        let map = &mut self.map;
        let nu = self.s * (self.s + 1) / 2;
        g.for_each(|mono, slot, var, c| {
            for (m2, v) in &mult {
                let key = if m2.is_one() { mono.clone() } else { mono.mul(m2) };
                map.entry(key).or_insert_with(|| vec![Affine::zero(); nu])[slot].terms.push((var, c * v));
            }
        });
    }

    pub fn add_free(&mut self, f: &FreeMatrix, mult: &Poly, scale: f64) {
        assert_eq!(f.s, self.s, "identity size mismatch");
        let nu = f.nu();
        for (a, mono) in f.basis.monomials.iter().enumerate() {
            for (m2, c) in mult.terms() {
                let slots = self.slots(mono.mul(m2));
                for (p, slot) in slots.iter_mut().enumerate() {
                    slot.terms.push((f.vars[a * nu + p], c * scale));
                }
            }
        }
    }

    pub fn add_wsos(&mut self, w: &Wsos, mult: &Poly, scale: f64) {
        w.add_to(self, mult, scale);
    }

    pub fn monomials(&self) -> impl Iterator<Item = &Monomial> {
        self.map.keys()
    }

    /// Fails if a monomial mentions a symbol rejected by `allowed`.
    pub fn check_symbols(&self, allowed: impl Fn(&VarId) -> bool) -> Result<()> {
        for m in self.map.keys() {
            if let Some(v) = m.vars().find(|v| !allowed(v)) {
                return Err(Error::InvalidArgument(format!("identity contains disallowed symbol {v} in {m}")));
            }
        }
        Ok(())
    }

    /// Emits one row per (monomial, entry) in sorted monomial order and
    /// returns the row indices.
    pub fn emit(self, prog: &mut ConicProgram, tag: Option<u32>) -> Result<Vec<usize>> {
        let mut keys: Vec<(Monomial, Vec<Affine>)> = self.map.into_iter().collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rows = Vec::new();
        for (_, slots) in keys {
            for mut a in slots {
                a.compact();
                if a.terms.is_empty() && a.constant.abs() <= 1e-12 {
                    continue;
                }
                rows.push(prog.add_row(a.terms, -a.constant, tag)?);
            }
        }
        Ok(rows)
    }
}
