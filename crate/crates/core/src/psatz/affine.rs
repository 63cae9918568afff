//! Polynomials whose coefficients are affine in conic decision variables.

use std::collections::BTreeMap;

use crate::polyalg::{Monomial, Poly, PolyMatrix, VarId};

/// `constant + sum coeff * x[var]`; repeated variables are allowed and merged
/// when the expression becomes a program row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn zero() -> Self {
        Affine::default()
    }

    pub fn constant(c: f64) -> Self {
        Affine { constant: c, terms: Vec::new() }
    }

    pub fn var(v: usize) -> Self {
        Affine { constant: 0.0, terms: vec![(v, 1.0)] }
    }

    pub fn scaled_var(v: usize, c: f64) -> Self {
        Affine { constant: 0.0, terms: vec![(v, c)] }
    }

    pub fn add_scaled(&mut self, other: &Affine, s: f64) {
        if s == 0.0 {
            return;
        }
        self.constant += s * other.constant;
        self.terms.extend(other.terms.iter().map(|(v, c)| (*v, c * s)));
    }

    pub fn scale(&self, s: f64) -> Affine {
        let mut a = Affine::zero();
        a.add_scaled(self, s);
        a
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|(_, c)| *c == 0.0)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * x[*v]).sum::<f64>()
    }

    /// Merges repeated variables and drops zeros.
    pub fn compact(&mut self) {
        self.terms.sort_by_key(|(v, _)| *v);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match out.last_mut() {
                Some((lv, lc)) if *lv == v => *lc += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|(_, c)| *c != 0.0);
        self.terms = out;
    }
}

/// Polynomial in plant/noise symbols with affine decision coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffPoly {
    terms: BTreeMap<Monomial, Affine>,
}

impl AffPoly {
    pub fn zero() -> Self {
        AffPoly::default()
    }

    pub fn from_poly(p: &Poly) -> Self {
        let mut a = AffPoly::zero();
        a.add_poly(p, 1.0);
        a
    }

    pub fn constant(c: f64) -> Self {
        AffPoly::from_affine(Affine::constant(c))
    }

    pub fn from_affine(a: Affine) -> Self {
        let mut p = AffPoly::zero();
        p.terms.insert(Monomial::one(), a);
        p
    }

    /// Decision variable `v` times the polynomial `p`.
    pub fn var_times(v: usize, p: &Poly) -> Self {
        let mut a = AffPoly::zero();
        a.add_affine_times(&Affine::var(v), p);
        a
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Affine)> {
        self.terms.iter()
    }

    pub fn add_term(&mut self, m: Monomial, a: &Affine, s: f64) {
        self.terms.entry(m).or_default().add_scaled(a, s);
    }

    pub fn add_poly(&mut self, p: &Poly, s: f64) {
        for (m, c) in p.terms() {
            self.terms.entry(m.clone()).or_default().constant += s * c;
        }
    }

    /// self += a * p
    pub fn add_affine_times(&mut self, a: &Affine, p: &Poly) {
        for (m, c) in p.terms() {
            self.add_term(m.clone(), a, c);
        }
    }

    pub fn add(&mut self, other: &AffPoly, s: f64) {
        for (m, a) in &other.terms {
            self.add_term(m.clone(), a, s);
        }
    }

    /// Product with a constant-coefficient polynomial.
    pub fn mul_poly(&self, p: &Poly) -> AffPoly {
        let mut out = AffPoly::zero();
        for (m1, a) in &self.terms {
            for (m2, c) in p.terms() {
                out.add_term(m1.mul(m2), a, c);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> AffPoly {
        let mut out = AffPoly::zero();
        out.add(self, s);
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().filter(|(_, a)| !a.terms.is_empty() || a.constant != 0.0).map(|(m, _)| m.degree()).max().unwrap_or(0)
    }

    pub fn symbols(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self.terms.keys().flat_map(|m| m.vars().collect::<Vec<_>>()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Substitutes decision values.
    pub fn at(&self, x: &[f64]) -> Poly {
        Poly::from_terms(self.terms.iter().map(|(m, a)| (m.clone(), a.evaluate(x))))
    }

    /// Substitutes values for some symbols, keeping decision coefficients.
    pub fn substitute_values(&self, values: &std::collections::HashMap<VarId, f64>) -> AffPoly {
        let mut out = AffPoly::zero();
        for (m, a) in &self.terms {
            let mut c = 1.0;
            let mut keep = Vec::new();
            for &(v, e) in m.factors() {
                match values.get(&v) {
                    Some(x) => c *= x.powi(e as i32),
                    None => keep.push((v, e)),
                }
            }
            out.add_term(Monomial::from_factors(keep), a, c);
        }
        out
    }
}

impl From<&Poly> for AffPoly {
    fn from(p: &Poly) -> Self {
        AffPoly::from_poly(p)
    }
}

/// Symmetric matrix of `AffPoly`, upper triangle stored.
#[derive(Clone, Debug, PartialEq)]
pub struct AffMatrix {
    size: usize,
    upper: Vec<AffPoly>,
}

impl AffMatrix {
    pub fn zeros(size: usize) -> Self {
        AffMatrix { size, upper: vec![AffPoly::zero(); size * (size + 1) / 2] }
    }

    pub fn scalar(p: AffPoly) -> Self {
        AffMatrix { size: 1, upper: vec![p] }
    }

    pub fn from_poly_matrix(m: &PolyMatrix) -> Self {
        let mut out = AffMatrix::zeros(m.size());
        for (i, j, p) in m.entries() {
            *out.get_mut(i, j) = AffPoly::from_poly(p);
        }
        out
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> &AffPoly {
        &self.upper[crate::polyalg::packed_index(self.size, i, j)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut AffPoly {
        &mut self.upper[crate::polyalg::packed_index(self.size, i, j)]
    }

    /// Entries in packed order: (i, j, entry) with i <= j.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &AffPoly)> {
        let s = self.size;
        (0..s).flat_map(move |i| (i..s).map(move |j| (i, j))).zip(self.upper.iter()).map(|((i, j), p)| (i, j, p))
    }

    pub fn degree(&self) -> u32 {
        self.upper.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    pub fn symbols(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self.upper.iter().flat_map(|p| p.symbols()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn at(&self, x: &[f64]) -> PolyMatrix {
        let mut m = PolyMatrix::zeros(self.size);
        for (i, j, p) in self.entries() {
            m.set(i, j, p.at(x));
        }
        m
    }

    pub fn substitute_values(&self, values: &std::collections::HashMap<VarId, f64>) -> AffMatrix {
        AffMatrix { size: self.size, upper: self.upper.iter().map(|p| p.substitute_values(values)).collect() }
    }
}

/// Rectangular matrix of affine decision expressions (K, Y, S, Z, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Affine>,
}

impl DecisionMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Affine) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DecisionMatrix { rows, cols, data }
    }

    pub fn constant(m: &nalgebra::DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| Affine::constant(m[(i, j)]))
    }

    pub fn get(&self, i: usize, j: usize) -> &Affine {
        &self.data[i * self.cols + j]
    }

    pub fn value(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).evaluate(x))
    }

    /// Constant matrix times decisions: `C * self`.
    pub fn left_mul(&self, c: &nalgebra::DMatrix<f64>) -> DecisionMatrix {
        DecisionMatrix::from_fn(c.nrows(), self.cols, |i, j| {
            let mut a = Affine::zero();
            for k in 0..self.rows {
                a.add_scaled(self.get(k, j), c[(i, k)]);
            }
            a
        })
    }

    pub fn add(&self, other: &DecisionMatrix, s: f64) -> DecisionMatrix {
        DecisionMatrix::from_fn(self.rows, self.cols, |i, j| {
            let mut a = self.get(i, j).clone();
            a.add_scaled(other.get(i, j), s);
            a
        })
    }

    pub fn transpose(&self) -> DecisionMatrix {
        DecisionMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }
}

/// `P * D` for a polynomial matrix `P` (e.g. the symbolic A) and decisions `D`.
pub fn poly_times_decisions(p: &crate::polyalg::PolyRect, d: &DecisionMatrix) -> Vec<Vec<AffPoly>> {
    let (r, k, c) = (p.rows, p.cols, d.cols);
    assert_eq!(k, d.rows, "inner dimensions differ");
    (0..r)
        .map(|i| {
            (0..c)
                .map(|j| {
                    let mut e = AffPoly::zero();
                    for l in 0..k {
                        e.add_affine_times(d.get(l, j), &p[(i, l)]);
                    }
                    e
                })
                .collect()
        })
        .collect()
}
