use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::monomial::Monomial;
use super::var::VarId;
use crate::error::{Error, Result};

/// Coefficients with magnitude below this are dropped after every operation.
pub const PRUNE_TOL: f64 = 1e-12;

/// Sparse multivariate polynomial with real coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    terms: BTreeMap<Monomial, f64>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut p = Poly::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn var(v: VarId) -> Self {
        Poly::monomial(Monomial::var(v), 1.0)
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let mut p = Poly::zero();
        p.add_term(m, c);
        p
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, f64)>>(it: I) -> Self {
        let mut p = Poly::zero();
        for (m, c) in it {
            p.add_term(m, c);
        }
        p
    }

    /// Accumulates `c * m`, pruning the result.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                if c.abs() >= PRUNE_TOL {
                    v.insert(c);
                }
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().abs() < PRUNE_TOL {
                    o.remove();
                }
            }
        }
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coeff(&Monomial::one())
    }

    /// Total degree; the zero polynomial reports 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn vars(&self) -> BTreeSet<VarId> {
        self.terms.keys().flat_map(|m| m.vars()).collect()
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect() }.prune()
    }

    pub fn mul_monomial(&self, mono: &Monomial, c: f64) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, v)| (m.mul(mono), v * c)).collect() }.prune()
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut acc = Poly::constant(1.0);
        for _ in 0..e {
            acc = &acc * self;
        }
        acc
    }

    pub fn evaluate(&self, at: &HashMap<VarId, f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            acc += c * m.evaluate(at)?;
        }
        Ok(acc)
    }

    /// Replaces every bound variable by its polynomial; unbound ones stay.
    pub fn substitute(&self, bindings: &HashMap<VarId, Poly>) -> Poly {
        let mut out = Poly::zero();
        let mut cache: HashMap<(VarId, u32), Poly> = HashMap::new();
        for (m, c) in &self.terms {
            let mut acc = Poly::constant(*c);
            let mut rest = Vec::new();
            for &(v, e) in m.factors() {
                match bindings.get(&v) {
                    Some(p) => {
                        let pw = cache.entry((v, e)).or_insert_with(|| p.pow(e));
                        acc = &acc * &*pw;
                    }
                    None => rest.push((v, e)),
                }
            }
            if !rest.is_empty() {
                acc = acc.mul_monomial(&Monomial::from_factors(rest), 1.0);
            }
            out += &acc;
        }
        out
    }

    /// Removes the listed variables by substituting the given constants.
    pub fn substitute_values(&self, values: &HashMap<VarId, f64>) -> Poly {
        let b: HashMap<VarId, Poly> = values.iter().map(|(k, v)| (*k, Poly::constant(*v))).collect();
        self.substitute(&b)
    }

    /// Coefficient-wise distance in the max norm.
    pub fn max_abs_diff(&self, other: &Poly) -> f64 {
        let d = self - other;
        d.terms.values().fold(0.0f64, |a, c| a.max(c.abs()))
    }

    /// Groups terms by their part in the variables selected by `outer`:
    /// returns `outer monomial -> polynomial in the remaining variables`.
    pub fn split_by(&self, outer: impl Fn(&VarId) -> bool) -> BTreeMap<Monomial, Poly> {
        let mut out: BTreeMap<Monomial, Poly> = BTreeMap::new();
        for (m, c) in &self.terms {
            let o = m.retain(|v| outer(v));
            let r = m.retain(|v| !outer(v));
            out.entry(o).or_default().add_term(r, *c);
        }
        out.retain(|_, p| !p.is_zero());
        out
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (k, (m, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                f.write_str(" + ")?;
            }
            if m.is_one() {
                write!(f, "{c:.16e}")?;
            } else {
                write!(f, "{c:.16e}*{m}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Poly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "0" {
            return Ok(Poly::zero());
        }
        let mut p = Poly::zero();
        for term in s.split(" + ") {
            let mut parts = term.split('*');
            let cs = parts.next().ok_or_else(|| Error::Parse(format!("empty term in `{s}`")))?;
            let c: f64 = cs.parse().map_err(|_| Error::Parse(format!("bad coefficient `{cs}`")))?;
            let mut factors = Vec::new();
            for f in parts {
                let (v, e) = match f.split_once('^') {
                    Some((v, e)) => {
                        (v, e.parse::<u32>().map_err(|_| Error::Parse(format!("bad exponent `{f}`")))?)
                    }
                    None => (f, 1),
                };
                factors.push((v.parse::<VarId>()?, e));
            }
            p.add_term(Monomial::from_factors(factors), c);
        }
        Ok(p)
    }
}

impl Serialize for Poly {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Poly {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<f64> for Poly {
    fn from(c: f64) -> Self {
        Poly::constant(c)
    }
}

impl From<VarId> for Poly {
    fn from(v: VarId) -> Self {
        Poly::var(v)
    }
}

impl AddAssign<&Poly> for Poly {
    fn add_assign(&mut self, rhs: &Poly) {
        for (m, c) in &rhs.terms {
            *self.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
    }
}

impl SubAssign<&Poly> for Poly {
    fn sub_assign(&mut self, rhs: &Poly) {
        for (m, c) in &rhs.terms {
            *self.terms.entry(m.clone()).or_insert(0.0) -= c;
        }
        self.terms.retain(|_, c| c.abs() >= PRUNE_TOL);
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Add for Poly {
    type Output = Poly;
    fn add(mut self, rhs: Poly) -> Poly {
        self += &rhs;
        self
    }
}

impl Sub for Poly {
    type Output = Poly;
    fn sub(mut self, rhs: Poly) -> Poly {
        self -= &rhs;
        self
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Neg for Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                *acc.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        Poly { terms: acc }.prune()
    }
}

impl Mul for Poly {
    type Output = Poly;
    fn mul(self, rhs: Poly) -> Poly {
        &self * &rhs
    }
}

impl Mul<f64> for &Poly {
    type Output = Poly;
    fn mul(self, rhs: f64) -> Poly {
        self.scale(rhs)
    }
}
