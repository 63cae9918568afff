use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use super::var::VarId;
use crate::error::{Error, Result};

/// Product of variables with positive exponents, stored sorted by `VarId`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    factors: Vec<(VarId, u32)>,
}

impl Monomial {
    pub fn one() -> Self {
        Monomial { factors: Vec::new() }
    }

    pub fn var(v: VarId) -> Self {
        Monomial { factors: vec![(v, 1)] }
    }

    pub fn from_factors<I: IntoIterator<Item = (VarId, u32)>>(it: I) -> Self {
        let mut f: Vec<(VarId, u32)> = it.into_iter().filter(|(_, e)| *e > 0).collect();
        f.sort_by_key(|(v, _)| *v);
        let mut out: Vec<(VarId, u32)> = Vec::with_capacity(f.len());
        for (v, e) in f {
            match out.last_mut() {
                Some((lv, le)) if *lv == v => *le += e,
                _ => out.push((v, e)),
            }
        }
        Monomial { factors: out }
    }

    pub fn factors(&self) -> &[(VarId, u32)] {
        &self.factors
    }

    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|(_, e)| e).sum()
    }

    pub fn is_one(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn exponent(&self, v: &VarId) -> u32 {
        self.factors
            .binary_search_by_key(v, |(w, _)| *w)
            .map(|k| self.factors[k].1)
            .unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.factors, &other.factors);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial { factors: out }
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.factors.iter().map(|(v, _)| *v)
    }

    pub fn evaluate(&self, at: &HashMap<VarId, f64>) -> Result<f64> {
        let mut acc = 1.0;
        for (v, e) in &self.factors {
            let x = at
                .get(v)
                .ok_or_else(|| Error::InvalidArgument(format!("no value for {v}")))?;
            acc *= x.powi(*e as i32);
        }
        Ok(acc)
    }

    /// Drops the factors for which `keep` is false.
    pub fn retain(&self, mut keep: impl FnMut(&VarId) -> bool) -> Monomial {
        Monomial { factors: self.factors.iter().copied().filter(|(v, _)| keep(v)).collect() }
    }
}

/// Graded order: lower degree first; within a degree the monomial carrying the
/// larger power of the earliest variable comes first, so a basis reads
/// `1, x1, x2, x1^2, x1 x2, x2^2`.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        let d = self.degree().cmp(&other.degree());
        if d != Ordering::Equal {
            return d;
        }
        let (a, b) = (&self.factors, &other.factors);
        let (mut i, mut j) = (0, 0);
        loop {
            match (a.get(i), b.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Less,
                (None, Some(_)) => return Ordering::Greater,
                (Some(&(va, ea)), Some(&(vb, eb))) => match va.cmp(&vb) {
                    Ordering::Less => return Ordering::Less,
                    Ordering::Greater => return Ordering::Greater,
                    Ordering::Equal => {
                        if ea != eb {
                            return eb.cmp(&ea);
                        }
                        i += 1;
                        j += 1;
                    }
                },
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return f.write_str("1");
        }
        for (k, (v, e)) in self.factors.iter().enumerate() {
            if k > 0 {
                f.write_str("*")?;
            }
            if *e == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials of total degree at most `d` in `vars`, in graded order.
pub fn monomial_basis(vars: &[VarId], d: u32) -> Result<Vec<Monomial>> {
    let mut sorted = vars.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate variable in basis request".into()));
    }
    let mut out = vec![Monomial::one()];
    let mut layer: Vec<(Monomial, usize)> = vec![(Monomial::one(), 0)];
    for _ in 0..d {
        let mut next = Vec::new();
        for (mono, start) in &layer {
            for (k, v) in sorted.iter().enumerate().skip(*start) {
                next.push((mono.mul(&Monomial::var(*v)), k));
            }
        }
        out.extend(next.iter().map(|(m, _)| m.clone()));
        layer = next;
    }
    out.sort();
    Ok(out)
}

/// Monomials of exactly degree `d`.
pub fn homogeneous_monomials(vars: &[VarId], d: u32) -> Result<Vec<Monomial>> {
    Ok(monomial_basis(vars, d)?.into_iter().filter(|m| m.degree() == d).collect())
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}
