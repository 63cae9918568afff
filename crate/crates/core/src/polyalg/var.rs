use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variable family. The declaration order is the ordering used by monomials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarKind {
    A,
    B,
    DX,
    DU,
    W,
    AUX,
}

impl VarKind {
    pub fn tag(self) -> &'static str {
        match self {
            VarKind::A => "A",
            VarKind::B => "B",
            VarKind::DX => "DX",
            VarKind::DU => "DU",
            VarKind::W => "W",
            VarKind::AUX => "AUX",
        }
    }

    pub fn is_plant(self) -> bool {
        matches!(self, VarKind::A | VarKind::B)
    }

    pub fn is_noise(self) -> bool {
        matches!(self, VarKind::DX | VarKind::DU | VarKind::W)
    }
}

/// An indexed symbol. Indices are zero based; `sys` selects the subsystem of
/// a switched plant and is 0 everywhere else.
///
/// For `A`/`B` the pair is (row, col); for `DX`/`DU`/`W` it is (component, time);
/// `AUX` uses only `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId {
    pub kind: VarKind,
    pub sys: u16,
    pub i: u16,
    pub j: u16,
}

impl VarId {
    pub const fn new(kind: VarKind, i: usize, j: usize) -> Self {
        VarId { kind, sys: 0, i: i as u16, j: j as u16 }
    }

    pub const fn a(i: usize, j: usize) -> Self {
        Self::new(VarKind::A, i, j)
    }

    pub const fn b(i: usize, j: usize) -> Self {
        Self::new(VarKind::B, i, j)
    }

    pub const fn dx(i: usize, t: usize) -> Self {
        Self::new(VarKind::DX, i, t)
    }

    pub const fn du(i: usize, t: usize) -> Self {
        Self::new(VarKind::DU, i, t)
    }

    pub const fn w(i: usize, t: usize) -> Self {
        Self::new(VarKind::W, i, t)
    }

    pub const fn aux(k: usize) -> Self {
        Self::new(VarKind::AUX, k, 0)
    }

    pub const fn with_sys(mut self, sys: usize) -> Self {
        self.sys = sys as u16;
        self
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.tag())?;
        if self.sys > 0 {
            write!(f, "@{}", self.sys)?;
        }
        if self.kind == VarKind::AUX {
            write!(f, "[{}]", self.i + 1)
        } else {
            write!(f, "[{},{}]", self.i + 1, self.j + 1)
        }
    }
}

impl FromStr for VarId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("malformed variable `{s}`"));
        let open = s.find('[').ok_or_else(bad)?;
        if !s.ends_with(']') {
            return Err(bad());
        }
        let head = &s[..open];
        let (tag, sys) = match head.split_once('@') {
            Some((t, n)) => (t, n.parse::<u16>().map_err(|_| bad())?),
            None => (head, 0),
        };
        let kind = match tag {
            "A" => VarKind::A,
            "B" => VarKind::B,
            "DX" => VarKind::DX,
            "DU" => VarKind::DU,
            "W" => VarKind::W,
            "AUX" => VarKind::AUX,
            _ => return Err(bad()),
        };
        let body = &s[open + 1..s.len() - 1];
        let idx: Vec<u16> = body
            .split(',')
            .map(|p| p.trim().parse::<u16>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (i, j) = match (kind, idx.as_slice()) {
            (VarKind::AUX, [i]) => (*i, 1),
            (VarKind::AUX, _) => return Err(bad()),
            (_, [i, j]) => (*i, *j),
            _ => return Err(bad()),
        };
        if i == 0 || j == 0 {
            return Err(bad());
        }
        Ok(VarId { kind, sys, i: i - 1, j: j - 1 })
    }
}

/// Dimensions of the symbols that may appear for one data set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarRegistry {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub subsystems: usize,
    pub aux: usize,
}

impl VarRegistry {
    pub fn new(n: usize, m: usize, t: usize) -> Self {
        VarRegistry { n, m, t, subsystems: 1, aux: 0 }
    }

    pub fn contains(&self, v: &VarId) -> bool {
        let (i, j, s) = (v.i as usize, v.j as usize, v.sys as usize);
        if s >= self.subsystems.max(1) {
            return false;
        }
        match v.kind {
            VarKind::A => i < self.n && j < self.n,
            VarKind::B => i < self.n && j < self.m,
            VarKind::DX => s == 0 && i < self.n && j < self.t,
            VarKind::DU => s == 0 && i < self.m && j < self.t,
            VarKind::W => s == 0 && i < self.n && j < self.t,
            VarKind::AUX => s == 0 && i < self.aux,
        }
    }

    /// Plant symbols in canonical order: A row-major, then B row-major.
    pub fn plant_vars(&self, sys: usize) -> Vec<VarId> {
        let mut out = Vec::with_capacity(self.n * (self.n + self.m));
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(VarId::a(i, j).with_sys(sys));
            }
        }
        for i in 0..self.n {
            for j in 0..self.m {
                out.push(VarId::b(i, j).with_sys(sys));
            }
        }
        out
    }
}
