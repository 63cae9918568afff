//! Linear programs over products of free, nonnegative and semidefinite cones,
//! with a homogeneous self-dual interior point solver.
//!
//! Variables are addressed by a global index. A semidefinite block of size
//! `s` owns `s(s+1)/2` consecutive indices, one per upper-triangular entry
//! `X[i][j]`, and a row coefficient `a` on that index contributes `a * X[i][j]`.

pub(crate) mod dense;
mod ipm;
mod kkt;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyalg::packed_index;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Free { index: u32 },
    NonNeg { index: u32 },
    Psd { block: u32, i: u32, j: u32 },
}

/// Handle to a semidefinite block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsdBlock {
    pub block: usize,
    pub offset: usize,
    pub size: usize,
}

impl PsdBlock {
    /// Global index of entry (i, j); order of i and j does not matter.
    pub fn var(&self, i: usize, j: usize) -> usize {
        self.offset + packed_index(self.size, i, j)
    }

    pub fn len(&self) -> usize {
        self.size * (self.size + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub tag: Option<u32>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    pub name: String,
    slots: Vec<Slot>,
    n_free: usize,
    n_nonneg: usize,
    free_tags: Vec<Option<u32>>,
    psd: Vec<PsdBlock>,
    rows: Vec<Row>,
    objective: Vec<(usize, f64)>,
    next_tag: u32,
}

impl ConicProgram {
    pub fn new(name: impl Into<String>) -> Self {
        ConicProgram { name: name.into(), ..Default::default() }
    }

    /// A fresh tag for grouping rows and free variables that belong to the
    /// same algebraic identity. Tags only affect factorization structure.
    pub fn new_tag(&mut self) -> u32 {
        self.next_tag += 1;
        self.next_tag - 1
    }

    pub fn add_free(&mut self, count: usize, tag: Option<u32>) -> Vec<usize> {
        let start = self.slots.len();
        for _ in 0..count {
            self.slots.push(Slot::Free { index: self.n_free as u32 });
            self.free_tags.push(tag);
            self.n_free += 1;
        }
        (start..start + count).collect()
    }

    pub fn add_nonneg(&mut self, count: usize) -> Vec<usize> {
        let start = self.slots.len();
        for _ in 0..count {
            self.slots.push(Slot::NonNeg { index: self.n_nonneg as u32 });
            self.n_nonneg += 1;
        }
        (start..start + count).collect()
    }

    pub fn add_psd(&mut self, size: usize) -> PsdBlock {
        let h = PsdBlock { block: self.psd.len(), offset: self.slots.len(), size };
        for i in 0..size {
            for j in i..size {
                self.slots.push(Slot::Psd { block: h.block as u32, i: i as u32, j: j as u32 });
            }
        }
        self.psd.push(h);
        h
    }

    /// Adds `sum coeffs = rhs`. Repeated indices are merged.
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, tag: Option<u32>) -> Result<usize> {
        let mut c = coeffs;
        for (v, a) in &c {
            if *v >= self.slots.len() {
                return Err(Error::InvalidArgument(format!("row references unknown variable {v}")));
            }
            if !a.is_finite() {
                return Err(Error::InvalidArgument("non-finite row coefficient".into()));
            }
        }
        if !rhs.is_finite() {
            return Err(Error::InvalidArgument("non-finite right-hand side".into()));
        }
        c.sort_by_key(|(v, _)| *v);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(c.len());
        for (v, a) in c {
            match merged.last_mut() {
                Some((lv, la)) if *lv == v => *la += a,
                _ => merged.push((v, a)),
            }
        }
        merged.retain(|(_, a)| *a != 0.0);
        self.rows.push(Row { coeffs: merged, rhs, tag });
        Ok(self.rows.len() - 1)
    }

    /// Adds `sum coeffs >= rhs` through a nonnegative slack.
    pub fn add_ge(&mut self, mut coeffs: Vec<(usize, f64)>, rhs: f64, tag: Option<u32>) -> Result<usize> {
        let s = self.add_nonneg(1)[0];
        coeffs.push((s, -1.0));
        self.add_row(coeffs, rhs, tag)
    }

    /// Adds `coeff * var` to the minimized objective.
    pub fn add_objective(&mut self, var: usize, coeff: f64) {
        self.objective.push((var, coeff));
    }

    pub fn num_vars(&self) -> usize {
        self.slots.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_free(&self) -> usize {
        self.n_free
    }

    pub fn num_nonneg(&self) -> usize {
        self.n_nonneg
    }

    pub fn psd_blocks(&self) -> &[PsdBlock] {
        &self.psd
    }

    /// Tag of each free variable, by free index.
    pub fn free_tags(&self) -> &[Option<u32>] {
        &self.free_tags
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn slot(&self, v: usize) -> Slot {
        self.slots[v]
    }

    pub fn objective_dense(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.slots.len()];
        for (v, a) in &self.objective {
            c[*v] += a;
        }
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn solve(&self, tol: &Tolerances) -> Result<SolveResult> {
        ipm::solve(self, tol)
    }

    /// Equality residual `max |A x - b|` at a point given in global indices.
    pub fn max_row_residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.coeffs.iter().map(|(v, a)| a * x[*v]).sum::<f64>() - r.rhs).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub feas: f64,
    pub gap: f64,
    pub max_iter: usize,
    /// Farkas residual accepted as an infeasibility verdict when the
    /// iterates stall before reaching `feas`.
    #[serde(default = "default_infeas_loose")]
    pub infeas_loose: f64,
    /// Residuals and relative gap accepted as near optimal when the
    /// iterates stall before reaching `feas` and `gap`.
    #[serde(default = "default_near")]
    pub near: f64,
    pub verbose: bool,
}

fn default_infeas_loose() -> f64 {
    1e-5
}

fn default_near() -> f64 {
    1e-6
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feas: 1e-8,
            gap: 1e-8,
            max_iter: 200,
            infeas_loose: default_infeas_loose(),
            near: default_near(),
            verbose: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Converged with a nonzero objective.
    Optimal,
    /// Converged on a pure feasibility problem.
    Feasible,
    /// Primal infeasible; `farkas` holds the certificate.
    Infeasible,
    /// Dual infeasible.
    Unbounded,
    /// Stalled within `Tolerances::near` of optimality.
    NearOptimal,
    Inaccurate,
}

impl SolveStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible | SolveStatus::NearOptimal)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub seconds: f64,
    pub kkt_size: usize,
    pub regularization: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Primal point in global indices.
    pub x: Vec<f64>,
    /// Equality duals, one per row.
    pub y: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// For infeasible programs: `y` with `b'y = 1` and `A'y` in the negated
    /// dual cone (up to tolerance).
    pub farkas: Option<Vec<f64>>,
    pub stats: SolveStats,
    psd_duals: Vec<DMatrix<f64>>,
}

impl SolveResult {
    pub fn psd_value(&self, h: &PsdBlock) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(h.size, h.size);
        for i in 0..h.size {
            for j in i..h.size {
                let v = self.x[h.var(i, j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Dual slack matrix of a block.
    pub fn psd_dual(&self, h: &PsdBlock) -> Option<&DMatrix<f64>> {
        self.psd_duals.get(h.block)
    }

    pub fn value(&self, v: usize) -> f64 {
        self.x[v]
    }

    pub fn values(&self, vs: &[usize]) -> Vec<f64> {
        vs.iter().map(|v| self.x[*v]).collect()
    }
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Counts of the different cones, for reporting.
pub fn cone_summary(p: &ConicProgram) -> HashMap<&'static str, usize> {
    let mut out = HashMap::new();
    out.insert("free", p.n_free);
    out.insert("nonneg", p.n_nonneg);
    out.insert("psd_blocks", p.psd.len());
    out.insert("psd_max", p.psd.iter().map(|b| b.size).max().unwrap_or(0));
    out.insert("rows", p.rows.len());
    out
}
