use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::poly::Poly;
use super::var::VarId;
use crate::error::{Error, Result};

/// Symmetric matrix of polynomials; only the upper triangle is stored so the
/// (i,j) and (j,i) entries are the same object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyMatrix {
    size: usize,
    upper: Vec<Poly>,
}

#[inline]
pub fn packed_index(s: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * s - i * (i + 1) / 2 + j
}

impl PolyMatrix {
    pub fn zeros(size: usize) -> Self {
        PolyMatrix { size, upper: vec![Poly::zero(); size * (size + 1) / 2] }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size);
        for i in 0..size {
            m.set(i, i, Poly::constant(1.0));
        }
        m
    }

    pub fn scalar(p: Poly) -> Self {
        PolyMatrix { size: 1, upper: vec![p] }
    }

    /// Builds from a full square array, rejecting asymmetric input.
    pub fn from_rows(rows: Vec<Vec<Poly>>) -> Result<Self> {
        let s = rows.len();
        let mut m = Self::zeros(s);
        for i in 0..s {
            if rows[i].len() != s {
                return Err(Error::Dimension("polynomial matrix is not square".into()));
            }
            for j in i..s {
                if i != j && rows[i][j].max_abs_diff(&rows[j][i]) > 1e-12 {
                    return Err(Error::InvalidArgument(format!("entry ({i},{j}) is not symmetric")));
                }
                m.set(i, j, rows[i][j].clone());
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> &Poly {
        &self.upper[packed_index(self.size, i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Poly) {
        let k = packed_index(self.size, i, j);
        self.upper[k] = p;
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut Poly {
        let k = packed_index(self.size, i, j);
        &mut self.upper[k]
    }

    pub fn degree(&self) -> u32 {
        self.upper.iter().map(Poly::degree).max().unwrap_or(0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &Poly)> {
        let s = self.size;
        (0..s).flat_map(move |i| (i..s).map(move |j| (i, j))).map(move |(i, j)| (i, j, self.get(i, j)))
    }

    pub fn map(&self, f: impl Fn(&Poly) -> Poly) -> PolyMatrix {
        PolyMatrix { size: self.size, upper: self.upper.iter().map(f).collect() }
    }

    pub fn scale(&self, c: f64) -> PolyMatrix {
        self.map(|p| p.scale(c))
    }

    pub fn add(&self, other: &PolyMatrix) -> PolyMatrix {
        assert_eq!(self.size, other.size);
        PolyMatrix {
            size: self.size,
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn evaluate(&self, at: &HashMap<VarId, f64>) -> Result<DMatrix<f64>> {
        let s = self.size;
        let mut out = DMatrix::zeros(s, s);
        for i in 0..s {
            for j in i..s {
                let v = self.get(i, j).evaluate(at)?;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }
}

/// Rectangular polynomial matrix, used for symbolic plant algebra.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyRect {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Poly>,
}

impl PolyRect {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        PolyRect { rows, cols, data: vec![Poly::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Poly::constant(1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Poly) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| Poly::constant(m[(i, j)]))
    }

    /// The symbolic matrix with entries `f(i, j)` as variables.
    pub fn symbols(rows: usize, cols: usize, f: impl Fn(usize, usize) -> VarId) -> Self {
        Self::from_fn(rows, cols, |i, j| Poly::var(f(i, j)))
    }

    pub fn matmul(&self, other: &PolyRect) -> PolyRect {
        assert_eq!(self.cols, other.rows);
        let mut out = PolyRect::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Poly::zero();
                for k in 0..self.cols {
                    if self[(i, k)].is_zero() || other[(k, j)].is_zero() {
                        continue;
                    }
                    acc += &(&self[(i, k)] * &other[(k, j)]);
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    pub fn add(&self, other: &PolyRect) -> PolyRect {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        PolyRect {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &PolyRect) -> PolyRect {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> PolyRect {
        PolyRect { rows: self.rows, cols: self.cols, data: self.data.iter().map(|p| p.scale(c)).collect() }
    }

    pub fn transpose(&self) -> PolyRect {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn pow(&self, e: u32) -> PolyRect {
        assert_eq!(self.rows, self.cols);
        let mut acc = PolyRect::identity(self.rows);
        for _ in 0..e {
            acc = acc.matmul(self);
        }
        acc
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<Poly> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let mut acc = Poly::zero();
                for (k, x) in v.iter().enumerate() {
                    acc += &self[(i, k)].scale(*x);
                }
                acc
            })
            .collect()
    }

    pub fn evaluate(&self, at: &HashMap<VarId, f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self[(i, j)].evaluate(at)?;
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for PolyRect {
    type Output = Poly;
    fn index(&self, (i, j): (usize, usize)) -> &Poly {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for PolyRect {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Poly {
        &mut self.data[i * self.cols + j]
    }
}
