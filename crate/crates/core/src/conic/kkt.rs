//! Block-sparse symmetric quasi-definite factorization.
//!
//! Unknowns are partitioned into groups. Positive groups hold equality
//! multipliers (the Schur complement part), negative groups hold free primal
//! variables. The matrix is factored as `L D L'` with `D = diag(+-I)` per group,
//! with dense blocks and a fill pattern from a greedy minimum-degree ordering
//! on the group graph. A negative group is only eliminated once none of its
//! neighbours is positive, which keeps every pivot block definite.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::dense::{cholesky_floored, lower_inverse};

#[derive(Clone, Debug)]
pub struct Node {
    pub members: Vec<usize>,
    pub sign: f64,
    pub diag: DMatrix<f64>,
    /// Blocks below the diagonal: (later node, block of size n_q x n_p).
    pub off: Vec<(usize, DMatrix<f64>)>,
}

#[derive(Clone, Debug)]
pub struct BlockSym {
    pub nodes: Vec<Node>,
    pub node_of: Vec<u32>,
    pub local_of: Vec<u32>,
}

impl BlockSym {
    /// `groups[g] = (members, sign)`, `edges` between group ids.
    pub fn new(groups: Vec<(Vec<usize>, f64)>, edges: &[(usize, usize)], dim: usize) -> Self {
        let groups: Vec<(Vec<usize>, f64)> = groups.into_iter().filter(|(m, _)| !m.is_empty()).collect();
        let g = groups.len();
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); g];
        for &(a, b) in edges {
            if a != b && a < g && b < g {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let size: Vec<usize> = groups.iter().map(|(m, _)| m.len()).collect();
        let positive: Vec<bool> = groups.iter().map(|(_, s)| *s > 0.0).collect();
        let mut alive = vec![true; g];
        let mut order = Vec::with_capacity(g);
        let mut later: Vec<Vec<usize>> = vec![Vec::new(); g];
        for _ in 0..g {
            let mut best: Option<(usize, usize)> = None;
            for v in 0..g {
                if !alive[v] {
                    continue;
                }
                if !positive[v] && adj[v].iter().any(|u| positive[*u]) {
                    continue;
                }
                let cost: usize = adj[v].iter().map(|u| size[*u]).sum::<usize>() * size[v] + size[v] * size[v];
                if best.map_or(true, |(c, _)| cost < c) {
                    best = Some((cost, v));
                }
            }
            let (_, v) = best.expect("an eligible group always exists");
            alive[v] = false;
            order.push(v);
            let nb: Vec<usize> = adj[v].iter().copied().collect();
            for &u in &nb {
                adj[u].remove(&v);
                for &w in &nb {
                    if w != u {
                        adj[u].insert(w);
                    }
                }
            }
            later[v] = nb;
        }
        let mut pos = vec![0usize; g];
        for (p, &v) in order.iter().enumerate() {
            pos[v] = p;
        }
        let mut node_of = vec![u32::MAX; dim];
        let mut local_of = vec![0u32; dim];
        let mut nodes = Vec::with_capacity(g);
        for (p, &v) in order.iter().enumerate() {
            let (members, sign) = &groups[v];
            for (k, &i) in members.iter().enumerate() {
                node_of[i] = p as u32;
                local_of[i] = k as u32;
            }
            let mut qs: Vec<usize> = later[v].iter().map(|u| pos[*u]).collect();
            qs.sort_unstable();
            let n = members.len();
            let off = qs.into_iter().map(|q| (q, DMatrix::zeros(groups[order[q]].0.len(), n))).collect();
            nodes.push(Node { members: members.clone(), sign: *sign, diag: DMatrix::zeros(n, n), off });
        }
        assert!(node_of.iter().all(|n| *n != u32::MAX), "every unknown must belong to a group");
        BlockSym { nodes, node_of, local_of }
    }

    /// (nodes, largest node, factor entries, flop estimate)
    pub fn profile(&self) -> (usize, usize, usize, f64) {
        let mut big = 0;
        let mut nnz = 0;
        let mut flops = 0.0;
        for n in &self.nodes {
            let k = n.members.len();
            big = big.max(k);
            let below: usize = n.off.iter().map(|(_, b)| b.nrows()).sum();
            nnz += k * k + below * k;
            flops += (k * k * k) as f64 / 3.0 + (below * k * k) as f64 + (below * below * k) as f64;
        }
        (self.nodes.len(), big, nnz, flops)
    }

    pub fn dim(&self) -> usize {
        self.node_of.len()
    }

    pub fn clear(&mut self) {
        for n in &mut self.nodes {
            n.diag.fill(0.0);
            for (_, b) in &mut n.off {
                b.fill(0.0);
            }
        }
    }

    fn off_index(&self, p: usize, q: usize) -> usize {
        self.nodes[p].off.binary_search_by_key(&q, |(k, _)| *k).expect("block outside the fill pattern")
    }

    /// Adds `v` to entries (u, w) and (w, u).
    pub fn add_sym(&mut self, u: usize, w: usize, v: f64) {
        let (p, a) = (self.node_of[u] as usize, self.local_of[u] as usize);
        let (q, b) = (self.node_of[w] as usize, self.local_of[w] as usize);
        if p == q {
            self.nodes[p].diag[(a, b)] += v;
            if a != b {
                self.nodes[p].diag[(b, a)] += v;
            }
        } else if p < q {
            let k = self.off_index(p, q);
            self.nodes[p].off[k].1[(b, a)] += v;
        } else {
            let k = self.off_index(q, p);
            self.nodes[q].off[k].1[(a, b)] += v;
        }
    }

    /// Mutable access to the block coupling nodes p and q, oriented so that
    /// entry (a, b) refers to member a of p and member b of q. Returns the
    /// block and whether it is stored transposed. For p == q the diagonal
    /// block is returned.
    pub fn block_mut(&mut self, p: usize, q: usize) -> (&mut DMatrix<f64>, bool) {
        if p == q {
            (&mut self.nodes[p].diag, false)
        } else if p < q {
            let k = self.off_index(p, q);
            (&mut self.nodes[p].off[k].1, true)
        } else {
            let k = self.off_index(q, p);
            (&mut self.nodes[q].off[k].1, false)
        }
    }

    pub fn add_diag(&mut self, u: usize, v: f64) {
        let (p, a) = (self.node_of[u] as usize, self.local_of[u] as usize);
        self.nodes[p].diag[(a, a)] += v;
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let xs: Vec<DVector<f64>> = self.nodes.iter().map(|n| gather(x, &n.members)).collect();
        let mut ys: Vec<DVector<f64>> = self.nodes.iter().zip(&xs).map(|(n, x)| &n.diag * x).collect();
        for (p, n) in self.nodes.iter().enumerate() {
            for (q, b) in &n.off {
                ys[*q] += b * &xs[p];
                let t = b.tr_mul(&xs[*q]);
                ys[p] += t;
            }
        }
        let mut out = DVector::zeros(x.len());
        for (n, y) in self.nodes.iter().zip(&ys) {
            for (k, &i) in n.members.iter().enumerate() {
                out[i] = y[k];
            }
        }
        out
    }

    pub fn max_diag(&self) -> f64 {
        self.nodes
            .iter()
            .flat_map(|n| (0..n.members.len()).map(move |k| n.diag[(k, k)].abs()))
            .fold(0.0, f64::max)
    }

    /// Factors a copy with `reg` added to positive and subtracted from
    /// negative diagonals. Pivots that come out smaller than `floor.0` are
    /// replaced by `floor.1`. Fails with the node index of a bad pivot.
    pub fn factor(&self, reg: f64, floor: Option<(f64, f64)>) -> Result<Factor, usize> {
        let mut nodes = self.nodes.clone();
        for n in &mut nodes {
            for k in 0..n.members.len() {
                n.diag[(k, k)] += n.sign * reg;
            }
        }
        let mut linv: Vec<DMatrix<f64>> = Vec::with_capacity(nodes.len());
        let mut perturbed = 0;
        for p in 0..nodes.len() {
            let s = nodes[p].sign;
            let mut l = std::mem::replace(&mut nodes[p].diag, DMatrix::zeros(0, 0));
            if s < 0.0 {
                l.neg_mut();
            }
            let bumped = cholesky_floored(&mut l, floor).ok_or(p)?;
            perturbed += bumped;
            let li = lower_inverse(&l);
            let lit = li.transpose();
            let mut off = std::mem::take(&mut nodes[p].off);
            for (_, b) in &mut off {
                let mut t = &*b * &lit;
                if s < 0.0 {
                    t.neg_mut();
                }
                *b = t;
            }
            let trs: Vec<DMatrix<f64>> = off.iter().map(|(_, b)| b.transpose()).collect();
            for (x, (q1, l1)) in off.iter().enumerate() {
                let l1t = &trs[x];
                for (q2, l2) in off.iter().skip(x) {
                    if q1 == q2 {
                        nodes[*q1].diag.gemm(-s, l1, l1t, 1.0);
                    } else {
                        let k = nodes[*q1].off.binary_search_by_key(q2, |(k, _)| *k).expect("fill pattern");
                        nodes[*q1].off[k].1.gemm(-s, l2, l1t, 1.0);
                    }
                }
            }
            nodes[p].off = off;
            linv.push(li);
        }
        Ok(Factor {
            signs: nodes.iter().map(|n| n.sign).collect(),
            members: nodes.iter().map(|n| n.members.clone()).collect(),
            linv,
            off: nodes.into_iter().map(|n| n.off).collect(),
            dim: self.dim(),
            perturbed,
        })
    }
}

fn gather(x: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|i| x[*i]))
}

pub struct Factor {
    signs: Vec<f64>,
    members: Vec<Vec<usize>>,
    linv: Vec<DMatrix<f64>>,
    off: Vec<Vec<(usize, DMatrix<f64>)>>,
    dim: usize,
    pub perturbed: usize,
}

impl Factor {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut ys: Vec<DVector<f64>> = self.members.iter().map(|m| gather(b, m)).collect();
        for p in 0..ys.len() {
            let y = &self.linv[p] * &ys[p];
            for (q, l) in &self.off[p] {
                let t = l * &y;
                ys[*q] -= t;
            }
            ys[p] = y;
        }
        for p in 0..ys.len() {
            ys[p] *= self.signs[p];
        }
        for p in (0..ys.len()).rev() {
            let mut acc = ys[p].clone();
            for (q, l) in &self.off[p] {
                acc -= l.tr_mul(&ys[*q]);
            }
            ys[p] = self.linv[p].tr_mul(&acc);
        }
        let mut out = DVector::zeros(self.dim);
        for (m, y) in self.members.iter().zip(&ys) {
            for (k, &i) in m.iter().enumerate() {
                out[i] = y[k];
            }
        }
        out
    }
}
