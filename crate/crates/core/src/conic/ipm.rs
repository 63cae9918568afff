//! Homogeneous self-dual embedding with Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector. The Newton system is reduced to the quasi-definite
//! matrix `[[A_K H A_K', A_f], [A_f', 0]]` and solved with the block factor.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::dense::{cholesky_in_place, lower_inverse};
use super::kkt::{BlockSym, Factor};
use super::{min_eig, ConicProgram, Slot, SolveResult, SolveStats, SolveStatus, Tolerances};
use crate::error::Result;

const STEP: f64 = 0.99;

struct Blk {
    s: usize,
    c: DMatrix<f64>,
    /// Rows touching the block with their packed entries (i <= j, coefficient).
    rows: Vec<(usize, Vec<(usize, usize, f64)>)>,
    /// Factor node and local index of each entry of `rows`.
    place: Vec<(usize, usize)>,
}

struct Std {
    m: usize,
    nf: usize,
    nn: usize,
    b: DVector<f64>,
    cf: DVector<f64>,
    cn: DVector<f64>,
    free_cols: Vec<Vec<(usize, f64)>>,
    nn_cols: Vec<Vec<(usize, f64)>>,
    blocks: Vec<Blk>,
    row_map: Vec<usize>,
    scale: Vec<f64>,
    row_tags: Vec<Option<u32>>,
    free_tags: Vec<Option<u32>>,
}

#[derive(Clone)]
struct Point {
    xf: DVector<f64>,
    xn: DVector<f64>,
    xs: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    zn: DVector<f64>,
    zs: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

struct Dir {
    xf: DVector<f64>,
    xn: DVector<f64>,
    xs: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    zn: DVector<f64>,
    zs: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

struct Scaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lam: DVector<f64>,
    w: DMatrix<f64>,
}

struct Residuals {
    rp: DVector<f64>,
    rdf: DVector<f64>,
    rdn: DVector<f64>,
    rds: Vec<DMatrix<f64>>,
    rg: f64,
}

fn packed_inf(m: &DMatrix<f64>) -> f64 {
    let mut v: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..=j {
            let f = if i == j { 1.0 } else { 2.0 };
            v = v.max(f * m[(i, j)].abs());
        }
    }
    v
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

impl Std {
    fn build(p: &ConicProgram) -> std::result::Result<Std, SolveResult> {
        let mut row_map = Vec::new();
        let mut scale = Vec::new();
        let mut row_tags = Vec::new();
        let mut b = Vec::new();
        let nf = p.num_free();
        let nn = p.num_nonneg();
        let mut free_cols = vec![Vec::new(); nf];
        let mut nn_cols = vec![Vec::new(); nn];
        let mut blocks: Vec<Blk> = p
            .psd_blocks()
            .iter()
            .map(|h| Blk { s: h.size, c: DMatrix::zeros(h.size, h.size), rows: Vec::new(), place: Vec::new() })
            .collect();
        for (orig, row) in p.rows().iter().enumerate() {
            let amax = row.coeffs.iter().fold(0.0f64, |a, (_, c)| a.max(c.abs()));
            if amax == 0.0 {
                if row.rhs != 0.0 {
                    let mut y = vec![0.0; p.num_rows()];
                    y[orig] = 1.0 / row.rhs;
                    return Err(trivial(p, SolveStatus::Infeasible, Some(y)));
                }
                continue;
            }
            let k = row_map.len();
            let d = 1.0 / amax;
            row_map.push(orig);
            scale.push(d);
            row_tags.push(row.tag);
            b.push(row.rhs * d);
            let mut per_block: HashMap<usize, Vec<(usize, usize, f64)>> = HashMap::new();
            for &(v, a) in &row.coeffs {
                match p.slot(v) {
                    Slot::Free { index } => free_cols[index as usize].push((k, a * d)),
                    Slot::NonNeg { index } => nn_cols[index as usize].push((k, a * d)),
                    Slot::Psd { block, i, j } => {
                        per_block.entry(block as usize).or_default().push((i as usize, j as usize, a * d))
                    }
                }
            }
            let mut keys: Vec<usize> = per_block.keys().copied().collect();
            keys.sort_unstable();
            for kb in keys {
                let e = per_block.remove(&kb).unwrap();
                blocks[kb].rows.push((k, e));
            }
        }
        let c = p.objective_dense();
        let mut cf = DVector::zeros(nf);
        let mut cn = DVector::zeros(nn);
        for (v, &cv) in c.iter().enumerate() {
            if cv == 0.0 {
                continue;
            }
            match p.slot(v) {
                Slot::Free { index } => cf[index as usize] += cv,
                Slot::NonNeg { index } => cn[index as usize] += cv,
                Slot::Psd { block, i, j } => {
                    let blk = &mut blocks[block as usize];
                    let (i, j) = (i as usize, j as usize);
                    if i == j {
                        blk.c[(i, i)] += cv;
                    } else {
                        blk.c[(i, j)] += cv / 2.0;
                        blk.c[(j, i)] += cv / 2.0;
                    }
                }
            }
        }
        let free_tags = p.free_tags().to_vec();
        Ok(Std {
            m: row_map.len(),
            nf,
            nn,
            b: DVector::from_vec(b),
            cf,
            cn,
            free_cols,
            nn_cols,
            blocks,
            row_map,
            scale,
            row_tags,
            free_tags,
        })
    }

    fn a_mul(&self, xf: &DVector<f64>, xn: &DVector<f64>, xs: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (j, col) in self.free_cols.iter().enumerate() {
            for &(r, a) in col {
                out[r] += a * xf[j];
            }
        }
        for (j, col) in self.nn_cols.iter().enumerate() {
            for &(r, a) in col {
                out[r] += a * xn[j];
            }
        }
        for (blk, x) in self.blocks.iter().zip(xs) {
            for (r, ents) in &blk.rows {
                let mut acc = 0.0;
                for &(i, j, a) in ents {
                    acc += a * x[(i, j)];
                }
                out[*r] += acc;
            }
        }
        out
    }

    fn at_mul(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, Vec<DMatrix<f64>>) {
        let f = DVector::from_iterator(self.nf, self.free_cols.iter().map(|c| c.iter().map(|(r, a)| a * y[*r]).sum()));
        let n = DVector::from_iterator(self.nn, self.nn_cols.iter().map(|c| c.iter().map(|(r, a)| a * y[*r]).sum()));
        let s = self
            .blocks
            .iter()
            .map(|blk| {
                let mut z = DMatrix::zeros(blk.s, blk.s);
                for (r, ents) in &blk.rows {
                    let yr = y[*r];
                    for &(i, j, a) in ents {
                        if i == j {
                            z[(i, i)] += a * yr;
                        } else {
                            z[(i, j)] += 0.5 * a * yr;
                            z[(j, i)] += 0.5 * a * yr;
                        }
                    }
                }
                z
            })
            .collect();
        (f, n, s)
    }

    fn kkt_structure(&mut self) -> BlockSym {
        let mut groups: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut tag_group: HashMap<Option<u32>, usize> = HashMap::new();
        let mut row_group = vec![0usize; self.m];
        for r in 0..self.m {
            let g = *tag_group.entry(self.row_tags[r]).or_insert_with(|| {
                groups.push((Vec::new(), 1.0));
                groups.len() - 1
            });
            groups[g].0.push(r);
            row_group[r] = g;
        }
        let mut free_group_of_tag: HashMap<Option<u32>, usize> = HashMap::new();
        let mut free_group = vec![0usize; self.nf];
        for j in 0..self.nf {
            let g = *free_group_of_tag.entry(self.free_tags[j]).or_insert_with(|| {
                groups.push((Vec::new(), -1.0));
                groups.len() - 1
            });
            groups[g].0.push(self.m + j);
            free_group[j] = g;
        }
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let clique = |gs: &mut Vec<usize>, edges: &mut Vec<(usize, usize)>| {
            gs.sort_unstable();
            gs.dedup();
            for a in 0..gs.len() {
                for b in a + 1..gs.len() {
                    edges.push((gs[a], gs[b]));
                }
            }
        };
        for blk in &self.blocks {
            let mut gs: Vec<usize> = blk.rows.iter().map(|(r, _)| row_group[*r]).collect();
            clique(&mut gs, &mut edges);
        }
        for col in &self.nn_cols {
            let mut gs: Vec<usize> = col.iter().map(|(r, _)| row_group[*r]).collect();
            clique(&mut gs, &mut edges);
        }
        for (j, col) in self.free_cols.iter().enumerate() {
            for (r, _) in col {
                edges.push((row_group[*r], free_group[j]));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let kkt = BlockSym::new(groups, &edges, self.m + self.nf);
        // order rows of each block by position in the factor so that
        // assembly walks contiguous runs of the same node pair
        for blk in &mut self.blocks {
            blk.rows.sort_by_key(|(r, _)| (kkt.node_of[*r], kkt.local_of[*r]));
            blk.place = blk.rows.iter().map(|(r, _)| (kkt.node_of[*r] as usize, kkt.local_of[*r] as usize)).collect();
        }
        kkt
    }

    fn assemble(&self, kkt: &mut BlockSym, sc: &[Scaling], hn: &DVector<f64>) {
        kkt.clear();
        for (blk, s) in self.blocks.iter().zip(sc) {
            let w = &s.w;
            let rows = &blk.rows;
            let mut runs: Vec<(usize, usize)> = Vec::new();
            let mut start = 0;
            for k in 1..=rows.len() {
                if k == rows.len() || blk.place[k].0 != blk.place[start].0 {
                    runs.push((start, k));
                    start = k;
                }
            }
            for (ra, &(a0, a1)) in runs.iter().enumerate() {
                for &(b0, b1) in &runs[ra..] {
                    let p = blk.place[a0].0;
                    let q = blk.place[b0].0;
                    let (target, transposed) = kkt.block_mut(p, q);
                    for al in a0..a1 {
                        let e1 = &rows[al].1;
                        let bstart = if p == q { al } else { b0 };
                        for bl in bstart..b1 {
                            let e2 = &rows[bl].1;
                            let mut v = 0.0;
                            for &(i, j, a) in e1 {
                                for &(k, l, c) in e2 {
                                    v += a * c * (w[(i, k)] * w[(j, l)] + w[(i, l)] * w[(j, k)]);
                                }
                            }
                            v *= 0.5;
                            let (x, y) = (blk.place[al].1, blk.place[bl].1);
                            if p == q {
                                target[(x, y)] += v;
                                if x != y {
                                    target[(y, x)] += v;
                                }
                            } else if transposed {
                                target[(y, x)] += v;
                            } else {
                                target[(x, y)] += v;
                            }
                        }
                    }
                }
            }
        }
        for (j, col) in self.nn_cols.iter().enumerate() {
            let h = hn[j];
            for (x, &(r1, a1)) in col.iter().enumerate() {
                for &(r2, a2) in &col[x..] {
                    if r1 == r2 {
                        kkt.add_diag(r1, a1 * a2 * h);
                    } else {
                        kkt.add_sym(r1, r2, a1 * a2 * h);
                    }
                }
            }
        }
        for (j, col) in self.free_cols.iter().enumerate() {
            for &(r, a) in col {
                kkt.add_sym(r, self.m + j, a);
            }
        }
    }

    fn residuals(&self, pt: &Point) -> Residuals {
        let ax = self.a_mul(&pt.xf, &pt.xn, &pt.xs);
        let rp = ax - &self.b * pt.tau;
        let (f, n, s) = self.at_mul(&pt.y);
        let rdf = f - &self.cf * pt.tau;
        let rdn = n + &pt.zn - &self.cn * pt.tau;
        let rds = s
            .into_iter()
            .zip(&pt.zs)
            .zip(&self.blocks)
            .map(|((a, z), blk)| a + z - &blk.c * pt.tau)
            .collect();
        let rg = self.cdot(&pt.xf, &pt.xn, &pt.xs) - self.b.dot(&pt.y) + pt.kappa;
        Residuals { rp, rdf, rdn, rds, rg }
    }

    fn cdot(&self, xf: &DVector<f64>, xn: &DVector<f64>, xs: &[DMatrix<f64>]) -> f64 {
        self.cf.dot(xf) + self.cn.dot(xn) + self.blocks.iter().zip(xs).map(|(b, x)| inner(&b.c, x)).sum::<f64>()
    }
}

fn trivial(p: &ConicProgram, status: SolveStatus, farkas: Option<Vec<f64>>) -> SolveResult {
    let mut x = vec![0.0; p.num_vars()];
    for h in p.psd_blocks() {
        for i in 0..h.size {
            x[h.var(i, i)] = 1.0;
        }
    }
    SolveResult {
        status,
        x,
        y: vec![0.0; p.num_rows()],
        primal_objective: 0.0,
        dual_objective: 0.0,
        farkas,
        stats: SolveStats::default(),
        psd_duals: p.psd_blocks().iter().map(|h| DMatrix::identity(h.size, h.size)).collect(),
    }
}

fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let mut lx = x.clone();
    if !cholesky_in_place(&mut lx) {
        return None;
    }
    let mut lz = z.clone();
    if !cholesky_in_place(&mut lz) {
        return None;
    }
    let prod = lz.transpose() * &lx;
    let svd = prod.svd(false, true);
    let vt = svd.v_t?;
    let sig = svd.singular_values;
    if sig.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return None;
    }
    let mut r = &lx * vt.transpose();
    for j in 0..r.ncols() {
        let f = 1.0 / sig[j].sqrt();
        r.column_mut(j).scale_mut(f);
    }
    let mut rinv = &vt * lower_inverse(&lx);
    for i in 0..rinv.nrows() {
        let f = sig[i].sqrt();
        rinv.row_mut(i).scale_mut(f);
    }
    let w = &r * r.transpose();
    Some(Scaling { r, rinv, lam: sig, w })
}

fn step_psd(lam: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lam.len();
    if n == 0 {
        return f64::INFINITY;
    }
    let s = lam.map(|l| 1.0 / l.sqrt());
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (d[(i, j)] + d[(j, i)]) * s[i] * s[j]);
    let e = min_eig(&m);
    if e >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / e
    }
}

fn step_vec(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    let mut a = f64::INFINITY;
    for (xi, di) in x.iter().zip(dx.iter()) {
        if *di < 0.0 {
            a = a.min(-xi / di);
        }
    }
    a
}

fn step_scalar(x: f64, dx: f64) -> f64 {
    if dx < 0.0 {
        -x / dx
    } else {
        f64::INFINITY
    }
}

struct Solver<'a> {
    st: &'a Std,
    kkt: BlockSym,
    fac: Option<Factor>,
    reg: f64,
}

impl<'a> Solver<'a> {
    fn kkt_solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let fac = self.fac.as_ref().expect("factored");
        let mut x = fac.solve(rhs);
        let scale = 1.0 + rhs.amax();
        let mut res = rhs - self.kkt.matvec(&x);
        let mut rn = res.amax();
        for _ in 0..6 {
            if rn <= 1e-14 * scale {
                break;
            }
            let dx = fac.solve(&res);
            let xn = &x + dx;
            let rn2 = rhs - self.kkt.matvec(&xn);
            let r2 = rn2.amax();
            if !(r2 < 0.5 * rn) {
                if r2 < rn {
                    x = xn;
                }
                break;
            }
            x = xn;
            res = rn2;
            rn = r2;
        }
        x
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        pt: &Point,
        res: &Residuals,
        sc: &[Scaling],
        hn: &DVector<f64>,
        u1: &DVector<f64>,
        g: &DVector<f64>,
        chc: f64,
        eta: f64,
        e: &[DMatrix<f64>],
        r4n: &DVector<f64>,
        r5: f64,
    ) -> Dir {
        let st = self.st;
        let (m, nf) = (st.m, st.nf);
        // r4 + eta H rd on the cones
        let r4s: Vec<DMatrix<f64>> = sc.iter().zip(e).map(|(s, e)| &s.r * e * s.r.transpose()).collect();
        let q_s: Vec<DMatrix<f64>> =
            r4s.iter().zip(sc).zip(&res.rds).map(|((r4, s), rd)| r4 + (&s.w * rd * &s.w) * eta).collect();
        let q_n: DVector<f64> = r4n + hn.component_mul(&res.rdn) * eta;
        let aq = st.a_mul(&DVector::zeros(nf), &q_n, &q_s);
        let mut rhs2 = DVector::zeros(m + nf);
        for i in 0..m {
            rhs2[i] = -eta * res.rp[i] - aq[i];
        }
        for j in 0..nf {
            rhs2[m + j] = -eta * res.rdf[j];
        }
        let u2 = self.kkt_solve(&rhs2);
        let u1y = u1.rows(0, m);
        let u1f = u1.rows(m, nf);
        let u2y = u2.rows(0, m);
        let u2f = u2.rows(m, nf);
        let cq = st.cn.dot(&q_n) + st.blocks.iter().zip(&q_s).map(|(b, q)| inner(&b.c, q)).sum::<f64>();
        let num = -eta * res.rg - r5 / pt.tau - st.cf.dot(&u2f) - cq - g.dot(&u2y) + st.b.dot(&u2y);
        let den = st.cf.dot(&u1f) + (g - &st.b).dot(&u1y) - chc - pt.kappa / pt.tau;
        let dtau = num / den;
        let dy: DVector<f64> = u1y * dtau + u2y;
        let dxf: DVector<f64> = u1f * dtau + u2f;
        let (_, atn, ats) = st.at_mul(&dy);
        let dzn = -&res.rdn * eta + &st.cn * dtau - atn;
        let dxn = r4n - hn.component_mul(&dzn);
        let dzs: Vec<DMatrix<f64>> = res
            .rds
            .iter()
            .zip(&st.blocks)
            .zip(ats)
            .map(|((rd, b), at)| -rd * eta + &b.c * dtau - at)
            .collect();
        let dxs: Vec<DMatrix<f64>> =
            r4s.iter().zip(sc).zip(&dzs).map(|((r4, s), dz)| r4 - &s.w * dz * &s.w).collect();
        let dkappa = (r5 - pt.kappa * dtau) / pt.tau;
        Dir { xf: dxf, xn: dxn, xs: dxs, y: dy, zn: dzn, zs: dzs, tau: dtau, kappa: dkappa }
    }
}

fn max_step(pt: &Point, d: &Dir, sc: &[Scaling]) -> (f64, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut a = step_vec(&pt.xn, &d.xn).min(step_vec(&pt.zn, &d.zn));
    a = a.min(step_scalar(pt.tau, d.tau)).min(step_scalar(pt.kappa, d.kappa));
    let mut dxt = Vec::with_capacity(sc.len());
    let mut dzt = Vec::with_capacity(sc.len());
    for ((s, dx), dz) in sc.iter().zip(&d.xs).zip(&d.zs) {
        let xt = &s.rinv * dx * s.rinv.transpose();
        let zt = s.r.transpose() * dz * &s.r;
        a = a.min(step_psd(&s.lam, &xt)).min(step_psd(&s.lam, &zt));
        dxt.push(xt);
        dzt.push(zt);
    }
    (a, dxt, dzt)
}

pub fn solve(p: &ConicProgram, tol: &Tolerances) -> Result<SolveResult> {
    let t0 = Instant::now();
    if p.num_vars() == 0 && p.num_rows() == 0 {
        return Ok(trivial(p, SolveStatus::Feasible, None));
    }
    let mut st = match Std::build(p) {
        Ok(s) => s,
        Err(r) => return Ok(r),
    };
    let kkt = st.kkt_structure();
    if tol.verbose {
        let (nodes, big, nnz, flops) = kkt.profile();
        eprintln!("kkt dim {} nodes {nodes} largest {big} factor entries {nnz} flops {flops:.2e}", kkt.dim());
    }
    let st = st;
    let mut solver = Solver { st: &st, kkt, fac: None, reg: 0.0 };
    let nu = st.nn + st.blocks.iter().map(|b| b.s).sum::<usize>();
    let mut pt = Point {
        xf: DVector::zeros(st.nf),
        xn: DVector::from_element(st.nn, 1.0),
        xs: st.blocks.iter().map(|b| DMatrix::identity(b.s, b.s)).collect(),
        y: DVector::zeros(st.m),
        zn: DVector::from_element(st.nn, 1.0),
        zs: st.blocks.iter().map(|b| DMatrix::identity(b.s, b.s)).collect(),
        tau: 1.0,
        kappa: 1.0,
    };
    let bnorm = 1.0 + st.b.amax();
    let cnorm = 1.0 + st.cf.amax().max(st.cn.amax()).max(st.blocks.iter().map(|b| packed_inf(&b.c)).fold(0.0, f64::max));
    let c_is_zero = cnorm == 1.0;
    let mut status = SolveStatus::Inaccurate;
    let mut stats = SolveStats { kkt_size: st.m + st.nf, ..Default::default() };
    let mut iter = 0;
    let mut stall = 0;
    let mut best_farkas: Option<(f64, Point)> = None;
    let mut farkas_stall = 0;
    let mut best_near: Option<(f64, Point, SolveStats)> = None;
    let mut near_stall = 0;
    loop {
        let res = st.residuals(&pt);
        let pobj = st.cdot(&pt.xf, &pt.xn, &pt.xs) / pt.tau;
        let dobj = st.b.dot(&pt.y) / pt.tau;
        let pres = res.rp.amax() / pt.tau / bnorm;
        let dres = res.rdf.amax().max(res.rdn.amax()).max(res.rds.iter().map(packed_inf).fold(0.0, f64::max))
            / pt.tau
            / cnorm;
        let gap_abs = (pobj - dobj).abs();
        let gap_rel = gap_abs / (1.0 + pobj.abs().min(dobj.abs()));
        stats.iterations = iter;
        stats.primal_residual = pres;
        stats.dual_residual = dres;
        stats.gap = gap_abs.min(gap_rel);
        if tol.verbose {
            eprintln!(
                "{iter:3} pres {pres:9.2e} dres {dres:9.2e} gap {gap_abs:9.2e} pobj {pobj:12.5e} dobj {dobj:12.5e} tau {:8.1e} kap {:8.1e} reg {:7.1e} t {:.2}s",
                pt.tau,
                pt.kappa,
                solver.reg,
                t0.elapsed().as_secs_f64()
            );
        }
        if pres <= tol.feas && dres <= tol.feas && (gap_abs <= tol.gap || gap_rel <= tol.gap) {
            status = if c_is_zero { SolveStatus::Feasible } else { SolveStatus::Optimal };
            break;
        }
        let score = pres.max(dres).max(gap_abs.min(gap_rel));
        if score <= tol.near && score < best_near.as_ref().map_or(f64::INFINITY, |b| b.0) {
            best_near = Some((score, pt.clone(), stats.clone()));
            near_stall = 0;
        } else if best_near.is_some() {
            near_stall += 1;
            if near_stall >= 3 {
                break;
            }
        }
        let by = st.b.dot(&pt.y);
        if by > 0.0 {
            let (f, n, s) = st.at_mul(&pt.y);
            let r = f.amax().max((n + &pt.zn).amax()).max(
                s.iter().zip(&pt.zs).map(|(a, z)| packed_inf(&(a + z))).fold(0.0, f64::max),
            );
            let ratio = r / by;
            if tol.verbose {
                eprintln!("    farkas ratio {ratio:9.2e}");
            }
            if r <= tol.feas * by {
                status = SolveStatus::Infeasible;
                break;
            }
            if ratio < best_farkas.as_ref().map_or(f64::INFINITY, |b| b.0) {
                best_farkas = Some((ratio, pt.clone()));
                farkas_stall = 0;
            } else {
                farkas_stall += 1;
            }
            // a near-certificate that has stopped improving
            if ratio <= tol.infeas_loose && farkas_stall >= 3 {
                break;
            }
        }
        let cx = st.cdot(&pt.xf, &pt.xn, &pt.xs);
        if cx < 0.0 {
            let ax = st.a_mul(&pt.xf, &pt.xn, &pt.xs);
            if ax.amax() <= tol.feas * (-cx) {
                status = SolveStatus::Unbounded;
                break;
            }
        }
        if iter >= tol.max_iter || stall >= 5 {
            break;
        }
        iter += 1;

        let mut sc = Vec::with_capacity(st.blocks.len());
        let mut ok = true;
        for (x, z) in pt.xs.iter().zip(&pt.zs) {
            match nt_scaling(x, z) {
                Some(s) => sc.push(s),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let hn: DVector<f64> = pt.xn.component_div(&pt.zn);
        let lamn: DVector<f64> = pt.xn.component_mul(&pt.zn).map(f64::sqrt);
        let wn: DVector<f64> = hn.map(f64::sqrt);
        let mu = (pt.xn.dot(&pt.zn) + pt.xs.iter().zip(&pt.zs).map(|(x, z)| inner(x, z)).sum::<f64>()
            + pt.tau * pt.kappa)
            / (nu as f64 + 1.0);

        let ta = Instant::now();
        st.assemble(&mut solver.kkt, &sc, &hn);
        let t_asm = ta.elapsed().as_secs_f64();
        let ta = Instant::now();
        let md = solver.kkt.max_diag().max(1.0);
        let mut reg = 1e-13 * md;
        solver.fac = None;
        for _ in 0..4 {
            match solver.kkt.factor(reg, Some((1e-14 * md, 1e-8 * md))) {
                Ok(f) => {
                    solver.fac = Some(f);
                    break;
                }
                Err(_) => reg *= 100.0,
            }
        }
        solver.reg = reg;
        if tol.verbose {
            let bumped = solver.fac.as_ref().map_or(0, |f| f.perturbed);
            eprintln!("    assemble {t_asm:.2}s factor {:.2}s perturbed pivots {bumped}", ta.elapsed().as_secs_f64());
        }
        stats.regularization = reg;
        if solver.fac.is_none() {
            break;
        }

        // a feasibility problem is done once the scaled iterate can be
        // pushed onto the affine set while staying in the cone
        if c_is_zero {
            if let Some(q) = project_feasible(&st, &solver, &pt, &res, &sc, &hn, tol.feas * bnorm) {
                if tol.verbose {
                    eprintln!("    projected onto the feasible set");
                }
                pt = q;
                status = SolveStatus::Feasible;
                break;
            }
        }

        // right-hand side multiplying dtau
        let hcs: Vec<DMatrix<f64>> = sc.iter().zip(&st.blocks).map(|(s, b)| &s.w * &b.c * &s.w).collect();
        let hcn = hn.component_mul(&st.cn);
        let g = st.a_mul(&DVector::zeros(st.nf), &hcn, &hcs);
        let chc = st.cn.dot(&hcn) + st.blocks.iter().zip(&hcs).map(|(b, h)| inner(&b.c, h)).sum::<f64>();
        let mut rhs1 = DVector::zeros(st.m + st.nf);
        for i in 0..st.m {
            rhs1[i] = st.b[i] + g[i];
        }
        for j in 0..st.nf {
            rhs1[st.m + j] = st.cf[j];
        }
        let u1 = solver.kkt_solve(&rhs1);

        // predictor
        let e_aff: Vec<DMatrix<f64>> = sc.iter().map(|s| DMatrix::from_diagonal(&(-&s.lam))).collect();
        let r4n_aff = -&pt.xn;
        let r5_aff = -pt.tau * pt.kappa;
        let d_aff = solver.direction(&pt, &res, &sc, &hn, &u1, &g, chc, 1.0, &e_aff, &r4n_aff, r5_aff);
        let (a_aff, dxt, dzt) = max_step(&pt, &d_aff, &sc);
        let a_aff = a_aff.min(1.0);
        let sigma = (1.0 - a_aff).powi(3).clamp(0.0, 1.0);
        let eta = 1.0 - sigma;

        // corrector
        let e_cor: Vec<DMatrix<f64>> = sc
            .iter()
            .zip(dxt.iter().zip(&dzt))
            .map(|(s, (dx, dz))| {
                let n = s.lam.len();
                let prod = dx * dz;
                DMatrix::from_fn(n, n, |i, j| {
                    let mut ds = -0.5 * (prod[(i, j)] + prod[(j, i)]);
                    if i == j {
                        ds += sigma * mu - s.lam[i] * s.lam[i];
                    }
                    2.0 * ds / (s.lam[i] + s.lam[j])
                })
            })
            .collect();
        let dxn_t = d_aff.xn.component_div(&wn);
        let dzn_t = d_aff.zn.component_mul(&wn);
        let dsn: DVector<f64> = DVector::from_fn(st.nn, |k, _| -lamn[k] * lamn[k] + sigma * mu - dxn_t[k] * dzn_t[k]);
        let r4n = wn.component_mul(&dsn.component_div(&lamn));
        let r5 = -pt.tau * pt.kappa + sigma * mu - d_aff.tau * d_aff.kappa;
        let d = solver.direction(&pt, &res, &sc, &hn, &u1, &g, chc, eta, &e_cor, &r4n, r5);
        let (amax, _, _) = max_step(&pt, &d, &sc);
        let alpha = (STEP * amax).min(1.0);
        if !alpha.is_finite() || alpha < 1e-10 {
            stall += 1;
        } else {
            stall = 0;
        }
        pt.xf += &d.xf * alpha;
        pt.xn += &d.xn * alpha;
        for (x, dx) in pt.xs.iter_mut().zip(&d.xs) {
            *x += dx * alpha;
            x.fill_lower_triangle_with_upper_triangle();
        }
        pt.y += &d.y * alpha;
        pt.zn += &d.zn * alpha;
        for (z, dz) in pt.zs.iter_mut().zip(&d.zs) {
            *z += dz * alpha;
            z.fill_lower_triangle_with_upper_triangle();
        }
        pt.tau += alpha * d.tau;
        pt.kappa += alpha * d.kappa;
        if !pt.tau.is_finite() || pt.tau <= 0.0 {
            break;
        }
    }
    stats.seconds = t0.elapsed().as_secs_f64();
    if status == SolveStatus::Inaccurate {
        if let Some((_, best, mut s)) = best_near {
            if tol.verbose {
                eprintln!("    near optimal at iteration {}", s.iterations);
            }
            s.seconds = stats.seconds;
            s.regularization = stats.regularization;
            s.iterations = stats.iterations;
            return Ok(finish(p, &st, &best, SolveStatus::NearOptimal, s));
        }
        if let Some((ratio, best)) = best_farkas {
            if ratio <= tol.infeas_loose {
                return Ok(finish(p, &st, &best, SolveStatus::Infeasible, stats));
            }
        }
    }
    Ok(finish(p, &st, &pt, status, stats))
}

fn project_feasible(
    st: &Std,
    solver: &Solver,
    pt: &Point,
    res: &Residuals,
    sc: &[Scaling],
    hn: &DVector<f64>,
    tol: f64,
) -> Option<Point> {
    let mut rhs = DVector::zeros(st.m + st.nf);
    for i in 0..st.m {
        rhs[i] = -res.rp[i] / pt.tau;
    }
    let u = solver.kkt_solve(&rhs);
    let y = u.rows(0, st.m).into_owned();
    let (_, atn, ats) = st.at_mul(&y);
    let mut q = pt.clone();
    q.xf = &pt.xf / pt.tau + u.rows(st.m, st.nf);
    q.xn = &pt.xn / pt.tau + hn.component_mul(&atn);
    if q.xn.iter().any(|v| !(*v >= 0.0)) {
        return None;
    }
    for ((x, s), a) in q.xs.iter_mut().zip(sc).zip(&ats) {
        *x = &*x / pt.tau + &s.w * a * &s.w;
        x.fill_lower_triangle_with_upper_triangle();
        if !cholesky_in_place(&mut x.clone()) {
            return None;
        }
    }
    q.y = &pt.y / pt.tau;
    q.zn = &pt.zn / pt.tau;
    for z in &mut q.zs {
        *z /= pt.tau;
    }
    q.tau = 1.0;
    q.kappa = pt.kappa / pt.tau;
    let r = st.a_mul(&q.xf, &q.xn, &q.xs) - &st.b;
    (r.amax() <= tol).then_some(q)
}

fn finish(p: &ConicProgram, st: &Std, pt: &Point, status: SolveStatus, stats: SolveStats) -> SolveResult {
    let norm = match status {
        SolveStatus::Infeasible | SolveStatus::Unbounded => 1.0,
        _ => pt.tau,
    };
    let mut x = vec![0.0; p.num_vars()];
    for (v, xv) in x.iter_mut().enumerate() {
        *xv = match p.slot(v) {
            Slot::Free { index } => pt.xf[index as usize],
            Slot::NonNeg { index } => pt.xn[index as usize],
            Slot::Psd { block, i, j } => pt.xs[block as usize][(i as usize, j as usize)],
        } / norm;
    }
    let mut y = vec![0.0; p.num_rows()];
    for (k, &orig) in st.row_map.iter().enumerate() {
        y[orig] = st.scale[k] * pt.y[k] / norm;
    }
    let c = p.objective_dense();
    let pobj: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    let dobj: f64 = p.rows().iter().zip(&y).map(|(r, yv)| r.rhs * yv).sum();
    let farkas = if status == SolveStatus::Infeasible {
        let by = dobj;
        Some(y.iter().map(|v| v / by).collect())
    } else {
        None
    };
    if status == SolveStatus::Unbounded {
        let cx = pobj;
        for v in &mut x {
            *v /= -cx;
        }
    }
    SolveResult {
        status,
        x,
        y,
        primal_objective: pobj,
        dual_objective: dobj,
        farkas,
        stats,
        psd_duals: pt.zs.iter().map(|z| z / norm).collect(),
    }
}
