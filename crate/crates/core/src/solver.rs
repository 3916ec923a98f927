//! Dense primal-dual interior-point solver for convex quadratic programs
//!
//! ```text
//!     minimize    1/2 x'Qx + c'x
//!     subject to  Aeq x = beq
//!                 g_r' x <= h_r        (sparse general inequalities)
//!                 lb <= x <= ub
//! ```
//!
//! Bounds and general inequalities are treated uniformly as `C x + s = d`,
//! `s >= 0`. The Newton system is reduced onto the equality multipliers:
//! the Hessian block `Q + C' W C` is block diagonal over connected groups of
//! variables (variables sharing a `Q` entry or an inequality row), and each
//! block is factored densely. Steps follow Mehrotra's predictor-corrector.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Phase-1 residual above which a program is declared infeasible.
pub const INFEASIBILITY_THRESHOLD: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(indices.len(), values.len());
        Self { indices, values }
    }

    fn dot(&self, x: &DVector<f64>) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * x[i]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ConvexProgram {
    c: DVector<f64>,
    /// Upper-triangle entries `(i, j, v)` with `i <= j`; `Q[i][j] = Q[j][i] = v`.
    q: Vec<(usize, usize, f64)>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    ineq: Vec<(SparseRow, f64)>,
    lb: DVector<f64>,
    ub: DVector<f64>,
}

impl ConvexProgram {
    /// Linear program skeleton. Bounds may be infinite.
    pub fn new(
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self> {
        let v = c.len();
        if a_eq.ncols() != v && a_eq.nrows() > 0 {
            return Err(Error::Dimension(format!(
                "Aeq has {} columns for {v} variables",
                a_eq.ncols()
            )));
        }
        if a_eq.nrows() != b_eq.len() {
            return Err(Error::Dimension(format!(
                "Aeq has {} rows but beq has {} entries",
                a_eq.nrows(),
                b_eq.len()
            )));
        }
        if lb.len() != v || ub.len() != v {
            return Err(Error::Dimension(format!(
                "bounds have lengths {}/{} for {v} variables",
                lb.len(),
                ub.len()
            )));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("cost vector"));
        }
        if a_eq.iter().chain(b_eq.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("equality constraints"));
        }
        if lb.iter().chain(ub.iter()).any(|x| x.is_nan()) {
            return Err(Error::NonFinite("bounds"));
        }
        if let Some(i) = (0..v).find(|&i| lb[i] > ub[i]) {
            return Err(Error::InvalidArgument(format!(
                "lb[{i}] = {} exceeds ub[{i}] = {}",
                lb[i], ub[i]
            )));
        }
        let a_eq = if a_eq.nrows() == 0 {
            DMatrix::zeros(0, v)
        } else {
            a_eq
        };
        Ok(Self {
            c,
            q: Vec::new(),
            a_eq,
            b_eq,
            ineq: Vec::new(),
            lb,
            ub,
        })
    }

    /// Adds symmetric quadratic entries (upper triangle, duplicates summed).
    /// Small programs are checked for positive semidefiniteness.
    pub fn with_quadratic(mut self, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let v = self.num_vars();
        for &(i, j, val) in &entries {
            if i > j || j >= v {
                return Err(Error::Dimension(format!(
                    "quadratic entry ({i}, {j}) must satisfy i <= j < {v}"
                )));
            }
            if !val.is_finite() {
                return Err(Error::NonFinite("quadratic cost"));
            }
        }
        self.q.extend(entries);
        if v <= 200 && !self.q.is_empty() {
            let q = self.quadratic_dense();
            let eig = SymmetricEigen::new(q.clone());
            let scale = q.amax().max(1.0);
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min < -1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "quadratic cost is not positive semidefinite (min eigenvalue {min:.3e})"
                )));
            }
        }
        Ok(self)
    }

    /// Adds `row' x <= rhs`.
    pub fn with_inequality(mut self, row: SparseRow, rhs: f64) -> Result<Self> {
        if row.indices.iter().any(|&i| i >= self.num_vars()) {
            return Err(Error::Dimension("inequality references a missing variable".into()));
        }
        if !rhs.is_finite() || row.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inequality"));
        }
        self.ineq.push((row, rhs));
        Ok(self)
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn a_eq(&self) -> &DMatrix<f64> {
        &self.a_eq
    }

    pub fn b_eq(&self) -> &DVector<f64> {
        &self.b_eq
    }

    pub fn lb(&self) -> &DVector<f64> {
        &self.lb
    }

    pub fn ub(&self) -> &DVector<f64> {
        &self.ub
    }

    pub fn inequalities(&self) -> &[(SparseRow, f64)] {
        &self.ineq
    }

    pub fn quadratic_entries(&self) -> &[(usize, usize, f64)] {
        &self.q
    }

    pub fn quadratic_dense(&self) -> DMatrix<f64> {
        let v = self.num_vars();
        let mut q = DMatrix::zeros(v, v);
        for &(i, j, val) in &self.q {
            q[(i, j)] += val;
            if i != j {
                q[(j, i)] += val;
            }
        }
        q
    }

    fn q_times(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for &(i, j, val) in &self.q {
            out[i] += val * x[j];
            if i != j {
                out[j] += val * x[i];
            }
        }
        out
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.q_times(x)) + self.c.dot(x)
    }

    /// Largest violation of the equality, bound and inequality constraints.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = if self.a_eq.nrows() > 0 {
            (&self.a_eq * x - &self.b_eq).amax()
        } else {
            0.0
        };
        let bounds = (0..x.len())
            .map(|i| (self.lb[i] - x[i]).max(x[i] - self.ub[i]).max(0.0))
            .fold(0.0, f64::max);
        let ineq = self
            .ineq
            .iter()
            .map(|(r, h)| (r.dot(x) - h).max(0.0))
            .fold(0.0, f64::max);
        eq.max(bounds).max(ineq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct KktResiduals {
    /// Equality, bound and inequality violation (infinity norm).
    pub primal: f64,
    /// Stationarity residual (infinity norm).
    pub dual: f64,
    /// Largest slack-multiplier product.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub mu: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub objective: f64,
    /// Multipliers `y` of `Aeq x = beq` with stationarity `Qx + c + Aeq'y + ... = 0`.
    pub eq_multipliers: DVector<f64>,
    /// Phase-1 residual when the program was found infeasible.
    pub infeasibility: Option<f64>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iter: 100,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub verdict: Feasibility,
    /// Smallest equality residual found (infinity norm, original units).
    pub margin: f64,
    /// The phase-1 point, feasible for bounds and inequalities.
    pub x: DVector<f64>,
}

/// Solves `prog`. A run that does not reach the tolerances is followed by a
/// phase-1 check that distinguishes `Infeasible` from `MaxIter`.
pub fn solve(prog: &ConvexProgram, opts: &SolveOptions) -> Result<SolveResult> {
    let mut res = interior_point(prog, opts)?;
    if res.status != SolveStatus::Optimal {
        let phase1 = feasibility_with(prog, opts)?;
        if phase1.verdict == Feasibility::Infeasible {
            res.status = SolveStatus::Infeasible;
            res.infeasibility = Some(phase1.margin);
        }
    }
    Ok(res)
}

/// Phase-1 feasibility: minimizes the l1 norm of elastic equality slacks
/// while keeping bounds and inequalities hard.
pub fn feasibility(prog: &ConvexProgram) -> Result<FeasibilityResult> {
    feasibility_with(prog, &SolveOptions::default())
}

fn feasibility_with(prog: &ConvexProgram, opts: &SolveOptions) -> Result<FeasibilityResult> {
    let v = prog.num_vars();
    let p = prog.a_eq.nrows();
    if p == 0 {
        let x = DVector::from_fn(v, |i, _| clamp_start(prog.lb[i], prog.ub[i]));
        return Ok(FeasibilityResult {
            verdict: Feasibility::Feasible,
            margin: 0.0,
            x,
        });
    }
    let nv = v + 2 * p;
    let mut c = DVector::zeros(nv);
    c.rows_mut(v, 2 * p).fill(1.0);
    let mut a = DMatrix::zeros(p, nv);
    a.view_mut((0, 0), (p, v)).copy_from(&prog.a_eq);
    for i in 0..p {
        a[(i, v + i)] = 1.0;
        a[(i, v + p + i)] = -1.0;
    }
    let mut lb = DVector::zeros(nv);
    let mut ub = DVector::from_element(nv, f64::INFINITY);
    lb.rows_mut(0, v).copy_from(&prog.lb);
    ub.rows_mut(0, v).copy_from(&prog.ub);
    let mut phase1 = ConvexProgram::new(c, a, prog.b_eq.clone(), lb, ub)?;
    phase1.ineq = prog.ineq.clone();
    let inner = SolveOptions {
        kkt_tol: opts.kkt_tol.min(1e-10),
        max_iter: opts.max_iter.max(100),
        trace: false,
    };
    let res = interior_point(&phase1, &inner)?;
    let x = res.x.rows(0, v).into_owned();
    let margin = if v == 0 {
        prog.b_eq.amax()
    } else {
        (&prog.a_eq * &x - &prog.b_eq).amax()
    };
    let verdict = if margin > INFEASIBILITY_THRESHOLD {
        Feasibility::Infeasible
    } else {
        Feasibility::Feasible
    };
    Ok(FeasibilityResult { verdict, margin, x })
}

fn clamp_start(lb: f64, ub: f64) -> f64 {
    match (lb.is_finite(), ub.is_finite()) {
        (true, true) => 0.5 * (lb + ub),
        (true, false) => lb + 1.0,
        (false, true) => ub - 1.0,
        (false, false) => 0.0,
    }
}

/// Variables grouped so that `Q + C' W C` is block diagonal.
struct Block {
    vars: Vec<usize>,
    /// Inequality rows (indices into `rows`) whose support lies in this block.
    rows: Vec<usize>,
    /// Dense quadratic block in local coordinates.
    q: DMatrix<f64>,
}

struct Structure {
    blocks: Vec<Block>,
    /// Variable -> (block, local index).
    loc: Vec<(usize, usize)>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

fn build_structure(v: usize, q: &[(usize, usize, f64)], rows: &[SparseRow], q_scale: f64) -> Structure {
    let mut parent: Vec<usize> = (0..v).collect();
    for &(i, j, _) in q {
        union(&mut parent, i, j);
    }
    for r in rows {
        for w in r.indices.windows(2) {
            union(&mut parent, w[0], w[1]);
        }
    }
    let mut block_of_root = vec![usize::MAX; v];
    let mut blocks: Vec<Block> = Vec::new();
    let mut loc = vec![(0, 0); v];
    for i in 0..v {
        let root = find(&mut parent, i);
        if block_of_root[root] == usize::MAX {
            block_of_root[root] = blocks.len();
            blocks.push(Block {
                vars: Vec::new(),
                rows: Vec::new(),
                q: DMatrix::zeros(0, 0),
            });
        }
        let b = block_of_root[root];
        loc[i] = (b, blocks[b].vars.len());
        blocks[b].vars.push(i);
    }
    for b in &mut blocks {
        b.q = DMatrix::zeros(b.vars.len(), b.vars.len());
    }
    for &(i, j, val) in q {
        let (b, li) = loc[i];
        let (_, lj) = loc[j];
        blocks[b].q[(li, lj)] += val * q_scale;
        if li != lj {
            blocks[b].q[(lj, li)] += val * q_scale;
        }
    }
    for (r, row) in rows.iter().enumerate() {
        if let Some(&first) = row.indices.first() {
            blocks[loc[first].0].rows.push(r);
        }
    }
    Structure { blocks, loc }
}

/// Factored reduced system for one interior-point iteration.
struct Factorization {
    /// Unregularized diagonal blocks of `H`, used for refinement.
    h: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
    /// `H^{-1} A'` (V x p).
    h_inv_at: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
}

struct Kernel<'a> {
    st: &'a Structure,
    rows: &'a [SparseRow],
    a: &'a DMatrix<f64>,
    v: usize,
}

impl Kernel<'_> {
    fn factor(&self, w: &DVector<f64>) -> Option<Factorization> {
        let mut chol = Vec::with_capacity(self.st.blocks.len());
        let mut blocks = Vec::with_capacity(self.st.blocks.len());
        for b in &self.st.blocks {
            let nb = b.vars.len();
            let mut h = b.q.clone();
            for &r in &b.rows {
                let row = &self.rows[r];
                let wr = w[r];
                for (ii, &gi) in row.indices.iter().enumerate() {
                    let li = self.st.loc[gi].1;
                    for (jj, &gj) in row.indices.iter().enumerate() {
                        let lj = self.st.loc[gj].1;
                        h[(li, lj)] += wr * row.values[ii] * row.values[jj];
                    }
                }
            }
            // Diagonal entries span many orders of magnitude near the optimum,
            // so any shift is relative to each entry rather than to the largest.
            if h.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let diag: Vec<f64> = (0..nb).map(|i| h[(i, i)].abs().max(1e-300)).collect();
            let mut reg = 0.0;
            let factor = loop {
                let mut hr = h.clone();
                for i in 0..nb {
                    hr[(i, i)] += reg * diag[i].max(1.0);
                }
                if let Some(c) = Cholesky::new(hr) {
                    break c;
                }
                reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
                if reg > 1e-2 {
                    return None;
                }
            };
            chol.push(factor);
            blocks.push(h);
        }
        let p = self.a.nrows();
        let mut h_inv_at = DMatrix::zeros(self.v, p);
        for j in 0..p {
            let col = self.a.row(j).transpose();
            let sol = self.block_solve(&chol, &col);
            h_inv_at.set_column(j, &sol);
        }
        let schur = if p > 0 {
            let s = self.a * &h_inv_at;
            if s.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let smax = (0..p).map(|i| s[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut reg = 1e-13 * smax;
            loop {
                let mut sr = s.clone();
                for i in 0..p {
                    sr[(i, i)] += reg;
                }
                if let Some(c) = Cholesky::new(sr) {
                    break Some(c);
                }
                reg *= 100.0;
                if reg > smax {
                    return None;
                }
            }
        } else {
            None
        };
        Some(Factorization {
            h: blocks,
            chol,
            h_inv_at,
            schur,
        })
    }

    fn block_solve(&self, chol: &[Cholesky<f64, Dyn>], rhs: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.v);
        for (b, c) in self.st.blocks.iter().zip(chol) {
            let local = DVector::from_iterator(b.vars.len(), b.vars.iter().map(|&i| rhs[i]));
            let sol = c.solve(&local);
            for (li, &gi) in b.vars.iter().enumerate() {
                out[gi] = sol[li];
            }
        }
        out
    }

    fn h_times(&self, f: &Factorization, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.v);
        for (b, h) in self.st.blocks.iter().zip(&f.h) {
            let local = DVector::from_iterator(b.vars.len(), b.vars.iter().map(|&i| x[i]));
            let prod = h * local;
            for (li, &gi) in b.vars.iter().enumerate() {
                out[gi] = prod[li];
            }
        }
        out
    }

    /// Solves `H dx + A' dy = r1`, `A dx = r2`, refining against the
    /// unregularized system: the Schur complement loses digits once the
    /// barrier weights span many orders of magnitude.
    fn solve(&self, f: &Factorization, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy) = self.solve_once(f, r1, r2);
        let (s1, s2) = (r1.amax(), r2.amax());
        for _ in 0..3 {
            let e1 = r1 - self.h_times(f, &dx) - self.a.transpose() * &dy;
            let e2 = r2 - self.a * &dx;
            if e1.amax() <= 1e-15 * s1 && e2.amax() <= 1e-15 * s2 {
                break;
            }
            let (cx, cy) = self.solve_once(f, &e1, &e2);
            dx += cx;
            dy += cy;
        }
        (dx, dy)
    }

    fn solve_once(&self, f: &Factorization, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let t = self.block_solve(&f.chol, r1);
        match &f.schur {
            Some(s) => {
                let rhs = self.a * &t - r2;
                let dy = s.solve(&rhs);
                let dx = t - &f.h_inv_at * &dy;
                (dx, dy)
            }
            None => (t, DVector::zeros(0)),
        }
    }
}

/// Maps the equality rows onto an orthonormal basis of their span. Directions
/// with singular value below `1e-13 * max` are dropped; the residual check in
/// original units still sees them.
fn equality_transform(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    if p == 0 {
        return DMatrix::zeros(0, 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = &svd.singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return DMatrix::zeros(0, p);
    }
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > 1e-13 * smax).collect();
    DMatrix::from_fn(keep.len(), p, |r, c| u[(c, keep[r])] / sv[keep[r]])
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

fn interior_point(prog: &ConvexProgram, opts: &SolveOptions) -> Result<SolveResult> {
    let v = prog.num_vars();

    // Equalities are rotated onto orthonormal rows, T = S^-1 U' from the thin
    // SVD of A. Nearly dependent rows otherwise leave the Schur complement
    // with eigenvalues below any usable regularization.
    let t = equality_transform(&prog.a_eq);
    let a = &t * &prog.a_eq;
    let b = &t * &prog.b_eq;
    let p = a.nrows();
    let cmax = prog
        .c
        .amax()
        .max(prog.q.iter().map(|e| e.2.abs()).fold(0.0, f64::max));
    let obj_scale = if cmax > 0.0 { 1.0 / cmax } else { 1.0 };
    let c = &prog.c * obj_scale;
    let q_scaled: Vec<(usize, usize, f64)> = prog.q.iter().map(|&(i, j, x)| (i, j, x * obj_scale)).collect();
    let q_times = |x: &DVector<f64>| {
        let mut out = DVector::zeros(v);
        for &(i, j, val) in &q_scaled {
            out[i] += val * x[j];
            if i != j {
                out[j] += val * x[i];
            }
        }
        out
    };

    // Inequalities C x <= d: general rows, then finite bounds.
    let mut rows: Vec<SparseRow> = prog.ineq.iter().map(|(r, _)| r.clone()).collect();
    let mut d: Vec<f64> = prog.ineq.iter().map(|(_, h)| *h).collect();
    for i in 0..v {
        if prog.ub[i].is_finite() {
            rows.push(SparseRow::new(vec![i], vec![1.0]));
            d.push(prog.ub[i]);
        }
        if prog.lb[i].is_finite() {
            rows.push(SparseRow::new(vec![i], vec![-1.0]));
            d.push(-prog.lb[i]);
        }
    }
    let d = DVector::from_vec(d);
    let mi = rows.len();
    let c_times = |x: &DVector<f64>| DVector::from_fn(mi, |r, _| rows[r].dot(x));
    let ct_times = |z: &DVector<f64>| {
        let mut out = DVector::zeros(v);
        for (r, row) in rows.iter().enumerate() {
            for (&i, &val) in row.indices.iter().zip(&row.values) {
                out[i] += val * z[r];
            }
        }
        out
    };

    let st = build_structure(v, &prog.q, &rows, obj_scale);
    let kernel = Kernel {
        st: &st,
        rows: &rows,
        a: &a,
        v,
    };

    let mut x = DVector::from_fn(v, |i, _| clamp_start(prog.lb[i], prog.ub[i]));
    let mut s = (&d - c_times(&x)).map(|si| si.max(1.0));
    let mut z = DVector::from_element(mi, 1.0);
    let mut y = DVector::zeros(p);

    let tol = opts.kkt_tol;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut kkt = KktResiduals::default();

    for it in 0..=opts.max_iter {
        iterations = it;
        let r_d = q_times(&x) + &c + a.transpose() * &y + ct_times(&z);
        let r_p = &a * &x - &b;
        let r_i = c_times(&x) + &s - &d;
        let comp = s.component_mul(&z);
        let mu = if mi > 0 { comp.sum() / mi as f64 } else { 0.0 };

        // Residuals in scaled and original units.
        let rp_orig = &prog.a_eq * &x - &prog.b_eq;
        let bound_viol = (0..v)
            .map(|i| (prog.lb[i] - x[i]).max(x[i] - prog.ub[i]).max(0.0))
            .fold(0.0, f64::max);
        let ineq_viol = r_i.iter().zip(s.iter()).map(|(ri, si)| (ri - si).max(0.0)).fold(0.0, f64::max);
        let scaled = KktResiduals {
            primal: r_p.amax().max(r_i.amax()),
            dual: r_d.amax(),
            complementarity: comp.amax(),
        };
        kkt = KktResiduals {
            primal: rp_orig.amax().max(bound_viol).max(ineq_viol).max(r_i.amax()),
            dual: r_d.amax() / obj_scale,
            complementarity: comp.amax() / obj_scale,
        };
        if opts.trace {
            trace.push(TraceEntry {
                iteration: it,
                primal: kkt.primal,
                dual: kkt.dual,
                complementarity: kkt.complementarity,
                mu,
                step: 0.0,
            });
        }
        if !(kkt.max().is_finite()) {
            break;
        }
        if scaled.max() <= tol && kkt.max() <= tol {
            status = SolveStatus::Optimal;
            break;
        }
        if it == opts.max_iter {
            break;
        }

        let w = z.component_div(&s);
        let Some(fact) = kernel.factor(&w) else {
            break;
        };
        let neg_rp = -&r_p;
        let newton = |r_c: &DVector<f64>| {
            // rhs1 = -r_d + C'((r_c - z.r_i)/s)
            let inner = DVector::from_fn(mi, |r, _| (r_c[r] - z[r] * r_i[r]) / s[r]);
            let r1 = -&r_d + ct_times(&inner);
            let (dx, dy) = kernel.solve(&fact, &r1, &neg_rp);
            let ds = -&r_i - c_times(&dx);
            let dz = DVector::from_fn(mi, |r, _| (-r_c[r] - z[r] * ds[r]) / s[r]);
            (dx, dy, ds, dz)
        };

        // Predictor.
        let (_, _, ds_a, dz_a) = newton(&comp);
        let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if mi > 0 {
            (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };

        // Corrector.
        // Pushing complementarity far below the tolerance only inflates the
        // barrier weights.
        let target = (sigma * mu).max(1e-2 * tol);
        let r_c = DVector::from_fn(mi, |r, _| comp[r] + ds_a[r] * dz_a[r] - target);
        let (dx, dy, ds, dz) = newton(&r_c);
        let alpha_max = max_step(&s, &ds).min(max_step(&z, &dz));
        let alpha = (0.995 * alpha_max).min(1.0);
        if !alpha.is_finite() || dx.iter().any(|v| !v.is_finite()) {
            break;
        }
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if let Some(last) = trace.last_mut() {
            last.step = alpha;
        }
    }

    let eq_multipliers = t.transpose() * &y / obj_scale;
    let objective = prog.objective(&x);
    Ok(SolveResult {
        x,
        status,
        kkt,
        iterations,
        objective,
        eq_multipliers,
        infeasibility: None,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn boxed(c: &[f64], lb: f64, ub: f64) -> ConvexProgram {
        let v = c.len();
        ConvexProgram::new(
            DVector::from_row_slice(c),
            DMatrix::zeros(0, v),
            DVector::zeros(0),
            DVector::from_element(v, lb),
            DVector::from_element(v, ub),
        )
        .unwrap()
    }

    #[test]
    fn minimize_x_in_unit_box() {
        let res = solve(&boxed(&[1.0], 0.0, 1.0), &SolveOptions::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        assert!(res.x[0].abs() < 1e-8);
        assert!(res.kkt.max() <= 1e-8);
    }

    #[test]
    fn split_absolute_value() {
        let prog = ConvexProgram::new(
            DVector::from_row_slice(&[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_row_slice(&[0.3]),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        let res = solve(&prog, &SolveOptions::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        assert_relative_eq!(res.objective, 0.3, epsilon = 1e-8);
        assert_relative_eq!(res.x[0], 0.3, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_equality_is_detected() {
        let prog = ConvexProgram::new(
            DVector::from_row_slice(&[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[2.0]),
            DVector::zeros(1),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let f = feasibility(&prog).unwrap();
        assert_eq!(f.verdict, Feasibility::Infeasible);
        assert_relative_eq!(f.margin, 1.0, epsilon = 1e-7);
        let res = solve(&prog, &SolveOptions::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Infeasible);
        assert!(res.infeasibility.unwrap() > INFEASIBILITY_THRESHOLD);
    }

    #[test]
    fn feasible_equality() {
        let prog = ConvexProgram::new(
            DVector::from_row_slice(&[0.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.5]),
            DVector::zeros(1),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let f = feasibility(&prog).unwrap();
        assert_eq!(f.verdict, Feasibility::Feasible);
        assert!(f.margin <= INFEASIBILITY_THRESHOLD);
    }

    #[test]
    fn strictly_convex_qp_with_inequality() {
        // min (x0-1)^2 + (x1-1)^2 s.t. x0 + x1 <= 1  ->  (0.5, 0.5)
        let prog = ConvexProgram::new(
            DVector::from_row_slice(&[-2.0, -2.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::from_element(2, f64::NEG_INFINITY),
            DVector::from_element(2, f64::INFINITY),
        )
        .unwrap()
        .with_quadratic(vec![(0, 0, 2.0), (1, 1, 2.0)])
        .unwrap()
        .with_inequality(SparseRow::new(vec![0, 1], vec![1.0, 1.0]), 1.0)
        .unwrap();
        let res = solve(&prog, &SolveOptions::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        assert_relative_eq!(res.x[0], 0.5, epsilon = 1e-7);
        assert_relative_eq!(res.x[1], 0.5, epsilon = 1e-7);
    }

    #[test]
    fn equality_multiplier_sign_convention() {
        // min x^2/2 s.t. x = 2: stationarity x + y = 0 -> y = -2.
        let prog = ConvexProgram::new(
            DVector::zeros(1),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[2.0]),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
        )
        .unwrap()
        .with_quadratic(vec![(0, 0, 1.0)])
        .unwrap();
        let res = solve(&prog, &SolveOptions::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        assert_relative_eq!(res.eq_multipliers[0], -2.0, epsilon = 1e-7);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = ConvexProgram::new(
            DVector::from_row_slice(&[f64::NAN]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(1),
            DVector::zeros(1),
        );
        assert!(matches!(bad, Err(Error::NonFinite(_))));
        let dims = ConvexProgram::new(
            DVector::zeros(2),
            DMatrix::zeros(1, 3),
            DVector::zeros(1),
            DVector::zeros(2),
            DVector::zeros(2),
        );
        assert!(matches!(dims, Err(Error::Dimension(_))));
        let order = ConvexProgram::new(
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 1.0),
        );
        assert!(matches!(order, Err(Error::InvalidArgument(_))));
        let indefinite = boxed(&[0.0, 0.0], -1.0, 1.0).with_quadratic(vec![(0, 1, 1.0)]);
        assert!(indefinite.is_err());
    }
}
