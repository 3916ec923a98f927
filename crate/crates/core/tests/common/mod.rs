#![allow(dead_code)]

use handsoff::lti::{normality_sufficient, Normality};
use handsoff::solver::{ConvexProgram, SparseRow};
use handsoff::{FiniteHorizonProblem, LtiSystem, Objective};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Box-constrained LP `min c'x, A x = b, row'x <= rhs, lb <= x <= ub`.
#[derive(Debug, Clone)]
pub struct TinyLp {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub ineq: Vec<(DVector<f64>, f64)>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl TinyLp {
    pub fn random(rng: &mut impl Rng) -> Self {
        let v = rng.gen_range(2..=5);
        let p = rng.gen_range(0..v.min(3));
        let lb = DVector::from_fn(v, |_, _| rng.gen_range(-2.0..0.0));
        let ub = DVector::from_fn(v, |i, _| lb[i] + rng.gen_range(0.5..3.0));
        let x_in = DVector::from_fn(v, |i, _| lb[i] + rng.gen_range(0.2..0.8) * (ub[i] - lb[i]));
        let a = DMatrix::from_fn(p, v, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * &x_in;
        let ineq = (0..rng.gen_range(0..=1))
            .map(|_| {
                let row = DVector::from_fn(v, |_, _| rng.gen_range(-1.0..1.0));
                let rhs = row.dot(&x_in) + rng.gen_range(0.05..1.0);
                (row, rhs)
            })
            .collect();
        let c = DVector::from_fn(v, |_, _| rng.gen_range(-1.0..1.0));
        Self { c, a, b, ineq, lb, ub }
    }

    pub fn program(&self) -> ConvexProgram {
        let mut prog = ConvexProgram::new(
            self.c.clone(),
            self.a.clone(),
            self.b.clone(),
            self.lb.clone(),
            self.ub.clone(),
        )
        .unwrap();
        for (row, rhs) in &self.ineq {
            let idx: Vec<usize> = (0..row.len()).collect();
            prog = prog
                .with_inequality(SparseRow::new(idx, row.iter().copied().collect()), *rhs)
                .unwrap();
        }
        prog
    }

    /// Optimal value by enumerating every basic solution. Inequalities get a
    /// bounded slack whose upper bound can never bind.
    pub fn vertex_optimum(&self) -> Option<f64> {
        let v = self.c.len();
        let p = self.a.nrows();
        let q = self.ineq.len();
        let nv = v + q;
        let rows = p + q;
        let mut a = DMatrix::zeros(rows, nv);
        let mut b = DVector::zeros(rows);
        let mut lb = DVector::zeros(nv);
        let mut ub = DVector::zeros(nv);
        let mut c = DVector::zeros(nv);
        for j in 0..v {
            lb[j] = self.lb[j];
            ub[j] = self.ub[j];
            c[j] = self.c[j];
        }
        a.view_mut((0, 0), (p, v)).copy_from(&self.a);
        b.rows_mut(0, p).copy_from(&self.b);
        for (k, (row, rhs)) in self.ineq.iter().enumerate() {
            for j in 0..v {
                a[(p + k, j)] = row[j];
            }
            a[(p + k, v + k)] = 1.0;
            b[p + k] = *rhs;
            let reach: f64 = (0..v).map(|j| row[j].abs() * self.lb[j].abs().max(self.ub[j].abs())).sum();
            ub[v + k] = rhs.abs() + reach + 1.0;
        }
        let mut best: Option<f64> = None;
        for basis in subsets(nv, rows) {
            let nonbasic: Vec<usize> = (0..nv).filter(|j| !basis.contains(j)).collect();
            let ab = DMatrix::from_fn(rows, rows, |i, k| a[(i, basis[k])]);
            if rows > 0 {
                let sv = ab.clone().svd(false, false).singular_values;
                if sv.min() < 1e-10 * sv.max().max(1.0) {
                    continue;
                }
            }
            for mask in 0..1u32 << nonbasic.len() {
                let mut x = DVector::zeros(nv);
                for (bit, &j) in nonbasic.iter().enumerate() {
                    x[j] = if mask >> bit & 1 == 1 { ub[j] } else { lb[j] };
                }
                if rows > 0 {
                    let rhs = &b - &a * &x;
                    let Some(xb) = ab.clone().lu().solve(&rhs) else { continue };
                    for (k, &j) in basis.iter().enumerate() {
                        x[j] = xb[k];
                    }
                }
                let feasible = (0..nv).all(|j| x[j] >= lb[j] - 1e-9 && x[j] <= ub[j] + 1e-9);
                if feasible {
                    let val = c.dot(&x);
                    best = Some(best.map_or(val, |b: f64| b.min(val)));
                }
            }
        }
        best
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Single-input plant with entries of `A`, `b` and `x0` uniform on `[-1, 1]`
/// that passes the sufficient normality test.
pub fn random_normal_problem(rng: &mut impl Rng, max_n: usize, steps: std::ops::RangeInclusive<usize>, horizon: std::ops::Range<f64>) -> FiniteHorizonProblem {
    loop {
        let n = rng.gen_range(1..=max_n);
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let sys = LtiSystem::from_rows(&a, &b).unwrap();
        if normality_sufficient(&sys) != Normality::Normal {
            continue;
        }
        let steps = rng.gen_range(steps.clone());
        let t = rng.gen_range(horizon.clone());
        let x0 = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        return FiniteHorizonProblem::new(sys, x0, t, steps, Objective::L1);
    }
}

/// The four-state plant with `x0 = [1, 1, 1, 1]`, `T = 10` and unit weights.
pub fn four_state(steps: usize, objective: Objective) -> FiniteHorizonProblem {
    let a = vec![
        vec![0.0, -1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 1.0, 0.0],
    ];
    let b = vec![vec![2.0], vec![0.0], vec![0.0], vec![0.0]];
    let sys = LtiSystem::from_rows(&a, &b).unwrap();
    FiniteHorizonProblem::new(sys, vec![1.0; 4], 10.0, steps, objective)
}
