//! Stacks the zero-order-hold dynamics of a finite-horizon problem into a
//! [`ConvexProgram`] over the control samples alone.
//!
//! The state is eliminated: `x[N] = Phi x0 + Gamma u`, so the only coupling
//! constraint is the terminal equality `Gamma u = xT - Phi x0`. L1 terms use
//! the split `u = u+ - u-` with `u+, u- in [0, 1]` and `u+ + u- <= 1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{discretize_zoh, expm, DiscretizedSystem};
use crate::signals::ControlSignal;
use crate::solver::{ConvexProgram, SparseRow};
use crate::sparse_control::{FiniteHorizonProblem, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Two nonnegative variables `(u+, u-)` per cell.
    Split,
    /// One variable `u in [-1, 1]` per cell.
    Direct,
}

#[derive(Debug, Clone)]
pub struct Transcript {
    pub program: ConvexProgram,
    pub layout: Layout,
    /// Cells `(channel, step)` that carry a decision variable, in variable order.
    pub cells: Vec<(usize, usize)>,
    pub channels: usize,
    pub steps: usize,
    pub disc: DiscretizedSystem,
    /// `expm(A T)`.
    pub phi: DMatrix<f64>,
    /// Reachability operator, column `i * N + k` is `Ad^(N-1-k) Bd e_i`.
    pub gamma: DMatrix<f64>,
    /// Factor `dt / T` multiplying every per-sample cost; equal to `1/N`, so
    /// the continuous `1/T` and discrete `1/N` normalizations coincide.
    pub cost_scale: f64,
}

impl Transcript {
    pub fn vars_per_cell(&self) -> usize {
        match self.layout {
            Layout::Split => 2,
            Layout::Direct => 1,
        }
    }

    /// Maps program variables back to an m x N control signal; cells
    /// without a variable are zero.
    pub fn decode(&self, x: &DVector<f64>) -> Result<ControlSignal> {
        let w = self.vars_per_cell();
        if x.len() != w * self.cells.len() {
            return Err(Error::Dimension(format!(
                "decode expects {} variables, got {}",
                w * self.cells.len(),
                x.len()
            )));
        }
        let mut u = DMatrix::zeros(self.channels, self.steps);
        for (j, &(i, k)) in self.cells.iter().enumerate() {
            u[(i, k)] = match self.layout {
                Layout::Split => x[2 * j] - x[2 * j + 1],
                Layout::Direct => x[j],
            };
        }
        ControlSignal::new(u, self.disc.dt)
    }

    /// Inverse of [`decode`](Self::decode) on the transcribed cells.
    pub fn encode(&self, u: &ControlSignal) -> Result<DVector<f64>> {
        if u.channels() != self.channels || u.steps() != self.steps {
            return Err(Error::Dimension("signal shape does not match the transcript".into()));
        }
        let w = self.vars_per_cell();
        let mut x = DVector::zeros(w * self.cells.len());
        for (j, &(i, k)) in self.cells.iter().enumerate() {
            let v = u.samples()[(i, k)];
            match self.layout {
                Layout::Split => {
                    x[2 * j] = v.max(0.0);
                    x[2 * j + 1] = (-v).max(0.0);
                }
                Layout::Direct => x[j] = v,
            }
        }
        Ok(x)
    }

    pub fn gamma_column(&self, channel: usize, step: usize) -> DVector<f64> {
        self.gamma.column(channel * self.steps + step).into_owned()
    }
}

/// Reachability operator of `disc`: `Gamma[:, i N + k] = Ad^(N-1-k) Bd e_i`.
pub fn reachability_operator(disc: &DiscretizedSystem) -> DMatrix<f64> {
    let n = disc.ad.nrows();
    let m = disc.bd.ncols();
    let steps = disc.steps;
    let mut gamma = DMatrix::zeros(n, m * steps);
    let mut block = disc.bd.clone();
    for k in (0..steps).rev() {
        for i in 0..m {
            gamma.set_column(i * steps + k, &block.column(i));
        }
        block = &disc.ad * block;
    }
    gamma
}

/// Transcribes `prob` for its objective. `L0Exact` has no convex
/// transcription of its own; use [`transcribe_feasibility`].
pub fn transcribe(prob: &FiniteHorizonProblem) -> Result<Transcript> {
    let (layout, lin, quad) = match prob.objective {
        Objective::L1 => (Layout::Split, prob.lambda.clone(), None),
        Objective::L1L2 => (Layout::Split, prob.lambda.clone(), Some(prob.theta.clone())),
        Objective::L2 => (Layout::Direct, vec![0.0; prob.sys.m()], Some(prob.theta.clone())),
        Objective::L0Exact => {
            return Err(Error::InvalidArgument(
                "the exact l0 objective is solved by support enumeration".into(),
            ))
        }
    };
    let cells = all_cells(prob.sys.m(), prob.steps);
    build(prob, &cells, layout, &lin, quad.as_deref())
}

/// Zero-cost program whose feasible set is the admissible controls on the
/// given cells (all cells when `cells` is `None`).
pub fn transcribe_feasibility(
    prob: &FiniteHorizonProblem,
    cells: Option<&[(usize, usize)]>,
) -> Result<Transcript> {
    let cells = match cells {
        Some(c) => c.to_vec(),
        None => all_cells(prob.sys.m(), prob.steps),
    };
    build(prob, &cells, Layout::Direct, &vec![0.0; prob.sys.m()], None)
}

/// Feasibility program on a subset of cells, reusing the discretization of
/// an existing transcript of the same problem.
pub fn restrict_feasibility(
    base: &Transcript,
    prob: &FiniteHorizonProblem,
    cells: &[(usize, usize)],
) -> Result<Transcript> {
    let parts = (base.disc.clone(), base.phi.clone(), base.gamma.clone());
    assemble(prob, parts, cells, Layout::Direct, &vec![0.0; prob.sys.m()], None)
}

fn all_cells(m: usize, steps: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (0..steps).map(move |k| (i, k))).collect()
}

fn build(
    prob: &FiniteHorizonProblem,
    cells: &[(usize, usize)],
    layout: Layout,
    lin: &[f64],
    quad: Option<&[f64]>,
) -> Result<Transcript> {
    prob.validate()?;
    let disc = discretize_zoh(&prob.sys, prob.horizon, prob.steps)?;
    let phi = expm(&(prob.sys.a() * prob.horizon))?;
    let gamma = reachability_operator(&disc);
    assemble(prob, (disc, phi, gamma), cells, layout, lin, quad)
}

fn assemble(
    prob: &FiniteHorizonProblem,
    (disc, phi, gamma): (DiscretizedSystem, DMatrix<f64>, DMatrix<f64>),
    cells: &[(usize, usize)],
    layout: Layout,
    lin: &[f64],
    quad: Option<&[f64]>,
) -> Result<Transcript> {
    let (n, m, steps) = (prob.sys.n(), prob.sys.m(), prob.steps);
    if let Some(&(i, k)) = cells.iter().find(|&&(i, k)| i >= m || k >= steps) {
        return Err(Error::Dimension(format!("cell ({i}, {k}) outside the {m}x{steps} grid")));
    }
    let cost_scale = disc.dt / prob.horizon;

    let w = match layout {
        Layout::Split => 2,
        Layout::Direct => 1,
    };
    let nv = w * cells.len();
    let rhs = DVector::from_column_slice(&prob.x_target) - &phi * DVector::from_column_slice(&prob.x0);
    let mut a_eq = DMatrix::zeros(n, nv);
    let mut c = DVector::zeros(nv);
    let mut q = Vec::new();
    for (j, &(i, k)) in cells.iter().enumerate() {
        let g = gamma.column(i * steps + k);
        match layout {
            Layout::Split => {
                a_eq.set_column(2 * j, &g);
                a_eq.set_column(2 * j + 1, &(-g));
                c[2 * j] = lin[i] * cost_scale;
                c[2 * j + 1] = lin[i] * cost_scale;
                if let Some(theta) = quad {
                    let qw = theta[i] * cost_scale;
                    q.push((2 * j, 2 * j, qw));
                    q.push((2 * j, 2 * j + 1, -qw));
                    q.push((2 * j + 1, 2 * j + 1, qw));
                }
            }
            Layout::Direct => {
                a_eq.set_column(j, &g);
                c[j] = lin[i] * cost_scale;
                if let Some(theta) = quad {
                    q.push((j, j, theta[i] * cost_scale));
                }
            }
        }
    }
    let (lb, ub) = match layout {
        Layout::Split => (DVector::zeros(nv), DVector::from_element(nv, 1.0)),
        Layout::Direct => (DVector::from_element(nv, -1.0), DVector::from_element(nv, 1.0)),
    };
    let mut program = ConvexProgram::new(c, a_eq, rhs, lb, ub)?;
    if !q.is_empty() {
        program = program.with_quadratic(q)?;
    }
    if layout == Layout::Split {
        for j in 0..cells.len() {
            program = program.with_inequality(SparseRow::new(vec![2 * j, 2 * j + 1], vec![1.0, 1.0]), 1.0)?;
        }
    }
    Ok(Transcript {
        program,
        layout,
        cells: cells.to_vec(),
        channels: m,
        steps,
        disc,
        phi,
        gamma,
        cost_scale,
    })
}
