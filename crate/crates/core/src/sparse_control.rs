//! Finite-horizon hands-off control problems on the ZOH grid: L1, L1/L2 and
//! L2 objectives through the convex solver, the exact l0 problem through
//! support enumeration, minimum time by feasibility bisection, and the
//! pointwise minimizer maps of the Hamiltonian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{max_imag_eigenvalue, normality_sufficient, LtiSystem, Normality};
use crate::signals::{quantize, ControlSignal, StateTrajectory, SwitchingCount, ADMISSIBLE_TOL, EPS_ZERO};
use crate::solver::{
    feasibility, solve, Feasibility, KktResiduals, SolveOptions, SolveResult, SolveStatus, INFEASIBILITY_THRESHOLD,
};
use crate::transcription::{restrict_feasibility, transcribe, transcribe_feasibility, Transcript};

/// Tolerance on `||x[N] - xT||` certified for optimal solutions.
pub const TERMINAL_TOL: f64 = 1e-6;
/// Interior-point tolerance used for control problems. Tighter than the
/// solver default so that inactive samples land well below [`EPS_ZERO`].
pub const CONTROL_KKT_TOL: f64 = 1e-10;
/// Largest `m * N` accepted by the exhaustive l0 search.
pub const L0_MAX_CELLS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "l0-exact")]
    L0Exact,
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l1l2")]
    L1L2,
    #[serde(rename = "l2")]
    L2,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l0-exact" => Ok(Self::L0Exact),
            "l1" => Ok(Self::L1),
            "l1l2" => Ok(Self::L1L2),
            "l2" => Ok(Self::L2),
            other => Err(Error::Parse(format!(
                "unknown objective `{other}` (expected l1, l1l2, l2 or l0-exact)"
            ))),
        }
    }
}

/// Steer `x0` to `x_target` in time `horizon` on `steps` ZOH cells with
/// `|u_i| <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteHorizonProblem {
    #[serde(rename = "system")]
    pub sys: LtiSystem,
    pub x0: Vec<f64>,
    #[serde(rename = "xT", default)]
    pub x_target: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub theta: Vec<f64>,
    pub objective: Objective,
}

impl FiniteHorizonProblem {
    /// Unit weights, origin target.
    pub fn new(sys: LtiSystem, x0: Vec<f64>, horizon: f64, steps: usize, objective: Objective) -> Self {
        let (n, m) = (sys.n(), sys.m());
        Self {
            sys,
            x0,
            x_target: vec![0.0; n],
            horizon,
            steps,
            lambda: vec![1.0; m],
            theta: vec![1.0; m],
            objective,
        }
    }

    pub fn with_weights(mut self, lambda: Vec<f64>, theta: Vec<f64>) -> Self {
        self.lambda = lambda;
        self.theta = theta;
        self
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    /// Fills defaulted fields (empty target and weights) after deserialization.
    pub fn normalized(mut self) -> Self {
        if self.x_target.is_empty() {
            self.x_target = vec![0.0; self.sys.n()];
        }
        if self.lambda.is_empty() {
            self.lambda = vec![1.0; self.sys.m()];
        }
        if self.theta.is_empty() {
            self.theta = vec![1.0; self.sys.m()];
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.sys.n(), self.sys.m());
        if self.x0.len() != n {
            return Err(Error::Dimension(format!("x0 has {} entries, expected {n}", self.x0.len())));
        }
        if self.x_target.len() != n {
            return Err(Error::Dimension(format!("xT has {} entries, expected {n}", self.x_target.len())));
        }
        if self.x0.iter().chain(&self.x_target).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("boundary states"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("T must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        if self.lambda.len() != m || self.theta.len() != m {
            return Err(Error::Dimension(format!(
                "lambda/theta need {m} entries, got {}/{}",
                self.lambda.len(),
                self.theta.len()
            )));
        }
        let needs_lambda = matches!(self.objective, Objective::L0Exact | Objective::L1 | Objective::L1L2);
        if needs_lambda && self.lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lambda weights must be positive".into()));
        }
        let needs_theta = matches!(self.objective, Objective::L1L2 | Objective::L2);
        if needs_theta && self.theta.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidArgument("theta weights must be positive".into()));
        }
        if self.theta.iter().any(|&t| t < 0.0) {
            return Err(Error::InvalidArgument("theta weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificates {
    /// `||x[N] - xT||_2` from simulating the returned control.
    pub terminal_error: f64,
    pub kkt: Option<KktResiduals>,
    /// Largest distance of an active sample to `{-1, 0, 1}`.
    pub bang_off_bang_distance: f64,
    /// Same, ignoring the most fractional cell at each switch and at the
    /// two ends of the horizon.
    pub bang_off_bang_distance_off_switch: f64,
    pub switching: Vec<SwitchingCount>,
    pub support_cells: Vec<usize>,
    /// Largest `|u[k+1] - u[k]|` over channels.
    pub max_adjacent_jump: f64,
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub u: ControlSignal,
    pub x: StateTrajectory,
    pub objective_value: f64,
    pub certificates: Certificates,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Per-cell slope `g_{i,k}' y / (dt/T)` of the Hamiltonian in `u`,
    /// reconstructed from the terminal-constraint multipliers (m x N).
    pub switching_function: Option<DMatrix<f64>>,
}

impl ControlSolution {
    pub fn sparsity_rate(&self, channel: usize) -> Result<f64> {
        self.u.sparsity_rate(channel, EPS_ZERO)
    }

    pub fn support_cardinality(&self) -> usize {
        self.certificates.support_cells.iter().sum()
    }

    /// Normalized L2 distance `||u - v||_2 / sqrt(T)` summed over channels.
    pub fn distance_to(&self, other: &ControlSolution) -> f64 {
        let diff = self.u.samples() - other.u.samples();
        (diff.iter().map(|d| d * d).sum::<f64>() * self.u.dt() / self.u.horizon()).sqrt()
    }
}

/// Dispatches on `prob.objective`; `L0Exact` uses a budget of one million
/// feasibility solves.
pub fn solve_problem(prob: &FiniteHorizonProblem) -> Result<ControlSolution> {
    match prob.objective {
        Objective::L1 => solve_l1(prob),
        Objective::L1L2 => solve_l1l2(prob),
        Objective::L2 => solve_l2(prob),
        Objective::L0Exact => solve_l0_exact(prob, 1_000_000),
    }
}

/// Minimum-fuel (L1) control.
pub fn solve_l1(prob: &FiniteHorizonProblem) -> Result<ControlSolution> {
    solve_convex(&prob.clone().with_objective(Objective::L1))
}

/// Mixed L1/L2 control; continuous in the limit of fine grids.
pub fn solve_l1l2(prob: &FiniteHorizonProblem) -> Result<ControlSolution> {
    solve_convex(&prob.clone().with_objective(Objective::L1L2))
}

/// Minimum-energy control under the same constraints.
pub fn solve_l2(prob: &FiniteHorizonProblem) -> Result<ControlSolution> {
    solve_convex(&prob.clone().with_objective(Objective::L2))
}

fn solve_convex(prob: &FiniteHorizonProblem) -> Result<ControlSolution> {
    prob.validate()?;
    let tr = transcribe(prob)?;
    if tr.program.b_eq().iter().all(|&v| v == 0.0) {
        // The free response already lands on the target: u = 0 costs nothing
        // and every objective is nonnegative.
        let u = ControlSignal::zeros(prob.sys.m(), prob.steps, prob.dt())?;
        let sf = DMatrix::zeros(prob.sys.m(), prob.steps);
        let kkt = KktResiduals::default();
        return finish(prob, &tr, u, 0.0, Some(kkt), SolveStatus::Optimal, 0, Some(sf));
    }
    let opts = SolveOptions {
        kkt_tol: CONTROL_KKT_TOL,
        max_iter: 150,
        trace: false,
    };
    let res = solve(&tr.program, &opts)?;
    match res.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible {
                margin: res.infeasibility.unwrap_or(f64::NAN),
            })
        }
        SolveStatus::MaxIter => return Err(Error::MaxIter(res.iterations)),
    }
    let u = tr.decode(&res.x)?;
    let sf = switching_function(&tr, &res);
    finish(prob, &tr, u, res.objective, Some(res.kkt), res.status, res.iterations, Some(sf))
}

fn switching_function(tr: &Transcript, res: &SolveResult) -> DMatrix<f64> {
    let gy = tr.gamma.transpose() * &res.eq_multipliers;
    DMatrix::from_fn(tr.channels, tr.steps, |i, k| gy[i * tr.steps + k] / tr.cost_scale)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prob: &FiniteHorizonProblem,
    tr: &Transcript,
    u: ControlSignal,
    objective_value: f64,
    kkt: Option<KktResiduals>,
    status: SolveStatus,
    iterations: usize,
    switching_function: Option<DMatrix<f64>>,
) -> Result<ControlSolution> {
    let x0 = DVector::from_column_slice(&prob.x0);
    let xs = tr.disc.simulate(&x0, u.samples())?;
    let terminal = xs.column(prob.steps) - DVector::from_column_slice(&prob.x_target);
    let certificates = certify(&u, terminal.norm(), kkt)?;
    Ok(ControlSolution {
        x: StateTrajectory::new(xs, tr.disc.dt)?,
        u,
        objective_value,
        certificates,
        status,
        iterations,
        switching_function,
    })
}

fn certify(u: &ControlSignal, terminal_error: f64, kkt: Option<KktResiduals>) -> Result<Certificates> {
    let mut bob = 0.0f64;
    let mut bob_off_switch = 0.0f64;
    let mut jump = 0.0f64;
    let mut switching = Vec::new();
    let mut support = Vec::new();
    for i in 0..u.channels() {
        let row = u.channel(i)?;
        let dist: Vec<f64> = row.iter().map(|&v| ternary_distance(v)).collect();
        // A switch sits where the thresholded sign or the nearest ternary
        // value changes, or at either end of the horizon; each one excuses its
        // single most fractional cell.
        let nearest: Vec<f64> = row.iter().map(|v| v.round().clamp(-1.0, 1.0)).collect();
        let last = row.len() - 1;
        let mut excluded = vec![false; row.len()];
        excluded[0] = true;
        excluded[last] = true;
        for k in 1..row.len() {
            let changed = quantize(row[k - 1], EPS_ZERO) != quantize(row[k], EPS_ZERO);
            if changed || nearest[k - 1] != nearest[k] {
                let cell = if dist[k - 1] >= dist[k] { k - 1 } else { k };
                excluded[cell] = true;
            }
            jump = jump.max((row[k] - row[k - 1]).abs());
        }
        for (k, &v) in row.iter().enumerate() {
            if v.abs() > EPS_ZERO {
                bob = bob.max(dist[k]);
                if !excluded[k] {
                    bob_off_switch = bob_off_switch.max(dist[k]);
                }
            }
        }
        switching.push(u.switching_count(i, EPS_ZERO)?);
        support.push(u.support_count(i, EPS_ZERO)?);
    }
    Ok(Certificates {
        terminal_error,
        kkt,
        bang_off_bang_distance: bob,
        bang_off_bang_distance_off_switch: bob_off_switch,
        switching,
        support_cells: support,
        max_adjacent_jump: jump,
    })
}

fn ternary_distance(v: f64) -> f64 {
    let a = v.abs();
    a.min((1.0 - a).abs())
}

/// Exhaustive minimum-weight support search for the discrete l0 problem.
///
/// Patterns are visited by increasing cardinality and lexicographically
/// within a cardinality; the first pattern of strictly smallest weighted
/// count `sum_i lambda_i |S_i|` wins. `budget` caps the number of
/// feasibility solves.
pub fn solve_l0_exact(prob: &FiniteHorizonProblem, budget: usize) -> Result<ControlSolution> {
    let prob = prob.clone().with_objective(Objective::L0Exact);
    prob.validate()?;
    let (m, steps) = (prob.sys.m(), prob.steps);
    let total = m * steps;
    if total > L0_MAX_CELLS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive l0 search needs m*N <= {L0_MAX_CELLS}, got {total}"
        )));
    }
    let cell_of = |flat: usize| (flat / steps, flat % steps);
    let base = transcribe_feasibility(&prob, None)?;
    let full = feasibility(&base.program)?;
    if full.verdict == Feasibility::Infeasible {
        return Err(Error::Infeasible { margin: full.margin });
    }
    let mut solves = 1usize;
    let mut check = |cells: &[(usize, usize)]| -> Result<Option<DVector<f64>>> {
        if solves >= budget {
            return Err(Error::BudgetExceeded { budget });
        }
        solves += 1;
        if let Some(answer) = independent_support(&base, cells) {
            return Ok(answer);
        }
        let tr = restrict_feasibility(&base, &prob, cells)?;
        let f = feasibility(&tr.program)?;
        Ok((f.verdict == Feasibility::Feasible).then_some(f.x))
    };

    let lambda_min = prob.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best: Option<(f64, Vec<(usize, usize)>, DVector<f64>)> = None;
    'outer: for card in 0..=total {
        if let Some((w, _, _)) = &best {
            if card as f64 * lambda_min >= *w - 1e-12 {
                break;
            }
        }
        let mut combo: Vec<usize> = (0..card).collect();
        loop {
            let cells: Vec<(usize, usize)> = combo.iter().map(|&f| cell_of(f)).collect();
            let weight: f64 = cells.iter().map(|&(i, _)| prob.lambda[i]).sum();
            let improves = best.as_ref().is_none_or(|(w, _, _)| weight < *w - 1e-12);
            if improves {
                if let Some(x) = check(&cells)? {
                    best = Some((weight, cells, x));
                    if prob.lambda.iter().all(|&l| l == lambda_min) {
                        continue 'outer;
                    }
                }
            }
            if !next_combination(&mut combo, total) {
                break;
            }
        }
    }
    let (weight, cells, x) = best.expect("full support is feasible");
    let tr = transcribe_feasibility(&prob, Some(&cells))?;
    let u = tr.decode(&x)?;
    finish(&prob, &tr, u, weight / steps as f64, None, SolveStatus::Optimal, solves, None)
}

/// Decides a support directly when its terminal-map columns are well
/// conditioned and independent: the control on it is then unique, so the
/// support is feasible exactly when that control is admissible. Returns
/// `None` when the general feasibility solve is needed.
fn independent_support(base: &Transcript, cells: &[(usize, usize)]) -> Option<Option<DVector<f64>>> {
    let rhs = base.program.b_eq();
    let k = cells.len();
    if k == 0 {
        return Some((rhs.amax() <= INFEASIBILITY_THRESHOLD).then(|| DVector::zeros(0)));
    }
    if k > rhs.len() {
        return None;
    }
    let g = DMatrix::from_fn(rhs.len(), k, |r, j| base.gamma_column(cells[j].0, cells[j].1)[r]);
    let svd = g.clone().svd(true, true);
    let (smin, smax) = (svd.singular_values.min(), svd.singular_values.max());
    if !(smin > 1e-6 * smax) {
        return None;
    }
    let u = svd.solve(rhs, 0.0).ok()?;
    let residual = (&g * &u - rhs).amax();
    let feasible = residual <= INFEASIBILITY_THRESHOLD && u.amax() <= 1.0 + ADMISSIBLE_TOL;
    Some(feasible.then(|| u.map(|v| v.clamp(-1.0, 1.0))))
}

/// Advances `combo` to the next k-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinTimeOptions {
    /// Bisection stops once the bracket is narrower than this.
    pub tol_t: f64,
    /// Grid density: cells per unit of horizon.
    pub per_unit: f64,
    /// Largest horizon tried before declaring the state unreachable.
    pub t_max: f64,
    /// First upper bracket.
    pub t_init: f64,
}

impl Default for MinTimeOptions {
    fn default() -> Self {
        Self {
            tol_t: 1e-3,
            per_unit: 200.0,
            t_max: 20.0,
            t_init: 1.0,
        }
    }
}

/// Whether `x_target` is reachable from `x0` at exactly `horizon` on the
/// grid of the given density.
pub fn reachable_at(sys: &LtiSystem, x0: &[f64], x_target: &[f64], horizon: f64, per_unit: f64) -> Result<bool> {
    let steps = ((horizon * per_unit).ceil() as usize).max(1);
    let mut prob = FiniteHorizonProblem::new(sys.clone(), x0.to_vec(), horizon, steps, Objective::L1);
    prob.x_target = x_target.to_vec();
    let tr = transcribe_feasibility(&prob, None)?;
    Ok(feasibility(&tr.program)?.verdict == Feasibility::Feasible)
}

/// Grid-limited minimum transfer time by bisection over horizon feasibility.
/// The returned value is the feasible end of the final bracket.
pub fn minimum_time(sys: &LtiSystem, x0: &[f64], x_target: &[f64], opts: &MinTimeOptions) -> Result<f64> {
    if !(opts.tol_t > 0.0) {
        return Err(Error::InvalidArgument("tol_T must be positive".into()));
    }
    if x0.len() != sys.n() || x_target.len() != sys.n() {
        return Err(Error::Dimension("boundary states do not match the plant".into()));
    }
    let xt = DVector::from_column_slice(x_target);
    if x0 == x_target && (sys.a() * &xt).amax() == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = opts.t_init.min(opts.t_max);
    while !reachable_at(sys, x0, x_target, hi, opts.per_unit)? {
        if hi >= opts.t_max {
            return Err(Error::Unreachable { t_max: opts.t_max });
        }
        lo = hi;
        hi = (2.0 * hi).min(opts.t_max);
    }
    while hi - lo > opts.tol_t {
        let mid = 0.5 * (lo + hi);
        if reachable_at(sys, x0, x_target, mid, opts.per_unit)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Value of the dead-zone map and whether `w` sat on a band edge, where
/// the map is set-valued and 0 is returned by convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadZone {
    pub value: f64,
    pub boundary: bool,
}

/// Pointwise minimizer of `lam |u| + w u` over `|u| <= 1` is `-D_lam(w)`.
pub fn dead_zone(w: f64, lam: f64) -> DeadZone {
    debug_assert!(lam > 0.0);
    if w > lam {
        DeadZone { value: 1.0, boundary: false }
    } else if w < -lam {
        DeadZone { value: -1.0, boundary: false }
    } else {
        DeadZone {
            value: 0.0,
            boundary: w.abs() == lam,
        }
    }
}

/// Soft threshold `S_k(v)`.
pub fn shrink(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

pub fn sat(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// `sat(S_{lam/theta}(v))`. The minimizer of
/// `lam |u| + theta/2 u^2 + a u` over `|u| <= 1` is `-sat_shrink(a/theta, lam, theta)`.
pub fn sat_shrink(v: f64, lam: f64, theta: f64) -> f64 {
    debug_assert!(lam > 0.0 && theta > 0.0);
    sat(shrink(v, lam / theta))
}

/// `floor(2 n m (1 + T omega / pi))`.
pub fn switching_bound_formula(n: usize, m: usize, omega: f64, horizon: f64) -> usize {
    (2.0 * (n * m) as f64 * (1.0 + horizon * omega / std::f64::consts::PI)).floor() as usize
}

/// Upper bound on the discontinuities of the L1-optimal control for plants
/// that pass the sufficient normality test.
pub fn switching_bound(sys: &LtiSystem, horizon: f64) -> Result<usize> {
    if normality_sufficient(sys) != Normality::Normal {
        return Err(Error::NormalityUnknown);
    }
    Ok(switching_bound_formula(sys.n(), sys.m(), max_imag_eigenvalue(sys.a()), horizon))
}
