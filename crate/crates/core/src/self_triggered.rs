//! Self-triggered hands-off feedback: at each sample the controller computes
//! the minimum time `T*` of the measured state, stretches it to the horizon
//! `T_k = max(T_min, T*/r)`, applies the maximum hands-off control on that
//! horizon open loop and samples again at `t_k + T_k`.

use std::fmt;
use std::sync::Arc;

use log::{debug, warn};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{matrix_measure, spectral_norm, LtiSystem};
use crate::oracle_1d::{handsoff_control_1d, min_time_1d, PlantKind, ScalarPlant};
use crate::signals::EPS_ZERO;
use crate::sparse_control::{minimum_time, solve_l1, FiniteHorizonProblem, MinTimeOptions, Objective};

/// Matrix measures smaller than this in magnitude use the `mu -> 0` limits.
pub const MU_TOL: f64 = 1e-9;
pub const DEFAULT_ALPHA_DIRECTIONS: usize = 64;
pub const DEFAULT_GRID_DENSITY: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plant {
    Lti(LtiSystem),
    Scalar(ScalarPlant),
}

impl Plant {
    pub fn n(&self) -> usize {
        match self {
            Plant::Lti(s) => s.n(),
            Plant::Scalar(_) => 1,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            Plant::Lti(s) => s.m(),
            Plant::Scalar(_) => 1,
        }
    }

    /// Linear model used for design and for the stability bounds.
    pub fn linear_model(&self) -> LtiSystem {
        match self {
            Plant::Lti(s) => s.clone(),
            Plant::Scalar(p) => p.linear_model(),
        }
    }

    fn rhs(&self, x: &DVector<f64>, u: &[f64], d: &DVector<f64>) -> DVector<f64> {
        match self {
            Plant::Lti(s) => s.a() * x + s.b() * DVector::from_column_slice(u) + d,
            Plant::Scalar(p) => DVector::from_element(1, p.rhs(x[0], u[0], d[0])),
        }
    }
}

pub type HookFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// User-supplied disturbance `d(t, x)`, evaluated at every integrator stage.
#[derive(Clone)]
pub struct DisturbanceHook(pub Arc<HookFn>);

impl DisturbanceHook {
    pub fn new(f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl fmt::Debug for DisturbanceHook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DisturbanceHook(..)")
    }
}

impl PartialEq for DisturbanceHook {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Disturbance {
    /// Componentwise uniform on `[-delta, delta]`, constant on each `sim_dt` cell.
    UniformNoise { seed: u64 },
    /// `delta * direction` at all times.
    WorstCaseConstant { direction: Vec<f64> },
    #[default]
    Zero,
    #[serde(skip)]
    Custom(DisturbanceHook),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    #[default]
    HandsOff,
    /// `u = 0`, sampled every `T_min`; a baseline for comparisons.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTriggeredConfig {
    pub plant: Plant,
    pub x0: Vec<f64>,
    pub r: f64,
    #[serde(rename = "T_min")]
    pub t_min: f64,
    pub delta: f64,
    #[serde(default)]
    pub disturbance: Disturbance,
    pub total_time: f64,
    /// Integration step; `T_min / 50` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_dt: Option<f64>,
    #[serde(default)]
    pub controller: Controller,
    /// Grid cells per unit horizon for multi-state plants.
    #[serde(default = "default_density")]
    pub grid_density: f64,
    /// Sphere directions sampled when estimating `alpha` for multi-state plants.
    #[serde(default = "default_directions")]
    pub alpha_directions: usize,
}

fn default_density() -> f64 {
    DEFAULT_GRID_DENSITY
}

fn default_directions() -> usize {
    DEFAULT_ALPHA_DIRECTIONS
}

impl SelfTriggeredConfig {
    pub fn new(plant: Plant, x0: Vec<f64>, r: f64, t_min: f64, delta: f64, total_time: f64) -> Self {
        Self {
            plant,
            x0,
            r,
            t_min,
            delta,
            disturbance: Disturbance::Zero,
            total_time,
            sim_dt: None,
            controller: Controller::HandsOff,
            grid_density: DEFAULT_GRID_DENSITY,
            alpha_directions: DEFAULT_ALPHA_DIRECTIONS,
        }
    }

    pub fn with_disturbance(mut self, disturbance: Disturbance) -> Self {
        self.disturbance = disturbance;
        self
    }

    pub fn with_controller(mut self, controller: Controller) -> Self {
        self.controller = controller;
        self
    }

    pub fn sim_dt(&self) -> f64 {
        self.sim_dt.unwrap_or(self.t_min / 50.0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.n();
        if self.x0.len() != n {
            return Err(Error::Dimension(format!("x0 has {} entries, expected {n}", self.x0.len())));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x0"));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidArgument(format!("r must lie in (0, 1), got {}", self.r)));
        }
        if !(self.t_min > 0.0) || !self.t_min.is_finite() {
            return Err(Error::InvalidArgument(format!("T_min must be positive, got {}", self.t_min)));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if !(self.total_time > 0.0) || !self.total_time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "total_time must be positive, got {}",
                self.total_time
            )));
        }
        let dt = self.sim_dt();
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("sim_dt must be positive, got {dt}")));
        }
        if !(self.grid_density > 0.0) || self.alpha_directions == 0 {
            return Err(Error::InvalidArgument(
                "grid_density and alpha_directions must be positive".into(),
            ));
        }
        if let Disturbance::WorstCaseConstant { direction } = &self.disturbance {
            if direction.len() != n {
                return Err(Error::Dimension(format!(
                    "disturbance direction has {} entries, expected {n}",
                    direction.len()
                )));
            }
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= 1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "disturbance direction must have norm at most 1, got {norm}"
                )));
            }
        }
        Ok(())
    }

    fn min_time_options(&self) -> MinTimeOptions {
        MinTimeOptions {
            per_unit: self.grid_density,
            ..MinTimeOptions::default()
        }
    }
}

/// Disturbance acting on `sim_dt` cell `cell` of episode `stream`.
///
/// Noise is counter based: the value depends only on `(seed, stream, cell)`,
/// so episodes can be replayed or run in any order.
pub fn disturbance_sample(
    model: &Disturbance,
    delta: f64,
    t: f64,
    x: &[f64],
    cell: u64,
    stream: u64,
) -> DVector<f64> {
    let n = x.len();
    match model {
        Disturbance::Zero => DVector::zeros(n),
        Disturbance::WorstCaseConstant { direction } => DVector::from_iterator(n, direction.iter().map(|d| delta * d)),
        Disturbance::UniformNoise { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream(stream);
            // One u64 (two words) per component.
            rng.set_word_pos(u128::from(cell) * 2 * n as u128);
            DVector::from_fn(n, |_, _| delta * (2.0 * rng.gen::<f64>() - 1.0))
        }
        Disturbance::Custom(hook) => DVector::from_vec((hook.0)(t, x)),
    }
}

/// One classical Runge-Kutta step of `dx/dt = f(t, x)`.
pub fn rk4_step(f: impl Fn(f64, &DVector<f64>) -> DVector<f64>, t: f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Constant control on `[start, end)`, relative to the sampling instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSegment {
    pub start: f64,
    pub end: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub k: usize,
    pub t: f64,
    pub x: Vec<f64>,
    /// Minimum time of `x`; absent under the zero controller.
    pub t_star: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub segments: Vec<ControlSegment>,
    /// `max ||x(t)||` over the interval.
    pub sup_norm: f64,
}

impl Event {
    /// Length of `[t_k, t_k + T_k)` on which channel `i` exceeds `eps_zero`.
    pub fn active_time(&self, channel: usize, eps_zero: f64) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.u[channel].abs() > eps_zero)
            .map(|s| s.end - s.start)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Completed,
    /// The sampled state left the reachable set; the log stops there.
    Escaped,
}

/// Integrator output; `u[j]` acts on `[t[j], t[j+1])`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DenseTrajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub status: EpisodeStatus,
    pub events: Vec<Event>,
    #[serde(skip)]
    pub dense: DenseTrajectory,
    /// `sum T_k`; at least `total_time` for completed episodes.
    pub elapsed: f64,
    pub measured_rate: f64,
}

impl EpisodeLog {
    /// Sampled states `x(t_k)`, including the final one.
    pub fn sampled_states(&self) -> Vec<(f64, Vec<f64>)> {
        let mut out: Vec<_> = self.events.iter().map(|e| (e.t, e.x.clone())).collect();
        if let (Some(t), Some(x)) = (self.dense.t.last(), self.dense.x.last()) {
            if out.last().map_or(true, |(tk, _)| tk < t) {
                out.push((*t, x.clone()));
            }
        }
        out
    }
}

pub fn run_episode(cfg: &SelfTriggeredConfig) -> Result<EpisodeLog> {
    run_episode_stream(cfg, 0)
}

/// Runs one episode; `stream` selects an independent noise stream so that
/// Monte Carlo sweeps can use one seed for many episodes.
pub fn run_episode_stream(cfg: &SelfTriggeredConfig, stream: u64) -> Result<EpisodeLog> {
    cfg.validate()?;
    let sim_dt = cfg.sim_dt();
    let mut x = DVector::from_column_slice(&cfg.x0);
    let mut t = 0.0;
    let mut events = Vec::new();
    let mut dense = DenseTrajectory {
        t: vec![0.0],
        x: vec![cfg.x0.clone()],
        u: Vec::new(),
    };
    let mut status = EpisodeStatus::Completed;

    while t < cfg.total_time {
        if x.iter().any(|v| !v.is_finite()) {
            status = EpisodeStatus::Escaped;
            break;
        }
        let (t_star, horizon, segments) = match plan(cfg, &x) {
            Ok(p) => p,
            Err(Error::Unreachable { .. }) => {
                debug!("state {x:?} left the reachable set at t = {t}");
                status = EpisodeStatus::Escaped;
                break;
            }
            Err(e) => return Err(e),
        };
        let (x_next, sup_norm) = integrate(cfg, &x, t, horizon, &segments, sim_dt, stream, &mut dense);
        events.push(Event {
            k: events.len(),
            t,
            x: x.iter().copied().collect(),
            t_star,
            horizon,
            segments,
            sup_norm,
        });
        t += horizon;
        x = x_next;
    }

    let mut log = EpisodeLog {
        status,
        events,
        dense,
        elapsed: t,
        measured_rate: 0.0,
    };
    if !log.events.is_empty() {
        log.measured_rate = measured_sparsity_rate(&log, EPS_ZERO)?.rate;
    }
    Ok(log)
}

type Plan = (Option<f64>, f64, Vec<ControlSegment>);

fn plan(cfg: &SelfTriggeredConfig, x: &DVector<f64>) -> Result<Plan> {
    let m = cfg.plant.m();
    let idle = |horizon: f64| ControlSegment {
        start: 0.0,
        end: horizon,
        u: vec![0.0; m],
    };
    if cfg.controller == Controller::Zero {
        return Ok((None, cfg.t_min, vec![idle(cfg.t_min)]));
    }
    match &cfg.plant {
        Plant::Scalar(p) => {
            let t_star = min_time_1d(p, x[0])?;
            let horizon = cfg.t_min.max(t_star / cfg.r);
            let c = handsoff_control_1d(p, x[0], horizon)?;
            let segments = c
                .segments
                .iter()
                .map(|s| ControlSegment {
                    start: s.start,
                    end: s.end,
                    u: vec![s.value],
                })
                .collect();
            Ok((Some(t_star), horizon, segments))
        }
        Plant::Lti(sys) => {
            let xs: Vec<f64> = x.iter().copied().collect();
            let t_star = minimum_time(sys, &xs, &vec![0.0; sys.n()], &cfg.min_time_options())?;
            if t_star == 0.0 {
                return Ok((Some(0.0), cfg.t_min, vec![idle(cfg.t_min)]));
            }
            let horizon = cfg.t_min.max(t_star / cfg.r);
            let steps = ((horizon * cfg.grid_density).ceil() as usize).max(1);
            let prob = FiniteHorizonProblem::new(sys.clone(), xs, horizon, steps, Objective::L1);
            let sol = solve_l1(&prob)?;
            let dt = prob.dt();
            let segments = (0..steps)
                .map(|k| ControlSegment {
                    start: k as f64 * dt,
                    end: if k + 1 == steps { horizon } else { (k + 1) as f64 * dt },
                    u: sol.u.samples().column(k).iter().copied().collect(),
                })
                .collect();
            Ok((Some(t_star), horizon, segments))
        }
    }
}

/// Integrates one sampling interval. Pieces end at control-segment
/// boundaries and at `sim_dt` cell boundaries, so each RK4 step sees a
/// constant control and a constant noise value.
#[allow(clippy::too_many_arguments)]
fn integrate(
    cfg: &SelfTriggeredConfig,
    x0: &DVector<f64>,
    t0: f64,
    horizon: f64,
    segments: &[ControlSegment],
    sim_dt: f64,
    stream: u64,
    dense: &mut DenseTrajectory,
) -> (DVector<f64>, f64) {
    let t_end = t0 + horizon;
    let mut x = x0.clone();
    let mut sup = x.norm();
    let mut cur = t0;
    let mut seg = 0;
    while cur < t_end {
        while seg + 1 < segments.len() && t0 + segments[seg].end <= cur {
            seg += 1;
        }
        let seg_end = if seg + 1 == segments.len() {
            t_end
        } else {
            t0 + segments[seg].end
        };
        let cell = (cur / sim_dt + 1e-9).floor();
        let next = seg_end.min((cell + 1.0) * sim_dt).min(t_end);
        let h = next - cur;
        let u = &segments[seg].u;
        x = match &cfg.disturbance {
            Disturbance::Custom(_) => rk4_step(
                |s, xs| {
                    let d = disturbance_sample(&cfg.disturbance, cfg.delta, s, xs.as_slice(), cell as u64, stream);
                    cfg.plant.rhs(xs, u, &d)
                },
                cur,
                &x,
                h,
            ),
            model => {
                let d = disturbance_sample(model, cfg.delta, cur, x.as_slice(), cell as u64, stream);
                rk4_step(|_, xs| cfg.plant.rhs(xs, u, &d), cur, &x, h)
            }
        };
        cur = next;
        sup = sup.max(x.norm());
        dense.t.push(cur);
        dense.x.push(x.iter().copied().collect());
        dense.u.push(u.clone());
    }
    (x, sup)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    /// Largest per-channel rate over the elapsed time.
    pub rate: f64,
    pub per_channel: Vec<f64>,
    /// `L0(u_k) / T_k` for each interval, largest over channels.
    pub per_interval: Vec<f64>,
}

pub fn measured_sparsity_rate(log: &EpisodeLog, eps_zero: f64) -> Result<SparsityReport> {
    let Some(first) = log.events.first() else {
        return Err(Error::InvalidArgument("episode log has no events".into()));
    };
    let m = first.segments.first().map_or(0, |s| s.u.len());
    let elapsed: f64 = log.events.iter().map(|e| e.horizon).sum();
    let per_channel: Vec<f64> = (0..m)
        .map(|i| log.events.iter().map(|e| e.active_time(i, eps_zero)).fold(0.0, |a, b| a + b) / elapsed)
        .collect();
    let per_interval = log
        .events
        .iter()
        .map(|e| (0..m).map(|i| e.active_time(i, eps_zero) / e.horizon).fold(0.0, f64::max))
        .collect();
    Ok(SparsityReport {
        rate: per_channel.iter().copied().fold(0.0, f64::max),
        per_channel,
        per_interval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub mu: f64,
    #[serde(rename = "T0")]
    pub t0: f64,
    /// Minimum time of `x0`.
    pub t_star0: f64,
    /// Radius of the ball that traps every sampled state after the first.
    pub gamma: f64,
    pub alpha_gamma: f64,
    /// `alpha(gamma) <= r T0`.
    pub condition_ok: bool,
    /// Bound on `||x(t)||` between samples.
    pub h: f64,
    pub h1: f64,
    pub b_norm: f64,
    pub alpha_description: String,
    /// Set when `alpha` was sampled rather than known in closed form.
    pub approximate: bool,
    pub warnings: Vec<String>,
}

pub fn stability_report(cfg: &SelfTriggeredConfig) -> Result<StabilityReport> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let (mu, b_norm, t_star0) = match &cfg.plant {
        Plant::Scalar(p) => {
            if p.kind() == PlantKind::NonlinearSin {
                warnings.push("bounds refer to the linearized plant; delta must cover the linearization error".into());
            }
            (p.a(), p.a().abs(), min_time_1d(p, cfg.x0[0])?)
        }
        Plant::Lti(s) => (
            matrix_measure(s.a())?,
            spectral_norm(s.b()) * (s.m() as f64).sqrt(),
            minimum_time(s, &cfg.x0, &vec![0.0; s.n()], &cfg.min_time_options())?,
        ),
    };
    let t0 = cfg.t_min.max(t_star0 / cfg.r);
    let degenerate = mu.abs() < MU_TOL;
    let gamma = if degenerate {
        warnings.push(format!("|mu(A)| = {:.3e} is below {MU_TOL:e}; using the mu -> 0 limits", mu.abs()));
        cfg.delta * t0
    } else {
        cfg.delta / mu * (mu * t0).exp_m1()
    };
    let (alpha_gamma, alpha_description, approximate) = alpha(cfg, gamma)?;
    let condition_ok = alpha_gamma <= cfg.r * t0;
    let c = b_norm + cfg.delta;
    let stretch = cfg.t_min.max(alpha_gamma / cfg.r);
    let (h1, h) = if degenerate {
        (f64::INFINITY, gamma + c * stretch)
    } else if mu < 0.0 {
        let h1 = gamma + c / mu.abs();
        (h1, h1)
    } else {
        let h1 = gamma + c / mu;
        (h1, h1 * (mu * stretch).exp() - c / mu)
    };
    for w in &warnings {
        warn!("{w}");
    }
    Ok(StabilityReport {
        mu,
        t0,
        t_star0,
        gamma,
        alpha_gamma,
        condition_ok,
        h,
        h1,
        b_norm,
        alpha_description,
        approximate,
        warnings,
    })
}

fn alpha(cfg: &SelfTriggeredConfig, v: f64) -> Result<(f64, String, bool)> {
    match &cfg.plant {
        Plant::Scalar(p) if p.is_stable() => Ok((v / p.a().abs(), "v/|a| (closed form)".into(), false)),
        Plant::Scalar(p) => {
            let value = if v < 1.0 { -(-v).ln_1p() / p.a() } else { f64::INFINITY };
            Ok((value, "-log(1-v)/a (exact minimum time)".into(), false))
        }
        Plant::Lti(sys) => {
            let dirs = sphere_directions(sys.n(), cfg.alpha_directions);
            let desc = format!("max of T* over {} sampled directions (approximate)", dirs.len());
            if v == 0.0 {
                return Ok((0.0, desc, true));
            }
            let origin = vec![0.0; sys.n()];
            let mut best = 0.0f64;
            for d in &dirs {
                let xs: Vec<f64> = d.iter().map(|c| v * c).collect();
                match minimum_time(sys, &xs, &origin, &cfg.min_time_options()) {
                    Ok(t) => best = best.max(t),
                    Err(Error::Unreachable { .. }) => return Ok((f64::INFINITY, desc, true)),
                    Err(e) => return Err(e),
                }
            }
            Ok((best, desc, true))
        }
    }
}

/// Unit vectors: the `2n` signed axes first, then Gaussian draws from a fixed seed.
fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(count.max(2 * n));
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            dirs.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while dirs.len() < count {
        let g: Vec<f64> = (0..n)
            .map(|_| {
                let (u1, u2): (f64, f64) = (1.0 - rng.gen::<f64>(), rng.gen());
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = g.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            dirs.push(g.into_iter().map(|c| c / norm).collect());
        }
    }
    dirs
}
