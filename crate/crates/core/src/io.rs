//! Text output: trajectory CSV, solution and report JSON, event JSON lines.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::self_triggered::{EpisodeLog, EpisodeStatus};
use crate::solver::{KktResiduals, SolveStatus};
use crate::sparse_control::{Certificates, ControlSolution};

/// Formats with 12 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.11e}")
}

/// CSV with header `t,u_1..u_m,x_1..x_n`. `u[j]` holds on `[t[j], t[j+1])`;
/// the final row repeats the last control value.
pub fn trajectory_csv(t: &[f64], u: &[Vec<f64>], x: &[Vec<f64>]) -> Result<String> {
    if x.len() != t.len() || u.len() + 1 != t.len() {
        return Err(Error::Dimension(format!(
            "trajectory has {} times, {} states and {} controls",
            t.len(),
            x.len(),
            u.len()
        )));
    }
    let m = u.first().map_or(0, Vec::len);
    let n = x.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for i in 1..=m {
        write!(out, ",u_{i}").unwrap();
    }
    for i in 1..=n {
        write!(out, ",x_{i}").unwrap();
    }
    out.push('\n');
    for (j, tj) in t.iter().enumerate() {
        out.push_str(&fmt_num(*tj));
        let uj = u.get(j).or(u.last());
        for v in uj.into_iter().flatten().chain(&x[j]) {
            out.push(',');
            out.push_str(&fmt_num(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn solution_csv(sol: &ControlSolution) -> Result<String> {
    let dt = sol.u.dt();
    let xs = sol.x.samples();
    let us = sol.u.samples();
    let t: Vec<f64> = (0..xs.ncols()).map(|k| k as f64 * dt).collect();
    let u: Vec<Vec<f64>> = us.column_iter().map(|c| c.iter().copied().collect()).collect();
    let x: Vec<Vec<f64>> = xs.column_iter().map(|c| c.iter().copied().collect()).collect();
    trajectory_csv(&t, &u, &x)
}

pub fn episode_csv(log: &EpisodeLog) -> Result<String> {
    trajectory_csv(&log.dense.t, &log.dense.u, &log.dense.x)
}

/// One JSON object per sampling event.
pub fn events_jsonl(log: &EpisodeLog) -> Result<String> {
    let mut out = String::new();
    for e in &log.events {
        out.push_str(&serde_json::to_string(e).map_err(|e| Error::Parse(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary<'a> {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective_value: f64,
    pub sparsity_rate: Vec<f64>,
    pub support_cardinality: usize,
    pub terminal_state: Vec<f64>,
    pub kkt: Option<KktResiduals>,
    pub certificates: &'a Certificates,
}

impl<'a> SolutionSummary<'a> {
    pub fn new(sol: &'a ControlSolution) -> Self {
        Self {
            status: sol.status,
            iterations: sol.iterations,
            objective_value: sol.objective_value,
            sparsity_rate: (0..sol.u.channels())
                .map(|i| sol.sparsity_rate(i).unwrap_or(f64::NAN))
                .collect(),
            support_cardinality: sol.support_cardinality(),
            terminal_state: sol.x.terminal(),
            kkt: sol.certificates.kkt,
            certificates: &sol.certificates,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeSummary {
    pub status: EpisodeStatus,
    pub events: usize,
    pub elapsed: f64,
    pub measured_rate: f64,
    pub max_sampled_norm_after_first: f64,
    pub max_sup_norm_after_first: f64,
    pub final_state: Vec<f64>,
}

impl EpisodeSummary {
    pub fn new(log: &EpisodeLog) -> Self {
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sampled = log.sampled_states();
        Self {
            status: log.status,
            events: log.events.len(),
            elapsed: log.elapsed,
            measured_rate: log.measured_rate,
            max_sampled_norm_after_first: sampled.iter().skip(1).map(|(_, x)| norm(x)).fold(0.0, f64::max),
            max_sup_norm_after_first: log.events.iter().skip(1).map(|e| e.sup_norm).fold(0.0, f64::max),
            final_state: log.dense.x.last().cloned().unwrap_or_default(),
        }
    }
}

pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}
