//! Runs that turn a config into named text artifacts, and the built-in demos.
//!
//! Nothing here touches the file system, so the same bytes can be written by
//! the command-line tool or compared in tests.

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{events_jsonl, episode_csv, solution_csv, to_json_pretty, EpisodeSummary, SolutionSummary};
use crate::lti::LtiSystem;
use crate::oracle_1d::ScalarPlant;
use crate::self_triggered::{
    run_episode_stream, stability_report, Controller, Disturbance, EpisodeStatus, Plant, SelfTriggeredConfig,
};
use crate::sparse_control::{solve_problem, FiniteHorizonProblem, Objective};

/// How a run ended, ordered by exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Infeasible,
    Unreachable,
    Escaped,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::Infeasible | Outcome::Unreachable => 2,
            Outcome::Escaped => 3,
        }
    }

    /// Combines two runs; the worse outcome wins.
    fn worst(self, other: Outcome) -> Outcome {
        if other.exit_code() > self.exit_code() {
            other
        } else {
            self
        }
    }
}

/// Output file contents; `suffix` is appended to the output prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub suffix: String,
    pub contents: String,
}

impl Artifact {
    fn new(suffix: impl Into<String>, contents: String) -> Self {
        Self {
            suffix: suffix.into(),
            contents,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outcome: Outcome,
    pub artifacts: Vec<Artifact>,
    /// One-line result for stdout.
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone)]
pub enum Job {
    Solve(Vec<FiniteHorizonProblem>),
    Simulate(Vec<SelfTriggeredConfig>),
}

fn tagged(tag: &str, suffix: &str) -> String {
    if tag.is_empty() {
        suffix.to_string()
    } else {
        format!(".{tag}{suffix}")
    }
}

/// Solves one problem. Writes the control/state CSV and a certificate JSON,
/// or only a status JSON when the problem is infeasible.
pub fn run_solve(prob: &FiniteHorizonProblem, tag: &str) -> Result<RunOutput> {
    match solve_problem(prob) {
        Ok(sol) => {
            let summary = SolutionSummary::new(&sol);
            let line = json!({
                "objective": prob.objective,
                "status": "optimal",
                "support_cardinality": summary.support_cardinality,
                "terminal_error": sol.certificates.terminal_error,
            });
            Ok(RunOutput {
                outcome: Outcome::Ok,
                artifacts: vec![
                    Artifact::new(tagged(tag, ".csv"), solution_csv(&sol)?),
                    Artifact::new(tagged(tag, ".json"), to_json_pretty(&summary)?),
                ],
                summary: line,
            })
        }
        Err(Error::Infeasible { margin }) => {
            let status = json!({ "status": "infeasible", "margin": margin });
            Ok(RunOutput {
                outcome: Outcome::Infeasible,
                artifacts: vec![Artifact::new(tagged(tag, ".json"), to_json_pretty(&status)?)],
                summary: status,
            })
        }
        Err(e) => Err(e),
    }
}

/// Runs one episode on noise stream `stream`. Writes the events, the dense
/// trajectory, the stability report and an episode summary. Escaped episodes
/// still write everything logged up to the escape.
pub fn run_simulate(cfg: &SelfTriggeredConfig, stream: u64, tag: &str) -> Result<RunOutput> {
    let log = run_episode_stream(cfg, stream)?;
    let report = match stability_report(cfg) {
        Ok(r) => serde_json::to_value(&r).map_err(|e| Error::Parse(e.to_string()))?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    let summary = EpisodeSummary::new(&log);
    let outcome = match log.status {
        EpisodeStatus::Completed => Outcome::Ok,
        EpisodeStatus::Escaped => Outcome::Escaped,
    };
    let line = json!({
        "status": summary.status,
        "events": summary.events,
        "measured_rate": summary.measured_rate,
    });
    Ok(RunOutput {
        outcome,
        artifacts: vec![
            Artifact::new(tagged(tag, ".events.jsonl"), events_jsonl(&log)?),
            Artifact::new(tagged(tag, ".csv"), episode_csv(&log)?),
            Artifact::new(tagged(tag, ".report.json"), to_json_pretty(&report)?),
            Artifact::new(tagged(tag, ".summary.json"), to_json_pretty(&summary)?),
        ],
        summary: line,
    })
}

/// Runs every part of a job. Parts after the first are written under the
/// tags returned by [`job_tags`].
pub fn run_job(job: &Job, stream: u64) -> Result<RunOutput> {
    let tags = job_tags(job);
    let parts: Vec<RunOutput> = match job {
        Job::Solve(probs) => probs
            .iter()
            .zip(&tags)
            .map(|(p, t)| run_solve(p, t))
            .collect::<Result<_>>()?,
        Job::Simulate(cfgs) => cfgs
            .iter()
            .zip(&tags)
            .map(|(c, t)| run_simulate(c, stream, t))
            .collect::<Result<_>>()?,
    };
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().expect("one part"));
    }
    let mut outcome = Outcome::Ok;
    let mut artifacts = Vec::new();
    let mut summary = serde_json::Map::new();
    for (part, tag) in parts.into_iter().zip(tags) {
        outcome = outcome.worst(part.outcome);
        artifacts.extend(part.artifacts);
        summary.insert(tag, part.summary);
    }
    Ok(RunOutput {
        outcome,
        artifacts,
        summary: serde_json::Value::Object(summary),
    })
}

/// File tags for the parts of a job: the first part is untagged, the rest
/// are named after what distinguishes them.
pub fn job_tags(job: &Job) -> Vec<String> {
    match job {
        Job::Solve(probs) => probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == 0 {
                    String::new()
                } else {
                    serde_json::to_value(p.objective)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_else(|| format!("part{i}"))
                }
            })
            .collect(),
        Job::Simulate(cfgs) => cfgs
            .iter()
            .enumerate()
            .map(|(i, c)| match (i, c.controller) {
                (0, _) => String::new(),
                (_, Controller::Zero) => "zero".to_string(),
                _ => format!("part{i}"),
            })
            .collect(),
    }
}

pub const DEMOS: [&str; 5] = [
    "scalar-stable",
    "scalar-worstcase",
    "scalar-nonlinear-stable",
    "scalar-nonlinear-unstable",
    "fourstate-l1l2",
];

/// Minimum inter-sampling time of the scalar demos; below `T*(1) = log 2`.
pub const DEMO_T_MIN: f64 = 0.1;
pub const DEMO_TOTAL_TIME: f64 = 20.0;
pub const DEMO_FOURSTATE_STEPS: usize = 1000;

/// The plant `dx/dt = [[0,-1,0,0],[1,0,0,0],[0,1,0,0],[0,0,1,0]] x + [2,0,0,0]' u`.
pub fn fourstate_plant() -> LtiSystem {
    LtiSystem::from_rows(
        &[
            vec![0.0, -1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ],
        &[vec![2.0], vec![0.0], vec![0.0], vec![0.0]],
    )
    .expect("valid shapes")
}

fn scalar_episode(plant: ScalarPlant, x0: f64, delta: f64, disturbance: Disturbance) -> Vec<SelfTriggeredConfig> {
    let cfg = SelfTriggeredConfig::new(Plant::Scalar(plant), vec![x0], 0.6, DEMO_T_MIN, delta, DEMO_TOTAL_TIME)
        .with_disturbance(disturbance);
    let zero = cfg.clone().with_controller(Controller::Zero);
    vec![cfg, zero]
}

/// Built-in demo by name. Episode demos pair the hands-off loop with the
/// zero-control baseline; the four-state demo pairs the L1/L2 solution with
/// the L1 one. Nonlinear demos add no disturbance: the linearization error
/// is the disturbance, and `delta` bounds it on the region the state visits.
pub fn demo_job(name: &str, seed: u64) -> Result<Job> {
    let stable = ScalarPlant::linear(-1.0)?;
    let job = match name {
        "scalar-stable" => Job::Simulate(scalar_episode(stable, 1.0, 1.0, Disturbance::UniformNoise { seed })),
        "scalar-worstcase" => Job::Simulate(scalar_episode(
            stable,
            1.0,
            1.0,
            Disturbance::WorstCaseConstant { direction: vec![1.0] },
        )),
        // |sin x - x| <= 1 - sin 1 for |x| <= 1.
        "scalar-nonlinear-stable" => Job::Simulate(scalar_episode(
            ScalarPlant::nonlinear_sin(-1.0)?,
            1.0,
            1.0 - 1f64.sin(),
            Disturbance::Zero,
        )),
        // |sin x - x| <= 0.25 - sin 0.25 for |x| <= 0.25.
        "scalar-nonlinear-unstable" => Job::Simulate(scalar_episode(
            ScalarPlant::nonlinear_sin(1.0)?,
            0.25,
            0.25 - 0.25f64.sin(),
            Disturbance::Zero,
        )),
        "fourstate-l1l2" => {
            let prob = FiniteHorizonProblem::new(fourstate_plant(), vec![1.0; 4], 10.0, DEMO_FOURSTATE_STEPS, Objective::L1L2);
            Job::Solve(vec![prob.clone(), prob.with_objective(Objective::L1)])
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown demo `{other}` (expected one of {})",
                DEMOS.join(", ")
            )))
        }
    };
    Ok(job)
}
