//! `handsoff`: solve sparse control problems, query minimum times, run
//! self-triggered episodes and reproduce the built-in demos.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use handsoff::jobs::{demo_job, job_tags, run_job, run_simulate, Artifact, Job, Outcome, RunOutput, DEMOS};
use handsoff::self_triggered::Plant;
use handsoff::sparse_control::{minimum_time, MinTimeOptions};
use handsoff::{Disturbance, Error, FiniteHorizonProblem, LtiSystem, Objective, SelfTriggeredConfig};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use manifest::{ConfigRecord, RunManifest};

#[derive(Parser)]
#[command(name = "handsoff", version, about = "Maximum hands-off control: solve, simulate, reproduce")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a finite-horizon problem; writes PREFIX.csv and PREFIX.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the objective in the config.
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long, default_value = "solution")]
        out: String,
    },
    /// Print the minimum transfer time of a state to the target as JSON.
    Mintime {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated initial state; overrides `x0` in the config.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
    },
    /// Run a self-triggered episode; writes events, trajectory, report and summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Noise seed; replaces the seed of a uniform-noise disturbance.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "episode")]
        out: String,
        /// Run K episodes on noise streams 0..K in parallel and write a summary.
        #[arg(long, value_name = "K")]
        sweep: Option<u64>,
    },
    /// Run a built-in demo.
    Demo {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(DEMOS))]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the demo name.
        #[arg(long)]
        out: Option<String>,
    },
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<(T, ConfigRecord)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let record = ConfigRecord::new(Some(path), &bytes);
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let value = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        anyhow!("{}: field `{field}`: {}", path.display(), e.inner())
    })?;
    Ok((value, record))
}

fn write_artifacts(prefix: &str, artifacts: &[Artifact]) -> Result<Vec<String>> {
    if let Some(dir) = Path::new(prefix).parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut written = Vec::new();
    for a in artifacts {
        let path = format!("{prefix}{}", a.suffix);
        fs::write(&path, &a.contents).with_context(|| format!("cannot write {path}"))?;
        log::info!("wrote {path}");
        written.push(path);
    }
    Ok(written)
}

struct Finished {
    outcome: Outcome,
    stdout: serde_json::Value,
    outputs: Vec<String>,
    config: ConfigRecord,
    seed: Option<u64>,
    prefix: Option<String>,
}

fn finish(command: &str, started: Instant, done: Finished) -> Result<Outcome> {
    println!("{}", serde_json::to_string(&done.stdout)?);
    if let Some(prefix) = &done.prefix {
        let manifest = RunManifest {
            command: command.to_string(),
            config: done.config,
            seed: done.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outcome: done.outcome,
            outputs: done.outputs,
            wall_time: started.elapsed().as_secs_f64(),
        };
        let path = format!("{prefix}.manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("cannot write {path}"))?;
    }
    Ok(done.outcome)
}

fn output_finished(out: RunOutput, prefix: &str, config: ConfigRecord, seed: Option<u64>) -> Result<Finished> {
    let outputs = write_artifacts(prefix, &out.artifacts)?;
    Ok(Finished {
        outcome: out.outcome,
        stdout: out.summary,
        outputs,
        config,
        seed,
        prefix: Some(prefix.to_string()),
    })
}

fn cmd_solve(config: &Path, objective: Option<Objective>, out: &str) -> Result<Finished> {
    let (prob, record): (FiniteHorizonProblem, _) = read_config(config)?;
    let mut prob = prob.normalized();
    if let Some(o) = objective {
        prob.objective = o;
    }
    prob.validate()?;
    let run = run_job(&Job::Solve(vec![prob]), 0)?;
    output_finished(run, out, record, None)
}

/// A plant description for minimum-time queries: either a problem config
/// (`system`) or an episode config (`plant`).
#[derive(Deserialize)]
struct MintimeConfig {
    #[serde(default)]
    system: Option<LtiSystem>,
    #[serde(default)]
    plant: Option<Plant>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default, rename = "xT")]
    x_target: Option<Vec<f64>>,
}

fn cmd_mintime(config: &Path, x0: Option<Vec<f64>>) -> Result<Finished> {
    let (cfg, record): (MintimeConfig, _) = read_config(config)?;
    let sys = match (cfg.system, cfg.plant) {
        (Some(s), _) => s,
        (None, Some(p)) => p.linear_model(),
        (None, None) => bail!("{}: config needs a `system` or a `plant` field", config.display()),
    };
    let x0 = x0
        .or(cfg.x0)
        .ok_or_else(|| anyhow!("no initial state: pass --x0 or set `x0` in the config"))?;
    let target = cfg.x_target.unwrap_or_else(|| vec![0.0; sys.n()]);
    let (outcome, stdout) = match minimum_time(&sys, &x0, &target, &MinTimeOptions::default()) {
        Ok(t) => (Outcome::Ok, json!({ "T_star": t })),
        Err(Error::Unreachable { t_max }) => (Outcome::Unreachable, json!({ "status": "unreachable", "T_max": t_max })),
        Err(e) => return Err(e.into()),
    };
    Ok(Finished {
        outcome,
        stdout,
        outputs: Vec::new(),
        config: record,
        seed: None,
        prefix: None,
    })
}

fn reseed(cfg: &mut SelfTriggeredConfig, seed: u64) {
    if let Disturbance::UniformNoise { seed: s } = &mut cfg.disturbance {
        *s = seed;
    }
}

fn cmd_simulate(config: &Path, seed: Option<u64>, out: &str, sweep: Option<u64>) -> Result<Finished> {
    let (mut cfg, record): (SelfTriggeredConfig, _) = read_config(config)?;
    if let Some(s) = seed {
        reseed(&mut cfg, s);
    }
    cfg.validate()?;
    let seed = match cfg.disturbance {
        Disturbance::UniformNoise { seed } => Some(seed),
        _ => seed,
    };
    let Some(k) = sweep else {
        let run = run_simulate(&cfg, 0, "")?;
        return output_finished(run, out, record, seed);
    };
    let runs: Vec<(u64, RunOutput)> = (0..k)
        .into_par_iter()
        .map(|stream| run_simulate(&cfg, stream, "").map(|r| (stream, r)))
        .collect::<handsoff::Result<_>>()?;
    let mut outcome = Outcome::Ok;
    let mut episodes = Vec::new();
    let mut max_rate: f64 = 0.0;
    for (stream, run) in &runs {
        if run.outcome.exit_code() > outcome.exit_code() {
            outcome = run.outcome;
        }
        max_rate = max_rate.max(run.summary["measured_rate"].as_f64().unwrap_or(f64::NAN));
        episodes.push(json!({ "stream": stream, "result": run.summary }));
    }
    let summary = json!({ "episodes": episodes, "max_measured_rate": max_rate });
    let artifact = Artifact {
        suffix: ".sweep.json".into(),
        contents: serde_json::to_string_pretty(&summary)? + "\n",
    };
    let outputs = write_artifacts(out, &[artifact])?;
    Ok(Finished {
        outcome,
        stdout: json!({ "episodes": k, "max_measured_rate": max_rate }),
        outputs,
        config: record,
        seed,
        prefix: Some(out.to_string()),
    })
}

fn cmd_demo(name: &str, seed: u64, out: Option<String>) -> Result<Finished> {
    let job = demo_job(name, seed)?;
    let prefix = out.unwrap_or_else(|| name.to_string());
    // The materialized config is written next to the outputs so the run can
    // be repeated with `solve` or `simulate`.
    let configs: Vec<serde_json::Value> = match &job {
        Job::Solve(p) => p.iter().map(serde_json::to_value).collect::<Result<_, _>>()?,
        Job::Simulate(c) => c.iter().map(serde_json::to_value).collect::<Result<_, _>>()?,
    };
    let tags = job_tags(&job);
    let mut config_artifacts = Vec::new();
    let mut config_bytes = Vec::new();
    for (cfg, tag) in configs.iter().zip(&tags) {
        let text = serde_json::to_string_pretty(cfg)? + "\n";
        config_bytes.extend_from_slice(text.as_bytes());
        let suffix = if tag.is_empty() { ".config.json".to_string() } else { format!(".{tag}.config.json") };
        config_artifacts.push(Artifact { suffix, contents: text });
    }
    let run = run_job(&job, 0)?;
    let mut done = output_finished(run, &prefix, ConfigRecord::new(None, &config_bytes), Some(seed))?;
    done.outputs.extend(write_artifacts(&prefix, &config_artifacts)?);
    Ok(done)
}

fn run(cli: Cli) -> Result<Outcome> {
    let started = Instant::now();
    let (name, done) = match cli.command {
        Command::Solve { config, objective, out } => ("solve", cmd_solve(&config, objective, &out)?),
        Command::Mintime { config, x0 } => ("mintime", cmd_mintime(&config, x0)?),
        Command::Simulate { config, seed, out, sweep } => ("simulate", cmd_simulate(&config, seed, &out, sweep)?),
        Command::Demo { name, seed, out } => ("demo", cmd_demo(&name, seed, out)?),
    };
    finish(name, started, done)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HANDSOFF_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
