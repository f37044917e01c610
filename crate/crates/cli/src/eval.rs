//! `lbac eval`: paired station-keeping sessions of the learned and
//! fixed-pole controllers.

use std::path::PathBuf;

use lbac_core::config::RunConfig;
use lbac_core::control::PoleAction;
use lbac_core::eval::{aggregate_trials, compare, run_session, Comparison, Controller, Scenario, SetpointAggregate, StationLegResult};
use lbac_core::nn::Mlp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline;
use crate::checkpoint;
use crate::error::{CliError, Result};
use crate::io::{config_hash, create_dir, write_json, write_run_files};

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";

#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// Evaluation config; the checkpoint's config when `None`.
    pub config: Option<RunConfig>,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seed: Option<u64>,
    pub scenarios: Option<Vec<Scenario>>,
    pub trials: Option<usize>,
    pub parallel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Mb,
    Lb,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Mb => "mb",
            ControllerKind::Lb => "lb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub scenario: Scenario,
    pub controller: ControllerKind,
    pub trial: usize,
    pub seed: u64,
    /// Error norm at which the session was aborted, if it diverged.
    pub diverged: Option<f64>,
    /// Scored legs; empty for a diverged session.
    pub legs: Vec<StationLegResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub scenario: Scenario,
    pub controller: ControllerKind,
    /// Sessions that completed and entered the aggregate.
    pub completed: usize,
    pub diverged: usize,
    pub setpoints: Vec<SetpointAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub config_hash: String,
    pub checkpoint_config_hash: String,
    pub mb_action: PoleAction,
    pub sessions: Vec<SessionRecord>,
    pub aggregates: Vec<AggregateRecord>,
    pub comparisons: Vec<Comparison>,
}

type Session = std::result::Result<Vec<StationLegResult>, f64>;

/// Seed of trial `i`; LB and MB share it.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(trial as u64)
}

fn run_trials(
    cfg: &RunConfig,
    controller: &Controller<'_>,
    scenario: Scenario,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Session>> {
    let plant = cfg.eval_plant().build()?;
    let trials: Vec<usize> = (0..cfg.eval.trials).collect();
    let out: lbac_core::Result<Vec<Session>> = pool.install(|| {
        trials
            .par_iter()
            .map(|&i| match run_session(&plant, controller, scenario, trial_seed(cfg.seed, i), &cfg.eval) {
                Ok(legs) => Ok(Ok(legs)),
                Err(lbac_core::Error::ControllerDiverged { distance }) => Ok(Err(distance)),
                Err(e) => Err(e),
            })
            .collect()
    });
    Ok(out?)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalResults> {
    let (manifest, policy): (_, Mlp) = checkpoint::load_policy(&args.checkpoint)?;
    let mut cfg = args.config.clone().unwrap_or_else(|| manifest.config.clone());
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.eval.trials = t;
    }
    if let Some(s) = &args.scenarios {
        cfg.eval.scenario = s.clone();
    }
    cfg.validate()?;
    if cfg.sac.hidden != manifest.config.sac.hidden {
        return Err(CliError::Config("sac.hidden differs from the checkpoint's network".into()));
    }
    let base = baseline::load(&cfg, &args.cache_dir)?;
    write_run_files(&args.out_dir, "eval", &cfg)?;
    create_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("baseline.json"), &base)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mb = Controller::Fixed(base.result.action);
    let clamp = (cfg.sac.log_std_min, cfg.sac.log_std_max);
    let lb = Controller::Policy { net: &policy, cube: cfg.poles, clamp };

    let mut sessions = Vec::new();
    let mut aggregates = Vec::new();
    let mut comparisons = Vec::new();
    for &scenario in &cfg.eval.scenario {
        let mut per = Vec::new();
        for (kind, controller) in [(ControllerKind::Mb, &mb), (ControllerKind::Lb, &lb)] {
            let runs = run_trials(&cfg, controller, scenario, &pool)?;
            let done: Vec<Vec<StationLegResult>> = runs.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
            let diverged = runs.len() - done.len();
            if diverged > 0 {
                log::warn!(
                    "event=diverged scenario={} controller={} sessions={diverged} of={}",
                    scenario.name(),
                    kind.name(),
                    runs.len()
                );
            }
            let agg = if done.is_empty() { Vec::new() } else { aggregate_trials(&done)? };
            for (trial, run) in runs.into_iter().enumerate() {
                let (legs, diverged) = match run {
                    Ok(legs) => (legs, None),
                    Err(d) => (Vec::new(), Some(d)),
                };
                sessions.push(SessionRecord { scenario, controller: kind, trial, seed: trial_seed(cfg.seed, trial), diverged, legs });
            }
            aggregates.push(AggregateRecord { scenario, controller: kind, completed: done.len(), diverged, setpoints: agg.clone() });
            per.push(agg);
        }
        if per.iter().any(|a| a.is_empty()) {
            log::warn!("event=comparison_skipped scenario={} reason=all_sessions_diverged", scenario.name());
            continue;
        }
        let c = compare(scenario, &per[0], &per[1])?;
        log::info!(
            "event=comparison scenario={} lb_wins={} of={} overall_ratio={:.4}",
            scenario.name(),
            c.lb_wins,
            c.rows.len(),
            c.overall_ratio
        );
        comparisons.push(c);
    }
    let results = EvalResults {
        config_hash: config_hash(&cfg),
        checkpoint_config_hash: manifest.config_hash.clone(),
        mb_action: base.result.action,
        sessions,
        aggregates,
        comparisons,
    };
    write_outputs(&args.out_dir, &results)?;
    Ok(results)
}

fn write_outputs(dir: &std::path::Path, r: &EvalResults) -> Result<()> {
    write_json(&dir.join(RESULTS_JSON), r)?;
    let path = dir.join(RESULTS_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e.into()))?;
    let io = |e: csv::Error| CliError::io(&path, e.into());
    w.write_record([
        "scenario", "controller", "trial", "seed", "setpoint", "mean_rmse", "std_rmse", "control_effort", "mean_return",
        "mean_d",
    ])
    .map_err(io)?;
    for s in &r.sessions {
        for l in &s.legs {
            w.write_record([
                s.scenario.name().to_string(),
                s.controller.name().to_string(),
                s.trial.to_string(),
                s.seed.to_string(),
                l.setpoint_id.to_string(),
                l.mean_rmse.to_string(),
                l.std_rmse.to_string(),
                l.control_effort.to_string(),
                l.mean_return.to_string(),
                l.mean_d.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join(COMPARISON_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e.into()))?;
    let io = |e: csv::Error| CliError::io(&path, e.into());
    w.write_record([
        "scenario", "setpoint", "mb_rmse", "lb_rmse", "ratio", "mb_effort", "lb_effort", "mb_return", "lb_return",
    ])
    .map_err(io)?;
    for c in &r.comparisons {
        for row in &c.rows {
            w.write_record([
                c.scenario.name().to_string(),
                row.setpoint_id.to_string(),
                row.mb_rmse.to_string(),
                row.lb_rmse.to_string(),
                row.ratio.to_string(),
                row.mb_effort.to_string(),
                row.lb_effort.to_string(),
                row.mb_return.to_string(),
                row.lb_return.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}
