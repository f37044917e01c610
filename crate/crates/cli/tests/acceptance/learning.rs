//! Criteria 8 and 9: the scaled training run and its evaluation.

use std::path::{Path, PathBuf};

use lbac::checkpoint::load_manifest;
use lbac::eval::{cmd_eval, ControllerKind, EvalArgs};
use lbac::io::{config_hash, read_config};
use lbac::train::{cmd_train, TrainArgs, CURVES_FILE};
use lbac_core::config::RunConfig;
use lbac_core::eval::Scenario;

use crate::{acceptance_dir, workspace_root, Outcome};

fn scaled_dir() -> PathBuf {
    std::env::var_os("LBAC_SCALED_RUN").map(PathBuf::from).unwrap_or_else(|| acceptance_dir().join("scaled"))
}

fn cache_dir() -> PathBuf {
    acceptance_dir().join("baseline-cache")
}

fn scaled_config() -> RunConfig {
    read_config(&workspace_root().join("configs/scaled.json")).expect("scaled config")
}

/// Newest periodic checkpoint written under `cfg`, if any.
fn latest_checkpoint(dir: &Path, hash: &str) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("ep") && n.ends_with(".json")))
        .collect();
    found.sort();
    found.into_iter().rev().find(|p| load_manifest(p).is_ok_and(|m| m.config_hash == hash))
}

/// Final checkpoint of the scaled run, training (or resuming) it when it is
/// missing.
fn scaled_run() -> Result<PathBuf, String> {
    let cfg = scaled_config();
    let hash = config_hash(&cfg);
    let dir = scaled_dir();
    let ckpt_dir = dir.join("checkpoints");
    let last = ckpt_dir.join("final.json");
    if last.exists() {
        let m = load_manifest(&last).map_err(|e| e.to_string())?;
        if m.config_hash != hash {
            return Err(format!("{} was trained under another config", last.display()));
        }
        return Ok(last);
    }
    let resume = latest_checkpoint(&ckpt_dir, &hash);
    eprintln!(
        "acceptance: training the scaled run in {} ({}); this takes hours",
        dir.display(),
        resume.as_ref().map_or("from scratch".to_string(), |p| format!("resuming {}", p.display()))
    );
    let summary = cmd_train(&TrainArgs { config: cfg, out_dir: dir, cache_dir: cache_dir(), resume }).map_err(|e| e.to_string())?;
    Ok(summary.final_checkpoint)
}

pub fn scaled_learning() -> Outcome {
    let cfg = scaled_config();
    if let Err(e) = scaled_run() {
        return Outcome::new(false, e);
    }
    let path = scaled_dir().join(CURVES_FILE);
    let mut reader = match csv::Reader::from_path(&path) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("{}: {e}", path.display())),
    };
    let header = reader.headers().expect("header").clone();
    let col = |name: &str| header.iter().position(|h| h == name).expect("curve column");
    let (ep, lb, mb, explore) = (col("episode"), col("lb_reward_ma"), col("mb_reward_ma"), col("reward_ma"));
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.expect("curve row")).collect();
    let Some(last) = rows.last() else {
        return Outcome::new(false, "curves.csv has no rows");
    };
    let num = |i: usize| last[i].parse::<f64>().expect("number");
    let episodes = num(ep) as usize;
    let (lb_ma, mb_ma, explore_ma) = (num(lb), num(mb), num(explore));
    // First episode from which the learned average stays ahead.
    let ahead_from = rows
        .iter()
        .rposition(|r| r[lb].parse::<f64>().unwrap() <= r[mb].parse::<f64>().unwrap())
        .map_or(1, |i| i + 2);
    Outcome::new(
        episodes == cfg.train.episodes && lb_ma > mb_ma,
        format!(
            "{episodes} episodes x {} steps: final {}-episode mean reward LB {lb_ma:.4} vs MB {mb_ma:.4} \
             (exploring policy {explore_ma:.4}); LB ahead from episode {}",
            cfg.env.episode_len,
            cfg.train.curve_window,
            if lb_ma > mb_ma { ahead_from.to_string() } else { "never at the end".into() }
        ),
    )
}

pub fn scaled_comparison() -> Outcome {
    let final_ckpt = match scaled_run() {
        Ok(p) => p,
        Err(e) => return Outcome::new(false, e),
    };
    let args = EvalArgs {
        config: None,
        checkpoint: final_ckpt,
        out_dir: acceptance_dir().join("eval-current"),
        cache_dir: cache_dir(),
        seed: None,
        scenarios: Some(vec![Scenario::Current]),
        trials: Some(10),
        parallel: 1,
    };
    let results = match cmd_eval(&args) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let lb_diverged: usize = results.aggregates.iter().filter(|a| a.controller == ControllerKind::Lb).map(|a| a.diverged).sum();
    let mb_diverged: usize = results.aggregates.iter().filter(|a| a.controller == ControllerKind::Mb).map(|a| a.diverged).sum();
    let Some(c) = results.comparisons.first() else {
        return Outcome::new(false, format!("no comparison: LB diverged in {lb_diverged} of 10 sessions"));
    };
    let ratios: Vec<String> = c.rows.iter().map(|r| format!("{:.2}", r.ratio)).collect();
    Outcome::new(
        c.lb_wins >= 7 && c.overall_ratio >= 1.3 && lb_diverged == 0,
        format!(
            "scenario current, 10 paired trials: LB lower RMSE on {} of {} setpoints (>= 7), overall MB/LB {:.3} (>= 1.3), \
             per-setpoint MB/LB [{}], diverged LB {lb_diverged} MB {mb_diverged}",
            c.lb_wins,
            c.rows.len(),
            c.overall_ratio,
            ratios.join(", ")
        ),
    )
}
