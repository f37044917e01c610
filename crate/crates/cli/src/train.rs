//! `lbac train`: the training loop with curve logging and checkpoints.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lbac_core::config::RunConfig;
use lbac_core::train::{CurveRow, Trainer};

use crate::baseline;
use crate::checkpoint;
use crate::error::{CliError, Result};
use crate::io::{cell, create_dir, write_run_files};

pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    /// Checkpoint manifest to resume from.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub episodes: u64,
    pub final_checkpoint: PathBuf,
    pub curves: PathBuf,
    pub last: Option<CurveRow>,
}

type CsvOut = csv::Writer<File>;

fn write_row(w: &mut CsvOut, row: &CurveRow, path: &Path) -> Result<()> {
    let record: Vec<String> = row.fields().iter().map(|v| cell(*v)).collect();
    w.write_record(&record).map_err(|e| CliError::io(path, e.into()))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let cfg = &args.config;
    cfg.validate()?;
    let dir = &args.out_dir;
    write_run_files(dir, "train", cfg)?;
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let t = checkpoint::resume(path, cfg.clone())?;
            log::info!("event=resume checkpoint={} episode={}", path.display(), t.episode);
            t
        }
        None => {
            let (base, hit) = baseline::load_or_search(cfg, &args.cache_dir)?;
            log::info!("event=baseline cache_hit={hit} key={}", &base.key_hash[..16]);
            Trainer::new(cfg.clone(), base.result.action)?
        }
    };

    let curves = dir.join(CURVES_FILE);
    let file = File::create(&curves).map_err(|e| CliError::io(&curves, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CurveRow::header()).map_err(|e| CliError::io(&curves, e.into()))?;
    for row in &trainer.history {
        write_row(&mut w, row, &curves)?;
    }

    let started = Instant::now();
    let every = cfg.train.checkpoint_every;
    let mut last = trainer.history.last().cloned();
    while !trainer.finished() {
        let row = trainer.run_episode()?;
        write_row(&mut w, &row, &curves)?;
        if row.episode % 10 == 0 || row.episode == 1 {
            log::info!(
                "event=episode episode={} steps_total={} reward_ma={:.4} lb_reward_ma={:.4} mb_reward_ma={:.4} sigma={:.4} alpha={:.4} entropy={} elapsed_s={:.1}",
                row.episode,
                trainer.total_steps,
                row.reward_ma,
                row.lb_reward_ma,
                row.mb_reward_ma,
                row.sigma,
                row.alpha,
                cell(row.entropy),
                started.elapsed().as_secs_f64()
            );
        }
        if every > 0 && row.episode % every as u64 == 0 && !trainer.finished() {
            let path = checkpoint::save(&trainer, &ckpt_dir, &format!("ep{:06}", row.episode))?;
            log::info!("event=checkpoint path={}", path.display());
        }
        last = Some(row);
    }
    let final_checkpoint = checkpoint::save(&trainer, &ckpt_dir, "final")?;
    log::info!("event=train_done episodes={} checkpoint={}", trainer.episode, final_checkpoint.display());
    Ok(TrainSummary { episodes: trainer.episode, final_checkpoint, curves, last })
}
