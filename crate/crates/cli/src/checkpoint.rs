//! Checkpoint files: a JSON manifest plus a little-endian `f64` array.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use lbac_core::checkpoint::{FlatArchive, SegmentSink};
use lbac_core::config::RunConfig;
use lbac_core::control::ACTION_DIM;
use lbac_core::env::STATE_DIM;
use lbac_core::nn::{Mlp, MlpSpec};
use lbac_core::train::{Trainer, TrainerManifest};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{config_hash, read_json, tmp_path, write_json};

pub const FORMAT: &str = "lbac-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config_hash: String,
    pub config: RunConfig,
    /// Data file name, relative to the manifest.
    pub data_file: String,
    pub trainer: TrainerManifest,
}

struct FileSink {
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl SegmentSink for FileSink {
    fn write(&mut self, _name: &str, values: &[f64]) -> lbac_core::Result<()> {
        if self.error.is_some() {
            return Err(lbac_core::Error::Config("checkpoint write failed".into()));
        }
        for v in values {
            if let Err(e) = self.out.write_all(&v.to_le_bytes()) {
                self.error = Some(e);
                return Err(lbac_core::Error::Config("checkpoint write failed".into()));
            }
        }
        Ok(())
    }
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`; returns the manifest
/// path.
pub fn save(trainer: &Trainer, dir: &Path, stem: &str) -> Result<PathBuf> {
    let data_name = format!("{stem}.bin");
    let data_path = dir.join(&data_name);
    let tmp = tmp_path(&data_path);
    let file = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    let mut sink = FileSink { out: BufWriter::with_capacity(1 << 20, file), error: None };
    let written = trainer.checkpoint(&mut sink);
    if let Some(e) = sink.error.take() {
        return Err(CliError::io(&tmp, e));
    }
    let trainer_manifest = written?;
    sink.out.flush().map_err(|e| CliError::io(&tmp, e))?;
    drop(sink);
    std::fs::rename(&tmp, &data_path).map_err(|e| CliError::io(&data_path, e))?;
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        config_hash: config_hash(&trainer.cfg),
        config: trainer.cfg.clone(),
        data_file: data_name,
        trainer: trainer_manifest,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_manifest(path: &Path) -> Result<CheckpointManifest> {
    let m: CheckpointManifest = read_json(path)?;
    if m.format != FORMAT {
        return Err(CliError::Config(format!("{}: unknown checkpoint format `{}`", path.display(), m.format)));
    }
    Ok(m)
}

fn data_path(manifest_path: &Path, m: &CheckpointManifest) -> PathBuf {
    manifest_path.with_file_name(&m.data_file)
}

pub fn load_archive(manifest_path: &Path, m: &CheckpointManifest) -> Result<FlatArchive> {
    let path = data_path(manifest_path, m);
    let mut bytes = Vec::new();
    File::open(&path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| CliError::io(&path, e))?;
    let data = FlatArchive::data_from_le_bytes(&bytes)?;
    drop(bytes);
    Ok(FlatArchive::from_parts(m.trainer.segments.clone(), data)?)
}

/// Restores a trainer, refusing a checkpoint written under another config.
pub fn resume(manifest_path: &Path, cfg: RunConfig) -> Result<Trainer> {
    let m = load_manifest(manifest_path)?;
    let hash = config_hash(&cfg);
    if hash != m.config_hash {
        return Err(CliError::ResumeMismatch { checkpoint: m.config_hash, config: hash });
    }
    let archive = load_archive(manifest_path, &m)?;
    Ok(Trainer::restore(cfg, &m.trainer, &archive)?)
}

/// Reads one named segment without loading the whole data file.
pub fn read_segment(manifest_path: &Path, m: &CheckpointManifest, name: &str) -> Result<Vec<f64>> {
    let mut offset = 0u64;
    let seg = m
        .trainer
        .segments
        .iter()
        .find(|s| {
            let hit = s.name == name;
            if !hit {
                offset += s.len as u64;
            }
            hit
        })
        .ok_or_else(|| CliError::Config(format!("checkpoint has no segment `{name}`")))?;
    let path = data_path(manifest_path, m);
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let mut r = BufReader::new(file);
    r.seek(SeekFrom::Start(offset * 8)).map_err(|e| CliError::io(&path, e))?;
    let mut bytes = vec![0u8; seg.len * 8];
    r.read_exact(&mut bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(FlatArchive::data_from_le_bytes(&bytes)?)
}

/// The policy network stored in a checkpoint.
pub fn load_policy(manifest_path: &Path) -> Result<(CheckpointManifest, Mlp)> {
    let m = load_manifest(manifest_path)?;
    let params = read_segment(manifest_path, &m, "policy")?;
    let spec = MlpSpec::new(STATE_DIM, &m.config.sac.hidden, 2 * ACTION_DIM);
    let net = Mlp::from_params(spec, params)?;
    Ok((m, net))
}
