//! Cached fixed-pole baseline search.

use std::path::{Path, PathBuf};

use lbac_core::config::RunConfig;
use lbac_core::control::{mb_baseline_search, BaselineResult, BaselineSpec, PoleCube};
use lbac_core::dynamics::{Plant, PlantParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{create_dir, read_json, sha256_hex, write_json};

/// Everything the search result depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineKey {
    pub plant: PlantParams,
    pub poles: PoleCube,
    pub spec: BaselineSpec,
}

impl BaselineKey {
    pub fn from_config(cfg: &RunConfig) -> Self {
        BaselineKey { plant: cfg.plant.params(), poles: cfg.poles, spec: cfg.baseline.spec(&cfg.poles) }
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("key serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCache {
    pub key_hash: String,
    pub key: BaselineKey,
    pub result: BaselineResult,
}

pub fn cache_path(dir: &Path, key: &BaselineKey) -> PathBuf {
    dir.join(format!("baseline-{}.json", &key.hash()[..16]))
}

/// Cached result for `cfg`, or `MissingBaseline`.
pub fn load(cfg: &RunConfig, dir: &Path) -> Result<BaselineCache> {
    let key = BaselineKey::from_config(cfg);
    let path = cache_path(dir, &key);
    if !path.exists() {
        return Err(CliError::MissingBaseline(path));
    }
    let cache: BaselineCache = read_json(&path)?;
    if cache.key != key {
        return Err(CliError::MissingBaseline(path));
    }
    Ok(cache)
}

/// Cached result for `cfg`, searching and caching on a miss. The flag
/// reports a cache hit.
pub fn load_or_search(cfg: &RunConfig, dir: &Path) -> Result<(BaselineCache, bool)> {
    match load(cfg, dir) {
        Ok(c) => return Ok((c, true)),
        Err(CliError::MissingBaseline(_)) => {}
        Err(e) => return Err(e),
    }
    let key = BaselineKey::from_config(cfg);
    let plant = Plant::new(key.plant.clone())?;
    let started = std::time::Instant::now();
    let result = mb_baseline_search(&plant, &key.poles, &key.spec)?;
    log::info!(
        "event=baseline_search candidates={} seconds={:.2} action={:?}",
        result.candidates,
        started.elapsed().as_secs_f64(),
        result.action.as_slice()
    );
    create_dir(dir)?;
    let cache = BaselineCache { key_hash: key.hash(), key, result };
    write_json(&cache_path(dir, &cache.key), &cache)?;
    Ok((cache, false))
}
