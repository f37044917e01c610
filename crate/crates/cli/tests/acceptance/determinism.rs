//! Criterion 10: bit-identical reruns and checkpoint-resume equivalence.

use std::path::Path;

use lbac::eval::{cmd_eval, EvalArgs, COMPARISON_CSV, RESULTS_CSV, RESULTS_JSON};
use lbac::io::read_config;
use lbac::train::{cmd_train, TrainArgs, CURVES_FILE};

use crate::{workspace_root, Outcome};

const TRAIN_FILES: [&str; 3] = [CURVES_FILE, "checkpoints/final.json", "checkpoints/final.bin"];
const EVAL_FILES: [&str; 3] = [RESULTS_CSV, COMPARISON_CSV, RESULTS_JSON];

/// Files that differ between two run directories.
fn differing(a: &Path, b: &Path, files: &[&str]) -> Vec<String> {
    files
        .iter()
        .filter(|f| match (std::fs::read(a.join(f)), std::fs::read(b.join(f))) {
            (Ok(x), Ok(y)) => x != y,
            _ => true,
        })
        .map(|f| f.to_string())
        .collect()
}

pub fn determinism() -> Outcome {
    let cfg = read_config(&workspace_root().join("configs/smoke.json")).expect("smoke config");
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let cache = root.join("cache");
    let train = |name: &str, resume: Option<std::path::PathBuf>| {
        cmd_train(&TrainArgs { config: cfg.clone(), out_dir: root.join(name), cache_dir: cache.clone(), resume })
            .expect("smoke training")
    };
    let first = train("a", None);
    train("b", None);
    let every = cfg.train.checkpoint_every;
    let mid = root.join(format!("a/checkpoints/ep{every:06}.json"));
    train("resumed", Some(mid));

    let eval = |name: &str| {
        cmd_eval(&EvalArgs {
            config: None,
            checkpoint: first.final_checkpoint.clone(),
            out_dir: root.join(name),
            cache_dir: cache.clone(),
            seed: None,
            scenarios: None,
            trials: None,
            parallel: 1,
        })
        .expect("smoke evaluation")
    };
    eval("eval-a");
    eval("eval-b");

    let rerun = differing(&root.join("a"), &root.join("b"), &TRAIN_FILES);
    let resume = differing(&root.join("a"), &root.join("resumed"), &TRAIN_FILES);
    let evals = differing(&root.join("eval-a"), &root.join("eval-b"), &EVAL_FILES);
    let show = |d: &[String]| if d.is_empty() { "identical".to_string() } else { format!("differ: {}", d.join(", ")) };
    Outcome::new(
        rerun.is_empty() && resume.is_empty() && evals.is_empty(),
        format!(
            "smoke train rerun {}; resume from episode {every} {}; eval rerun {}",
            show(&rerun),
            show(&resume),
            show(&evals)
        ),
    )
}
