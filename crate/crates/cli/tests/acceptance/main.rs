//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria can be selected by number, e.g.
//! `cargo test --test acceptance -- 1 4 10`. The scaled learning criteria (8
//! and 9) read the run in `target/acceptance/scaled` (or `$LBAC_SCALED_RUN`)
//! and train it in-process when it is absent.

mod determinism;
mod learning;
mod properties;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

/// Outcome of one criterion: pass flag and a one-line measurement summary.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Wall and process CPU time of a criterion. Runtime limits apply to CPU
/// time so that a concurrent job on the machine does not fail them; wall
/// time is reported alongside.
pub struct Clock {
    wall: Instant,
    cpu: Option<f64>,
}

pub struct Elapsed {
    wall: f64,
    cpu: Option<f64>,
}

impl Clock {
    pub fn start() -> Self {
        Clock { wall: Instant::now(), cpu: cpu_seconds() }
    }

    pub fn finish(&self) -> Elapsed {
        let cpu = self.cpu.zip(cpu_seconds()).map(|(a, b)| b - a);
        Elapsed { wall: self.wall.elapsed().as_secs_f64(), cpu }
    }
}

impl Elapsed {
    pub fn within(&self, limit: f64) -> bool {
        self.cpu.unwrap_or(self.wall) < limit
    }
}

impl std::fmt::Display for Elapsed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.cpu {
            Some(cpu) => write!(f, "cpu {cpu:.2} s, wall {:.2} s", self.wall),
            None => write!(f, "wall {:.2} s", self.wall),
        }
    }
}

/// User plus system time of this process, from `/proc/self/stat`.
fn cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    // Fields after the parenthesised command name; utime and stime are the
    // 12th and 13th of them, in clock ticks of 1/100 s.
    let rest = &stat[stat.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    let ticks = f.get(11)?.parse::<f64>().ok()? + f.get(12)?.parse::<f64>().ok()?;
    Some(ticks / 100.0)
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("workspace root")
}

pub fn acceptance_dir() -> PathBuf {
    workspace_root().join("target/acceptance")
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (1, "pole-placement identity", properties::pole_placement),
    (2, "gradient fidelity", properties::gradient_fidelity),
    (3, "squashed-Gaussian density", properties::squashed_density),
    (4, "temperature steering", properties::temperature_steering),
    (5, "BIER invariants", properties::bier_invariants),
    (6, "dynamics sanity", properties::dynamics_sanity),
    (7, "MB baseline validity", properties::baseline_validity),
    (8, "scaled learning result", learning::scaled_learning),
    (9, "scaled comparison result", learning::scaled_comparison),
    (10, "determinism", determinism::determinism),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict} {name}: {} ({:.1} s)", outcome.detail, started.elapsed().as_secs_f64());
        if !outcome.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
