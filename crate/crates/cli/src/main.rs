use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lbac::error::Result;
use lbac::eval::{cmd_eval, EvalArgs};
use lbac::io::read_config;
use lbac::plot::cmd_plot;
use lbac::train::{cmd_train, TrainArgs};
use lbac_core::config::RunConfig;
use lbac_core::eval::Scenario;

#[derive(Parser)]
#[command(name = "lbac", version, about = "Learning-based adaptive pole-placement control of a 6-DOF AUV")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    None,
    Current,
    Both,
}

impl ScenarioArg {
    fn scenarios(self) -> Vec<Scenario> {
        match self {
            ScenarioArg::None => vec![Scenario::None],
            ScenarioArg::Current => vec![Scenario::Current],
            ScenarioArg::Both => vec![Scenario::None, Scenario::Current],
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the pole-scheduling policy.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to runs/train-<seed>.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Checkpoint manifest to resume from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "runs/baseline-cache")]
        cache_dir: PathBuf,
    },
    /// Search (or load from cache) the fixed-pole baseline.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/baseline-cache")]
        cache_dir: PathBuf,
    },
    /// Evaluate a checkpoint against the fixed-pole baseline.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluation config; the checkpoint's config when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Run directory; defaults to runs/eval-<seed>.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value = "runs/baseline-cache")]
        cache_dir: PathBuf,
    },
    /// Render SVG plots from a run directory, curves.csv or results.csv.
    Plot {
        path: PathBuf,
        /// Output directory; defaults to `<path>/plots` for a directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train { config: c, seed, out_dir, checkpoint, cache_dir } => {
            let cfg = config(&c, seed)?;
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(format!("runs/train-{}", cfg.seed)));
            let s = cmd_train(&TrainArgs { config: cfg, out_dir, cache_dir, resume: checkpoint })?;
            println!("{}", s.final_checkpoint.display());
        }
        Cmd::Baseline { config: c, cache_dir } => {
            let cfg = config(&c, None)?;
            let (cache, hit) = lbac::baseline::load_or_search(&cfg, &cache_dir)?;
            log::info!("event=baseline cache_hit={hit} key={}", &cache.key_hash[..16]);
            println!("{}", serde_json::to_string(&cache.result).expect("result serializes"));
        }
        Cmd::Eval { checkpoint, config: c, seed, scenario, trials, parallel, out_dir, cache_dir } => {
            let cfg = c.as_deref().map(read_config).transpose()?;
            let label = seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(format!("runs/eval-{label}")));
            let args = EvalArgs {
                config: cfg,
                checkpoint,
                out_dir: out_dir.clone(),
                cache_dir,
                seed,
                scenarios: scenario.map(ScenarioArg::scenarios),
                trials,
                parallel,
            };
            cmd_eval(&args)?;
            println!("{}", out_dir.display());
        }
        Cmd::Plot { path, out_dir } => {
            let out = out_dir.unwrap_or_else(|| {
                if path.is_dir() {
                    path.join("plots")
                } else {
                    path.parent().map(|p| p.join("plots")).unwrap_or_else(|| PathBuf::from("plots"))
                }
            });
            for p in cmd_plot(&path, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(buf, "ts={} level={} target={} {}", buf.timestamp_millis(), record.level(), record.target(), record.args())
        })
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("event=error category={} msg={:?}", e.category(), e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

