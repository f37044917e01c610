//! Run configuration: every tunable of a training and evaluation run in one
//! strictly parsed tree.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bier::{BierBuffers, BierConfig, Replay, UniformReplay};
use crate::control::{log_grid, BaselineSpec, PoleCube};
use crate::dynamics::{Plant, PlantParams, Vec6};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::sac::{ExplorationConfig, SacConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantPreset {
    Nominal,
    Perturbed,
}

/// Which plant to simulate: a named parameter set or inline parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub preset: PlantPreset,
    /// Seed of the `perturbed` preset.
    pub perturb_seed: u64,
    /// Inline parameters; override the preset when present.
    pub params: Option<PlantParams>,
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection { preset: PlantPreset::Nominal, perturb_seed: 1, params: None }
    }
}

impl PlantSection {
    pub fn perturbed(seed: u64) -> Self {
        PlantSection { preset: PlantPreset::Perturbed, perturb_seed: seed, params: None }
    }

    pub fn params(&self) -> PlantParams {
        match (&self.params, self.preset) {
            (Some(p), _) => p.clone(),
            (None, PlantPreset::Nominal) => PlantParams::nominal(),
            (None, PlantPreset::Perturbed) => PlantParams::perturbed(self.perturb_seed),
        }
    }

    pub fn build(&self) -> Result<Plant> {
        Plant::new(self.params())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayKind {
    Bier,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub kind: ReplayKind,
    pub b1_capacity: usize,
    pub b2_capacity: usize,
    pub sequence_length: usize,
    pub uniform_capacity: usize,
}

impl Default for ReplaySection {
    fn default() -> Self {
        let b = BierConfig::default();
        ReplaySection {
            kind: ReplayKind::Bier,
            b1_capacity: b.b1_capacity,
            b2_capacity: b.b2_capacity,
            sequence_length: b.sequence_length,
            uniform_capacity: 1_000_000,
        }
    }
}

impl ReplaySection {
    pub fn build(&self) -> Replay {
        match self.kind {
            ReplayKind::Bier => Replay::Bier(BierBuffers::new(&BierConfig {
                b1_capacity: self.b1_capacity,
                b2_capacity: self.b2_capacity,
                sequence_length: self.sequence_length,
            })),
            ReplayKind::Uniform => Replay::Uniform(UniformReplay::new(self.uniform_capacity)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    pub checkpoint_every: usize,
    /// Width of the moving-average window of the training curve.
    pub curve_window: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { episodes: 5000, checkpoint_every: 250, curve_window: 100 }
    }
}

/// Fixed-pole search settings; `grid` overrides the log-spaced grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub grid_points: usize,
    pub grid: Option<Vec<f64>>,
    pub step_sizes: Vec6,
    pub duration: f64,
    pub settle_time: f64,
    pub settle_band: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let s = BaselineSpec::with_grid(Vec::new());
        BaselineSection {
            grid_points: 12,
            grid: None,
            step_sizes: s.step_sizes,
            duration: s.duration,
            settle_time: s.settle_time,
            settle_band: s.settle_band,
        }
    }
}

impl BaselineSection {
    pub fn spec(&self, cube: &PoleCube) -> BaselineSpec {
        let grid = self.grid.clone().unwrap_or_else(|| log_grid(self.grid_points.max(1), cube));
        BaselineSpec {
            grid,
            step_sizes: self.step_sizes,
            duration: self.duration,
            settle_time: self.settle_time,
            settle_band: self.settle_band,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Plant used for training and for the fixed-pole search.
    pub plant: PlantSection,
    /// Plant used for evaluation; the training plant when absent.
    pub eval_plant: Option<PlantSection>,
    pub poles: PoleCube,
    pub sac: SacConfig,
    pub exploration: ExplorationConfig,
    pub replay: ReplaySection,
    pub env: EnvConfig,
    pub train: TrainSection,
    pub baseline: BaselineSection,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            plant: PlantSection::default(),
            eval_plant: None,
            poles: PoleCube::default(),
            sac: SacConfig::default(),
            exploration: ExplorationConfig::default(),
            replay: ReplaySection::default(),
            env: EnvConfig::default(),
            train: TrainSection::default(),
            baseline: BaselineSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(String::from(msg)))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.poles.validate()?;
        self.env.validate()?;
        self.plant.build()?;
        if let Some(p) = &self.eval_plant {
            p.build()?;
        }
        let s = &self.sac;
        check(!s.hidden.is_empty() && s.hidden.iter().all(|h| *h > 0), "sac.hidden must list positive widths")?;
        check(s.learning_rate > 0.0 && s.learning_rate.is_finite(), "sac.learning_rate must be positive")?;
        check((0.0..=1.0).contains(&s.gamma), "sac.gamma must lie in [0, 1]")?;
        check(s.batch_size >= 2, "sac.batch_size must be at least 2")?;
        check(s.polyak > 0.0 && s.polyak <= 1.0, "sac.polyak must lie in (0, 1]")?;
        check(s.policy_delay >= 1, "sac.policy_delay must be at least 1")?;
        check(s.critic_weight_decay >= 0.0, "sac.critic_weight_decay must be non-negative")?;
        check(s.log_std_min < s.log_std_max, "sac.log_std_min must be below sac.log_std_max")?;
        check(s.grad_clip.is_none_or(|c| c > 0.0), "sac.grad_clip must be positive")?;
        check(s.updates_per_step >= 1, "sac.updates_per_step must be at least 1")?;
        let x = &self.exploration;
        check(x.initial_sigma >= 0.0, "exploration.initial_sigma must be non-negative")?;
        check(x.adaptation_rate >= 1.0, "exploration.adaptation_rate must be at least 1")?;
        check(x.distance_samples >= 1, "exploration.distance_samples must be positive")?;
        check((0.0..=1.0).contains(&x.epsilon), "exploration.epsilon must lie in [0, 1]")?;
        let r = &self.replay;
        check(r.b1_capacity > 0 && r.b2_capacity > 0 && r.uniform_capacity > 0, "replay capacities must be positive")?;
        check(r.sequence_length > 0, "replay.sequence_length must be positive")?;
        check(self.train.curve_window > 0, "train.curve_window must be positive")?;
        let spec = self.baseline.spec(&self.poles);
        check(!spec.grid.is_empty(), "baseline grid is empty")?;
        check(spec.grid.iter().all(|t| self.poles.contains(*t)), "baseline grid leaves the pole cube")?;
        let e = &self.eval;
        check(e.leg_steps > 0, "eval.leg_steps must be positive")?;
        check(!e.setpoints.is_empty(), "eval.setpoints must not be empty")?;
        Ok(())
    }

    /// The evaluation plant section.
    pub fn eval_plant(&self) -> &PlantSection {
        self.eval_plant.as_ref().unwrap_or(&self.plant)
    }
}
