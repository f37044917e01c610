//! The station-keeping task seen by the agent: episode sampling, the
//! observation and state vectors, and the reward.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{body_wrench, pid_step, pose_error, PidState, PoleAction, PoleCube, ACTION_DIM};
use crate::dynamics::{sample_disturbance, SWITCH_WINDOW, CurrentDisturbance, DisturbanceConfig, Plant, Vec6, VehicleState};
use crate::error::{Error, Result};
use crate::math;

pub const OBS_DIM: usize = 37;
pub const STATE_DIM: usize = 3 * OBS_DIM;

/// Where each component sits inside an [`Observation`].
pub mod layout {
    use core::ops::Range;

    pub const A_PREV: Range<usize> = 0..18;
    pub const THETA: Range<usize> = 18..21;
    pub const V: Range<usize> = 21..24;
    pub const V_DOT: Range<usize> = 24..27;
    pub const OMEGA: Range<usize> = 27..30;
    pub const ERROR: Range<usize> = 30..36;
    pub const E_L2: usize = 36;
}

/// `[a_prev; Theta; V; V_dot; Omega; e; e_L2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn new(a_prev: &PoleAction, state: &VehicleState, error: &Vec6) -> Self {
        let mut o = [0.0; OBS_DIM];
        o[layout::A_PREV].copy_from_slice(&a_prev.0);
        o[layout::THETA].copy_from_slice(&state.eta[3..6]);
        o[layout::V].copy_from_slice(&state.nu[0..3]);
        o[layout::V_DOT].copy_from_slice(&state.nu_dot[0..3]);
        o[layout::OMEGA].copy_from_slice(&state.nu[3..6]);
        o[layout::ERROR].copy_from_slice(error);
        o[layout::E_L2] = e_l2(error);
        Observation(o)
    }

    pub fn get(&self, r: Range<usize>) -> &[f64] {
        &self.0[r]
    }

    pub fn error(&self) -> &[f64] {
        &self.0[layout::ERROR]
    }

    pub fn e_l2(&self) -> f64 {
        self.0[layout::E_L2]
    }
}

pub fn e_l2(error: &Vec6) -> f64 {
    math::sqrt(error.iter().map(|e| e * e).sum())
}

pub fn reward(e_l2: f64) -> f64 {
    math::exp(-e_l2)
}

/// `[o_t; o_prev; o_prev - o_t]`.
pub fn build_state(o_t: &Observation, o_prev: &Observation) -> Vec<f64> {
    let mut s = Vec::with_capacity(STATE_DIM);
    s.extend_from_slice(&o_t.0);
    s.extend_from_slice(&o_prev.0);
    s.extend(o_prev.0.iter().zip(&o_t.0).map(|(p, c)| p - c));
    s
}

/// Position and yaw target; roll and pitch targets are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Setpoint {
    pub fn target(&self) -> Vec6 {
        [self.x, self.y, self.z, 0.0, 0.0, self.yaw]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_len: usize,
    pub init_xy: [f64; 2],
    pub init_z: [f64; 2],
    /// Initial roll, pitch and yaw are drawn from `[-b, b]`.
    pub init_euler: f64,
    pub setpoint_xy: [f64; 2],
    pub setpoint_z: [f64; 2],
    pub setpoint_yaw: f64,
    /// Relative weights of the calm, steady and switching configurations.
    pub config_weights: [f64; 3],
    /// Range of the horizontal current force, N.
    pub current_magnitude: [f64; 2],
    /// Step range in which a switching current changes.
    pub switch_window: [usize; 2],
    /// Per-DoF error below which a setpoint counts as reached.
    pub d_reached: f64,
    /// Also randomise mass and damping around the nominal plant.
    pub randomize_plant: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_len: 500,
            init_xy: [-5.0, 5.0],
            init_z: [-20.0, -10.0],
            init_euler: FRAC_PI_4,
            setpoint_xy: [-5.0, 5.0],
            setpoint_z: [-15.0, -5.0],
            setpoint_yaw: FRAC_PI_2,
            config_weights: [1.0, 1.0, 1.0],
            current_magnitude: [2.0, 8.0],
            switch_window: [SWITCH_WINDOW.0, SWITCH_WINDOW.1],
            d_reached: 0.10,
            randomize_plant: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.config_weights;
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("config_weights must be non-negative with a positive sum".into()));
        }
        for (name, r) in [
            ("init_xy", self.init_xy),
            ("init_z", self.init_z),
            ("setpoint_xy", self.setpoint_xy),
            ("setpoint_z", self.setpoint_z),
            ("current_magnitude", self.current_magnitude),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::Config(alloc::format!("{name} must be an ordered range")));
            }
        }
        if self.switch_window[0] > self.switch_window[1] {
            return Err(Error::Config("switch_window must be an ordered range".into()));
        }
        if self.episode_len == 0 {
            return Err(Error::Config("episode_len must be positive".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Everything random about one training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub init_eta: Vec6,
    pub setpoint: Setpoint,
    pub config: DisturbanceConfig,
    pub disturbance: CurrentDisturbance,
    /// Seed of the randomised plant, if any.
    pub plant_seed: Option<u64>,
}

impl EpisodeSpec {
    pub fn sample<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Self {
        let b = cfg.init_euler;
        let init_eta = [
            uniform(rng, cfg.init_xy),
            uniform(rng, cfg.init_xy),
            uniform(rng, cfg.init_z),
            uniform(rng, [-b, b]),
            uniform(rng, [-b, b]),
            uniform(rng, [-b, b]),
        ];
        let setpoint = Setpoint {
            x: uniform(rng, cfg.setpoint_xy),
            y: uniform(rng, cfg.setpoint_xy),
            z: uniform(rng, cfg.setpoint_z),
            yaw: uniform(rng, [-cfg.setpoint_yaw, cfg.setpoint_yaw]),
        };
        let total: f64 = cfg.config_weights.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut config = DisturbanceConfig::Switching;
        for (i, w) in cfg.config_weights.iter().enumerate() {
            if pick < *w {
                config = DisturbanceConfig::from_id(i as u8 + 1).expect("three configurations");
                break;
            }
            pick -= w;
        }
        let m = cfg.current_magnitude;
        let disturbance = sample_disturbance(config, rng, (m[0], m[1]), (cfg.switch_window[0], cfg.switch_window[1]));
        let plant_seed = if cfg.randomize_plant { Some(rng.random()) } else { None };
        EpisodeSpec { init_eta, setpoint, config, disturbance, plant_seed }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// PID output before conversion to the body wrench.
    pub control: Vec6,
    pub wrench: Vec6,
}

/// A running episode: plant, PID memory and the observation history.
#[derive(Debug, Clone)]
pub struct Episode {
    pub plant: Plant,
    pub target: Vec6,
    pub disturbance: CurrentDisturbance,
    pub state: VehicleState,
    pub pid: PidState,
    pub a_prev: PoleAction,
    pub obs: Observation,
    pub prev_obs: Observation,
    pub step: usize,
    pub len: usize,
}

impl Episode {
    /// Starts at rest at `init_eta`, with the PID zeroed and the previous
    /// action at the cube centre.
    pub fn new(plant: Plant, init_eta: Vec6, setpoint: &Setpoint, disturbance: CurrentDisturbance, len: usize, cube: &PoleCube) -> Self {
        let state = VehicleState::at_rest(init_eta);
        let target = setpoint.target();
        let a_prev = PoleAction::uniform(cube.center());
        let obs = Observation::new(&a_prev, &state, &pose_error(&state.eta, &target));
        Episode { plant, target, disturbance, state, pid: PidState::default(), a_prev, obs, prev_obs: obs, step: 0, len }
    }

    pub fn from_spec(plant: Plant, spec: &EpisodeSpec, len: usize, cube: &PoleCube) -> Self {
        Self::new(plant, spec.init_eta, &spec.setpoint, spec.disturbance, len, cube)
    }

    /// The agent state `[o_t; o_prev; o_prev - o_t]`.
    pub fn state_vector(&self) -> Vec<f64> {
        build_state(&self.obs, &self.prev_obs)
    }

    /// Moves the target; the PID is reset and the observation history
    /// restarts as at an episode start.
    pub fn set_setpoint(&mut self, setpoint: &Setpoint) {
        self.target = setpoint.target();
        self.pid.reset();
        self.obs = Observation::new(&self.a_prev, &self.state, &pose_error(&self.state.eta, &self.target));
        self.prev_obs = self.obs;
    }

    pub fn step(&mut self, action: &PoleAction) -> Result<StepOutcome> {
        let gains = action.gains()?;
        let e = pose_error(&self.state.eta, &self.target);
        let u_max = *self.plant.u_max();
        let control = pid_step(&mut self.pid, &e, &gains, &u_max, self.plant.dt());
        let wrench = body_wrench(&self.state.eta, &control, &u_max);
        self.state = self.plant.step(&self.state, &wrench, &self.disturbance, self.step)?;
        self.step += 1;
        self.a_prev = *action;
        self.prev_obs = self.obs;
        self.obs = Observation::new(action, &self.state, &pose_error(&self.state.eta, &self.target));
        Ok(StepOutcome {
            observation: self.obs,
            reward: reward(self.obs.e_l2()),
            done: self.step >= self.len,
            control,
            wrench,
        })
    }
}

/// One CSV trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub eta: Vec6,
    pub nu: Vec6,
    pub action: [f64; ACTION_DIM],
    pub wrench: Vec6,
    pub reward: f64,
    pub config_id: u8,
}

impl TraceRow {
    pub fn header() -> Vec<&'static str> {
        let mut h = alloc::vec!["time"];
        h.extend(["x", "y", "z", "roll", "pitch", "yaw"]);
        h.extend(["u", "v", "w", "p", "q", "r"]);
        h.extend([
            "tau_x1", "tau_x2", "tau_x3", "tau_y1", "tau_y2", "tau_y3", "tau_z1", "tau_z2", "tau_z3",
            "tau_roll1", "tau_roll2", "tau_roll3", "tau_pitch1", "tau_pitch2", "tau_pitch3", "tau_yaw1",
            "tau_yaw2", "tau_yaw3",
        ]);
        h.extend(["fx", "fy", "fz", "mx", "my", "mz"]);
        h.extend(["reward", "config"]);
        h
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = alloc::vec![self.time];
        v.extend_from_slice(&self.eta);
        v.extend_from_slice(&self.nu);
        v.extend_from_slice(&self.action);
        v.extend_from_slice(&self.wrench);
        v.push(self.reward);
        v.push(self.config_id as f64);
        v
    }
}
