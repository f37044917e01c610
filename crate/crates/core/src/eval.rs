//! Multi-station-keeping evaluation: nine scored legs of fixed length after
//! an unscored initialisation leg, per-leg metrics, and the comparison of
//! two controllers over paired trials.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{PoleAction, PoleCube};
use crate::dynamics::{CurrentDisturbance, Plant, Vec6};
use crate::env::{e_l2, reward, Episode, Setpoint};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::Mlp;
use crate::sac::policy_mean;

const fn sp(x: f64, y: f64) -> Setpoint {
    Setpoint { x, y, z: -2.0, yaw: 0.0 }
}

/// The nine evaluation setpoints, visited in order.
pub const SETPOINTS: [Setpoint; 9] = [
    sp(0.0, 0.0),
    sp(0.25, 0.2),
    sp(0.5, 0.0),
    sp(0.25, -0.2),
    sp(-0.25, -0.2),
    sp(0.0, 0.0),
    sp(-0.25, 0.2),
    sp(-0.5, 0.0),
    sp(0.0, 0.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    None,
    Current,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::None => "none",
            Scenario::Current => "current",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub leg_steps: usize,
    pub trials: usize,
    /// A session aborts when the error norm exceeds this.
    pub abort_distance: f64,
    /// Horizontal current force of the `current` scenario, N.
    pub current_force: f64,
    /// World heading of the current, rad; drawn per trial when absent.
    pub current_direction: Option<f64>,
    /// Half-widths of the initial pose box around setpoint 1 (m, m, m, rad).
    pub init_spread: [f64; 4],
    pub setpoints: Vec<Setpoint>,
    pub scenario: Vec<Scenario>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            leg_steps: 1000,
            trials: 10,
            abort_distance: 10.0,
            current_force: 8.0,
            current_direction: None,
            init_spread: [1.0, 1.0, 1.0, FRAC_PI_4],
            setpoints: SETPOINTS.to_vec(),
            scenario: alloc::vec![Scenario::None, Scenario::Current],
        }
    }
}

/// The two compared controllers.
#[derive(Debug, Clone)]
pub enum Controller<'a> {
    /// Fixed poles (the model-based baseline).
    Fixed(PoleAction),
    /// Deterministic policy reading: squashed mean action.
    Policy { net: &'a Mlp, cube: PoleCube, clamp: (f64, f64) },
}

impl Controller<'_> {
    pub fn act(&self, state: &[f64]) -> Result<PoleAction> {
        match self {
            Controller::Fixed(a) => Ok(*a),
            Controller::Policy { net, cube, clamp } => {
                let out = policy_mean(net, state, 1, cube, *clamp)?;
                PoleAction::from_slice(&out.actions)
            }
        }
    }
}

/// Per-leg metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationLegResult {
    /// 1-based position in the setpoint table.
    pub setpoint_id: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub control_effort: f64,
    pub mean_return: f64,
    /// Mean distance over (x, y, z, yaw) only.
    pub mean_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegMetrics {
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub control_effort: f64,
    pub mean_return: f64,
}

/// Mean and population standard deviation of the error norm, effort
/// normalised by `n * sum(u_max)`, and the per-step average reward.
pub fn compute_metrics(e: &[f64], u: &[Vec6], r: &[f64], u_max: &Vec6) -> LegMetrics {
    let n = e.len() as f64;
    let mean = shifted_mean(e);
    let var = e.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let cap: f64 = u_max.iter().sum();
    let effort = u.iter().flat_map(|w| w.iter()).map(|x| x.abs()).sum::<f64>() / (u.len() as f64 * cap);
    LegMetrics {
        mean_rmse: mean,
        std_rmse: math::sqrt(var),
        control_effort: effort,
        mean_return: r.iter().sum::<f64>() / r.len() as f64,
    }
}

fn distance_xyz_yaw(eta: &Vec6, sp: &Setpoint) -> f64 {
    let d = [eta[0] - sp.x, eta[1] - sp.y, eta[2] - sp.z, math::wrap_angle(eta[5] - sp.yaw)];
    math::sqrt(d.iter().map(|v| v * v).sum())
}

/// Initial pose and current heading of one trial. Both scenarios consume
/// the same draws so they start identically.
pub fn trial_conditions(seed: u64, cfg: &EvalConfig) -> (Vec6, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = cfg.setpoints.first().copied().unwrap_or(SETPOINTS[0]);
    let s = cfg.init_spread;
    let mut draw = |c: f64, h: f64| if h > 0.0 { c + rng.random_range(-h..=h) } else { c };
    let eta = [draw(first.x, s[0]), draw(first.y, s[1]), draw(first.z, s[2]), 0.0, 0.0, draw(first.yaw, s[3])];
    let heading = rng.random_range(-PI..PI);
    (eta, cfg.current_direction.unwrap_or(heading))
}

pub fn scenario_disturbance(scenario: Scenario, heading: f64, cfg: &EvalConfig) -> CurrentDisturbance {
    match scenario {
        Scenario::None => CurrentDisturbance::none(),
        Scenario::Current => {
            let f = cfg.current_force;
            CurrentDisturbance::constant([f * math::cos(heading), f * math::sin(heading), 0.0, 0.0, 0.0, 0.0])
        }
    }
}

/// Runs the initialisation leg and the scored legs.
pub fn run_session(plant: &Plant, controller: &Controller<'_>, scenario: Scenario, seed: u64, cfg: &EvalConfig) -> Result<Vec<StationLegResult>> {
    let (init_eta, heading) = trial_conditions(seed, cfg);
    let dist = scenario_disturbance(scenario, heading, cfg);
    let first = cfg.setpoints.first().copied().ok_or_else(|| Error::Config("empty setpoint table".into()))?;
    let cube = match controller {
        Controller::Policy { cube, .. } => *cube,
        Controller::Fixed(_) => PoleCube::default(),
    };
    let total = cfg.leg_steps * (cfg.setpoints.len() + 1);
    let mut ep = Episode::new(plant.clone(), init_eta, &first, dist, total, &cube);
    let u_max = *plant.u_max();
    let mut results = Vec::with_capacity(cfg.setpoints.len());
    for leg in 0..=cfg.setpoints.len() {
        let sp = if leg == 0 { first } else { cfg.setpoints[leg - 1] };
        ep.set_setpoint(&sp);
        let mut e = Vec::with_capacity(cfg.leg_steps);
        let mut u = Vec::with_capacity(cfg.leg_steps);
        let mut r = Vec::with_capacity(cfg.leg_steps);
        let mut d = 0.0;
        for _ in 0..cfg.leg_steps {
            let action = controller.act(&ep.state_vector())?;
            let out = ep.step(&action)?;
            let err = out.observation.e_l2();
            if !(err <= cfg.abort_distance) {
                return Err(Error::ControllerDiverged { distance: err });
            }
            e.push(err);
            u.push(out.wrench);
            r.push(out.reward);
            d += distance_xyz_yaw(&ep.state.eta, &sp);
        }
        if leg == 0 {
            continue;
        }
        let m = compute_metrics(&e, &u, &r, &u_max);
        results.push(StationLegResult {
            setpoint_id: leg,
            mean_rmse: m.mean_rmse,
            std_rmse: m.std_rmse,
            control_effort: m.control_effort,
            mean_return: m.mean_return,
            mean_d: d / cfg.leg_steps as f64,
        });
    }
    Ok(results)
}

/// Mean taken as offset from the first value, so constant input is
/// returned exactly.
fn shifted_mean(values: &[f64]) -> f64 {
    let Some(&base) = values.first() else { return f64::NAN };
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// Order-independent mean: values are sorted before summation.
fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    shifted_mean(values)
}

/// Per-setpoint averages across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointAggregate {
    pub setpoint_id: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub control_effort: f64,
    pub mean_return: f64,
    pub mean_d: f64,
    /// Per-trial mean RMSE, for distribution plots.
    pub rmse_trials: Vec<f64>,
}

pub fn aggregate_trials(sessions: &[Vec<StationLegResult>]) -> Result<Vec<SetpointAggregate>> {
    let legs = sessions.first().map(|s| s.len()).ok_or(Error::InsufficientData { needed: 1, have: 0 })?;
    if sessions.iter().any(|s| s.len() != legs) {
        return Err(Error::Config("sessions have different numbers of legs".into()));
    }
    let mut out = Vec::with_capacity(legs);
    for leg in 0..legs {
        let col = |f: fn(&StationLegResult) -> f64| sessions.iter().map(|s| f(&s[leg])).collect::<Vec<f64>>();
        let rmse_trials = col(|r| r.mean_rmse);
        out.push(SetpointAggregate {
            setpoint_id: sessions[0][leg].setpoint_id,
            mean_rmse: sorted_mean(&mut rmse_trials.clone()),
            std_rmse: sorted_mean(&mut col(|r| r.std_rmse)),
            control_effort: sorted_mean(&mut col(|r| r.control_effort)),
            mean_return: sorted_mean(&mut col(|r| r.mean_return)),
            mean_d: sorted_mean(&mut col(|r| r.mean_d)),
            rmse_trials,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub setpoint_id: usize,
    pub mb_rmse: f64,
    pub lb_rmse: f64,
    /// `mb_rmse / lb_rmse`.
    pub ratio: f64,
    pub mb_effort: f64,
    pub lb_effort: f64,
    pub mb_return: f64,
    pub lb_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: Scenario,
    pub rows: Vec<ComparisonRow>,
    /// Setpoints where the learned controller has the lower RMSE.
    pub lb_wins: usize,
    /// Mean MB RMSE over mean LB RMSE across setpoints.
    pub overall_ratio: f64,
}

pub fn compare(scenario: Scenario, mb: &[SetpointAggregate], lb: &[SetpointAggregate]) -> Result<Comparison> {
    if mb.len() != lb.len() || mb.is_empty() {
        return Err(Error::ShapeMismatch { expected: mb.len(), got: lb.len() });
    }
    let rows: Vec<ComparisonRow> = mb
        .iter()
        .zip(lb)
        .map(|(m, l)| ComparisonRow {
            setpoint_id: m.setpoint_id,
            mb_rmse: m.mean_rmse,
            lb_rmse: l.mean_rmse,
            ratio: m.mean_rmse / l.mean_rmse,
            mb_effort: m.control_effort,
            lb_effort: l.control_effort,
            mb_return: m.mean_return,
            lb_return: l.mean_return,
        })
        .collect();
    let lb_wins = rows.iter().filter(|r| r.lb_rmse < r.mb_rmse).count();
    let mb_mean = sorted_mean(&mut rows.iter().map(|r| r.mb_rmse).collect::<Vec<_>>());
    let lb_mean = sorted_mean(&mut rows.iter().map(|r| r.lb_rmse).collect::<Vec<_>>());
    Ok(Comparison { scenario, rows, lb_wins, overall_ratio: mb_mean / lb_mean })
}

/// Error norm of a pose against a setpoint, as used by the scored legs.
pub fn setpoint_error(eta: &Vec6, sp: &Setpoint) -> f64 {
    e_l2(&crate::control::pose_error(eta, &sp.target()))
}

/// Reward of a pose against a setpoint.
pub fn setpoint_reward(eta: &Vec6, sp: &Setpoint) -> f64 {
    reward(setpoint_error(eta, sp))
}
