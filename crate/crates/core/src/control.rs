//! Pole-parameterised PID control.
//!
//! Each controlled DoF runs a PID whose gains are derived from three real
//! time constants `tau_i > 0`, placing the closed-loop candidate poles at
//! `-1/tau_i` on the negative real axis:
//!
//! ```text
//! kp = (t1 + t2 + t3) / (t1 t2 t3)
//! ki = 1 / (t1 t2 t3)
//! kd = (t1 t2 + t1 t3 + t2 t3) / (t1 t2 t3)
//! ```

use alloc::vec::Vec;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rotation, CurrentDisturbance, Plant, Vec6, VehicleState};
use crate::error::{Error, Result};
use crate::math;

/// Controlled degrees of freedom.
pub const DOF: usize = 6;
/// Pole values per DoF.
pub const POLES_PER_DOF: usize = 3;
/// Size of the pole action.
pub const ACTION_DIM: usize = DOF * POLES_PER_DOF;

/// Derivative low-pass smoothing factor `r = exp(-4)`.
pub fn derivative_smoothing() -> f64 {
    math::exp(-4.0)
}

/// Axis-aligned box of admissible pole values, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoleCube {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for PoleCube {
    fn default() -> Self {
        PoleCube { tau_min: 0.05, tau_max: 5.0 }
    }
}

impl PoleCube {
    pub fn center(&self) -> f64 {
        0.5 * (self.tau_min + self.tau_max)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.tau_max - self.tau_min)
    }

    pub fn contains(&self, tau: f64) -> bool {
        tau >= self.tau_min && tau <= self.tau_max
    }

    /// Maps a value in [-1, 1] onto the cube.
    pub fn from_unit(&self, x: f64) -> f64 {
        self.center() + self.half_width() * x
    }

    /// Inverse of [`PoleCube::from_unit`].
    pub fn to_unit(&self, tau: f64) -> f64 {
        (tau - self.center()) / self.half_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_min > 0.0 && self.tau_max > self.tau_min && self.tau_max.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!(
                "pole cube [{}, {}] must satisfy 0 < tau_min < tau_max",
                self.tau_min, self.tau_max
            )))
        }
    }
}

/// Eighteen pole values, three per DoF in the order x, y, z, roll, pitch, yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleAction(pub [f64; ACTION_DIM]);

impl PoleAction {
    pub fn uniform(tau: f64) -> Self {
        PoleAction([tau; ACTION_DIM])
    }

    pub fn from_triples(triples: &[[f64; 3]; DOF]) -> Self {
        let mut a = [0.0; ACTION_DIM];
        for (d, t) in triples.iter().enumerate() {
            a[d * 3..d * 3 + 3].copy_from_slice(t);
        }
        PoleAction(a)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; ACTION_DIM] = values
            .try_into()
            .map_err(|_| Error::ShapeMismatch { expected: ACTION_DIM, got: values.len() })?;
        Ok(PoleAction(arr))
    }

    pub fn triple(&self, dof: usize) -> [f64; 3] {
        [self.0[dof * 3], self.0[dof * 3 + 1], self.0[dof * 3 + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn gains(&self) -> Result<[Gains; DOF]> {
        let mut out = [Gains { kp: 0.0, ki: 0.0, kd: 0.0 }; DOF];
        for (d, g) in out.iter_mut().enumerate() {
            let [a, b, c] = self.triple(d);
            *g = poles_to_gains(a, b, c)?;
        }
        Ok(out)
    }
}

/// PID gains for one DoF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// Gains whose characteristic polynomial `l^3 + kd l^2 + kp l + ki` has
/// roots `-1/tau_1, -1/tau_2, -1/tau_3`.
pub fn poles_to_gains(tau1: f64, tau2: f64, tau3: f64) -> Result<Gains> {
    for t in [tau1, tau2, tau3] {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(t));
        }
    }
    let prod = tau1 * tau2 * tau3;
    Ok(Gains {
        kp: (tau1 + tau2 + tau3) / prod,
        ki: 1.0 / prod,
        kd: (tau1 * tau2 + tau1 * tau3 + tau2 * tau3) / prod,
    })
}

/// Integrator, derivative filter and previous error for all six DoFs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub sigma: Vec6,
    pub e_prev: Vec6,
    pub e_filt: Vec6,
    /// False until the first sample after a reset; the derivative input of
    /// that first sample is taken as zero.
    pub primed: bool,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = PidState::default();
    }
}

/// One PID update on every DoF.
///
/// The integral contribution is clamped to `+/-u_max` and the accumulator is
/// frozen while the output is saturated in the direction of the error. The
/// derivative is filtered as `E = (1 - r) E_prev + r de/dt` and the output is
/// clamped to `+/-u_max`.
pub fn pid_step(state: &mut PidState, error: &Vec6, gains: &[Gains; DOF], u_max: &Vec6, dt: f64) -> Vec6 {
    let r = derivative_smoothing();
    let mut u = [0.0; DOF];
    for i in 0..DOF {
        let e = error[i];
        let g = gains[i];
        let umax = u_max[i];
        let de = if state.primed { (e - state.e_prev[i]) / dt } else { 0.0 };
        let filt = (1.0 - r) * state.e_filt[i] + r * de;
        let law = |sigma: f64| {
            let integral = (g.ki * sigma).clamp(-umax, umax);
            g.kp * e + integral + g.kd * filt
        };
        let mut sigma = state.sigma[i] + e * dt;
        let mut raw = law(sigma);
        if raw.abs() > umax && raw * e > 0.0 {
            sigma = state.sigma[i];
            raw = law(sigma);
        }
        state.sigma[i] = sigma;
        state.e_filt[i] = filt;
        state.e_prev[i] = e;
        u[i] = if raw.is_nan() { 0.0 } else { raw.clamp(-umax, umax) };
    }
    state.primed = true;
    u
}

/// Setpoint error `e = x - x_w` with angle components wrapped to (-pi, pi].
pub fn pose_error(eta: &Vec6, target: &Vec6) -> Vec6 {
    let mut e = [0.0; DOF];
    for i in 0..DOF {
        e[i] = eta[i] - target[i];
        if i >= 3 {
            e[i] = math::wrap_angle(e[i]);
        }
    }
    e
}

pub fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// Converts the per-DoF PID output into the saturated body-frame wrench.
///
/// The PID acts on `e = x - x_w`, so the restoring command is `-u`. Linear
/// components are world-frame forces rotated into the body frame; angular
/// components are applied as body torques.
pub fn body_wrench(eta: &Vec6, pid_out: &Vec6, u_max: &Vec6) -> Vec6 {
    let r = rotation(eta[3], eta[4], eta[5]);
    let world = Vector3::new(-pid_out[0], -pid_out[1], -pid_out[2]);
    let body = r.transpose() * world;
    let raw = [body[0], body[1], body[2], -pid_out[3], -pid_out[4], -pid_out[5]];
    core::array::from_fn(|i| raw[i].clamp(-u_max[i], u_max[i]))
}

/// A PID loop on the plant with the pole action held fixed.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    pub plant: &'a Plant,
    pub pid: PidState,
    pub gains: [Gains; DOF],
    pub state: VehicleState,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(plant: &'a Plant, action: &PoleAction, state: VehicleState) -> Result<Self> {
        Ok(ClosedLoop { plant, pid: PidState::default(), gains: action.gains()?, state })
    }

    /// Advances one step toward `target`, returning the applied wrench.
    pub fn step(&mut self, target: &Vec6, disturbance: &CurrentDisturbance, k: usize) -> Result<Vec6> {
        let e = pose_error(&self.state.eta, target);
        let u = pid_step(&mut self.pid, &e, &self.gains, self.plant.u_max(), self.plant.dt());
        let w = body_wrench(&self.state.eta, &u, self.plant.u_max());
        self.state = self.plant.step(&self.state, &w, disturbance, k)?;
        Ok(w)
    }
}

/// Step-response protocol for the fixed-gain baseline search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    /// Candidate pole values; triples are drawn with `t1 <= t2 <= t3`.
    pub grid: Vec<f64>,
    /// Step size applied to each DoF in turn (m, rad).
    pub step_sizes: Vec6,
    /// Length of each step episode, seconds.
    pub duration: f64,
    /// Required settling time, seconds.
    pub settle_time: f64,
    /// Settling band as a fraction of the step size.
    pub settle_band: f64,
}

impl BaselineSpec {
    pub fn with_grid(grid: Vec<f64>) -> Self {
        BaselineSpec {
            grid,
            step_sizes: [1.0, 1.0, 1.0, 0.5, 0.5, 0.5],
            duration: 20.0,
            settle_time: 10.0,
            settle_band: 0.05,
        }
    }
}

/// `n` logarithmically spaced values spanning the cube.
pub fn log_grid(n: usize, cube: &PoleCube) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![math::sqrt(cube.tau_min * cube.tau_max)];
    }
    let ratio = cube.tau_max / cube.tau_min;
    (0..n)
        .map(|i| {
            if i + 1 == n {
                cube.tau_max
            } else {
                cube.tau_min * math::powf(ratio, i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// Non-decreasing triples drawn from `grid`.
pub fn ordered_triples(grid: &[f64]) -> Vec<[f64; 3]> {
    let mut g: Vec<f64> = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    let mut out = Vec::new();
    for i in 0..g.len() {
        for j in i..g.len() {
            for k in j..g.len() {
                out.push([g[i], g[j], g[k]]);
            }
        }
    }
    out
}

/// Outcome of one single-DoF step episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    /// Mean 6-DoF error norm over the episode.
    pub rmse: f64,
    /// Largest |error| on the stepped DoF after the settling time, as a
    /// fraction of the step size.
    pub residual: f64,
    pub settled: bool,
}

/// Runs a disturbance-free step of `spec.step_sizes[dof]` on `dof` from rest
/// at the origin.
pub fn step_response(plant: &Plant, action: &PoleAction, dof: usize, spec: &BaselineSpec) -> Result<StepScore> {
    let mut target = [0.0; DOF];
    target[dof] = spec.step_sizes[dof];
    let step = spec.step_sizes[dof].abs();
    let steps = math_round(spec.duration / plant.dt());
    let settle_from = math_round(spec.settle_time / plant.dt());
    let mut cl = ClosedLoop::new(plant, action, VehicleState::default())?;
    let calm = CurrentDisturbance::none();
    let mut sum = 0.0;
    let mut residual: f64 = 0.0;
    for k in 0..steps {
        match cl.step(&target, &calm, k) {
            Ok(_) => {}
            Err(Error::GimbalLock { .. }) | Err(Error::NumericBlowup { .. }) => {
                return Ok(StepScore { rmse: f64::INFINITY, residual: f64::INFINITY, settled: false });
            }
            Err(e) => return Err(e),
        }
        let e = pose_error(&cl.state.eta, &target);
        sum += norm(&e);
        // time after this step is (k + 1) dt
        if k + 1 >= settle_from {
            residual = residual.max(e[dof].abs() / step);
        }
    }
    let rmse = sum / steps as f64;
    Ok(StepScore { rmse, residual, settled: residual <= spec.settle_band })
}

fn math_round(x: f64) -> usize {
    libm::round(x) as usize
}

/// Result of the exhaustive fixed-pole search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub action: PoleAction,
    /// Step score of the chosen triple on each DoF under the combined action.
    pub scores: [StepScore; DOF],
    /// Number of candidate triples evaluated per DoF.
    pub candidates: usize,
}

/// Exhaustive search for the best fixed triple per DoF.
///
/// Every non-decreasing triple of `spec.grid` is applied to all six DoFs and
/// scored on a step of each DoF in turn. Per DoF, the feasible triple (one
/// that settles) with the lowest mean error is kept; the combined action is
/// then re-checked and a DoF whose step no longer settles falls back to its
/// next-best triple.
pub fn mb_baseline_search(plant: &Plant, cube: &PoleCube, spec: &BaselineSpec) -> Result<BaselineResult> {
    if spec.grid.is_empty() {
        return Err(Error::Config("baseline grid is empty".into()));
    }
    if let Some(&bad) = spec.grid.iter().find(|&&t| !cube.contains(t)) {
        return Err(Error::Config(alloc::format!("grid value {bad} outside the pole cube")));
    }
    let triples = ordered_triples(&spec.grid);
    let mut ranked: [Vec<(f64, usize)>; DOF] = Default::default();
    for (idx, t) in triples.iter().enumerate() {
        let action = PoleAction::from_triples(&[*t; DOF]);
        for (dof, list) in ranked.iter_mut().enumerate() {
            let s = step_response(plant, &action, dof, spec)?;
            if s.settled {
                list.push((s.rmse, idx));
            }
        }
    }
    for (dof, list) in ranked.iter_mut().enumerate() {
        if list.is_empty() {
            return Err(Error::NoFeasibleGains { dof });
        }
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    let mut cursor = [0usize; DOF];
    loop {
        let chosen: [[f64; 3]; DOF] = core::array::from_fn(|d| triples[ranked[d][cursor[d]].1]);
        let action = PoleAction::from_triples(&chosen);
        let mut scores = [StepScore { rmse: 0.0, residual: 0.0, settled: true }; DOF];
        let mut failed = None;
        for dof in 0..DOF {
            scores[dof] = step_response(plant, &action, dof, spec)?;
            if !scores[dof].settled && failed.is_none() {
                failed = Some(dof);
            }
        }
        match failed {
            None => return Ok(BaselineResult { action, scores, candidates: triples.len() }),
            Some(dof) => {
                cursor[dof] += 1;
                if cursor[dof] >= ranked[dof].len() {
                    return Err(Error::NoFeasibleGains { dof });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PlantParams;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_poles() {
        let g = poles_to_gains(1.0, 1.0, 1.0).unwrap();
        assert_eq!(g, Gains { kp: 3.0, ki: 1.0, kd: 3.0 });
    }

    #[test]
    fn expanded_cubic_coefficients() {
        // (l + 0.5)(l + 1)(l + 2) = l^3 + 3.5 l^2 + 3.5 l + 1
        let g = poles_to_gains(2.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(g.kp, 3.5, epsilon = 1e-15);
        assert_relative_eq!(g.ki, 1.0, epsilon = 1e-15);
        assert_relative_eq!(g.kd, 3.5, epsilon = 1e-15);
    }

    #[test]
    fn non_positive_poles_rejected() {
        assert_eq!(poles_to_gains(0.0, 1.0, 1.0), Err(Error::Domain(0.0)));
        assert_eq!(poles_to_gains(1.0, -2.0, 1.0), Err(Error::Domain(-2.0)));
        assert!(poles_to_gains(1.0, 1.0, f64::NAN).is_err());
    }

    fn big_gains() -> [Gains; DOF] {
        [poles_to_gains(0.5, 1.0, 2.0).unwrap(); DOF]
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let mut s = PidState::default();
        for _ in 0..100 {
            let u = pid_step(&mut s, &[0.0; 6], &big_gains(), &[10.0; 6], 0.05);
            assert_eq!(u, [0.0; 6]);
        }
    }

    #[test]
    fn integral_contribution_pins_at_u_max() {
        // kp = kd = 0 isolates the integral path.
        let g = [Gains { kp: 0.0, ki: 5.0, kd: 0.0 }; DOF];
        let mut s = PidState::default();
        let mut u = [0.0; 6];
        for _ in 0..1000 {
            u = pid_step(&mut s, &[1.0, -1.0, 0.5, -0.5, 2.0, -2.0], &g, &[3.0; 6], 0.05);
        }
        assert_eq!(u, [3.0, -3.0, 3.0, -3.0, 3.0, -3.0]);
    }

    #[test]
    fn accumulator_frozen_while_saturated() {
        let g = [Gains { kp: 100.0, ki: 1.0, kd: 0.0 }; DOF];
        let mut s = PidState::default();
        for _ in 0..50 {
            pid_step(&mut s, &[1.0; 6], &g, &[10.0; 6], 0.05);
        }
        assert_eq!(s.sigma, [0.0; 6]);
    }

    #[test]
    fn derivative_filter_decays_geometrically() {
        // A unit ramp followed by a constant error: after the ramp the filter
        // input is zero and the state decays by (1 - r) each step.
        let g = [Gains { kp: 0.0, ki: 0.0, kd: 1.0 }; DOF];
        let dt = 0.1;
        let r = (-4.0f64).exp();
        let mut s = PidState::default();
        pid_step(&mut s, &[0.0; 6], &g, &[1e9; 6], dt);
        pid_step(&mut s, &[1.0; 6], &g, &[1e9; 6], dt);
        let e0 = s.e_filt[0];
        assert_relative_eq!(e0, r * 10.0, epsilon = 1e-15);
        let mut expected = e0;
        for _ in 0..200 {
            let u = pid_step(&mut s, &[1.0; 6], &g, &[1e9; 6], dt);
            expected *= 1.0 - r;
            assert_relative_eq!(u[0], expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn body_wrench_sign_and_frame() {
        // Positive x error with zero attitude pushes toward -x.
        let w = body_wrench(&[0.0; 6], &[2.0, 0.0, 0.0, 0.0, 0.0, 0.5], &[10.0; 6]);
        assert_relative_eq!(w[0], -2.0);
        assert_relative_eq!(w[5], -0.5);
        // Facing +y, a world -x force is a body +y (starboard) force.
        let eta = [0.0, 0.0, 0.0, 0.0, 0.0, core::f64::consts::FRAC_PI_2];
        let w = body_wrench(&eta, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[10.0; 6]);
        assert!(w[0].abs() < 1e-12);
        assert_relative_eq!(w[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_and_triples() {
        let cube = PoleCube::default();
        let g = log_grid(12, &cube);
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[11], 5.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ordered_triples(&g).len(), 364);
        assert!(ordered_triples(&g).iter().all(|t| t[0] <= t[1] && t[1] <= t[2]));
    }

    #[test]
    fn search_rejects_empty_or_out_of_cube_grid() {
        let plant = PlantParams::nominal().validate().unwrap();
        let cube = PoleCube::default();
        assert!(mb_baseline_search(&plant, &cube, &BaselineSpec::with_grid(alloc::vec![])).is_err());
        assert!(mb_baseline_search(&plant, &cube, &BaselineSpec::with_grid(alloc::vec![9.0])).is_err());
    }

    #[test]
    fn infeasible_grid_reports_no_gains() {
        let plant = PlantParams::nominal().validate().unwrap();
        let cube = PoleCube::default();
        // Time constants of 5 s cannot settle a 1 m step within 10 s.
        let err = mb_baseline_search(&plant, &cube, &BaselineSpec::with_grid(alloc::vec![5.0])).unwrap_err();
        assert!(matches!(err, Error::NoFeasibleGains { .. }));
    }

    proptest! {
        #[test]
        fn output_never_exceeds_saturation(
            errs in proptest::collection::vec(proptest::array::uniform6(-1e3f64..1e3), 1..40),
            t in proptest::array::uniform3(0.05f64..5.0),
            umax in 0.1f64..50.0,
        ) {
            let g = [poles_to_gains(t[0], t[1], t[2]).unwrap(); DOF];
            let mut s = PidState::default();
            for e in &errs {
                let u = pid_step(&mut s, e, &g, &[umax; 6], 0.05);
                for v in u {
                    prop_assert!(v.abs() <= umax);
                }
            }
        }

        #[test]
        fn linear_below_saturation(
            errs in proptest::collection::vec(proptest::array::uniform6(-1.0f64..1.0), 1..20),
            t in proptest::array::uniform3(0.05f64..5.0),
        ) {
            let g = [poles_to_gains(t[0], t[1], t[2]).unwrap(); DOF];
            let umax = [1e12; 6];
            let (mut s1, mut s2) = (PidState::default(), PidState::default());
            for e in &errs {
                let doubled: Vec6 = core::array::from_fn(|i| 2.0 * e[i]);
                let u1 = pid_step(&mut s1, e, &g, &umax, 0.05);
                let u2 = pid_step(&mut s2, &doubled, &g, &umax, 0.05);
                for i in 0..DOF {
                    prop_assert!((u2[i] - 2.0 * u1[i]).abs() <= 1e-9 * (1.0 + u2[i].abs()));
                }
            }
        }

        #[test]
        fn positive_poles_give_positive_gains(t in proptest::array::uniform3(0.05f64..=5.0)) {
            let g = poles_to_gains(t[0], t[1], t[2]).unwrap();
            prop_assert!(g.kp > 0.0 && g.ki > 0.0 && g.kd > 0.0);
        }
    }
}
