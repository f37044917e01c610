//! Six-degree-of-freedom rigid-body plant for a small hover-capable AUV.
//!
//! The model follows the usual marine-vehicle form
//!
//! ```text
//! eta_dot = J(eta) nu
//! M nu_dot + C(nu) nu + D(nu) nu + g(eta) = T u + w
//! ```
//!
//! with `eta = [x, y, z, roll, pitch, yaw]` in the world frame, `nu` the body
//! frame velocities, `u` the commanded wrench and `w` an unmeasured current
//! disturbance expressed as a body-frame wrench. The world frame is
//! north-east-down, so positive buoyancy surplus pushes towards negative `z`.

use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub type Vec6 = [f64; 6];

const PITCH_GUARD: f64 = FRAC_PI_2 - 1e-3;
const BLOWUP_BOUND: f64 = 1e6;

/// Pose, body velocity and the most recent body acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub eta: Vec6,
    pub nu: Vec6,
    pub nu_dot: Vec6,
}

impl VehicleState {
    pub fn at_rest(eta: Vec6) -> Self {
        let mut eta = eta;
        for a in &mut eta[3..] {
            *a = math::wrap_angle(*a);
        }
        VehicleState { eta, nu: [0.0; 6], nu_dot: [0.0; 6] }
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(&self.nu).chain(&self.nu_dot).all(|v| v.is_finite())
    }
}

fn yes() -> bool {
    true
}

/// Plant parameters as stored on disk. All units SI; the mass matrix holds
/// rigid-body plus added mass about the body origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub mass_matrix: [Vec6; 6],
    pub lin_damping: Vec6,
    pub quad_damping: Vec6,
    /// Weight W in newtons.
    pub weight: f64,
    /// Buoyancy B in newtons.
    pub buoyancy: f64,
    /// Centre of gravity relative to the body origin, metres.
    pub center_of_gravity: [f64; 3],
    /// Centre of buoyancy relative to the body origin, metres.
    pub center_of_buoyancy: [f64; 3],
    /// Per-DoF wrench saturation (N, N m).
    pub u_max: Vec6,
    /// Integration step in seconds.
    pub dt: f64,
    /// Include the rigid-body Coriolis/centripetal term.
    #[serde(default = "yes")]
    pub coriolis: bool,
    /// Optional allocation matrix mapping commanded wrench to applied wrench.
    /// Identity when absent.
    #[serde(default)]
    pub allocation: Option<[Vec6; 6]>,
}

impl PlantParams {
    /// BlueROV2-class parameter set: 11.5 kg dry mass, added mass and drag
    /// coefficients from published identification of that vehicle family,
    /// centre of gravity 2 cm below the centre of buoyancy, slightly positive
    /// buoyancy.
    pub fn nominal() -> Self {
        let m = 11.5;
        let zg = 0.02;
        let inertia = [0.16, 0.16, 0.16];
        let added = [5.5, 12.7, 14.57, 0.12, 0.12, 0.12];
        let mut mm = [[0.0; 6]; 6];
        for i in 0..3 {
            mm[i][i] = m + added[i];
            mm[i + 3][i + 3] = inertia[i] + added[i + 3];
        }
        // -m S(r_g) and m S(r_g) blocks for r_g = (0, 0, zg)
        mm[0][4] = m * zg;
        mm[4][0] = m * zg;
        mm[1][3] = -m * zg;
        mm[3][1] = -m * zg;
        PlantParams {
            mass_matrix: mm,
            lin_damping: [4.03, 6.22, 5.18, 0.07, 0.07, 0.07],
            quad_damping: [18.18, 21.66, 36.99, 1.55, 1.55, 1.55],
            weight: 112.8,
            buoyancy: 114.8,
            center_of_gravity: [0.0, 0.0, zg],
            center_of_buoyancy: [0.0, 0.0, 0.0],
            u_max: [40.0, 40.0, 40.0, 5.0, 5.0, 5.0],
            dt: 0.05,
            coriolis: true,
            allocation: None,
        }
    }

    /// The nominal set with inertia and damping scaled per DoF by factors
    /// drawn uniformly from [0.8, 1.25].
    pub fn perturbed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::nominal();
        let mass_f: [f64; 6] = core::array::from_fn(|_| rng.random_range(0.8..=1.25));
        let damp_f: [f64; 6] = core::array::from_fn(|_| rng.random_range(0.8..=1.25));
        // S M S with S = diag(sqrt(f)) keeps the matrix symmetric positive-definite.
        for i in 0..6 {
            for j in 0..6 {
                p.mass_matrix[i][j] *= math::sqrt(mass_f[i] * mass_f[j]);
            }
            p.lin_damping[i] *= damp_f[i];
            p.quad_damping[i] *= damp_f[i];
        }
        p
    }

    /// Parameters with no restoring moment and zero net buoyancy.
    pub fn neutral(mut self) -> Self {
        self.buoyancy = self.weight;
        self.center_of_buoyancy = self.center_of_gravity;
        self
    }

    pub fn validate(&self) -> Result<Plant> {
        Plant::new(self.clone())
    }
}

/// Validated plant with the factorised mass matrix cached.
#[derive(Debug, Clone)]
pub struct Plant {
    params: PlantParams,
    mass: Matrix6<f64>,
    mass_inv: Matrix6<f64>,
    allocation: Option<Matrix6<f64>>,
}

fn mat6(rows: &[Vec6; 6]) -> Matrix6<f64> {
    Matrix6::from_fn(|i, j| rows[i][j])
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        if !(params.dt > 0.0 && params.dt <= 0.5) {
            return Err(Error::InvalidPlant(alloc::format!("dt {} outside (0, 0.5]", params.dt)));
        }
        if params.lin_damping.iter().chain(&params.quad_damping).any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidPlant("damping coefficients must be >= 0".into()));
        }
        if params.u_max.iter().any(|u| !(*u > 0.0)) {
            return Err(Error::InvalidPlant("u_max must be > 0".into()));
        }
        let mass = mat6(&params.mass_matrix);
        if !mass.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularMass);
        }
        for i in 0..6 {
            for j in 0..i {
                let (a, b) = (mass[(i, j)], mass[(j, i)]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::SingularMass);
                }
            }
        }
        let chol = mass.cholesky().ok_or(Error::SingularMass)?;
        let mass_inv = chol.inverse();
        let allocation = params.allocation.as_ref().map(mat6);
        Ok(Plant { params, mass, mass_inv, allocation })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn u_max(&self) -> &Vec6 {
        &self.params.u_max
    }

    pub fn mass(&self) -> &Matrix6<f64> {
        &self.mass
    }

    /// Kinetic energy `0.5 nu^T M nu`.
    pub fn kinetic_energy(&self, nu: &Vec6) -> f64 {
        let v = Vector6::from(*nu);
        0.5 * v.dot(&(self.mass * v))
    }

    /// Rigid-body Coriolis/centripetal force `C(nu) nu` built from the mass
    /// matrix by the skew-symmetric construction.
    pub fn coriolis_force(&self, nu: &Vec6) -> Vec6 {
        if !self.params.coriolis {
            return [0.0; 6];
        }
        let v = Vector6::from(*nu);
        let m = &self.mass;
        let v1 = v.fixed_rows::<3>(0).into_owned();
        let v2 = v.fixed_rows::<3>(3).into_owned();
        let a: Vector3<f64> =
            m.fixed_view::<3, 3>(0, 0) * v1 + m.fixed_view::<3, 3>(0, 3) * v2;
        let b: Vector3<f64> =
            m.fixed_view::<3, 3>(3, 0) * v1 + m.fixed_view::<3, 3>(3, 3) * v2;
        let top = -a.cross(&v2);
        let bottom = -a.cross(&v1) - b.cross(&v2);
        [top[0], top[1], top[2], bottom[0], bottom[1], bottom[2]]
    }

    /// Linear plus quadratic damping force `D(nu) nu`, componentwise.
    pub fn damping_force(&self, nu: &Vec6) -> Vec6 {
        let p = &self.params;
        core::array::from_fn(|i| p.lin_damping[i] * nu[i] + p.quad_damping[i] * nu[i].abs() * nu[i])
    }

    /// Gravity and buoyancy restoring force `g(eta)`.
    pub fn restoring_force(&self, eta: &Vec6) -> Vec6 {
        let p = &self.params;
        let (w, b) = (p.weight, p.buoyancy);
        let [xg, yg, zg] = p.center_of_gravity;
        let [xb, yb, zb] = p.center_of_buoyancy;
        let (sr, cr) = (math::sin(eta[3]), math::cos(eta[3]));
        let (sp, cp) = (math::sin(eta[4]), math::cos(eta[4]));
        let wb = w - b;
        [
            wb * sp,
            -wb * cp * sr,
            -wb * cp * cr,
            -(yg * w - yb * b) * cp * cr + (zg * w - zb * b) * cp * sr,
            (zg * w - zb * b) * sp + (xg * w - xb * b) * cp * cr,
            -(xg * w - xb * b) * cp * sr - (yg * w - yb * b) * sp,
        ]
    }

    /// Applied wrench after the allocation matrix.
    pub fn allocate(&self, wrench: &Vec6) -> Vec6 {
        match &self.allocation {
            None => *wrench,
            Some(t) => (t * Vector6::from(*wrench)).into(),
        }
    }

    /// Body acceleration `M^-1 (u + w - C(nu) nu - D(nu) nu - g(eta))`.
    pub fn plant_accel(&self, state: &VehicleState, wrench: &Vec6, disturbance: &Vec6) -> Vec6 {
        let applied = self.allocate(wrench);
        let c = self.coriolis_force(&state.nu);
        let d = self.damping_force(&state.nu);
        let g = self.restoring_force(&state.eta);
        let rhs = Vector6::from_fn(|i, _| applied[i] + disturbance[i] - c[i] - d[i] - g[i]);
        (self.mass_inv * rhs).into()
    }

    /// One semi-implicit Euler step: velocity first, then pose from the new
    /// velocity. `wrench` must already be saturated.
    pub fn step(
        &self,
        state: &VehicleState,
        wrench: &Vec6,
        disturbance: &CurrentDisturbance,
        step_index: usize,
    ) -> Result<VehicleState> {
        let dist = world_to_body(&state.eta, &disturbance.active(step_index));
        let nu_dot = self.plant_accel(state, wrench, &dist);
        let dt = self.params.dt;
        let nu: Vec6 = core::array::from_fn(|i| state.nu[i] + dt * nu_dot[i]);
        let eta_dot = kinematics(&state.eta, &nu)?;
        let mut eta: Vec6 = core::array::from_fn(|i| state.eta[i] + dt * eta_dot[i]);
        for a in &mut eta[3..] {
            *a = math::wrap_angle(*a);
        }
        let next = VehicleState { eta, nu, nu_dot };
        let bad = next
            .eta
            .iter()
            .chain(&next.nu)
            .chain(&next.nu_dot)
            .any(|v| !v.is_finite() || v.abs() > BLOWUP_BOUND);
        if bad {
            return Err(Error::NumericBlowup { step: step_index });
        }
        Ok(next)
    }
}

/// Rotates the force part of a world-frame wrench into the body frame.
pub fn world_to_body(eta: &Vec6, w: &Vec6) -> Vec6 {
    let r = rotation(eta[3], eta[4], eta[5]);
    let f = r.transpose() * Vector3::new(w[0], w[1], w[2]);
    [f[0], f[1], f[2], w[3], w[4], w[5]]
}

/// Body-to-world rotation for roll-pitch-yaw Euler angles.
pub fn rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = (math::sin(roll), math::cos(roll));
    let (sp, cp) = (math::sin(pitch), math::cos(pitch));
    let (sy, cy) = (math::sin(yaw), math::cos(yaw));
    Matrix3::new(
        cy * cp,
        -sy * cr + cy * sp * sr,
        sy * sr + cy * cr * sp,
        sy * cp,
        cy * cr + sr * sp * sy,
        -cy * sr + sp * sy * cr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Pose rate `J(eta) nu`.
pub fn kinematics(eta: &Vec6, nu: &Vec6) -> Result<Vec6> {
    let (roll, pitch, yaw) = (eta[3], eta[4], eta[5]);
    if !(pitch.abs() < PITCH_GUARD) {
        return Err(Error::GimbalLock { pitch });
    }
    let r = rotation(roll, pitch, yaw);
    let lin = r * Vector3::new(nu[0], nu[1], nu[2]);
    let (sr, cr) = (math::sin(roll), math::cos(roll));
    let (tp, cp) = (math::tan(pitch), math::cos(pitch));
    let (p, q, rr) = (nu[3], nu[4], nu[5]);
    Ok([
        lin[0],
        lin[1],
        lin[2],
        p + sr * tp * q + cr * tp * rr,
        cr * q - sr * rr,
        (sr * q + cr * rr) / cp,
    ])
}

/// Additive current disturbance, optionally switching to a second wrench.
/// Forces are world-frame; torques are body-frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentDisturbance {
    pub wrench: Vec6,
    pub switch_step: Option<usize>,
    pub wrench_after: Option<Vec6>,
}

impl CurrentDisturbance {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn constant(wrench: Vec6) -> Self {
        CurrentDisturbance { wrench, switch_step: None, wrench_after: None }
    }

    /// The wrench in effect at `step_index`.
    pub fn active(&self, step_index: usize) -> Vec6 {
        match (self.switch_step, self.wrench_after) {
            (Some(s), Some(after)) if step_index >= s => after,
            _ => self.wrench,
        }
    }
}

/// Domain-randomisation complexity level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisturbanceConfig {
    /// No current at all.
    Calm = 1,
    /// One current held for the whole episode.
    Steady = 2,
    /// A current that is replaced at a random step of the switch window.
    Switching = 3,
}

impl DisturbanceConfig {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Self::Calm),
            2 => Some(Self::Steady),
            3 => Some(Self::Switching),
            _ => None,
        }
    }
}

/// Steps between which a switching current changes, for 500-step episodes.
pub const SWITCH_WINDOW: (usize, usize) = (100, 400);

fn horizontal_wrench<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> Vec6 {
    let mag = if range.1 > range.0 { rng.random_range(range.0..=range.1) } else { range.0 };
    let dir = rng.random_range(-PI..PI);
    [mag * math::cos(dir), mag * math::sin(dir), 0.0, 0.0, 0.0, 0.0]
}

/// Draws the disturbance for one episode of the given complexity.
pub fn sample_disturbance<R: Rng + ?Sized>(
    config: DisturbanceConfig,
    rng: &mut R,
    magnitude_range: (f64, f64),
    switch_window: (usize, usize),
) -> CurrentDisturbance {
    match config {
        DisturbanceConfig::Calm => CurrentDisturbance::none(),
        DisturbanceConfig::Steady => {
            CurrentDisturbance::constant(horizontal_wrench(rng, magnitude_range))
        }
        DisturbanceConfig::Switching => {
            let wrench = horizontal_wrench(rng, magnitude_range);
            let switch = rng.random_range(switch_window.0..=switch_window.1.max(switch_window.0));
            let after = horizontal_wrench(rng, magnitude_range);
            CurrentDisturbance { wrench, switch_step: Some(switch), wrench_after: Some(after) }
        }
    }
}
