//! Criteria 1 to 7: property suites against independent oracles.

use lbac::baseline;
use lbac::io::read_config;
use lbac_core::bier::{BierBuffers, BierConfig, Transition};
use lbac_core::control::{poles_to_gains, ClosedLoop, PoleCube, DOF};
use lbac_core::dynamics::{CurrentDisturbance, Plant, PlantParams, VehicleState};
use lbac_core::math::normal_cdf;
use lbac_core::nn::{Mlp, MlpSpec};
use lbac_core::sac::{policy_sample, squash, Sac, SacConfig};
use nalgebra::{Complex, Matrix3, Matrix5, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{acceptance_dir, workspace_root, Clock, Outcome};

// ---------------------------------------------------------------- 1

pub fn pole_placement() -> Outcome {
    let started = Clock::start();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let tau: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..=5.0));
        let g = poles_to_gains(tau[0], tau[1], tau[2]).expect("positive poles");
        #[rustfmt::skip]
        let companion = Matrix3::new(
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
            -g.ki, -g.kp, -g.kd,
        );
        // Eigenvalues seed a few Newton steps on the cubic itself.
        let poly = |z: Complex<f64>| ((z + g.kd) * z + g.kp) * z + g.ki;
        let dpoly = |z: Complex<f64>| (z * 3.0 + 2.0 * g.kd) * z + g.kp;
        let mut roots: Vec<Complex<f64>> = companion
            .complex_eigenvalues()
            .iter()
            .map(|&z0| {
                let mut z = z0;
                for _ in 0..3 {
                    let d = dpoly(z);
                    if d.norm() > 0.0 {
                        z -= poly(z) / d;
                    }
                }
                z
            })
            .collect();
        roots.sort_by(|a, b| a.re.total_cmp(&b.re));
        let mut expected: Vec<f64> = tau.iter().map(|t| -1.0 / t).collect();
        expected.sort_by(f64::total_cmp);
        for (r, e) in roots.iter().zip(&expected) {
            let err = ((r.re - e).powi(2) + r.im.powi(2)).sqrt() / e.abs();
            worst = worst.max(err);
        }
    }
    let t = started.finish();
    Outcome::new(worst <= 1e-9 && t.within(5.0), format!("10^4 triples, worst relative root error {worst:.2e} (<= 1e-9), {t} (< 5 s)"))
}

// ---------------------------------------------------------------- 2

/// Gradient magnitude below which central differences in f64 cannot
/// resolve four significant digits.
const FD_SCALE_FLOOR: f64 = 1e-5;

fn fd_objective(net: &Mlp, x: &[f64], c: &[f64]) -> (f64, Vec<bool>) {
    let (y, cache) = net.forward(x, 1).expect("forward");
    (y.iter().zip(c).map(|(y, w)| y * w).sum(), cache.activation_pattern())
}

/// Central difference starting at h = 1e-5, shrinking while the probe
/// straddles an activation kink.
fn central<F: FnMut(f64) -> (f64, Vec<bool>)>(mut f: F) -> f64 {
    let mut h = 1e-5;
    loop {
        let (up, pu) = f(h);
        let (down, pd) = f(-h);
        if pu == pd || h < 1e-10 {
            return (up - down) / (2.0 * h);
        }
        h *= 0.1;
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_SCALE_FLOOR)
}

/// Worst relative error over 100 (net, input) pairs: every input
/// coordinate and 200 random parameters per pair.
fn gradient_sweep(spec: MlpSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut net = Mlp::init(spec.clone(), 1.0, &mut rng);
        for p in net.params_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let n = net.num_params();
        for _ in 0..10 {
            let mut x: Vec<f64> = (0..spec.input).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..spec.output).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, cache) = net.forward(&x, 1).expect("forward");
            let mut grads = vec![0.0; n];
            let dx = net.backward(&cache, &c, Some(&mut grads), true).expect("input gradient");
            for _ in 0..200 {
                let k = rng.random_range(0..n);
                let p0 = net.params()[k];
                let fd = central(|h| {
                    net.params_mut()[k] = p0 + h;
                    let r = fd_objective(&net, &x, &c);
                    net.params_mut()[k] = p0;
                    r
                });
                worst = worst.max(rel_err(grads[k], fd));
            }
            for k in 0..x.len() {
                let x0 = x[k];
                let fd = central(|h| {
                    x[k] = x0 + h;
                    let r = fd_objective(&net, &x, &c);
                    x[k] = x0;
                    r
                });
                worst = worst.max(rel_err(dx[k], fd));
            }
        }
    }
    worst
}

pub fn gradient_fidelity() -> Outcome {
    let started = Clock::start();
    let policy = gradient_sweep(MlpSpec::new(111, &[256, 256], 36), 2);
    let critic = gradient_sweep(MlpSpec::new(129, &[256, 256], 1), 3);
    let t = started.finish();
    Outcome::new(
        policy <= 1e-4 && critic <= 1e-4 && t.within(60.0),
        format!("100 pairs each, worst relative error policy {policy:.2e}, critic {critic:.2e} (<= 1e-4), {t} (< 60 s)"),
    )
}

// ---------------------------------------------------------------- 3

/// Marginal density of one squashed dimension, read from `squash`'s
/// log-probability at pole value `a`.
fn log_prob_density(a: f64, lambda: f64, log_std: f64, cube: &PoleCube) -> f64 {
    let u = cube.to_unit(a).atanh();
    let xi = (u - lambda) / log_std.exp();
    let out = squash(&[lambda, log_std], 1, 1, vec![xi], cube, (-20.0, 2.0));
    out.log_prob[0].exp()
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

pub fn squashed_density() -> Outcome {
    let started = Clock::start();
    let cube = PoleCube::default();
    let dims = [(0.0, 0.0), (0.8, -0.5), (-1.2, 0.4)];
    let dim = dims.len();
    // A network whose head is the constant (lambda, log_std) vector.
    let mut net = Mlp::zeros(MlpSpec::new(4, &[8], 2 * dim));
    let n = net.num_params();
    for (i, (l, s)) in dims.iter().enumerate() {
        net.params_mut()[n - 2 * dim + i] = *l;
        net.params_mut()[n - dim + i] = *s;
    }
    let bins = 50;
    let width = (cube.tau_max - cube.tau_min) / bins as f64;
    let mut counts = vec![vec![0u64; bins]; dim];
    let samples = 1_000_000;
    let chunk = 10_000;
    let states = vec![0.0; 4 * chunk];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut joint_gap: f64 = 0.0;
    for _ in 0..samples / chunk {
        let out = policy_sample(&net, &states, chunk, &cube, (-20.0, 2.0), false, &mut rng).expect("sample");
        for r in 0..chunk {
            let mut marginal = 0.0;
            for (d, &(l, s)) in dims.iter().enumerate() {
                let a = out.actions[r * dim + d];
                let b = (((a - cube.tau_min) / width) as usize).min(bins - 1);
                counts[d][b] += 1;
                if r == 0 {
                    marginal += log_prob_density(a, l, s, &cube).ln();
                }
            }
            if r == 0 {
                joint_gap = joint_gap.max((out.log_prob[0] - marginal).abs());
            }
        }
    }
    let mut outside = 0;
    let mut worst_z: f64 = 0.0;
    let mut mass_gap: f64 = 0.0;
    for (d, &(l, s)) in dims.iter().enumerate() {
        let sigma = f64::exp(s);
        for (b, &count) in counts[d].iter().enumerate() {
            let lo = cube.tau_min + b as f64 * width;
            let hi = if b + 1 == bins { cube.tau_max } else { lo + width };
            // Integrate over the pre-squash variable u, a = c + h tanh(u), where
            // the integrand is smooth; the open ends are cut 12 sigma out.
            let to_u = |a: f64| cube.to_unit(a).atanh().clamp(l - 12.0 * sigma, l + 12.0 * sigma);
            let (ulo, uhi) = (to_u(lo), to_u(hi));
            let jac = |u: f64| cube.half_width() * (1.0 - u.tanh().powi(2));
            let p = simpson(|u| log_prob_density(cube.from_unit(u.tanh()), l, s, &cube) * jac(u), ulo, uhi, 400);
            let p_cdf = normal_cdf((uhi - l) / sigma) - normal_cdf((ulo - l) / sigma);
            mass_gap = mass_gap.max((p - p_cdf).abs());
            let mean = samples as f64 * p;
            let sd = (samples as f64 * p * (1.0 - p)).sqrt();
            let z = (count as f64 - mean).abs() / sd.max(1e-300);
            worst_z = worst_z.max(z);
            if z > 3.0 {
                outside += 1;
            }
        }
    }
    let t = started.finish();
    Outcome::new(
        outside == 0 && mass_gap < 1e-6 && joint_gap < 1e-9 && t.within(60.0),
        format!(
            "{dim} dims x {bins} bins, 10^6 samples: {outside} bins outside 3 sigma (worst |z| {worst_z:.2}); \
             bin mass vs CDF {mass_gap:.1e}; joint vs summed marginals {joint_gap:.1e}; {t} (< 60 s)"
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Runs 10^4 policy/temperature updates at one fixed state against fixed
/// random critics and returns the mean batch `E[-log pi]` over the last
/// 1000 updates.
fn steer(target: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let width = 64;
    let cfg = SacConfig { target_entropy: target, learning_rate: 1e-2, hidden: vec![width, width], ..SacConfig::default() };
    let mut sac = Sac::new(cfg, PoleCube::default(), 8, 18, &mut rng);
    // Steeper critics give the policy a pull that the temperature must balance.
    for q in [&mut sac.q1.net, &mut sac.q2.net] {
        let n = q.num_params();
        for p in &mut q.params_mut()[n - width - 1..] {
            *p *= 10.0;
        }
    }
    let batch = 64;
    let s: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let states: Vec<f64> = (0..batch).flat_map(|_| s.clone()).collect();
    let mut tail = 0.0;
    for k in 0..10_000 {
        let (_, _, h) = sac.update_policy_and_alpha(&states, batch, &mut rng).expect("update");
        if k >= 9_000 {
            tail += h;
        }
    }
    tail / 1000.0
}

pub fn temperature_steering() -> Outcome {
    let plus = steer(18.0);
    let minus = steer(-18.0);
    let ok_plus = (plus - 18.0).abs() <= 0.5;
    let ok_minus = (minus + 18.0).abs() <= 0.5;
    Outcome::new(
        ok_plus && ok_minus,
        format!("mean E[-log pi] over updates 9001..10^4: target +18 -> {plus:.3}, target -18 (training default) -> {minus:.3} (+-0.5)"),
    )
}

// ---------------------------------------------------------------- 5

pub fn bier_invariants() -> Outcome {
    let cfg = BierConfig::default();
    let mut buf = BierBuffers::new(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut expect_b1 = Vec::new();
    let mut expect_b2 = Vec::new();
    // Rewards on a 2^-10 grid keep every running sum exact.
    let mut sum = 0.0;
    for i in 0..100_000u64 {
        let step = i % 250;
        let reward = rng.random_range(0..1024) as f64 / 1024.0 + if step < 125 { 0.0 } else { 0.5 };
        if step % 2 == 0 {
            expect_b1.push(i);
        }
        if i > 0 && reward > sum / i as f64 {
            expect_b2.push(i);
        }
        sum += reward;
        buf.insert(Transition {
            state: vec![i as f64],
            action: vec![0.0],
            reward,
            next_state: vec![i as f64],
            done: false,
            episode_id: i / 250,
            step_index: step,
        });
    }
    let ids = |r: &lbac_core::bier::Ring<Transition>| r.iter().map(|t| t.state[0] as u64).collect::<Vec<u64>>();
    let b1_ok = ids(&buf.b1) == expect_b1 && buf.b1.iter().all(|t| t.step_index % 2 == 0);
    let b2_ok = ids(&buf.b2) == expect_b2;

    let batches = 2000;
    let mut layout_ok = true;
    let mut start_bins = [0u64; 20];
    let mut b2_bins = [0u64; 20];
    let span1 = buf.b1.len() - cfg.sequence_length + 1;
    for _ in 0..batches {
        let plan = buf.plan(256, &mut rng).expect("plan");
        let batch = buf.gather(&plan);
        layout_ok &= plan.b1_runs.len() == 1 && plan.b1_runs[0].1 == 128 && plan.b2.len() == 128 && batch.size == 256;
        let start = plan.b1_runs[0].0;
        start_bins[start * 20 / span1] += 1;
        for j in 0..128 {
            layout_ok &= batch.states[j] == buf.b1.get(start + j).state[0];
            layout_ok &= expect_b1.binary_search(&(batch.states[j] as u64)).ok() == Some(start + j);
        }
        for (j, &idx) in plan.b2.iter().enumerate() {
            layout_ok &= batch.states[128 + j] == buf.b2.get(idx).state[0];
            b2_bins[idx * 20 / buf.b2.len()] += 1;
        }
    }
    // Chi-square with 19 degrees of freedom; 43.8 is the 0.999 quantile.
    let chi2 = |bins: &[u64; 20]| {
        let total: u64 = bins.iter().sum();
        let e = total as f64 / 20.0;
        bins.iter().map(|&c| (c as f64 - e).powi(2) / e).sum::<f64>()
    };
    let (c1, c2) = (chi2(&start_bins), chi2(&b2_bins));
    Outcome::new(
        b1_ok && b2_ok && layout_ok && c1 < 43.8 && c2 < 43.8,
        format!(
            "10^5 insertions: b1 {} entries exact {b1_ok}, b2 {} entries exact {b2_ok}; {batches} batches of 128 consecutive b1 + 128 b2 {layout_ok}; \
             uniformity chi2(19) b1 starts {c1:.1}, b2 draws {c2:.1} (< 43.8)",
            buf.b1.len(),
            buf.b2.len()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn dissipativity() -> (usize, f64) {
    let mut params = PlantParams::nominal().neutral();
    params.coriolis = false;
    let plant = Plant::new(params).expect("plant");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let calm = CurrentDisturbance::none();
    let mut violations = 0;
    let mut worst_rise: f64 = 0.0;
    for _ in 0..1000 {
        let eta = [
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-20.0..0.0),
            rng.random_range(-0.7..0.7),
            rng.random_range(-0.7..0.7),
            rng.random_range(-3.1..3.1),
        ];
        let nu: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let mut state = VehicleState { eta, nu, nu_dot: [0.0; 6] };
        let mut ke = plant.kinetic_energy(&state.nu);
        for k in 0..200 {
            state = plant.step(&state, &[0.0; 6], &calm, k).expect("step");
            let next = plant.kinetic_energy(&state.nu);
            if next > ke {
                violations += 1;
                worst_rise = worst_rise.max(next - ke);
            }
            ke = next;
        }
    }
    (violations, worst_rise)
}

/// Body-frame view of a world force for roll `phi`, pitch `theta`, zero yaw.
fn body_force(f: [f64; 3], phi: f64, theta: f64) -> [f64; 3] {
    let (sr, cr) = (phi.sin(), phi.cos());
    let (sp, cp) = (theta.sin(), theta.cos());
    // R^T for R = Ry(theta) Rx(phi).
    [
        cp * f[0] - sp * f[2],
        sr * sp * f[0] + cr * f[1] + sr * cp * f[2],
        cr * sp * f[0] - sr * f[1] + cr * cp * f[2],
    ]
}

/// Net body wrench at constant body velocity (u, v, w) and attitude
/// (phi, theta, 0) under world force `f`.
fn balance(plant: &Plant, f: [f64; 3], x: &[f64; 5]) -> [f64; 6] {
    let p = plant.params();
    let nu = [x[0], x[1], x[2], 0.0, 0.0, 0.0];
    let (phi, theta) = (x[3], x[4]);
    let fb = body_force(f, phi, theta);
    let c = plant.coriolis_force(&nu);
    let d: [f64; 6] = std::array::from_fn(|i| (p.lin_damping[i] + p.quad_damping[i] * nu[i].abs()) * nu[i]);
    let (w, b) = (p.weight, p.buoyancy);
    let (zg, zb) = (p.center_of_gravity[2], p.center_of_buoyancy[2]);
    let (sr, cr, sp, cp) = (phi.sin(), phi.cos(), theta.sin(), theta.cos());
    let g = [
        (w - b) * sp,
        -(w - b) * cp * sr,
        -(w - b) * cp * cr,
        (zg * w - zb * b) * cp * sr,
        (zg * w - zb * b) * sp,
        0.0,
    ];
    let ext = [fb[0], fb[1], fb[2], 0.0, 0.0, 0.0];
    std::array::from_fn(|i| ext[i] - c[i] - d[i] - g[i])
}

/// Newton iteration on the first five balance equations; the yaw equation
/// is returned as a consistency residual.
fn steady_state(plant: &Plant, f: [f64; 3]) -> ([f64; 5], f64) {
    let p = plant.params();
    let mut x = [0.0; 5];
    // Per-axis start: d_l v + d_q |v| v = f.
    for i in 0..3 {
        let fi = f[i] + if i == 2 { p.weight - p.buoyancy } else { 0.0 };
        let (dl, dq) = (p.lin_damping[i], p.quad_damping[i]);
        x[i] = fi.signum() * (-dl + (dl * dl + 4.0 * dq * fi.abs()).sqrt()) / (2.0 * dq);
    }
    for _ in 0..50 {
        let r = balance(plant, f, &x);
        let mut jac = Matrix5::zeros();
        for j in 0..5 {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x;
            xp[j] += h;
            let rp = balance(plant, f, &xp);
            for i in 0..5 {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let step = jac.lu().solve(&-Vector5::from_fn(|i, _| r[i])).expect("nonsingular Jacobian");
        for j in 0..5 {
            x[j] += step[j];
        }
        if step.norm() < 1e-14 {
            break;
        }
    }
    let yaw = balance(plant, f, &x)[5];
    (x, yaw)
}

pub fn dynamics_sanity() -> Outcome {
    let started = Clock::start();
    let (violations, rise) = dissipativity();
    let plant = Plant::new(PlantParams::nominal()).expect("plant");
    // Surge forcing stays at or below 6 N: from about 12 N the Munk moment of
    // the surge-heave flow overpowers the pitch restoring moment and the
    // vehicle has not settled after 60 s.
    let forces = [
        [6.0, 0.0, 0.0],
        [-6.0, 0.0, 0.0],
        [-3.0, 0.0, -2.0],
        [0.0, 6.0, 0.0],
        [0.0, -10.0, 0.0],
        [0.0, 0.0, 4.0],
        [0.0, 0.0, -4.0],
        [5.0, 0.0, 3.0],
    ];
    let steps = (60.0 / plant.dt()).round() as usize;
    let mut worst: f64 = 0.0;
    let mut yaw_residual: f64 = 0.0;
    for f in forces {
        let (x, yaw) = steady_state(&plant, f);
        yaw_residual = yaw_residual.max(yaw.abs());
        let dist = CurrentDisturbance::constant([f[0], f[1], f[2], 0.0, 0.0, 0.0]);
        let mut state = VehicleState::at_rest([0.0, 0.0, -10.0, 0.0, 0.0, 0.0]);
        for k in 0..steps {
            state = plant.step(&state, &[0.0; 6], &dist, k).expect("step");
        }
        let vel = (0..3).map(|i| (state.nu[i] - x[i]).powi(2)).sum::<f64>().sqrt();
        let vel_ref = (0..3).map(|i| x[i] * x[i]).sum::<f64>().sqrt();
        let att = ((state.eta[3] - x[3]).powi(2) + (state.eta[4] - x[4]).powi(2)).sqrt();
        let att_ref = (x[3] * x[3] + x[4] * x[4]).sqrt().max(1e-2);
        let rates = state.nu[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(vel / vel_ref).max(att / att_ref).max(rates / vel_ref);
    }
    let t = started.finish();
    Outcome::new(
        violations == 0 && worst <= 0.01 && yaw_residual < 1e-9,
        format!(
            "damping-only energy rises {violations} of 2x10^5 steps (largest {rise:.1e}); steady state after 60 s vs \
             Newton force balance, {} forcings: worst relative gap {worst:.2e} (<= 1e-2); {t}",
            forces.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

pub fn baseline_validity() -> Outcome {
    let cfg = read_config(&workspace_root().join("configs/default.json")).expect("default config");
    let (cache, hit) = baseline::load_or_search(&cfg, &acceptance_dir().join("baseline-cache")).expect("baseline");
    let plant = cfg.plant.build().expect("plant");
    let spec = cfg.baseline.spec(&cfg.poles);
    let action = cache.result.action;
    let steps = (spec.duration / plant.dt()).round() as usize;
    let settle = (spec.settle_time / plant.dt()).round() as usize;
    let calm = CurrentDisturbance::none();
    let mut residual = [0.0f64; DOF];
    for dof in 0..DOF {
        let mut target = [0.0; DOF];
        target[dof] = spec.step_sizes[dof];
        let mut cl = ClosedLoop::new(&plant, &action, VehicleState::default()).expect("gains");
        for k in 0..steps {
            cl.step(&target, &calm, k).expect("step");
            if k + 1 >= settle {
                let e = (cl.state.eta[dof] - target[dof]).abs() / spec.step_sizes[dof].abs();
                residual[dof] = residual[dof].max(e);
            }
        }
    }
    let worst = residual.iter().cloned().fold(0.0, f64::max);
    Outcome::new(
        worst <= spec.settle_band,
        format!(
            "cache hit {hit}; worst post-{} s error per DoF {:?} of the step (<= {})",
            spec.settle_time,
            residual.map(|r| (r * 1e4).round() / 1e4),
            spec.settle_band
        ),
    )
}
