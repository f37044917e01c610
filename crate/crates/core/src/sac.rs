//! Soft actor-critic with twin critics, target networks, delayed policy
//! updates and automatic temperature, over a tanh-squashed Gaussian policy
//! whose actions are affinely mapped into the pole cube.
//!
//! Critics see actions in normalised cube units (`(a - c) / s`, in [-1, 1]);
//! stored actions are in pole units.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bier::{Batch, Replay};
use crate::control::PoleCube;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Adam, ForwardCache, Mlp, MlpSpec, ParamKind, Trainable};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub polyak: f64,
    pub policy_delay: u64,
    pub critic_weight_decay: f64,
    pub target_entropy: f64,
    pub initial_log_alpha: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub grad_clip: Option<f64>,
    pub head_scale: f64,
    pub replay_start: usize,
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![256, 256],
            learning_rate: 3e-4,
            gamma: 0.99,
            batch_size: 256,
            polyak: 0.005,
            policy_delay: 2,
            critic_weight_decay: 0.001,
            target_entropy: -18.0,
            initial_log_alpha: 0.0,
            log_std_min: -20.0,
            log_std_max: 2.0,
            grad_clip: Some(10.0),
            head_scale: 1e-2,
            replay_start: 10_000,
            updates_per_step: 1,
        }
    }
}

/// Squashed-Gaussian samples for a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub size: usize,
    pub dim: usize,
    /// Pre-squash means.
    pub lambda: Vec<f64>,
    /// Clamped log standard deviations.
    pub log_std: Vec<f64>,
    /// Whether the raw log std was inside the clamp (gradient passes).
    pub log_std_free: Vec<bool>,
    /// Standard normal draws (zero in deterministic mode).
    pub noise: Vec<f64>,
    /// tanh of the pre-squash sample: the action in normalised cube units.
    pub squashed: Vec<f64>,
    /// Actions in pole units.
    pub actions: Vec<f64>,
    pub log_prob: Vec<f64>,
}

/// `log(1 - tanh(u)^2)`, stable for large `|u|`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (core::f64::consts::LN_2 - u - math::softplus(-2.0 * u))
}

/// Maps raw policy-head outputs and standard normal `noise` to actions.
pub fn squash(head: &[f64], size: usize, dim: usize, noise: Vec<f64>, cube: &PoleCube, clamp: (f64, f64)) -> PolicyOutput {
    assert_eq!(head.len(), size * 2 * dim);
    assert_eq!(noise.len(), size * dim);
    let (c, s) = (cube.center(), cube.half_width());
    let ln_s = math::ln(s);
    let mut out = PolicyOutput {
        size,
        dim,
        lambda: Vec::with_capacity(size * dim),
        log_std: Vec::with_capacity(size * dim),
        log_std_free: Vec::with_capacity(size * dim),
        noise,
        squashed: Vec::with_capacity(size * dim),
        actions: Vec::with_capacity(size * dim),
        log_prob: Vec::with_capacity(size),
    };
    for r in 0..size {
        let row = &head[r * 2 * dim..(r + 1) * 2 * dim];
        let mut lp = 0.0;
        for i in 0..dim {
            let lambda = row[i];
            let raw = row[dim + i];
            let ls = raw.clamp(clamp.0, clamp.1);
            let xi = out.noise[r * dim + i];
            let u = lambda + math::exp(ls) * xi;
            let t = math::tanh(u);
            lp += -0.5 * xi * xi - ls - HALF_LN_2PI - log1m_tanh_sq(u) - ln_s;
            out.lambda.push(lambda);
            out.log_std.push(ls);
            out.log_std_free.push(raw >= clamp.0 && raw <= clamp.1);
            out.squashed.push(t);
            // Keep the action strictly inside the cube even when tanh rounds to 1.
            let a = (c + s * t).clamp(cube.tau_min, cube.tau_max);
            out.actions.push(a);
        }
        out.log_prob.push(lp);
    }
    out
}

fn normal_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Samples the policy at `size` row-major states. With `deterministic` the
/// noise is zero and the action is the squashed mean.
pub fn policy_sample<R: Rng + ?Sized>(
    policy: &Mlp,
    states: &[f64],
    size: usize,
    cube: &PoleCube,
    clamp: (f64, f64),
    deterministic: bool,
    rng: &mut R,
) -> Result<PolicyOutput> {
    if deterministic {
        return policy_mean(policy, states, size, cube, clamp);
    }
    let dim = policy.output_dim() / 2;
    let head = policy.predict(states, size)?;
    Ok(squash(&head, size, dim, normal_noise(size * dim, rng), cube, clamp))
}

/// The squashed mean action (zero noise) at `size` states.
pub fn policy_mean(policy: &Mlp, states: &[f64], size: usize, cube: &PoleCube, clamp: (f64, f64)) -> Result<PolicyOutput> {
    let dim = policy.output_dim() / 2;
    let head = policy.predict(states, size)?;
    Ok(squash(&head, size, dim, vec![0.0; size * dim], cube, clamp))
}

fn critic_input(states: &[f64], squashed: &[f64], size: usize) -> Vec<f64> {
    let sd = states.len() / size.max(1);
    let ad = squashed.len() / size.max(1);
    let mut x = Vec::with_capacity(size * (sd + ad));
    for r in 0..size {
        x.extend_from_slice(&states[r * sd..(r + 1) * sd]);
        x.extend_from_slice(&squashed[r * ad..(r + 1) * ad]);
    }
    x
}

/// Mean squared error of `net` against `targets` and its parameter gradient.
pub fn critic_loss_grad(net: &Mlp, inputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = targets.len();
    let (q, cache) = net.forward(inputs, n)?;
    let mut loss = 0.0;
    let mut dq = vec![0.0; n];
    for i in 0..n {
        let d = q[i] - targets[i];
        loss += d * d;
        dq[i] = 2.0 * d / n as f64;
    }
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&cache, &dq, Some(&mut grads), false);
    Ok((loss / n as f64, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub critic1: f64,
    pub critic2: f64,
    pub policy: Option<f64>,
    pub alpha: Option<f64>,
    /// Batch estimate of `E[-log pi]` at the last policy update.
    pub entropy: Option<f64>,
}

/// Agent state: policy, twin critics and their targets, and the temperature.
#[derive(Debug, Clone)]
pub struct Sac {
    pub cfg: SacConfig,
    pub cube: PoleCube,
    pub state_dim: usize,
    pub action_dim: usize,
    pub policy: Trainable,
    pub q1: Trainable,
    pub q2: Trainable,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: f64,
    pub alpha_opt: Adam,
    pub critic_updates: u64,
    pub policy_updates: u64,
}

impl Sac {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, cube: PoleCube, state_dim: usize, action_dim: usize, rng: &mut R) -> Self {
        let lr = cfg.learning_rate;
        let pspec = MlpSpec::new(state_dim, &cfg.hidden, 2 * action_dim);
        let qspec = MlpSpec::new(state_dim + action_dim, &cfg.hidden, 1);
        let policy = Trainable::new(Mlp::init(pspec, cfg.head_scale, rng), lr, None);
        let wd = Some(cfg.critic_weight_decay).filter(|w| *w > 0.0);
        let q1 = Trainable::new(Mlp::init(qspec.clone(), 1.0, rng), lr, wd);
        let q2 = Trainable::new(Mlp::init(qspec, 1.0, rng), lr, wd);
        let q1_target = q1.net.clone();
        let q2_target = q2.net.clone();
        let alpha_opt = Adam::new(1, lr, None);
        Sac {
            log_alpha: cfg.initial_log_alpha,
            cfg,
            cube,
            state_dim,
            action_dim,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            alpha_opt,
            critic_updates: 0,
            policy_updates: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        math::exp(self.log_alpha)
    }

    fn clamp(&self) -> (f64, f64) {
        (self.cfg.log_std_min, self.cfg.log_std_max)
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], deterministic: bool, rng: &mut R) -> Result<PolicyOutput> {
        policy_sample(&self.policy.net, state, 1, &self.cube, self.clamp(), deterministic, rng)
    }

    /// Replay actions (pole units) in normalised cube units.
    fn normalise_actions(&self, actions: &[f64]) -> Vec<f64> {
        actions.iter().map(|a| self.cube.to_unit(*a)).collect()
    }

    /// `y = r + gamma (1 - done) (min Q'(s', a') - alpha log pi(a'|s'))`.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f64>> {
        let n = batch.size;
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, have: 0 });
        }
        let next = policy_sample(&self.policy.net, &batch.next_states, n, &self.cube, self.clamp(), false, rng)?;
        let x = critic_input(&batch.next_states, &next.squashed, n);
        let q1 = self.q1_target.predict(&x, n)?;
        let q2 = self.q2_target.predict(&x, n)?;
        let alpha = self.alpha();
        Ok((0..n)
            .map(|i| {
                let soft = q1[i].min(q2[i]) - alpha * next.log_prob[i];
                batch.rewards[i] + self.cfg.gamma * (1.0 - batch.dones[i]) * soft
            })
            .collect())
    }

    pub fn update_critics<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(f64, f64)> {
        let y = self.critic_targets(batch, rng)?;
        let x = critic_input(&batch.states, &self.normalise_actions(&batch.actions), batch.size);
        let clip = self.cfg.grad_clip;
        let (l1, mut g1) = critic_loss_grad(&self.q1.net, &x, &y)?;
        self.q1.apply(&mut g1, clip);
        let (l2, mut g2) = critic_loss_grad(&self.q2.net, &x, &y)?;
        self.q2.apply(&mut g2, clip);
        self.critic_updates += 1;
        Ok((l1, l2))
    }

    /// Policy loss `E[alpha log pi(a|s) - min Q(s, a)]` for fixed standard
    /// normal `noise`, its parameter gradient and the batch `E[-log pi]`.
    pub fn policy_loss_grad(&self, states: &[f64], size: usize, noise: Vec<f64>) -> Result<(f64, Vec<f64>, f64)> {
        let dim = self.action_dim;
        let (head, pcache) = self.policy.net.forward(states, size)?;
        let sample = squash(&head, size, dim, noise, &self.cube, self.clamp());
        let x = critic_input(states, &sample.squashed, size);
        let (q1, c1) = self.q1.net.forward(&x, size)?;
        let (q2, c2) = self.q2.net.forward(&x, size)?;
        let inv_n = 1.0 / size as f64;
        let mut dy1 = vec![0.0; size];
        let mut dy2 = vec![0.0; size];
        let alpha = self.alpha();
        let mut loss = 0.0;
        let mut entropy = 0.0;
        for r in 0..size {
            let q = if q1[r] <= q2[r] {
                dy1[r] = -inv_n;
                q1[r]
            } else {
                dy2[r] = -inv_n;
                q2[r]
            };
            loss += alpha * sample.log_prob[r] - q;
            entropy -= sample.log_prob[r];
        }
        let ga = self.action_grad(&c1, &dy1, &c2, &dy2, size);
        let mut dhead = vec![0.0; size * 2 * dim];
        for r in 0..size {
            for i in 0..dim {
                let k = r * dim + i;
                let t = sample.squashed[k];
                let sigma = math::exp(sample.log_std[k]);
                let xi = sample.noise[k];
                // d log pi / du = 2 tanh(u); d log pi / d log_std has an extra -1.
                let du = ga[k] * (1.0 - t * t) + alpha * inv_n * 2.0 * t;
                dhead[r * 2 * dim + i] = du;
                if sample.log_std_free[k] {
                    dhead[r * 2 * dim + dim + i] = du * sigma * xi - alpha * inv_n;
                }
            }
        }
        let mut grads = vec![0.0; self.policy.net.num_params()];
        self.policy.net.backward(&pcache, &dhead, Some(&mut grads), false);
        Ok((loss * inv_n, grads, entropy * inv_n))
    }

    /// Reparameterised policy step followed by the temperature step.
    /// Returns (policy loss, temperature loss gradient, batch `E[-log pi]`).
    pub fn update_policy_and_alpha<R: Rng + ?Sized>(&mut self, states: &[f64], size: usize, rng: &mut R) -> Result<(f64, f64, f64)> {
        let noise = normal_noise(size * self.action_dim, rng);
        let (loss, mut grads, entropy) = self.policy_loss_grad(states, size, noise)?;
        self.policy.apply(&mut grads, self.cfg.grad_clip);

        // d/d(log alpha) of E[-alpha log pi - alpha * target].
        let alpha = self.alpha();
        let alpha_grad = alpha * (entropy - self.cfg.target_entropy);
        let mut la = [self.log_alpha];
        self.alpha_opt.update(&mut la, &[alpha_grad]);
        self.log_alpha = la[0];
        self.policy_updates += 1;
        Ok((loss, alpha_grad, entropy))
    }

    /// Gradient of the selected critic outputs with respect to the action
    /// columns of the critic input.
    fn action_grad(&self, c1: &ForwardCache, dy1: &[f64], c2: &ForwardCache, dy2: &[f64], size: usize) -> Vec<f64> {
        let sd = self.state_dim;
        let ad = self.action_dim;
        let g1 = self.q1.net.backward(c1, dy1, None, true).expect("input gradient");
        let g2 = self.q2.net.backward(c2, dy2, None, true).expect("input gradient");
        let mut out = Vec::with_capacity(size * ad);
        for r in 0..size {
            let base = r * (sd + ad) + sd;
            for i in 0..ad {
                out.push(g1[base + i] + g2[base + i]);
            }
        }
        out
    }

    pub fn polyak(&mut self) {
        let tau = self.cfg.polyak;
        self.q1_target.soft_update(&self.q1.net, tau);
        self.q2_target.soft_update(&self.q2.net, tau);
    }

    /// One critic update; every `policy_delay`-th call also updates the
    /// policy and temperature and moves the targets.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<Losses> {
        let (critic1, critic2) = self.update_critics(batch, rng)?;
        let mut losses = Losses { critic1, critic2, ..Losses::default() };
        if self.critic_updates % self.cfg.policy_delay.max(1) == 0 {
            let (p, a, h) = self.update_policy_and_alpha(&batch.states, batch.size, rng)?;
            self.polyak();
            losses.policy = Some(p);
            losses.alpha = Some(a);
            losses.entropy = Some(h);
        }
        Ok(losses)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub initial_sigma: f64,
    pub distance_threshold: f64,
    pub adaptation_rate: f64,
    pub distance_samples: usize,
    pub epsilon: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            initial_sigma: 1.0,
            distance_threshold: 0.10,
            adaptation_rate: 1.005,
            distance_samples: 1000,
            epsilon: 0.01,
        }
    }
}

/// Copy of `policy` with independent `N(0, sigma^2)` noise on every weight
/// and bias (layer-norm gains and offsets are left alone).
pub fn perturb_policy<R: Rng + ?Sized>(policy: &Mlp, sigma: f64, rng: &mut R) -> Mlp {
    let mut out = policy.clone();
    if sigma == 0.0 {
        return out;
    }
    let kinds = policy.param_kinds();
    for (p, k) in out.params_mut().iter_mut().zip(kinds) {
        if matches!(k, ParamKind::Weight | ParamKind::Bias) {
            *p += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// Root-mean-square difference of the squashed mean actions of two
/// policies over `size` states, in normalised cube units.
pub fn policy_distance(a: &Mlp, b: &Mlp, states: &[f64], size: usize, clamp: (f64, f64)) -> Result<f64> {
    let cube = PoleCube::default();
    let pa = policy_mean(a, states, size, &cube, clamp)?;
    let pb = policy_mean(b, states, size, &cube, clamp)?;
    let n = pa.squashed.len();
    let ss: f64 = pa.squashed.iter().zip(&pb.squashed).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(math::sqrt(ss / n as f64))
}

/// Grows `sigma` when the perturbation is below threshold, shrinks it
/// otherwise.
pub fn adapt_sigma(sigma: f64, distance: f64, cfg: &ExplorationConfig) -> f64 {
    if distance < cfg.distance_threshold {
        sigma * cfg.adaptation_rate
    } else {
        sigma / cfg.adaptation_rate
    }
}

/// Measures the perturbation on stored states and adapts `sigma`.
pub fn adapt_sigma_from_replay<R: Rng + ?Sized>(
    sigma: f64,
    policy: &Mlp,
    perturbed: &Mlp,
    replay: &Replay,
    cfg: &ExplorationConfig,
    clamp: (f64, f64),
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = cfg.distance_samples;
    let states = replay.sample_states(n, rng)?;
    let d = policy_distance(policy, perturbed, &states, n, clamp)?;
    Ok((adapt_sigma(sigma, d, cfg), d))
}

/// With probability `epsilon` a uniform point of the cube, otherwise a
/// sample of the (perturbed) policy. The flag reports the random branch.
pub fn explore_action<R: Rng + ?Sized>(
    state: &[f64],
    policy: &Mlp,
    cube: &PoleCube,
    clamp: (f64, f64),
    epsilon: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let dim = policy.output_dim() / 2;
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let a = (0..dim).map(|_| rng.random_range(cube.tau_min..cube.tau_max)).collect();
        return Ok((a, true));
    }
    let out = policy_sample(policy, state, 1, cube, clamp, false, rng)?;
    Ok((out.actions, false))
}
