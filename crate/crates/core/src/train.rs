//! The training loop: domain-randomised episodes, parameter-noise and
//! epsilon-greedy exploration, replay-fed SAC updates, and paired
//! deterministic replays of the learned and fixed-pole controllers on every
//! training episode.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bier::{Replay, Ring, Transition};
use crate::checkpoint::{record_segment, FlatArchive, Segment, SegmentSink};
use crate::config::RunConfig;
use crate::control::{PoleAction, ACTION_DIM};
use crate::dynamics::{Plant, PlantParams};
use crate::env::{Episode, EpisodeSpec, STATE_DIM};
use crate::error::{Error, Result};
use crate::eval::Controller;
use crate::math::KahanSum;
use crate::nn::{Adam, Mlp, Trainable};
use crate::sac::{adapt_sigma_from_replay, explore_action, perturb_policy, Sac};

const STREAM_ENV: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_INIT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// 1-based episode number.
    pub episode: u64,
    pub config_id: u8,
    /// Steps actually simulated (short only after a numeric failure).
    pub steps: usize,
    /// True while actions were uniform warm-up draws.
    pub warmup: bool,
    /// Mean per-step reward of the exploring rollout.
    pub reward: f64,
    /// Mean error norm of the exploring rollout.
    pub rmse: f64,
    /// Deterministic learned controller replayed on the same episode.
    pub lb_reward: f64,
    pub lb_rmse: f64,
    /// Fixed-pole controller replayed on the same episode.
    pub mb_reward: f64,
    pub mb_rmse: f64,
    /// Moving averages over the last `curve_window` episodes.
    pub reward_ma: f64,
    pub lb_reward_ma: f64,
    pub mb_reward_ma: f64,
    pub sigma: f64,
    pub distance: Option<f64>,
    pub alpha: f64,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub updates: u64,
}

impl CurveRow {
    pub fn header() -> [&'static str; 22] {
        [
            "episode", "config", "steps", "warmup", "reward", "rmse", "lb_reward", "lb_rmse", "mb_reward", "mb_rmse",
            "reward_ma", "lb_reward_ma", "mb_reward_ma", "sigma", "distance", "alpha", "critic_loss", "policy_loss",
            "entropy", "updates", "lb_minus_mb", "lb_minus_mb_ma",
        ]
    }

    /// Values in [`CurveRow::header`] order; `None` is left empty.
    pub fn fields(&self) -> [Option<f64>; 22] {
        [
            Some(self.episode as f64),
            Some(self.config_id as f64),
            Some(self.steps as f64),
            Some(if self.warmup { 1.0 } else { 0.0 }),
            Some(self.reward),
            Some(self.rmse),
            Some(self.lb_reward),
            Some(self.lb_rmse),
            Some(self.mb_reward),
            Some(self.mb_rmse),
            Some(self.reward_ma),
            Some(self.lb_reward_ma),
            Some(self.mb_reward_ma),
            Some(self.sigma),
            self.distance,
            Some(self.alpha),
            self.critic_loss,
            self.policy_loss,
            self.entropy,
            Some(self.updates as f64),
            Some(self.lb_reward - self.mb_reward),
            Some(self.lb_reward_ma - self.mb_reward_ma),
        ]
    }
}

/// Mean per-step reward (missing steps count as zero) and mean error norm
/// of one rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutScore {
    pub reward: f64,
    pub rmse: f64,
    pub steps: usize,
}

/// Runs `controller` without exploration on the episode described by
/// `spec`. A numeric failure ends the rollout early.
pub fn replay_episode(plant: &Plant, spec: &EpisodeSpec, controller: &Controller<'_>, cfg: &RunConfig) -> Result<RolloutScore> {
    let len = cfg.env.episode_len;
    let mut ep = Episode::from_spec(plant.clone(), spec, len, &cfg.poles);
    let (mut r, mut e) = (KahanSum::default(), KahanSum::default());
    let mut steps = 0;
    for _ in 0..len {
        let action = controller.act(&ep.state_vector())?;
        match ep.step(&action) {
            Ok(out) => {
                r.add(out.reward);
                e.add(out.observation.e_l2());
                steps += 1;
            }
            Err(_) => break,
        }
    }
    Ok(RolloutScore { reward: r.value() / len as f64, rmse: if steps > 0 { e.value() / steps as f64 } else { f64::NAN }, steps })
}

/// Scalar trainer state stored next to the flat archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerManifest {
    pub episode: u64,
    pub total_steps: u64,
    pub sigma: f64,
    pub log_alpha: f64,
    pub critic_updates: u64,
    pub policy_updates: u64,
    pub policy_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
    pub alpha_opt: Adam,
    pub env_rng: ChaCha8Rng,
    pub explore_rng: ChaCha8Rng,
    pub train_rng: ChaCha8Rng,
    pub replay_rewards: Option<(KahanSum, u64)>,
    pub mb_action: PoleAction,
    pub history: Vec<CurveRow>,
    pub segments: Vec<Segment>,
}

pub struct Trainer {
    pub cfg: RunConfig,
    plant: Plant,
    pub mb_action: PoleAction,
    pub sac: Sac,
    pub replay: Replay,
    pub sigma: f64,
    /// Completed episodes.
    pub episode: u64,
    pub total_steps: u64,
    pub env_rng: ChaCha8Rng,
    pub explore_rng: ChaCha8Rng,
    pub train_rng: ChaCha8Rng,
    pub history: Vec<CurveRow>,
}

#[derive(Default)]
struct LossTally {
    critic: KahanSum,
    critic_n: u64,
    policy: KahanSum,
    policy_n: u64,
    entropy: Option<f64>,
}

impl LossTally {
    fn mean(sum: &KahanSum, n: u64) -> Option<f64> {
        (n > 0).then(|| sum.value() / n as f64)
    }
}

impl Trainer {
    /// Fresh trainer; `mb_action` is the fixed-pole controller replayed on
    /// every episode for comparison.
    pub fn new(cfg: RunConfig, mb_action: PoleAction) -> Result<Self> {
        cfg.validate()?;
        let plant = cfg.plant.build()?;
        let mut init = stream(cfg.seed, STREAM_INIT);
        let sac = Sac::new(cfg.sac.clone(), cfg.poles, STATE_DIM, ACTION_DIM, &mut init);
        Ok(Trainer {
            plant,
            mb_action,
            sac,
            replay: cfg.replay.build(),
            sigma: cfg.exploration.initial_sigma,
            episode: 0,
            total_steps: 0,
            env_rng: stream(cfg.seed, STREAM_ENV),
            explore_rng: stream(cfg.seed, STREAM_EXPLORE),
            train_rng: stream(cfg.seed, STREAM_TRAIN),
            history: Vec::new(),
            cfg,
        })
    }

    pub fn finished(&self) -> bool {
        self.episode >= self.cfg.train.episodes as u64
    }

    fn learning(&self) -> bool {
        self.total_steps >= self.cfg.sac.replay_start as u64
    }

    fn clamp(&self) -> (f64, f64) {
        (self.cfg.sac.log_std_min, self.cfg.sac.log_std_max)
    }

    fn episode_plant(&self, spec: &EpisodeSpec) -> Result<Plant> {
        match spec.plant_seed {
            Some(seed) => Plant::new(PlantParams::perturbed(seed)),
            None => Ok(self.plant.clone()),
        }
    }

    fn update(&mut self, tally: &mut LossTally) -> Result<()> {
        for _ in 0..self.cfg.sac.updates_per_step {
            let batch = match self.replay.sample(self.cfg.sac.batch_size, &mut self.train_rng) {
                Ok(b) => b,
                Err(Error::InsufficientData { .. }) => return Ok(()),
                Err(e) => return Err(e),
            };
            let l = self.sac.train_step(&batch, &mut self.train_rng)?;
            tally.critic.add(0.5 * (l.critic1 + l.critic2));
            tally.critic_n += 1;
            if let Some(p) = l.policy {
                tally.policy.add(p);
                tally.policy_n += 1;
                tally.entropy = l.entropy;
            }
        }
        Ok(())
    }

    fn moving_average(&self, current: f64, pick: impl Fn(&CurveRow) -> f64) -> f64 {
        let w = self.cfg.train.curve_window;
        let past = self.history.len().min(w - 1);
        let mut s = KahanSum::default();
        for row in &self.history[self.history.len() - past..] {
            s.add(pick(row));
        }
        s.add(current);
        s.value() / (past + 1) as f64
    }

    /// Runs one training episode and its two comparison replays.
    pub fn run_episode(&mut self) -> Result<CurveRow> {
        let spec = EpisodeSpec::sample(&self.cfg.env, &mut self.env_rng);
        let plant = self.episode_plant(&spec)?;
        let cube = self.cfg.poles;
        let clamp = self.clamp();
        let warmup = !self.learning();
        let sigma = self.sigma;
        let mut distance = None;
        let perturbed = if warmup {
            None
        } else {
            let p = perturb_policy(&self.sac.policy.net, sigma, &mut self.explore_rng);
            let measured = adapt_sigma_from_replay(
                sigma,
                &self.sac.policy.net,
                &p,
                &self.replay,
                &self.cfg.exploration,
                clamp,
                &mut self.explore_rng,
            );
            match measured {
                Ok((s, d)) => {
                    self.sigma = s;
                    distance = Some(d);
                }
                Err(Error::InsufficientData { .. }) => {}
                Err(e) => return Err(e),
            }
            Some(p)
        };

        let len = self.cfg.env.episode_len;
        let mut ep = Episode::from_spec(plant.clone(), &spec, len, &cube);
        let (mut r, mut e) = (KahanSum::default(), KahanSum::default());
        let mut tally = LossTally::default();
        let mut steps = 0;
        for k in 0..len {
            let state = ep.state_vector();
            let action: Vec<f64> = match &perturbed {
                Some(p) => {
                    explore_action(&state, p, &cube, clamp, self.cfg.exploration.epsilon, &mut self.explore_rng)?.0
                }
                None => (0..ACTION_DIM).map(|_| self.explore_rng.random_range(cube.tau_min..cube.tau_max)).collect(),
            };
            let out = match ep.step(&PoleAction::from_slice(&action)?) {
                Ok(o) => o,
                Err(_) => break,
            };
            steps += 1;
            r.add(out.reward);
            e.add(out.observation.e_l2());
            self.replay.insert(Transition {
                state,
                action,
                reward: out.reward,
                next_state: ep.state_vector(),
                done: false,
                episode_id: self.episode,
                step_index: k as u64,
            });
            self.total_steps += 1;
            if self.learning() {
                self.update(&mut tally)?;
            }
        }

        let lb = replay_episode(
            &plant,
            &spec,
            &Controller::Policy { net: &self.sac.policy.net, cube, clamp },
            &self.cfg,
        )?;
        let mb = replay_episode(&plant, &spec, &Controller::Fixed(self.mb_action), &self.cfg)?;
        let reward = r.value() / len as f64;
        let row = CurveRow {
            episode: self.episode + 1,
            config_id: spec.config.id(),
            steps,
            warmup,
            reward,
            rmse: if steps > 0 { e.value() / steps as f64 } else { f64::NAN },
            lb_reward: lb.reward,
            lb_rmse: lb.rmse,
            mb_reward: mb.reward,
            mb_rmse: mb.rmse,
            reward_ma: self.moving_average(reward, |h| h.reward),
            lb_reward_ma: self.moving_average(lb.reward, |h| h.lb_reward),
            mb_reward_ma: self.moving_average(mb.reward, |h| h.mb_reward),
            sigma,
            distance,
            alpha: self.sac.alpha(),
            critic_loss: LossTally::mean(&tally.critic, tally.critic_n),
            policy_loss: LossTally::mean(&tally.policy, tally.policy_n),
            entropy: tally.entropy,
            updates: self.sac.critic_updates,
        };
        self.episode += 1;
        self.history.push(row.clone());
        Ok(row)
    }

    fn write_transitions(ring: &Ring<Transition>, name: &str, sink: &mut dyn SegmentSink) -> Result<()> {
        let mut buf = Vec::with_capacity(2 * STATE_DIM + ACTION_DIM + 4);
        for t in ring.iter() {
            buf.clear();
            buf.extend_from_slice(&t.state);
            buf.extend_from_slice(&t.action);
            buf.push(t.reward);
            buf.extend_from_slice(&t.next_state);
            buf.push(if t.done { 1.0 } else { 0.0 });
            buf.push(t.episode_id as f64);
            buf.push(t.step_index as f64);
            sink.write(name, &buf)?;
        }
        Ok(())
    }

    fn read_transitions(values: &[f64], capacity: usize) -> Result<Ring<Transition>> {
        let width = 2 * STATE_DIM + ACTION_DIM + 4;
        if values.len() % width != 0 {
            return Err(Error::ShapeMismatch { expected: values.len() / width * width, got: values.len() });
        }
        let mut ring = Ring::new(capacity);
        for row in values.chunks_exact(width) {
            let (state, rest) = row.split_at(STATE_DIM);
            let (action, rest) = rest.split_at(ACTION_DIM);
            let (next_state, tail) = rest[1..].split_at(STATE_DIM);
            ring.push(Transition {
                state: state.to_vec(),
                action: action.to_vec(),
                reward: rest[0],
                next_state: next_state.to_vec(),
                done: tail[0] != 0.0,
                episode_id: tail[1] as u64,
                step_index: tail[2] as u64,
            });
        }
        Ok(ring)
    }

    fn write_trainable(t: &Trainable, name: &str, sink: &mut dyn SegmentSink) -> Result<()> {
        sink.write(name, t.net.params())?;
        sink.write(&alloc::format!("{name}.adam_m"), &t.opt.m)?;
        sink.write(&alloc::format!("{name}.adam_v"), &t.opt.v)
    }

    fn read_trainable(t: &mut Trainable, opt: &Adam, name: &str, archive: &FlatArchive) -> Result<()> {
        let n = t.net.num_params();
        t.net.params_mut().copy_from_slice(archive.get_len(name, n)?);
        t.opt = opt.clone();
        t.opt.m = archive.get_len(&alloc::format!("{name}.adam_m"), n)?.to_vec();
        t.opt.v = archive.get_len(&alloc::format!("{name}.adam_v"), n)?.to_vec();
        Ok(())
    }

    fn read_net(net: &mut Mlp, name: &str, archive: &FlatArchive) -> Result<()> {
        let n = net.num_params();
        net.params_mut().copy_from_slice(archive.get_len(name, n)?);
        Ok(())
    }

    /// Streams every array of the trainer into `sink` and returns the
    /// manifest describing them.
    pub fn checkpoint(&self, sink: &mut dyn SegmentSink) -> Result<TrainerManifest> {
        struct Recording<'a> {
            inner: &'a mut dyn SegmentSink,
            segments: Vec<Segment>,
        }
        impl SegmentSink for Recording<'_> {
            fn write(&mut self, name: &str, values: &[f64]) -> Result<()> {
                record_segment(&mut self.segments, name, values.len());
                self.inner.write(name, values)
            }
        }
        let mut rec = Recording { inner: sink, segments: Vec::new() };
        Self::write_trainable(&self.sac.policy, "policy", &mut rec)?;
        Self::write_trainable(&self.sac.q1, "q1", &mut rec)?;
        Self::write_trainable(&self.sac.q2, "q2", &mut rec)?;
        rec.write("q1_target", self.sac.q1_target.params())?;
        rec.write("q2_target", self.sac.q2_target.params())?;
        rec.write("alpha.adam_m", &self.sac.alpha_opt.m)?;
        rec.write("alpha.adam_v", &self.sac.alpha_opt.v)?;
        let replay_rewards = match &self.replay {
            Replay::Bier(b) => {
                rec.write("replay.b1", &[])?;
                Self::write_transitions(&b.b1, "replay.b1", &mut rec)?;
                rec.write("replay.b2", &[])?;
                Self::write_transitions(&b.b2, "replay.b2", &mut rec)?;
                Some((b.reward_sum, b.reward_count))
            }
            Replay::Uniform(u) => {
                rec.write("replay.uniform", &[])?;
                Self::write_transitions(&u.buffer, "replay.uniform", &mut rec)?;
                None
            }
        };
        Ok(TrainerManifest {
            episode: self.episode,
            total_steps: self.total_steps,
            sigma: self.sigma,
            log_alpha: self.sac.log_alpha,
            critic_updates: self.sac.critic_updates,
            policy_updates: self.sac.policy_updates,
            policy_opt: self.sac.policy.opt.clone(),
            q1_opt: self.sac.q1.opt.clone(),
            q2_opt: self.sac.q2.opt.clone(),
            alpha_opt: self.sac.alpha_opt.clone(),
            env_rng: self.env_rng.clone(),
            explore_rng: self.explore_rng.clone(),
            train_rng: self.train_rng.clone(),
            replay_rewards,
            mb_action: self.mb_action,
            history: self.history.clone(),
            segments: rec.segments,
        })
    }

    /// Rebuilds a trainer from `cfg` and a checkpoint written by
    /// [`Trainer::checkpoint`].
    pub fn restore(cfg: RunConfig, manifest: &TrainerManifest, archive: &FlatArchive) -> Result<Self> {
        let mut t = Trainer::new(cfg, manifest.mb_action)?;
        let m = manifest;
        Self::read_trainable(&mut t.sac.policy, &m.policy_opt, "policy", archive)?;
        Self::read_trainable(&mut t.sac.q1, &m.q1_opt, "q1", archive)?;
        Self::read_trainable(&mut t.sac.q2, &m.q2_opt, "q2", archive)?;
        Self::read_net(&mut t.sac.q1_target, "q1_target", archive)?;
        Self::read_net(&mut t.sac.q2_target, "q2_target", archive)?;
        t.sac.alpha_opt = m.alpha_opt.clone();
        t.sac.alpha_opt.m = archive.get_len("alpha.adam_m", 1)?.to_vec();
        t.sac.alpha_opt.v = archive.get_len("alpha.adam_v", 1)?.to_vec();
        t.sac.log_alpha = m.log_alpha;
        t.sac.critic_updates = m.critic_updates;
        t.sac.policy_updates = m.policy_updates;
        match (&mut t.replay, m.replay_rewards) {
            (Replay::Bier(b), Some((sum, count))) => {
                b.b1 = Self::read_transitions(archive.get("replay.b1")?, b.b1.capacity())?;
                b.b2 = Self::read_transitions(archive.get("replay.b2")?, b.b2.capacity())?;
                b.reward_sum = sum;
                b.reward_count = count;
            }
            (Replay::Uniform(u), None) => {
                u.buffer = Self::read_transitions(archive.get("replay.uniform")?, u.buffer.capacity())?;
            }
            _ => return Err(Error::Config(String::from("checkpoint replay kind differs from the config"))),
        }
        t.episode = m.episode;
        t.total_steps = m.total_steps;
        t.sigma = m.sigma;
        t.env_rng = m.env_rng.clone();
        t.explore_rng = m.explore_rng.clone();
        t.train_rng = m.train_rng.clone();
        t.history = m.history.clone();
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.seed = 3;
        c.sac.hidden = alloc::vec![8, 8];
        c.sac.batch_size = 8;
        c.sac.replay_start = 40;
        c.replay.sequence_length = 2;
        c.exploration.distance_samples = 16;
        c.env.episode_len = 30;
        c.env.switch_window = [5, 20];
        c.train.episodes = 4;
        c.train.curve_window = 2;
        c
    }

    fn action() -> PoleAction {
        PoleAction::uniform(1.0)
    }

    #[test]
    fn warmup_then_learning() {
        let mut t = Trainer::new(tiny(), action()).unwrap();
        let rows: Vec<CurveRow> = (0..4).map(|_| t.run_episode().unwrap()).collect();
        assert!(rows[0].warmup && !rows[3].warmup);
        assert!(rows[0].critic_loss.is_none());
        assert!(rows[3].critic_loss.is_some());
        assert!(rows[3].distance.is_some());
        assert_eq!(t.total_steps, 120);
        assert!(t.finished());
        assert_eq!(rows[1].mb_reward_ma, 0.5 * (rows[0].mb_reward + rows[1].mb_reward));
    }

    #[test]
    fn checkpoint_round_trip_continues_identically() {
        let mut a = Trainer::new(tiny(), action()).unwrap();
        a.run_episode().unwrap();
        a.run_episode().unwrap();
        let mut archive = FlatArchive::default();
        let manifest = a.checkpoint(&mut archive).unwrap();
        assert_eq!(manifest.segments, archive.segments);
        let mut b = Trainer::restore(tiny(), &manifest, &archive).unwrap();
        for _ in 0..2 {
            assert_eq!(a.run_episode().unwrap(), b.run_episode().unwrap());
        }
        assert_eq!(a.sac.policy.net.params(), b.sac.policy.net.params());
    }

    #[test]
    fn fixed_replay_is_deterministic() {
        let cfg = tiny();
        let plant = cfg.plant.build().unwrap();
        let spec = EpisodeSpec::sample(&cfg.env, &mut stream(1, 1));
        let c = Controller::Fixed(action());
        let a = replay_episode(&plant, &spec, &c, &cfg).unwrap();
        assert_eq!(a, replay_episode(&plant, &spec, &c, &cfg).unwrap());
        assert_eq!(a.steps, 30);
        assert!(a.reward > 0.0 && a.reward <= 1.0);
    }
}
