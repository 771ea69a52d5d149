//! REINFORCE with a running-mean reward baseline, optimized with Adam.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{random_placement, ProblemInstance};
use crate::environment::{run_episode, ActionKind, Episode, EpisodeConfig, EvalConfig, LearnedPolicy, Mode};
use crate::error::{Error, Result};
use crate::math;
use crate::neuralnet::{Gradients, PolicyParams, Tensors};
use crate::simulator::{slr, LatencyModel, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    /// Episode length is `t_factor · |V|`.
    pub t_factor: usize,
    /// Evaluate on the held-out set every this many episodes; 0 disables.
    pub eval_every: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Execution noise used for rewards during training.
    pub noise: f64,
    pub plateau_stop: bool,
    pub action_kind: ActionKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            lr: 0.01,
            gamma: 0.97,
            t_factor: 2,
            eval_every: 50,
            seed: 0,
            objective: Objective::Makespan,
            noise: 0.0,
            plateau_stop: false,
            action_kind: ActionKind::TaskDevice,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidValue { field: "gamma", value: self.gamma });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidValue { field: "lr", value: self.lr });
        }
        if self.t_factor == 0 {
            return Err(Error::InvalidValue { field: "t_factor", value: 0.0 });
        }
        LatencyModel::new(self.noise)?;
        Ok(())
    }

    fn train_episode_config(&self, instance: &ProblemInstance) -> Result<EpisodeConfig> {
        Ok(EpisodeConfig {
            steps: Some(self.t_factor * instance.graph().num_tasks()),
            eval: EvalConfig { objective: self.objective, model: LatencyModel::new(self.noise)? },
            plateau_stop: self.plateau_stop,
        })
    }

    /// Held-out searches are always noise-free with the default `2|V|` budget.
    fn eval_episode_config(&self) -> EpisodeConfig {
        EpisodeConfig { steps: None, eval: EvalConfig::exact(self.objective), plateau_stop: self.plateau_stop }
    }
}

/// Per-step multipliers `γ^t (G_t − b_t)` where `G_t` is the discounted
/// return from `t` and `b_t` the mean of the rewards before `t` (`b_0 = 0`).
pub fn reinforce_coefficients(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = alloc::vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    let mut prefix = 0.0;
    let mut discount = 1.0;
    let mut out = Vec::with_capacity(rewards.len());
    for t in 0..rewards.len() {
        let baseline = if t == 0 { 0.0 } else { prefix / t as f64 };
        out.push(discount * (returns[t] - baseline));
        prefix += rewards[t];
        discount *= gamma;
    }
    out
}

/// Policy-gradient estimate for one episode run in [`Mode::Train`]; the
/// optimizer should follow it uphill.
pub fn reinforce_gradient(episode: &Episode, gamma: f64) -> Result<Gradients> {
    let coefficients = reinforce_coefficients(&episode.rewards(), gamma);
    let mut total = Tensors::zeros();
    for (t, (c, grad)) in coefficients.iter().zip(&episode.grad_log_probs).enumerate() {
        let grad = grad.as_ref().ok_or(Error::MissingGradientContext(t))?;
        total.add_scaled(grad, *c);
    }
    Ok(total)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensors,
    pub v: Tensors,
    pub step: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self { m: Tensors::zeros(), v: Tensors::zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update in the ascent direction. Parameters and
/// state are left untouched if the gradient is not finite.
pub fn adam_step(params: &mut Tensors, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    grads.check_finite()?;
    state.step += 1;
    let c1 = 1.0 - math::powi(ADAM_BETA1, state.step as i32);
    let c2 = 1.0 - math::powi(ADAM_BETA2, state.step as i32);
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (i, (p, &g)) in params.as_mut_slice().iter_mut().zip(grads.as_slice()).enumerate() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p += lr * m_hat / (math::sqrt(v_hat) + ADAM_EPSILON);
    }
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    pub instance_id: usize,
    /// Undiscounted sum of rewards.
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// Best objective of the episode over the critical-path bound.
    pub final_slr: f64,
    pub eval_slr: Option<f64>,
}

/// Random stream used for the `i`-th held-out instance; disjoint from the
/// per-episode training streams.
pub fn eval_stream(i: usize) -> u64 {
    (1 << 40) + i as u64
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean best-so-far normalized objective of sampled searches from seeded
/// random initial placements.
pub fn evaluate_policy(
    params: &PolicyParams,
    kind: ActionKind,
    instances: &[ProblemInstance],
    config: &EpisodeConfig,
    mode: Mode,
    seed: u64,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let policy = LearnedPolicy::new(params, kind);
    let mut total = 0.0;
    for (i, instance) in instances.iter().enumerate() {
        let mut rng = stream_rng(seed, eval_stream(i));
        let initial = random_placement(instance, &mut rng);
        let episode = run_episode(instance, initial, &policy, config, mode, &mut rng)?;
        total += slr(episode.outcome.best_objective, instance)?;
    }
    Ok(total / instances.len() as f64)
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub params: PolicyParams,
    pub adam: AdamState,
    pub next_episode: usize,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(config: TrainConfig, params: PolicyParams) -> Result<Self> {
        config.validate()?;
        Ok(Self { params, adam: AdamState::default(), next_episode: 0, config })
    }

    pub fn is_done(&self) -> bool {
        self.next_episode >= self.config.episodes
    }

    /// Runs one training episode and, when due, a held-out evaluation.
    pub fn step(&mut self, train: &[ProblemInstance], held_out: &[ProblemInstance]) -> Result<TrainLogRow> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let episode = self.next_episode;
        let mut rng = stream_rng(self.config.seed, episode as u64);
        let instance_id = rng.gen_range(0..train.len());
        let instance = &train[instance_id];
        let initial = random_placement(instance, &mut rng);
        let config = self.config.train_episode_config(instance)?;
        let policy = LearnedPolicy::new(&self.params, self.config.action_kind);
        let run = run_episode(instance, initial, &policy, &config, Mode::Train, &mut rng)?;
        let grads = reinforce_gradient(&run, self.config.gamma)?;
        adam_step(&mut self.params.weights, &grads, &mut self.adam, self.config.lr)?;
        self.next_episode += 1;

        let eval_due = self.config.eval_every > 0
            && (self.next_episode % self.config.eval_every == 0 || self.is_done())
            && !held_out.is_empty();
        let eval_slr = if eval_due { Some(self.evaluate(held_out)?) } else { None };
        Ok(TrainLogRow {
            episode,
            instance_id,
            episode_return: run.rewards().iter().sum(),
            final_slr: slr(run.outcome.best_objective, instance)?,
            eval_slr,
        })
    }

    pub fn evaluate(&self, held_out: &[ProblemInstance]) -> Result<f64> {
        let config = self.config.eval_episode_config();
        evaluate_policy(&self.params, self.config.action_kind, held_out, &config, Mode::Sample, self.config.seed)
    }
}

/// Trains from scratch for `config.episodes` episodes.
pub fn train(
    config: TrainConfig,
    params: PolicyParams,
    train: &[ProblemInstance],
    held_out: &[ProblemInstance],
) -> Result<(Trainer, Vec<TrainLogRow>)> {
    let mut trainer = Trainer::new(config, params)?;
    let mut log = Vec::with_capacity(config.episodes);
    while !trainer.is_done() {
        log.push(trainer.step(train, held_out)?);
    }
    Ok((trainer, log))
}
