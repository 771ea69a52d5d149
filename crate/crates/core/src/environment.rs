//! Placement search as an MDP: a state is a complete feasible placement, an
//! action moves one task to one of its feasible devices, and the reward is the
//! drop in the objective.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::eft_device_for;
use crate::domain::{DeviceId, Placement, ProblemInstance, TaskId};
use crate::error::{Error, Result};
use crate::gpnet::{build_gpnet, build_pivot_net};
use crate::neuralnet::{forward, Gradients, PolicyParams};
use crate::simulator::{simulate, LatencyModel, Objective, SimTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    pub task: TaskId,
    pub device: DeviceId,
}

/// All feasible (task, device) pairs in lexicographic order, which is also
/// the node order of the gpNet.
pub fn action_space(instance: &ProblemInstance) -> Vec<Action> {
    (0..instance.graph().num_tasks())
        .flat_map(|task| {
            let devices = instance.feasible_devices(task).expect("task ids are dense");
            devices.iter().map(move |&device| Action { task, device })
        })
        .collect()
}

/// How states are scored during a search.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalConfig {
    pub objective: Objective,
    pub model: LatencyModel,
}

impl EvalConfig {
    pub fn exact(objective: Objective) -> Self {
        Self { objective, model: LatencyModel::EXACT }
    }
}

/// One point of the search: the current placement and its bookkeeping.
#[derive(Debug, Clone)]
pub struct SearchState<'a> {
    instance: &'a ProblemInstance,
    placement: Placement,
    objective: f64,
    trace: SimTrace,
    last_moved: Option<TaskId>,
    step: usize,
    best: Placement,
    best_objective: f64,
}

impl<'a> SearchState<'a> {
    pub fn new<R: Rng + ?Sized>(
        instance: &'a ProblemInstance,
        placement: Placement,
        eval: EvalConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (objective, trace) = evaluate(instance, &placement, eval, rng)?;
        Ok(Self {
            instance,
            best: placement.clone(),
            placement,
            objective,
            trace,
            last_moved: None,
            step: 0,
            best_objective: objective,
        })
    }

    pub fn instance(&self) -> &'a ProblemInstance {
        self.instance
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    /// `ρ(s_t)` as observed when the state was entered.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Noise-free trace of the current placement.
    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn last_moved(&self) -> Option<TaskId> {
        self.last_moved
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn best(&self) -> (&Placement, f64) {
        (&self.best, self.best_objective)
    }

    /// Whether `action` is allowed: it must change the placement and must not
    /// move the task moved by the previous step.
    pub fn allows(&self, action: Action) -> bool {
        action.device != self.placement.device_of(action.task) && Some(action.task) != self.last_moved
    }

    /// Allowed flags aligned with [`action_space`].
    pub fn action_mask(&self) -> Result<Vec<bool>> {
        let mask: Vec<bool> = action_space(self.instance).into_iter().map(|a| self.allows(a)).collect();
        if mask.iter().any(|&m| m) {
            Ok(mask)
        } else {
            Err(Error::AllActionsMasked)
        }
    }

    /// Applies an allowed action and returns `ρ(s_t) - ρ(s_{t+1})`.
    pub fn step<R: Rng + ?Sized>(&mut self, action: Action, eval: EvalConfig, rng: &mut R) -> Result<f64> {
        if !self.allows(action) {
            return Err(Error::MaskedAction { task: action.task, device: action.device });
        }
        self.apply(action, eval, rng)
    }

    /// Like [`step`](Self::step) but only requires feasibility, so a move can
    /// leave the placement unchanged.
    pub fn apply<R: Rng + ?Sized>(&mut self, action: Action, eval: EvalConfig, rng: &mut R) -> Result<f64> {
        if !self.instance.is_feasible_pair(action.task, action.device) {
            return Err(Error::Infeasible { task: action.task, device: action.device });
        }
        self.placement.set(action.task, action.device);
        let (objective, trace) = evaluate(self.instance, &self.placement, eval, rng)?;
        let reward = self.objective - objective;
        self.objective = objective;
        self.trace = trace;
        self.last_moved = Some(action.task);
        self.step += 1;
        if objective < self.best_objective {
            self.best_objective = objective;
            self.best = self.placement.clone();
        }
        Ok(reward)
    }
}

/// Objective value of `placement` together with its noise-free trace.
fn evaluate<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    placement: &Placement,
    eval: EvalConfig,
    rng: &mut R,
) -> Result<(f64, SimTrace)> {
    let trace = simulate(instance, placement, LatencyModel::EXACT, rng)?;
    let objective = match eval.objective {
        Objective::Makespan if eval.model.noise() == 0.0 => trace.makespan,
        other => other.evaluate(instance, placement, eval.model, rng)?,
    };
    Ok((objective, trace))
}

/// How a policy picks among its options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sample and return the gradient of the chosen action's log-probability.
    Train,
    Sample,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub action: Action,
    pub grad_log_prob: Option<Gradients>,
}

pub trait Policy {
    fn decide<R: Rng + ?Sized>(&self, state: &SearchState<'_>, mode: Mode, rng: &mut R) -> Result<Decision>;

    /// False for policies whose moves may be no-ops (they are then applied
    /// without the action mask check).
    fn respects_mask(&self) -> bool {
        true
    }
}

/// Uniform choice among allowed actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn decide<R: Rng + ?Sized>(&self, state: &SearchState<'_>, _mode: Mode, rng: &mut R) -> Result<Decision> {
        let actions = action_space(state.instance());
        let allowed: Vec<Action> = actions.into_iter().filter(|&a| state.allows(a)).collect();
        if allowed.is_empty() {
            return Err(Error::AllActionsMasked);
        }
        Ok(Decision { action: allowed[rng.gen_range(0..allowed.len())], grad_log_prob: None })
    }
}

/// What a learned policy chooses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    /// A (task, device) pair, scored on the full gpNet.
    #[default]
    TaskDevice,
    /// A task only, scored on the pivot subgraph; the device is picked by
    /// earliest finish time.
    TaskEft,
}

/// Softmax policy over per-node network scores.
#[derive(Debug, Clone, Copy)]
pub struct LearnedPolicy<'p> {
    pub params: &'p PolicyParams,
    pub kind: ActionKind,
}

impl<'p> LearnedPolicy<'p> {
    pub fn new(params: &'p PolicyParams, kind: ActionKind) -> Self {
        Self { params, kind }
    }
}

impl Policy for LearnedPolicy<'_> {
    fn decide<R: Rng + ?Sized>(&self, state: &SearchState<'_>, mode: Mode, rng: &mut R) -> Result<Decision> {
        let instance = state.instance();
        let (net, mask, labels) = match self.kind {
            ActionKind::TaskDevice => {
                let net = build_gpnet(instance, state.placement(), state.trace())?;
                let labels = action_space(instance);
                (net, state.action_mask()?, labels)
            }
            ActionKind::TaskEft => {
                let net = build_pivot_net(instance, state.placement(), state.trace())?;
                let n = instance.graph().num_tasks();
                let mask: Vec<bool> = (0..n).map(|t| Some(t) != state.last_moved()).collect();
                if !mask.iter().any(|&m| m) {
                    return Err(Error::AllActionsMasked);
                }
                let labels = (0..n).map(|task| Action { task, device: state.placement().device_of(task) }).collect();
                (net, mask, labels)
            }
        };
        let pass = forward(&net, self.params)?;
        let probs = masked_softmax(pass.scores(), &mask);
        let chosen = match mode {
            Mode::Greedy => argmax(pass.scores(), &mask),
            Mode::Train | Mode::Sample => sample_index(&probs, &mask, rng),
        };
        let grad_log_prob = if mode == Mode::Train {
            let upstream: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(b, &p)| if !mask[b] { 0.0 } else if b == chosen { 1.0 - p } else { -p })
                .collect();
            Some(pass.backward(&net, self.params, &upstream)?)
        } else {
            None
        };
        let mut action = labels[chosen];
        if self.kind == ActionKind::TaskEft {
            action.device = eft_device_for(instance, state.placement(), state.trace(), action.task)?;
        }
        Ok(Decision { action, grad_log_prob })
    }

    fn respects_mask(&self) -> bool {
        self.kind == ActionKind::TaskDevice
    }
}

/// `exp(q_a) / Σ_b exp(q_b)` over allowed entries; masked entries get 0.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&q, _)| q)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&q, &m)| if m { crate::math::exp(q - max) } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

fn argmax(scores: &[f64], mask: &[bool]) -> usize {
    let mut best = None;
    for (i, (&q, &m)) in scores.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b: usize| q > scores[b]) {
            best = Some(i);
        }
    }
    best.expect("mask has an allowed entry")
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], mask: &[bool], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, (&p, &m)) in probs.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub action: Action,
    pub reward: f64,
    pub objective: f64,
    pub best: f64,
}

/// Best-so-far summary shared by every search procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub initial_objective: f64,
    pub best_placement: Placement,
    pub best_objective: f64,
    /// Best objective after each step; entry 0 is the initial placement.
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
    /// `∇ log π(a_t | s_t)` per step when run in [`Mode::Train`].
    pub grad_log_probs: Vec<Option<Gradients>>,
    pub outcome: SearchOutcome,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Number of search steps; `None` means `2|V|`.
    pub steps: Option<usize>,
    pub eval: EvalConfig,
    /// Stop early once the objective has stayed within a relative band of
    /// `PLATEAU_TOLERANCE` for `PLATEAU_WINDOW` consecutive states.
    pub plateau_stop: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { steps: None, eval: EvalConfig::default(), plateau_stop: false }
    }
}

pub const PLATEAU_WINDOW: usize = 5;
pub const PLATEAU_TOLERANCE: f64 = 1e-3;

impl EpisodeConfig {
    pub fn horizon(&self, instance: &ProblemInstance) -> usize {
        self.steps.unwrap_or(2 * instance.graph().num_tasks())
    }
}

fn plateaued(history: &[f64]) -> bool {
    if history.len() < PLATEAU_WINDOW {
        return false;
    }
    let window = &history[history.len() - PLATEAU_WINDOW..];
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= PLATEAU_TOLERANCE * lo.abs()
}

/// Runs one search episode from `initial`.
pub fn run_episode<P: Policy, R: Rng + ?Sized>(
    instance: &ProblemInstance,
    initial: Placement,
    policy: &P,
    config: &EpisodeConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Episode> {
    let horizon = config.horizon(instance);
    if horizon == 0 {
        return Err(Error::InvalidEpisode("episode needs at least one step".into()));
    }
    let mut state = SearchState::new(instance, initial, config.eval, rng)?;
    let initial_objective = state.objective();
    let mut steps = Vec::with_capacity(horizon);
    let mut grads = Vec::with_capacity(horizon);
    let mut curve = vec![initial_objective];
    let mut history = vec![initial_objective];
    for t in 0..horizon {
        let decision = match policy.decide(&state, mode, rng) {
            Ok(d) => d,
            Err(Error::AllActionsMasked) => break,
            Err(e) => return Err(e),
        };
        let reward = if policy.respects_mask() {
            state.step(decision.action, config.eval, rng)?
        } else {
            state.apply(decision.action, config.eval, rng)?
        };
        let (_, best) = state.best();
        steps.push(StepRecord { t, action: decision.action, reward, objective: state.objective(), best });
        grads.push(decision.grad_log_prob);
        curve.push(best);
        history.push(state.objective());
        if config.plateau_stop && plateaued(&history) {
            break;
        }
    }
    let (best_placement, best_objective) = state.best();
    let outcome = SearchOutcome { initial_objective, best_placement: best_placement.clone(), best_objective, curve };
    Ok(Episode { steps, grad_log_probs: grads, outcome })
}
