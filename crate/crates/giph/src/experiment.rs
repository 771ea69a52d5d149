//! Evaluation of learned and baseline policies on test cases, and the device
//! churn protocol.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context};
use clap::ValueEnum;
use giph_core::baselines::{heft, random_sampling, random_task_eft_search};
use giph_core::environment::{run_episode, ActionKind, EpisodeConfig, EvalConfig, LearnedPolicy, Mode, SearchOutcome};
use giph_core::generator::churn_network;
use giph_core::neuralnet::PolicyParams;
use giph_core::simulator::{slr, LatencyModel, Objective};
use giph_core::{domain::random_placement, DeviceNetwork, HwTag, Placement, ProblemInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Case, NetworkEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PolicyName {
    /// Learned policy choosing (task, device) pairs.
    Giph,
    /// Learned policy choosing tasks; devices by earliest finish time.
    GiphTaskEft,
    RandomTaskEft,
    RandomSampling,
    Heft,
}

impl PolicyName {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Giph => "giph",
            PolicyName::GiphTaskEft => "giph_task_eft",
            PolicyName::RandomTaskEft => "random_task_eft",
            PolicyName::RandomSampling => "random_sampling",
            PolicyName::Heft => "heft",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PolicyName::Giph | PolicyName::GiphTaskEft)
    }

    fn stream_tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub seed: u64,
    pub objective: Objective,
    pub noise: f64,
    pub greedy: bool,
    pub plateau_stop: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { seed: 0, objective: Objective::Makespan, noise: 0.0, greedy: false, plateau_stop: false }
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case_id: usize,
    pub graph_id: usize,
    pub network_id: usize,
    pub stage: usize,
    pub policy: String,
    /// Placements evaluated after the initial one.
    pub steps: usize,
    pub depth: usize,
    pub num_tasks: usize,
    pub initial_placement: String,
    pub best_placement: String,
    pub best_objective: f64,
    /// Best objective over the critical-path lower bound.
    pub best_slr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub case_id: usize,
    pub stage: usize,
    pub policy: String,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub case_id: usize,
    pub stage: usize,
    pub policy: String,
    pub step: usize,
    pub best_slr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub results: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub curves: Vec<CurveRow>,
}

impl Evaluation {
    pub fn extend(&mut self, other: Evaluation) {
        self.results.extend(other.results);
        self.timings.extend(other.timings);
        self.curves.extend(other.curves);
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        write_csv(&dir.join("results.csv"), &self.results)?;
        write_csv(&dir.join("timings.csv"), &self.timings)?;
        write_csv(&dir.join("curve.csv"), &self.curves)
    }

    /// Mean best SLR per policy, in policy-name order.
    pub fn mean_slr(&self) -> Vec<(String, f64)> {
        let names: BTreeSet<&str> = self.results.iter().map(|r| r.policy.as_str()).collect();
        names
            .into_iter()
            .map(|name| {
                let v: Vec<f64> = self.results.iter().filter(|r| r.policy == name).map(|r| r.best_slr).collect();
                (name.to_string(), v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

fn placement_string(p: &Placement) -> String {
    p.as_slice().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial placement shared by every policy evaluated on a case.
pub fn initial_placement(instance: &ProblemInstance, seed: u64, stage: usize, case_id: usize) -> Placement {
    random_placement(instance, &mut stream_rng(seed, case_stream(stage, case_id, 0)))
}

fn case_stream(stage: usize, case_id: usize, tag: u64) -> u64 {
    (stage as u64) << 40 | (case_id as u64) << 8 | tag
}

/// Runs one policy on one instance from `initial` with a `2|V|` budget.
pub fn search(
    policy: PolicyName,
    params: Option<&PolicyParams>,
    instance: &ProblemInstance,
    initial: Placement,
    settings: &EvalSettings,
    rng: &mut ChaCha8Rng,
) -> anyhow::Result<SearchOutcome> {
    let eval = EvalConfig { objective: settings.objective, model: LatencyModel::new(settings.noise)? };
    let budget = 2 * instance.graph().num_tasks();
    let outcome = match policy {
        PolicyName::Giph | PolicyName::GiphTaskEft => {
            let params = params.context("learned policy needs a checkpoint")?;
            let kind = if policy == PolicyName::Giph { ActionKind::TaskDevice } else { ActionKind::TaskEft };
            let config = EpisodeConfig { steps: Some(budget), eval, plateau_stop: settings.plateau_stop };
            let mode = if settings.greedy { Mode::Greedy } else { Mode::Sample };
            run_episode(instance, initial, &LearnedPolicy::new(params, kind), &config, mode, rng)?.outcome
        }
        PolicyName::RandomTaskEft => random_task_eft_search(instance, initial, budget, eval, rng)?,
        PolicyName::RandomSampling => random_sampling(instance, initial, budget, eval, rng)?,
        PolicyName::Heft => {
            let placement = heft(instance, true).placement();
            let value = eval.objective.evaluate(instance, &placement, eval.model, rng)?;
            SearchOutcome { initial_objective: value, best_placement: placement, best_objective: value, curve: vec![value] }
        }
    };
    Ok(outcome)
}

/// Evaluates every policy on every case. Cases run in parallel; rows come
/// back in (case, policy) order.
pub fn evaluate(
    cases: &[Case],
    stage: usize,
    policies: &[PolicyName],
    params: Option<&PolicyParams>,
    settings: &EvalSettings,
) -> anyhow::Result<Evaluation> {
    let initial: Vec<Placement> =
        cases.iter().enumerate().map(|(case_id, c)| initial_placement(&c.instance, settings.seed, stage, case_id)).collect();
    evaluate_from(cases, &initial, stage, policies, params, settings)
}

/// [`evaluate`] with given initial placements, one per case.
pub fn evaluate_from(
    cases: &[Case],
    initial: &[Placement],
    stage: usize,
    policies: &[PolicyName],
    params: Option<&PolicyParams>,
    settings: &EvalSettings,
) -> anyhow::Result<Evaluation> {
    if policies.iter().any(|p| p.is_learned()) && params.is_none() {
        bail!("learned policies need a checkpoint");
    }
    ensure!(initial.len() == cases.len(), "{} initial placements for {} cases", initial.len(), cases.len());
    for (case_id, (case, p)) in cases.iter().zip(initial).enumerate() {
        case.instance.check_placement(p).with_context(|| format!("initial placement of case {case_id}"))?;
    }
    let per_case: Vec<anyhow::Result<Evaluation>> = cases
        .par_iter()
        .zip(initial)
        .enumerate()
        .map(|(case_id, (case, initial))| {
            let instance = &case.instance;
            let mut out = Evaluation::default();
            for &policy in policies {
                let mut rng = stream_rng(settings.seed, case_stream(stage, case_id, policy.stream_tag()));
                let clock = Instant::now();
                let outcome = search(policy, params, instance, initial.clone(), settings, &mut rng)
                    .with_context(|| format!("case {case_id}, policy {}", policy.as_str()))?;
                let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
                let name = policy.as_str().to_string();
                for (step, &best) in outcome.curve.iter().enumerate() {
                    out.curves.push(CurveRow { case_id, stage, policy: name.clone(), step, best_slr: slr(best, instance)? });
                }
                out.results.push(ResultRow {
                    case_id,
                    graph_id: case.graph_id,
                    network_id: case.network_id,
                    stage,
                    policy: name.clone(),
                    steps: outcome.curve.len() - 1,
                    depth: case.depth,
                    num_tasks: instance.graph().num_tasks(),
                    initial_placement: placement_string(&initial),
                    best_placement: placement_string(&outcome.best_placement),
                    best_objective: outcome.best_objective,
                    best_slr: slr(outcome.best_objective, instance)?,
                });
                out.timings.push(TimingRow { case_id, stage, policy: name, wall_ms });
            }
            Ok(out)
        })
        .collect();
    let mut all = Evaluation::default();
    for e in per_case {
        all.extend(e?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnSettings {
    pub stages: usize,
    /// Devices removed (and replaced) per stage.
    pub remove: usize,
    pub capacity_factor: f64,
    /// Fresh draws tried per stage before giving up on tag coverage.
    pub attempts: usize,
}

impl Default for ChurnSettings {
    fn default() -> Self {
        Self { stages: 4, remove: 2, capacity_factor: 0.5, attempts: 100 }
    }
}

const CHURN_STREAM: u64 = 1 << 62;

/// Networks for stages `0..=stages`, each derived from the previous one.
/// Draws that would leave a required tag unsupported are rejected and
/// redrawn.
pub fn churn_stages(
    base: &NetworkEntry,
    required_tags: &[HwTag],
    churn: &ChurnSettings,
    seed: u64,
) -> anyhow::Result<Vec<DeviceNetwork>> {
    let mut networks = vec![base.network.to_network()?];
    for stage in 1..=churn.stages {
        let previous = networks.last().unwrap();
        let mut next = None;
        for attempt in 0..churn.attempts {
            let stream = CHURN_STREAM | (base.id as u64) << 32 | (stage as u64) << 16 | attempt as u64;
            let mut rng = stream_rng(seed, stream);
            match churn_network(previous, &base.params, churn.remove, churn.capacity_factor, required_tags, &mut rng) {
                Ok(n) => {
                    next = Some(n);
                    break;
                }
                Err(giph_core::Error::OrphanedTags(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        match next {
            Some(n) => networks.push(n),
            None => bail!("stage {stage}: no churn draw kept every required tag supported in {} attempts", churn.attempts),
        }
    }
    Ok(networks)
}

/// Re-pairs `cases` with a churned network.
pub fn with_network(cases: &[Case], network: &DeviceNetwork) -> anyhow::Result<Vec<Case>> {
    cases
        .iter()
        .map(|c| {
            let instance = ProblemInstance::new(c.instance.graph().clone(), network.clone())
                .with_context(|| format!("graph {} on churned network", c.graph_id))?;
            Ok(Case { instance, ..c.clone() })
        })
        .collect()
}

pub fn required_tags(cases: &[Case]) -> Vec<HwTag> {
    let tags: BTreeSet<HwTag> =
        cases.iter().flat_map(|c| c.instance.graph().tasks().iter().map(|t| t.hw_req)).filter(|&t| t != giph_core::UNIVERSAL_TAG).collect();
    tags.into_iter().collect()
}

/// Mean and population standard deviation of best SLR per (stage, policy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptRow {
    pub stage: usize,
    pub policy: String,
    pub mean_slr: f64,
    pub std_slr: f64,
    /// `mean_slr / mean_slr(stage 0) - 1`.
    pub degradation: f64,
}

pub fn adapt_summary(results: &[ResultRow]) -> Vec<AdaptRow> {
    let keys: BTreeSet<(usize, &str)> = results.iter().map(|r| (r.stage, r.policy.as_str())).collect();
    let stats = |stage: usize, policy: &str| {
        let v: Vec<f64> = results.iter().filter(|r| r.stage == stage && r.policy == policy).map(|r| r.best_slr).collect();
        crate::report::mean_std(&v)
    };
    keys.iter()
        .map(|&(stage, policy)| {
            let (mean, std) = stats(stage, policy);
            let (base, _) = stats(0, policy);
            AdaptRow { stage, policy: policy.to_string(), mean_slr: mean, std_slr: std, degradation: mean / base - 1.0 }
        })
        .collect()
}
