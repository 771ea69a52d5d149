//! Command line definitions and dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use giph_core::environment::ActionKind;
use giph_core::neuralnet::{Aggregation, PolicyParams, Propagation};
use giph_core::{DeviceId, Placement};
use giph_core::simulator::Objective;
use giph_core::training::TrainConfig;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dataset::{generate_dataset, Case, Dataset, DatasetSpec};
use crate::experiment::{
    adapt_summary, churn_stages, evaluate, evaluate_from, required_tags, with_network, write_csv, ChurnSettings, EvalSettings,
    Evaluation, PolicyName,
};
use crate::format::{read_json, write_json};
use crate::report::run_report;
use crate::run::{create_dir, load_run_params, train_new, train_resume, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "giph", version, about = "Learned task placement on heterogeneous device networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test graph and network files from a parameter grid.
    Generate(GenerateArgs),
    /// Train a placement policy.
    Train(TrainCmd),
    /// Evaluate a trained policy (and baselines) on the test split.
    Test(TestCmd),
    /// Evaluate one baseline on the test split.
    Baseline(BaselineCmd),
    /// Re-evaluate after device churn without retraining.
    Adapt(AdaptCmd),
    /// Summarize a results CSV.
    Report(ReportCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ObjectiveArg {
    Makespan,
    TotalCost,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Makespan => Objective::Makespan,
            ObjectiveArg::TotalCost => Objective::TotalCost,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON parameter file; omitted fields take their defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, alias = "dataset")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long, required_unless_present = "resume")]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub logdir: PathBuf,
    /// Run folder name instead of a timestamp.
    #[arg(long)]
    pub name: Option<String>,
    /// Continue the run in this folder from its latest checkpoint.
    #[arg(long, conflicts_with = "dataset")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value = "makespan")]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.97)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2)]
    pub t_factor: usize,
    #[arg(long, default_value_t = 50)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 20)]
    pub eval_cases: usize,
    #[arg(long)]
    pub plateau_stop: bool,
    /// Choose tasks only and place them by earliest finish time.
    #[arg(long)]
    pub task_eft: bool,
    /// `sweep` or `steps:<k>`.
    #[arg(long, default_value = "sweep", value_parser = parse_propagation)]
    pub propagation: Propagation,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Sum,
}

pub fn parse_propagation(s: &str) -> Result<Propagation, String> {
    if s == "sweep" {
        return Ok(Propagation::Sweep);
    }
    let k = s.strip_prefix("steps:").unwrap_or(s);
    match k.parse::<usize>() {
        Ok(k) if k > 0 => Ok(Propagation::Steps(k)),
        _ => Err(format!("expected `sweep` or `steps:<k>` with k >= 1, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    /// Number of test cases (default: all).
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Pick the highest-scoring action instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub plateau_stop: bool,
    /// Output subfolder name instead of a timestamp.
    #[arg(long)]
    pub name: Option<String>,
    /// JSON array with one initial placement (device ids by task) per case,
    /// replacing the seeded random ones.
    #[arg(long)]
    pub initial: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestCmd {
    /// Training run folder.
    #[arg(long)]
    pub run: PathBuf,
    /// Checkpoint episode (default: latest).
    #[arg(long)]
    pub checkpoint: Option<usize>,
    /// Dataset to test on (default: the run's).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "giph,random_task_eft,random_sampling,heft")]
    pub policies: Vec<PolicyName>,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct BaselineCmd {
    #[arg(value_enum)]
    pub policy: PolicyName,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "runs")]
    pub logdir: PathBuf,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct AdaptCmd {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Index of the test network to churn.
    #[arg(long, default_value_t = 0)]
    pub network: usize,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    /// Devices removed and replaced per stage.
    #[arg(long, default_value_t = 2)]
    pub remove: usize,
    #[arg(long, default_value_t = 0.5)]
    pub factor: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "giph,random_task_eft,random_sampling,heft")]
    pub policies: Vec<PolicyName>,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    #[arg(long)]
    pub results: PathBuf,
    /// Output folder (default: beside the results file).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub depth_bucket: usize,
}

fn settings(flags: &EvalFlags, defaults: EvalSettings) -> EvalSettings {
    EvalSettings {
        seed: flags.seed.unwrap_or(defaults.seed),
        objective: flags.objective.map_or(defaults.objective, Into::into),
        noise: flags.noise.unwrap_or(defaults.noise),
        greedy: flags.greedy,
        plateau_stop: flags.plateau_stop,
    }
}

fn test_cases(dataset: &Path, limit: Option<usize>) -> anyhow::Result<Vec<Case>> {
    let mut cases = Dataset::read(dataset)?.test.cases()?;
    if let Some(n) = limit {
        cases.truncate(n);
    }
    if cases.is_empty() {
        bail!("no test cases in {}", dataset.display());
    }
    Ok(cases)
}

fn run_cases(
    cases: &[Case],
    policies: &[PolicyName],
    params: Option<&PolicyParams>,
    settings: &EvalSettings,
    initial: Option<&Path>,
) -> anyhow::Result<Evaluation> {
    match initial {
        None => evaluate(cases, 0, policies, params, settings),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let assignments: Vec<Vec<DeviceId>> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let initial: Vec<Placement> = assignments.into_iter().map(Placement::new).collect();
            evaluate_from(cases, &initial, 0, policies, params, settings).with_context(|| format!("initial placements from {}", path.display()))
        }
    }
}

fn summary_json(eval: &Evaluation) -> Value {
    eval.mean_slr().into_iter().map(|(p, m)| (p, json!(m))).collect::<serde_json::Map<_, _>>().into()
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    command: &'a str,
    source: &'a Path,
    checkpoint: Option<usize>,
    dataset: &'a Path,
    cases: usize,
    policies: Vec<&'static str>,
    settings: EvalSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    churn: Option<ChurnSettings>,
}

/// Runs a command and returns a JSON summary for stdout.
pub fn run(cli: Cli) -> anyhow::Result<Value> {
    match cli.command {
        Command::Generate(a) => {
            let spec: DatasetSpec = match &a.params {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => DatasetSpec::default(),
            };
            let data = generate_dataset(&spec, a.seed)?;
            data.write(&a.out)?;
            Ok(json!({
                "dataset": a.out,
                "train_graphs": data.train.graphs.graphs.len(),
                "test_graphs": data.test.graphs.graphs.len(),
                "train_networks": data.train.networks.networks.len(),
                "test_networks": data.test.networks.networks.len(),
            }))
        }
        Command::Train(a) => {
            let (run_dir, trainer) = match &a.resume {
                Some(dir) => (dir.clone(), train_resume(dir, a.episodes)?),
                None => {
                    let dataset = a.dataset.clone().expect("clap enforces --dataset");
                    let dataset = fs::canonicalize(&dataset).with_context(|| format!("dataset {}", dataset.display()))?;
                    let args = TrainArgs {
                        dataset,
                        config: TrainConfig {
                            episodes: a.episodes.unwrap_or(TrainConfig::default().episodes),
                            lr: a.lr,
                            gamma: a.gamma,
                            t_factor: a.t_factor,
                            eval_every: a.eval_every,
                            seed: a.seed,
                            objective: a.objective.into(),
                            noise: a.noise,
                            plateau_stop: a.plateau_stop,
                            action_kind: if a.task_eft { ActionKind::TaskEft } else { ActionKind::TaskDevice },
                        },
                        aggregation: match a.aggregation {
                            AggregationArg::Mean => Aggregation::Mean,
                            AggregationArg::Sum => Aggregation::Sum,
                        },
                        propagation: a.propagation,
                        eval_cases: a.eval_cases,
                    };
                    args.config.validate()?;
                    let run_dir = create_dir(&a.logdir, "", a.name.as_deref())?;
                    let trainer = train_new(&run_dir, &args)?;
                    (run_dir, trainer)
                }
            };
            Ok(json!({ "run": run_dir, "episodes": trainer.next_episode }))
        }
        Command::Test(a) => {
            let (args, params, episode) = load_run_params(&a.run, a.checkpoint)?;
            let dataset = a.dataset.clone().unwrap_or(args.dataset.clone());
            let cases = test_cases(&dataset, a.eval.cases)?;
            let defaults = EvalSettings { seed: args.config.seed, objective: args.config.objective, ..Default::default() };
            let settings = settings(&a.eval, defaults);
            let policies = learned_kind(&a.policies, &args);
            let eval = run_cases(&cases, &policies, Some(&params), &settings, a.eval.initial.as_deref())?;
            let out = create_dir(&a.run, "test_", a.eval.name.as_deref())?;
            write_json(
                &out.join("args.json"),
                &EvalRecord {
                    command: "test",
                    source: &a.run,
                    checkpoint: Some(episode),
                    dataset: &dataset,
                    cases: cases.len(),
                    policies: policies.iter().map(|p| p.as_str()).collect(),
                    settings,
                    churn: None,
                },
            )?;
            eval.write(&out)?;
            let summary = summary_json(&eval);
            write_json(&out.join("summary.json"), &summary)?;
            Ok(json!({ "out": out, "checkpoint": episode, "mean_slr": summary }))
        }
        Command::Baseline(a) => {
            if a.policy.is_learned() {
                bail!("{} is not a baseline; use `test` with a training run", a.policy.as_str());
            }
            let cases = test_cases(&a.dataset, a.eval.cases)?;
            let settings = settings(&a.eval, EvalSettings::default());
            let eval = run_cases(&cases, &[a.policy], None, &settings, a.eval.initial.as_deref())?;
            let out = create_dir(&a.logdir, &format!("{}_", a.policy.as_str()), a.eval.name.as_deref())?;
            write_json(
                &out.join("args.json"),
                &EvalRecord {
                    command: "baseline",
                    source: &a.dataset,
                    checkpoint: None,
                    dataset: &a.dataset,
                    cases: cases.len(),
                    policies: vec![a.policy.as_str()],
                    settings,
                    churn: None,
                },
            )?;
            eval.write(&out)?;
            let summary = summary_json(&eval);
            write_json(&out.join("summary.json"), &summary)?;
            Ok(json!({ "out": out, "mean_slr": summary }))
        }
        Command::Adapt(a) => {
            if a.eval.initial.is_some() {
                bail!("--initial is not supported by adapt: device ids change between churn stages");
            }
            let (args, params, episode) = load_run_params(&a.run, a.checkpoint)?;
            let dataset_dir = a.dataset.clone().unwrap_or(args.dataset.clone());
            let dataset = Dataset::read(&dataset_dir)?;
            let base = dataset
                .test
                .networks
                .networks
                .get(a.network)
                .with_context(|| format!("test split has no network {}", a.network))?
                .clone();
            let mut cases = test_cases(&dataset_dir, a.eval.cases)?;
            for c in &mut cases {
                c.network_id = base.id;
            }
            let churn = ChurnSettings { stages: a.stages, remove: a.remove, capacity_factor: a.factor, ..Default::default() };
            let networks = churn_stages(&base, &required_tags(&cases), &churn, a.eval.seed.unwrap_or(args.config.seed))?;
            let defaults = EvalSettings { seed: args.config.seed, objective: args.config.objective, ..Default::default() };
            let settings = settings(&a.eval, defaults);
            let policies = learned_kind(&a.policies, &args);
            let mut eval = Evaluation::default();
            for (stage, network) in networks.iter().enumerate() {
                let staged = with_network(&cases, network)?;
                eval.extend(evaluate(&staged, stage, &policies, Some(&params), &settings)?);
            }
            let out = create_dir(&a.run, "adapt_", a.eval.name.as_deref())?;
            write_json(
                &out.join("args.json"),
                &EvalRecord {
                    command: "adapt",
                    source: &a.run,
                    checkpoint: Some(episode),
                    dataset: &dataset_dir,
                    cases: cases.len(),
                    policies: policies.iter().map(|p| p.as_str()).collect(),
                    settings,
                    churn: Some(churn),
                },
            )?;
            for (stage, network) in networks.iter().enumerate() {
                write_json(&out.join(format!("network_stage{stage}.json")), &crate::format::NetworkRecord::from_network(network))?;
            }
            eval.write(&out)?;
            let summary = adapt_summary(&eval.results);
            write_csv(&out.join("adapt.csv"), &summary)?;
            Ok(json!({ "out": out, "checkpoint": episode, "stages": summary }))
        }
        Command::Report(a) => {
            let out = match &a.out {
                Some(o) => o.clone(),
                None => a.results.parent().map(|p| p.join("report")).unwrap_or_else(|| PathBuf::from("report")),
            };
            let report = run_report(&a.results, &out, a.depth_bucket)?;
            Ok(json!({ "out": out, "policies": report.by_policy }))
        }
    }
}

/// A run trained on task-only actions is evaluated as `giph_task_eft`.
fn learned_kind(policies: &[PolicyName], args: &TrainArgs) -> Vec<PolicyName> {
    let mut out: Vec<PolicyName> = policies
        .iter()
        .map(|&p| match (p, args.config.action_kind) {
            (PolicyName::Giph, ActionKind::TaskEft) => PolicyName::GiphTaskEft,
            _ => p,
        })
        .collect();
    out.dedup();
    out
}

/// Reads a run's training arguments.
pub fn read_train_args(run_dir: &Path) -> anyhow::Result<TrainArgs> {
    read_json(&run_dir.join(crate::run::ARGS_FILE))
}
