//! Run folders and the training driver.
//!
//! A training run lives in `<logdir>/<timestamp or name>/` and holds
//! `args.json`, `train_log.csv`, `eval.csv` and `checkpoints/`. Test and
//! adaptivity experiments write into subfolders of the run.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use giph_core::neuralnet::{Aggregation, PolicyParams, Propagation};
use giph_core::training::{TrainConfig, TrainLogRow, Trainer};
use giph_core::ProblemInstance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::Dataset;
use crate::experiment::{read_csv, write_csv};
use crate::format::{read_json, write_json};

pub const ARGS_FILE: &str = "args.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const EVAL_LOG: &str = "eval.csv";
pub const CHECKPOINTS: &str = "checkpoints";

/// Creates `<parent>/<prefix><name>`, or a timestamped name when `name` is
/// absent. Existing folders are never reused.
pub fn create_dir(parent: &Path, prefix: &str, name: Option<&str>) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let base = match name {
        Some(n) => format!("{prefix}{n}"),
        None => format!("{prefix}{}", chrono::Local::now().format("%Y%m%d-%H%M%S")),
    };
    let mut candidate = parent.join(&base);
    let mut k = 1;
    while candidate.exists() {
        if name.is_some() {
            bail!("{} already exists", candidate.display());
        }
        candidate = parent.join(format!("{base}-{k}"));
        k += 1;
    }
    fs::create_dir(&candidate).with_context(|| format!("creating {}", candidate.display()))?;
    Ok(candidate)
}

/// Everything `train` needs; saved as the run's `args.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    pub config: TrainConfig,
    pub aggregation: Aggregation,
    pub propagation: Propagation,
    /// Held-out cases (from the test split) used for periodic evaluation.
    pub eval_cases: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalLogRow {
    pub episode: usize,
    pub eval_slr: f64,
}

/// Parameter initialization stream, disjoint from episode streams.
const INIT_STREAM: u64 = u64::MAX;

pub fn initial_params(args: &TrainArgs) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(args.config.seed);
    rng.set_stream(INIT_STREAM);
    PolicyParams::init(&mut rng).with_aggregation(args.aggregation).with_propagation(args.propagation)
}

fn instances(dataset: &Dataset, eval_cases: usize) -> anyhow::Result<(Vec<ProblemInstance>, Vec<ProblemInstance>)> {
    let train: Vec<_> = dataset.train.cases()?.into_iter().map(|c| c.instance).collect();
    let held_out: Vec<_> = dataset.test.cases()?.into_iter().take(eval_cases).map(|c| c.instance).collect();
    if train.is_empty() {
        bail!("training split is empty");
    }
    Ok((train, held_out))
}

fn append_row<T: Serialize>(path: &Path, row: &T) -> anyhow::Result<()> {
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

/// Starts a new run in `run_dir`.
pub fn train_new(run_dir: &Path, args: &TrainArgs) -> anyhow::Result<Trainer> {
    write_json(&run_dir.join(ARGS_FILE), args)?;
    let trainer = Trainer::new(args.config, initial_params(args))?;
    checkpoint::save(&run_dir.join(CHECKPOINTS), 0, &trainer.params, &trainer.adam)?;
    continue_training(run_dir, args, trainer)
}

/// Continues a run from its latest checkpoint, optionally to a new episode
/// count. Log rows past the checkpoint are discarded and recomputed.
pub fn train_resume(run_dir: &Path, episodes: Option<usize>) -> anyhow::Result<Trainer> {
    let mut args: TrainArgs = read_json(&run_dir.join(ARGS_FILE))?;
    if let Some(e) = episodes {
        args.config.episodes = e;
        write_json(&run_dir.join(ARGS_FILE), &args)?;
    }
    let dir = run_dir.join(CHECKPOINTS);
    let episode = checkpoint::latest_episode(&dir)?;
    let trainer = Trainer {
        params: checkpoint::load_params(&dir, episode)?,
        adam: checkpoint::load_optimizer(&dir, episode)?,
        next_episode: episode,
        config: args.config,
    };
    for (name, keep) in [(TRAIN_LOG, episode), (EVAL_LOG, episode + 1)] {
        let path = run_dir.join(name);
        if path.exists() {
            if name == TRAIN_LOG {
                let rows: Vec<TrainLogRow> = read_csv(&path)?;
                write_csv(&path, &rows.into_iter().filter(|r| r.episode < keep).collect::<Vec<_>>())?;
            } else {
                let rows: Vec<EvalLogRow> = read_csv(&path)?;
                write_csv(&path, &rows.into_iter().filter(|r| r.episode < keep).collect::<Vec<_>>())?;
            }
        }
    }
    continue_training(run_dir, &args, trainer)
}

fn continue_training(run_dir: &Path, args: &TrainArgs, mut trainer: Trainer) -> anyhow::Result<Trainer> {
    let dataset = Dataset::read(&args.dataset)?;
    let (train, held_out) = instances(&dataset, args.eval_cases)?;
    let ckpt = run_dir.join(CHECKPOINTS);
    while !trainer.is_done() {
        let row = trainer.step(&train, &held_out)?;
        append_row(&run_dir.join(TRAIN_LOG), &row)?;
        if let Some(eval_slr) = row.eval_slr {
            append_row(&run_dir.join(EVAL_LOG), &EvalLogRow { episode: trainer.next_episode, eval_slr })?;
        }
        if row.eval_slr.is_some() || trainer.is_done() {
            checkpoint::save(&ckpt, trainer.next_episode, &trainer.params, &trainer.adam)?;
        }
    }
    Ok(trainer)
}

/// Loads the policy of a run at `episode`, or at its latest checkpoint.
pub fn load_run_params(run_dir: &Path, episode: Option<usize>) -> anyhow::Result<(TrainArgs, PolicyParams, usize)> {
    let args: TrainArgs = read_json(&run_dir.join(ARGS_FILE)).context("not a training run folder")?;
    let dir = run_dir.join(CHECKPOINTS);
    let episode = match episode {
        Some(e) => e,
        None => checkpoint::latest_episode(&dir)?,
    };
    Ok((args, checkpoint::load_params(&dir, episode)?, episode))
}
