//! Acceptance checks. Each test prints one `[n] ... PASS|FAIL` line and then
//! asserts the same verdict. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use giph::dataset::{generate_dataset, Case, Dataset, DatasetSpec};
use giph::experiment::{adapt_summary, churn_stages, evaluate, required_tags, with_network, ChurnSettings, EvalSettings, PolicyName};
use giph::run::{train_new, TrainArgs};
use giph_core::baselines::{brute_force_optimal, heft};
use giph_core::domain::*;
use giph_core::environment::*;
use giph_core::generator::{generate_network, generate_task_graph, GraphGenParams, NetworkGenParams};
use giph_core::gpnet::build_gpnet;
use giph_core::neuralnet::{backprop, forward, Aggregation, PolicyParams, Propagation, NUM_PARAMS};
use giph_core::simulator::{path_makespan, simulate, slr, LatencyModel, Objective};
use giph_core::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn verdict(id: u32, title: &str, pass: bool, detail: String) {
    println!("[{id}] {title}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "[{id}] {title}: {detail}");
}

/// Random DAG (edge i->j for i<j with probability 1/2) on a random network.
/// Tag 1 is required by some tasks and supported by at least two devices.
fn tiny_instance(seed: u64, tasks: std::ops::RangeInclusive<usize>, devices: std::ops::RangeInclusive<usize>) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(tasks);
    let m = rng.gen_range(devices);
    let task_list: Vec<Task> =
        (0..n).map(|id| Task { id, compute: rng.gen_range(0.5..5.0), hw_req: if rng.gen_bool(0.25) { 1 } else { 0 } }).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                edges.push(DataLink { src: i, dst: j, bytes: rng.gen_range(0.0..4.0) });
            }
        }
    }
    let devs: Vec<Device> = (0..m)
        .map(|id| {
            let mut hw_support = BTreeSet::from([UNIVERSAL_TAG]);
            if id < 2 || rng.gen_bool(0.5) {
                hw_support.insert(1);
            }
            Device { id, speed: rng.gen_range(0.5..3.0), hw_support }
        })
        .collect();
    let links = (0..m * m).map(|_| Link { bandwidth: rng.gen_range(0.5..4.0), delay: rng.gen_range(0.0..1.0), is_local: false }).collect();
    let network = DeviceNetwork::from_matrix(devs, links).unwrap();
    ProblemInstance::new(TaskGraph::new(task_list, edges).unwrap(), network).unwrap()
}

/// Instance from the graph and network generators at default parameters.
/// Draws leaving some task without a feasible device are redrawn.
fn generated_instance(seed: u64, tasks: std::ops::RangeInclusive<usize>, devices: std::ops::RangeInclusive<usize>) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let graph = GraphGenParams { num_tasks: rng.gen_range(tasks.clone()), ..Default::default() };
        let network = NetworkGenParams { num_devices: rng.gen_range(devices.clone()), ..Default::default() };
        let g = generate_task_graph(&graph, &mut rng).unwrap();
        let n = generate_network(&network, &mut rng).unwrap();
        if let Ok(inst) = ProblemInstance::new(g, n) {
            return inst;
        }
    }
}

/// Feasible device count per task, straight from the tags.
fn feasible_counts(instance: &ProblemInstance) -> Vec<usize> {
    instance
        .graph()
        .tasks()
        .iter()
        .map(|t| instance.network().devices().iter().filter(|d| t.hw_req == UNIVERSAL_TAG || d.hw_support.contains(&t.hw_req)).count())
        .collect()
}

#[test]
fn simulator_matches_path_oracle() {
    let clock = Instant::now();
    let (mut bound_violations, mut unequal_without_wait, mut equal_with_wait, mut with_wait) = (0, 0, 0, 0);
    for seed in 0..1000 {
        let inst = generated_instance(seed, 2..=5, 2..=3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1_000_000);
        let p = random_placement(&inst, &mut rng);
        let path = path_makespan(&inst, &p).unwrap();
        let trace = simulate(&inst, &p, LatencyModel::EXACT, &mut rng).unwrap();
        let tol = 1e-9 * trace.makespan.max(1.0);
        if path > trace.makespan + tol {
            bound_violations += 1;
        }
        let waited = trace.tasks.iter().any(|t| t.start > t.runnable + tol);
        with_wait += waited as usize;
        let equal = (trace.makespan - path).abs() <= tol;
        unequal_without_wait += (!waited && !equal) as usize;
        equal_with_wait += (waited && equal) as usize;
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        1,
        "simulator vs path oracle",
        bound_violations == 0 && unequal_without_wait == 0 && equal_with_wait == 0 && secs < 10.0,
        format!(
            "{bound_violations} bound violations, {unequal_without_wait} gaps without a wait, \
             {equal_with_wait} equalities despite a wait ({with_wait} traces wait), {secs:.2}s"
        ),
    );
}

#[test]
fn gpnet_sizes_match_formulas() {
    let clock = Instant::now();
    let mut mismatches = 0;
    for seed in 0..1000 {
        let inst = generated_instance(seed, 2..=8, 2..=5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_placement(&inst, &mut rng);
        let trace = simulate(&inst, &p, LatencyModel::EXACT, &mut rng).unwrap();
        let net = build_gpnet(&inst, &p, &trace).unwrap();
        let d = feasible_counts(&inst);
        let graph = inst.graph();
        let degree = |t: usize| graph.edges().iter().filter(|e| e.src == t || e.dst == t).count();
        let nodes: usize = d.iter().sum();
        let edges: usize = (0..graph.num_tasks()).map(|t| d[t] * degree(t)).sum::<usize>() - graph.num_edges();
        if net.num_nodes() != nodes || net.num_edges() != edges {
            mismatches += 1;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(2, "placement graph sizes", mismatches == 0 && secs < 10.0, format!("{mismatches}/1000 mismatches, {secs:.2}s"));
}

#[test]
fn gradients_match_finite_differences() {
    const H: f64 = 1e-5;
    let clock = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for g in 0..20u64 {
        let inst = tiny_instance(500 + g, 3..=7, 2..=4);
        let mut rng = ChaCha8Rng::seed_from_u64(g);
        let p = random_placement(&inst, &mut rng);
        let trace = simulate(&inst, &p, LatencyModel::EXACT, &mut rng).unwrap();
        let net = build_gpnet(&inst, &p, &trace).unwrap();
        // biases start at zero, which parks some units exactly on a ReLU kink
        let mut params = PolicyParams::init(&mut rng);
        for w in params.weights.as_mut_slice() {
            *w += rng.gen_range(-0.1..0.1);
        }
        let upstream: Vec<f64> = (0..net.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |params: &PolicyParams| -> f64 {
            forward(&net, params).unwrap().scores().iter().zip(&upstream).map(|(s, u)| s * u).sum()
        };
        let grads = backprop(&net, &params, &upstream).unwrap();
        for _ in 0..5 {
            let k = rng.gen_range(0..NUM_PARAMS);
            let mut plus = params.clone();
            plus.weights.as_mut_slice()[k] += H;
            let mut minus = params.clone();
            minus.weights.as_mut_slice()[k] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let analytic = grads.as_slice()[k];
            let scale = analytic.abs().max(numeric.abs());
            let rel = if scale < 1e-8 { 0.0 } else { (analytic - numeric).abs() / scale };
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(3, "analytic vs numeric gradients", worst < 1e-4 && secs < 60.0, format!("{checked} coordinates, max relative error {worst:.2e}, {secs:.2}s"));
}

#[test]
fn masking_invariants_hold() {
    let mut steps = 0usize;
    let (mut noops, mut repeats, mut size_mismatches) = (0, 0, 0);
    let mut seed = 0u64;
    while steps < 100_000 {
        let inst = tiny_instance(seed, 2..=8, 2..=4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seed += 1;
        let params = PolicyParams::init(&mut rng);
        let policy = LearnedPolicy::new(&params, ActionKind::TaskDevice);
        let expected: usize = feasible_counts(&inst).iter().sum();
        let eval = EvalConfig::exact(Objective::Makespan);
        let mut state = SearchState::new(&inst, random_placement(&inst, &mut rng), eval, &mut rng).unwrap();
        for _ in 0..50 {
            if state.action_mask().unwrap().len() != expected || inst.action_space_size() != expected {
                size_mismatches += 1;
            }
            let decision = policy.decide(&state, Mode::Sample, &mut rng).unwrap();
            let a = decision.action;
            if state.placement().device_of(a.task) == a.device {
                noops += 1;
            }
            if state.last_moved() == Some(a.task) {
                repeats += 1;
            }
            state.step(a, eval, &mut rng).unwrap();
            steps += 1;
        }
    }
    verdict(
        4,
        "action masking",
        noops == 0 && repeats == 0 && size_mismatches == 0,
        format!("{steps} steps, {noops} no-ops, {repeats} repeated tasks, {size_mismatches} action-space size mismatches"),
    );
}

/// Simulated makespan of a placement.
fn makespan(inst: &ProblemInstance, p: &Placement) -> f64 {
    simulate(inst, p, LatencyModel::EXACT, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().makespan
}

#[test]
fn optimal_slr_is_at_least_one() {
    let clock = Instant::now();
    let mut min_slr = f64::INFINITY;
    for seed in 0..200 {
        let inst = generated_instance(10_000 + seed, 2..=5, 2..=3);
        let (_, best) = brute_force_optimal(&inst).unwrap();
        min_slr = min_slr.min(slr(best, &inst).unwrap());
    }
    let secs = clock.elapsed().as_secs_f64();
    // one ulp of slack for the two summation orders
    verdict(5, "optimal SLR lower bound", min_slr >= 1.0 - 1e-12 && secs < 120.0, format!("min SLR {min_slr:.6} over 200 instances, {secs:.2}s"));
}

#[test]
fn heft_is_near_optimal() {
    let (mut within, mut beats_random) = (0, 0);
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..200u64 {
        let inst = generated_instance(10_000 + seed, 2..=5, 2..=3);
        let (_, best) = brute_force_optimal(&inst).unwrap();
        let h = makespan(&inst, &heft(&inst, true).placement());
        let ratio = h / best;
        worst_ratio = worst_ratio.max(ratio);
        within += (ratio <= 1.5) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean_random = (0..100).map(|_| makespan(&inst, &random_placement(&inst, &mut rng))).sum::<f64>() / 100.0;
        beats_random += (h < mean_random) as usize;
    }
    verdict(
        6,
        "HEFT quality",
        within == 200 && beats_random >= 190,
        format!("{within}/200 within 1.5x optimum (worst {worst_ratio:.3}), {beats_random}/200 beat the random mean"),
    );
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// 50 training and 20 held-out graphs of 10-20 tasks on one network.
fn learning_dataset(devices: usize) -> Dataset {
    let spec = DatasetSpec {
        graph: json!({ "M": [10, 12, 15, 18, 20] }),
        network: json!({ "m": devices }),
        graphs_per_combination: 14,
        networks_per_combination: 1,
        train_fraction: 10.0 / 14.0,
        share_networks: true,
    };
    let data = generate_dataset(&spec, 0).unwrap();
    assert_eq!((data.train.graphs.graphs.len(), data.test.graphs.graphs.len()), (50, 20));
    data
}

fn write_dataset(data: &Dataset, dir: &Path) -> PathBuf {
    let path = dir.join("data");
    data.write(&path).unwrap();
    path
}

/// Trains a fresh run for 200 episodes without periodic evaluation.
fn train_run(dataset: &Path, dir: &Path, seed: u64, objective: Objective) -> PolicyParams {
    let args = TrainArgs {
        dataset: dataset.to_path_buf(),
        config: TrainConfig { episodes: 200, eval_every: 0, seed, objective, ..Default::default() },
        aggregation: Aggregation::Mean,
        propagation: Propagation::Sweep,
        eval_cases: 0,
    };
    let run_dir = dir.join(format!("run_{seed}_{objective:?}"));
    fs::create_dir_all(&run_dir).unwrap();
    train_new(&run_dir, &args).unwrap().params
}

fn mean_of(eval: &giph::experiment::Evaluation, policy: PolicyName, value: impl Fn(&giph::experiment::ResultRow) -> f64) -> f64 {
    let v: Vec<f64> = eval.results.iter().filter(|r| r.policy == policy.as_str()).map(value).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn learned_policy_beats_random_search() {
    let clock = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = learning_dataset(8);
    let dataset = write_dataset(&data, dir.path());
    let cases: Vec<Case> = data.test.cases().unwrap();
    let policies = [PolicyName::Giph, PolicyName::RandomSampling, PolicyName::RandomTaskEft];
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let params = train_run(&dataset, dir.path(), seed, Objective::Makespan);
        let settings = EvalSettings { seed, ..Default::default() };
        let eval = evaluate(&cases, 0, &policies, Some(&params), &settings).unwrap();
        let giph = mean_of(&eval, PolicyName::Giph, |r| r.best_slr);
        let sampling = mean_of(&eval, PolicyName::RandomSampling, |r| r.best_slr);
        let task_eft = mean_of(&eval, PolicyName::RandomTaskEft, |r| r.best_slr);
        wins += (giph <= 0.9 * sampling && giph <= task_eft) as usize;
        detail.push(format!("seed {seed}: giph {giph:.3} sampling {sampling:.3} task_eft {task_eft:.3}"));
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(7, "learned search vs random baselines", wins >= 4, format!("{wins}/5 seeds; {}; {secs:.0}s", detail.join("; ")));
}

#[test]
fn learned_policy_adapts_to_churn() {
    let dir = tempfile::tempdir().unwrap();
    let data = learning_dataset(20);
    let dataset = write_dataset(&data, dir.path());
    let params = train_run(&dataset, dir.path(), 1, Objective::Makespan);
    let cases = data.test.cases().unwrap();
    let churn = ChurnSettings { stages: 4, capacity_factor: 0.5, ..Default::default() };
    let networks = churn_stages(&data.test.networks.networks[0], &required_tags(&cases), &churn, 1).unwrap();
    let policies = [PolicyName::Giph, PolicyName::RandomSampling];
    let settings = EvalSettings { seed: 1, ..Default::default() };
    let mut results = Vec::new();
    for (stage, network) in networks.iter().enumerate() {
        let staged = with_network(&cases, network).unwrap();
        results.extend(evaluate(&staged, stage, &policies, Some(&params), &settings).unwrap().results);
    }
    let summary = adapt_summary(&results);
    let degradation = |p: PolicyName| summary.iter().find(|r| r.stage == 4 && r.policy == p.as_str()).unwrap().degradation;
    let (giph, random) = (degradation(PolicyName::Giph), degradation(PolicyName::RandomSampling));
    verdict(8, "adaptivity under churn", giph <= random, format!("stage-4 degradation giph {giph:+.3}, random sampling {random:+.3}"));
}

#[test]
fn total_cost_objective_is_learnable() {
    let dir = tempfile::tempdir().unwrap();
    let data = learning_dataset(8);
    let dataset = write_dataset(&data, dir.path());
    let cases = data.test.cases().unwrap();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let params = train_run(&dataset, dir.path(), seed, Objective::TotalCost);
        let settings = EvalSettings { seed, objective: Objective::TotalCost, ..Default::default() };
        let eval = evaluate(&cases, 0, &[PolicyName::Giph, PolicyName::RandomSampling], Some(&params), &settings).unwrap();
        let giph = mean_of(&eval, PolicyName::Giph, |r| r.best_objective);
        let sampling = mean_of(&eval, PolicyName::RandomSampling, |r| r.best_objective);
        wins += (giph < sampling) as usize;
        detail.push(format!("seed {seed}: giph {giph:.2} sampling {sampling:.2}"));
    }
    verdict(9, "total cost objective", wins >= 4, format!("{wins}/5 seeds; {}", detail.join("; ")));
}

fn giph(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_giph")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "giph {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every file under `root` except run arguments (absolute paths) and
/// wall-clock timings.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !matches!(path.file_name().unwrap().to_str(), Some("args.json" | "timings.csv")) {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_deterministic() {
    let params = json!({ "graph": { "M": [6, 8] }, "network": { "m": 4 }, "graphs_per_combination": 4 });
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            fs::write(dir.path().join("params.json"), params.to_string()).unwrap();
            giph(dir.path(), &["generate", "--params", "params.json", "--out", "data", "--seed", "7"]);
            giph(dir.path(), &["train", "--dataset", "data", "--logdir", "runs", "--name", "r", "--episodes", "5", "--eval-every", "2", "--eval-cases", "2", "--seed", "3"]);
            giph(dir.path(), &["test", "--run", "runs/r", "--name", "t"]);
            dir
        })
        .collect();
    let (a, b) = (snapshot(runs[0].path()), snapshot(runs[1].path()));
    let names: Vec<_> = a.iter().map(|(p, _)| p.display().to_string()).collect();
    let expected = ["data/train_graphs.json", "runs/r/checkpoints/policy_5", "runs/r/test_t/results.csv", "runs/r/train_log.csv"];
    let complete = expected.iter().all(|e| names.iter().any(|n| n == e));
    let differing: Vec<_> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
    verdict(
        10,
        "pipeline determinism",
        complete && a.len() == b.len() && differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", a.len()),
    );
}

