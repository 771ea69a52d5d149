use giph_core::baselines::{brute_force_optimal, heft, random_sampling, random_task_eft_search};
use giph_core::domain::random_placement;
use giph_core::environment::*;
use giph_core::generator::{generate_network, generate_task_graph, GraphGenParams, NetworkGenParams};
use giph_core::neuralnet::PolicyParams;
use giph_core::simulator::{simulate, slr, LatencyModel, Objective};
use giph_core::training::{train, TrainConfig};
use giph_core::ProblemInstance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, tasks: usize, devices: usize) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = generate_task_graph(&GraphGenParams { num_tasks: tasks, ..Default::default() }, &mut rng).unwrap();
        let n = generate_network(&NetworkGenParams { num_devices: devices, ..Default::default() }, &mut rng).unwrap();
        if let Ok(inst) = ProblemInstance::new(g, n) {
            return inst;
        }
    }
}

#[test]
fn optimum_bounds_every_search() {
    let eval = EvalConfig::exact(Objective::Makespan);
    for seed in 0..30 {
        let inst = instance(seed, 4, 3);
        let (_, optimum) = brute_force_optimal(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PolicyParams::init(&mut rng);
        let initial = random_placement(&inst, &mut rng);
        let budget = 2 * inst.graph().num_tasks();
        let config = EpisodeConfig { steps: Some(budget), eval, plateau_stop: false };
        let outcomes = [
            run_episode(&inst, initial.clone(), &LearnedPolicy::new(&params, ActionKind::TaskDevice), &config, Mode::Sample, &mut rng).unwrap().outcome,
            run_episode(&inst, initial.clone(), &LearnedPolicy::new(&params, ActionKind::TaskEft), &config, Mode::Greedy, &mut rng).unwrap().outcome,
            run_episode(&inst, initial.clone(), &UniformPolicy, &config, Mode::Sample, &mut rng).unwrap().outcome,
            random_task_eft_search(&inst, initial.clone(), budget, eval, &mut rng).unwrap(),
            random_sampling(&inst, initial.clone(), budget, eval, &mut rng).unwrap(),
        ];
        for o in &outcomes {
            assert!(o.best_objective >= optimum - 1e-9);
            assert!(o.best_objective <= o.initial_objective);
            assert_eq!(o.curve.len(), budget + 1);
            assert!(o.curve.windows(2).all(|w| w[1] <= w[0]));
            let replay = simulate(&inst, &o.best_placement, LatencyModel::EXACT, &mut rng).unwrap().makespan;
            assert_eq!(replay, o.best_objective);
        }
        let h = simulate(&inst, &heft(&inst, true).placement(), LatencyModel::EXACT, &mut rng).unwrap().makespan;
        assert!(h >= optimum - 1e-9);
        assert!(slr(optimum, &inst).unwrap() >= 1.0 - 1e-12);
    }
}

#[test]
fn short_training_run_is_reproducible() {
    let train_set: Vec<_> = (0..4).map(|s| instance(s, 8, 4)).collect();
    let held_out: Vec<_> = (10..12).map(|s| instance(s, 8, 4)).collect();
    let config = TrainConfig { episodes: 6, eval_every: 3, seed: 9, ..Default::default() };
    let params = PolicyParams::init(&mut ChaCha8Rng::seed_from_u64(1));
    let (a, log_a) = train(config, params.clone(), &train_set, &held_out).unwrap();
    let (b, log_b) = train(config, params.clone(), &train_set, &held_out).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(log_a, log_b);
    assert_ne!(a.params, params);
    assert_eq!(log_a.iter().filter(|r| r.eval_slr.is_some()).count(), 2);
    assert!(log_a.iter().all(|r| r.final_slr >= 1.0 - 1e-12 && r.instance_id < 4));
}

#[test]
fn noisy_evaluation_stays_positive() {
    let inst = instance(3, 10, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eval = EvalConfig { objective: Objective::Makespan, model: LatencyModel::new(0.3).unwrap() };
    let out = random_task_eft_search(&inst, random_placement(&inst, &mut rng), 20, eval, &mut rng).unwrap();
    assert!(out.best_objective > 0.0 && out.best_objective.is_finite());
}
