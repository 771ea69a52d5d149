//! Non-learned placement policies and the exhaustive oracle.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{random_placement, DeviceId, Placement, ProblemInstance, TaskId};
use crate::environment::{Action, EvalConfig, SearchOutcome, SearchState};
use crate::error::{Error, Result};
use crate::simulator::{compute_time, expected_comm_time, simulate, LatencyModel, SimTrace};

/// Feasible device minimizing `max_p(finish_p + c_p→k) + w_k` given where the
/// parents run and when they finish. Ties go to the lowest device id.
/// Returns the device and its estimated finish time.
pub fn eft_device(
    instance: &ProblemInstance,
    task: TaskId,
    devices: &[Option<DeviceId>],
    finish: &[f64],
) -> Result<(DeviceId, f64)> {
    let graph = instance.graph();
    let mut parents = Vec::with_capacity(graph.in_edges(task).len());
    for &e in graph.in_edges(task) {
        let p = graph.edge(e).src;
        match devices.get(p).copied().flatten() {
            Some(d) => parents.push((e, d, finish[p])),
            None => return Err(Error::UnplacedParent { task, parent: p }),
        }
    }
    let mut best: Option<(DeviceId, f64)> = None;
    for &k in instance.feasible_devices(task)? {
        let ready = parents
            .iter()
            .map(|&(e, d, f)| f + expected_comm_time(instance, e, d, k))
            .fold(0.0, f64::max);
        let eft = ready + compute_time(instance, task, k);
        if best.is_none_or(|(_, b)| eft < b) {
            best = Some((k, eft));
        }
    }
    Ok(best.expect("feasible sets are non-empty"))
}

/// EFT device for `task` with every other task where `placement` puts it
/// and parent finish times read from `trace`.
pub fn eft_device_for(
    instance: &ProblemInstance,
    placement: &Placement,
    trace: &SimTrace,
    task: TaskId,
) -> Result<DeviceId> {
    let devices: Vec<Option<DeviceId>> = placement.as_slice().iter().map(|&d| Some(d)).collect();
    let finish: Vec<f64> = trace.tasks.iter().map(|t| t.done).collect();
    Ok(eft_device(instance, task, &devices, &finish)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTask {
    pub device: DeviceId,
    pub start: f64,
    pub finish: f64,
}

/// A list schedule: per task its device and execution interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub tasks: Vec<ScheduledTask>,
}

impl Schedule {
    pub fn placement(&self) -> Placement {
        Placement::new(self.tasks.iter().map(|t| t.device).collect())
    }

    pub fn makespan(&self) -> f64 {
        self.tasks.iter().map(|t| t.finish).fold(0.0, f64::max)
    }
}

/// Upward ranks with compute averaged over each task's feasible devices and
/// communication averaged over all feasible device pairs (local pairs
/// included, costing zero).
pub fn upward_ranks(instance: &ProblemInstance) -> Vec<f64> {
    let graph = instance.graph();
    let sets: Vec<&[DeviceId]> =
        (0..graph.num_tasks()).map(|t| instance.feasible_devices(t).expect("dense ids")).collect();
    let mut rank = vec![0.0; graph.num_tasks()];
    for &t in graph.topo_order().iter().rev() {
        let w_bar = sets[t].iter().map(|&k| compute_time(instance, t, k)).sum::<f64>() / sets[t].len() as f64;
        let tail = graph
            .out_edges(t)
            .iter()
            .map(|&e| {
                let j = graph.edge(e).dst;
                let mut total = 0.0;
                for &k in sets[t] {
                    for &l in sets[j] {
                        total += expected_comm_time(instance, e, k, l);
                    }
                }
                total / (sets[t].len() * sets[j].len()) as f64 + rank[j]
            })
            .fold(0.0, f64::max);
        rank[t] = w_bar + tail;
    }
    rank
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ready {
    rank: f64,
    task: TaskId,
}

impl Eq for Ready {}

impl Ord for Ready {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap: higher rank first, then lower id
        self.rank.total_cmp(&other.rank).then(other.task.cmp(&self.task))
    }
}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Earliest start `>= ready` of a `duration`-long slot on a device whose
/// busy intervals are `busy` (sorted by start).
fn earliest_slot(busy: &[(f64, f64)], ready: f64, duration: f64, insertion: bool) -> f64 {
    if !insertion {
        return busy.last().map_or(ready, |&(_, end)| end.max(ready));
    }
    let mut candidate = ready;
    for &(start, end) in busy {
        if candidate + duration <= start {
            return candidate;
        }
        candidate = candidate.max(end);
    }
    candidate
}

/// Heterogeneous earliest-finish-time list scheduling. Tasks are taken by
/// descending upward rank among those whose parents are scheduled, and each
/// goes to the device giving it the earliest finish (optionally filling idle
/// gaps between already scheduled tasks).
pub fn heft(instance: &ProblemInstance, insertion: bool) -> Schedule {
    let graph = instance.graph();
    let n = graph.num_tasks();
    let rank = upward_ranks(instance);
    let mut pending: Vec<usize> = (0..n).map(|t| graph.in_edges(t).len()).collect();
    let mut busy: Vec<Vec<(f64, f64)>> = vec![Vec::new(); instance.network().num_devices()];
    let mut placed: Vec<Option<ScheduledTask>> = vec![None; n];
    let mut ready = BinaryHeap::new();
    ready.push(Ready { rank: rank[graph.entry()], task: graph.entry() });

    while let Some(Ready { task, .. }) = ready.pop() {
        let mut best: Option<ScheduledTask> = None;
        for &k in instance.feasible_devices(task).expect("dense ids") {
            let arrival = graph
                .in_edges(task)
                .iter()
                .map(|&e| {
                    let p = graph.edge(e).src;
                    let sp = placed[p].expect("parents are scheduled first");
                    sp.finish + expected_comm_time(instance, e, sp.device, k)
                })
                .fold(0.0, f64::max);
            let w = compute_time(instance, task, k);
            let start = earliest_slot(&busy[k], arrival, w, insertion);
            let candidate = ScheduledTask { device: k, start, finish: start + w };
            if best.is_none_or(|b| candidate.finish < b.finish) {
                best = Some(candidate);
            }
        }
        let chosen = best.expect("feasible sets are non-empty");
        let slots = &mut busy[chosen.device];
        let at = slots.partition_point(|&(s, _)| s <= chosen.start);
        slots.insert(at, (chosen.start, chosen.finish));
        placed[task] = Some(chosen);
        for &e in graph.out_edges(task) {
            let j = graph.edge(e).dst;
            pending[j] -= 1;
            if pending[j] == 0 {
                ready.push(Ready { rank: rank[j], task: j });
            }
        }
    }
    Schedule { tasks: placed.into_iter().map(|s| s.expect("every task is reachable from the entry")).collect() }
}

/// Each step moves one uniformly chosen task to its EFT device under the
/// current placement; reports the best placement seen.
pub fn random_task_eft_search<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    initial: Placement,
    steps: usize,
    eval: EvalConfig,
    rng: &mut R,
) -> Result<SearchOutcome> {
    let mut state = SearchState::new(instance, initial, eval, rng)?;
    let initial_objective = state.objective();
    let mut curve = vec![initial_objective];
    let n = instance.graph().num_tasks();
    for _ in 0..steps {
        let task = rng.gen_range(0..n);
        let device = eft_device_for(instance, state.placement(), state.trace(), task)?;
        state.apply(Action { task, device }, eval, rng)?;
        curve.push(state.best().1);
    }
    let (best, best_objective) = state.best();
    Ok(SearchOutcome { initial_objective, best_placement: best.clone(), best_objective, curve })
}

/// Scores `initial` and then `samples` independent uniform placements.
pub fn random_sampling<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    initial: Placement,
    samples: usize,
    eval: EvalConfig,
    rng: &mut R,
) -> Result<SearchOutcome> {
    let initial_objective = eval.objective.evaluate(instance, &initial, eval.model, rng)?;
    let mut best = (initial, initial_objective);
    let mut curve = vec![initial_objective];
    for _ in 0..samples {
        let p = random_placement(instance, rng);
        let value = eval.objective.evaluate(instance, &p, eval.model, rng)?;
        if value < best.1 {
            best = (p, value);
        }
        curve.push(best.1);
    }
    Ok(SearchOutcome { initial_objective, best_placement: best.0, best_objective: best.1, curve })
}

/// Largest state space [`brute_force_optimal`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Minimum noise-free simulated makespan over all feasible placements; ties
/// go to the lexicographically smallest assignment.
pub fn brute_force_optimal(instance: &ProblemInstance) -> Result<(Placement, f64)> {
    let size = instance.state_space_size();
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::StateSpaceTooLarge(size));
    }
    let n = instance.graph().num_tasks();
    let sets: Vec<&[DeviceId]> = (0..n).map(|t| instance.feasible_devices(t)).collect::<Result<_>>()?;
    let mut digits = vec![0usize; n];
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut best: Option<(Placement, f64)> = None;
    loop {
        let p = Placement::new((0..n).map(|t| sets[t][digits[t]]).collect());
        let makespan = simulate(instance, &p, LatencyModel::EXACT, &mut rng)?.makespan;
        if best.as_ref().is_none_or(|b| makespan < b.1) {
            best = Some((p, makespan));
        }
        // advance the mixed-radix counter, last task fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(best.expect("at least one placement"));
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < sets[pos].len() {
                break;
            }
            digits[pos] = 0;
        }
    }
}
