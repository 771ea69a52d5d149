//! Discrete-event runtime simulator and the closed-form latency helpers.
//!
//! Devices run one task at a time, non-preemptively, taking runnable tasks in
//! FIFO order of the time they became runnable (ties by task id). A finished
//! task starts all its outgoing transmissions at once and links never contend.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DeviceId, Placement, ProblemInstance, TaskId};
use crate::error::{Error, Result};

/// `w_ik = C_i / SP_k`.
pub fn expected_compute_time(instance: &ProblemInstance, task: TaskId, device: DeviceId) -> Result<f64> {
    let t = instance.graph().task(task)?;
    let d = instance.network().device(device)?;
    if !instance.is_feasible_pair(task, device) {
        return Err(Error::Infeasible { task, device });
    }
    Ok(t.compute / d.speed)
}

/// `DL_kl + B_ij / BW_kl`, and exactly zero for a local transfer.
pub fn expected_comm_time(instance: &ProblemInstance, edge: usize, src: DeviceId, dst: DeviceId) -> f64 {
    if src == dst {
        return 0.0;
    }
    let link = instance.network().link(src, dst);
    link.delay + instance.graph().edge(edge).bytes / link.bandwidth
}

// Unchecked variant used on hot paths where feasibility is already known.
#[inline]
pub(crate) fn compute_time(instance: &ProblemInstance, task: TaskId, device: DeviceId) -> f64 {
    instance.graph().tasks()[task].compute / instance.network().devices()[device].speed
}

/// Multiplicative execution noise: realized times are uniform on
/// `[x(1-σ), x(1+σ)]` around their expectation `x`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyModel {
    noise: f64,
}

impl LatencyModel {
    pub const EXACT: LatencyModel = LatencyModel { noise: 0.0 };

    pub fn new(noise: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&noise) {
            return Err(Error::InvalidValue { field: "noise", value: noise });
        }
        Ok(Self { noise })
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    fn realize<R: Rng + ?Sized>(&self, expected: f64, rng: &mut R) -> f64 {
        if self.noise == 0.0 || expected == 0.0 {
            expected
        } else {
            expected * rng.gen_range(1.0 - self.noise..=1.0 + self.noise)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub device: DeviceId,
    pub runnable: f64,
    pub start: f64,
    pub done: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxTiming {
    pub start: f64,
    pub done: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub tasks: Vec<TaskTiming>,
    /// Indexed like the graph's edge list.
    pub edges: Vec<TxTiming>,
    pub makespan: f64,
}

impl SimTrace {
    /// True when some task waited for its device after becoming runnable.
    pub fn has_queueing_wait(&self) -> bool {
        self.tasks.iter().any(|t| t.start > t.runnable)
    }

    pub fn placement(&self) -> Placement {
        Placement::new(self.tasks.iter().map(|t| t.device).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    TxDone,
    TaskRunnable,
    TaskDone,
    // Subject is the device: the task is chosen from its queue when the
    // event fires, so same-time arrivals still respect FIFO/id order.
    TaskStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    kind: EventKind,
    subject: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.subject.cmp(&other.subject))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs the placed graph once and records every timestamp.
///
/// Realized durations are drawn up front (tasks by id, then edges by index),
/// and only when `σ > 0`, so an exact model never touches `rng`.
pub fn simulate<R: Rng + ?Sized>(
    instance: &ProblemInstance,
    placement: &Placement,
    model: LatencyModel,
    rng: &mut R,
) -> Result<SimTrace> {
    instance.check_placement(placement)?;
    let graph = instance.graph();
    let n = graph.num_tasks();
    let m = instance.network().num_devices();
    let assign = placement.as_slice();

    let work: Vec<f64> = (0..n).map(|t| model.realize(compute_time(instance, t, assign[t]), rng)).collect();
    let comm: Vec<f64> = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| model.realize(expected_comm_time(instance, i, assign[e.src], assign[e.dst]), rng))
        .collect();

    let nan = f64::NAN;
    let mut tasks: Vec<TaskTiming> = assign
        .iter()
        .map(|&device| TaskTiming { device, runnable: nan, start: nan, done: nan })
        .collect();
    let mut edges = vec![TxTiming { start: nan, done: nan }; graph.num_edges()];
    let mut pending_inputs: Vec<usize> = (0..n).map(|t| graph.in_edges(t).len()).collect();
    let mut queues: Vec<BTreeSet<(OrdTime, TaskId)>> = vec![BTreeSet::new(); m];
    // A device is claimed from the moment a TaskStart is scheduled on it.
    let mut claimed = vec![false; m];

    let mut events = BinaryHeap::new();
    let push = |events: &mut BinaryHeap<Reverse<Event>>, time, kind, subject| {
        events.push(Reverse(Event { time, kind, subject }));
    };
    push(&mut events, 0.0, EventKind::TaskRunnable, graph.entry());

    while let Some(Reverse(ev)) = events.pop() {
        let now = ev.time;
        match ev.kind {
            EventKind::TxDone => {
                let e = ev.subject;
                edges[e].done = now;
                let dst = graph.edge(e).dst;
                pending_inputs[dst] -= 1;
                if pending_inputs[dst] == 0 {
                    push(&mut events, now, EventKind::TaskRunnable, dst);
                }
            }
            EventKind::TaskRunnable => {
                let t = ev.subject;
                tasks[t].runnable = now;
                let d = assign[t];
                queues[d].insert((OrdTime(now), t));
                if !claimed[d] {
                    claimed[d] = true;
                    push(&mut events, now, EventKind::TaskStart, d);
                }
            }
            EventKind::TaskStart => {
                let d = ev.subject;
                let (_, t) = queues[d].pop_first().expect("claimed device has a queued task");
                tasks[t].start = now;
                push(&mut events, now + work[t], EventKind::TaskDone, t);
            }
            EventKind::TaskDone => {
                let t = ev.subject;
                tasks[t].done = now;
                for &e in graph.out_edges(t) {
                    edges[e].start = now;
                    push(&mut events, now + comm[e], EventKind::TxDone, e);
                }
                let d = assign[t];
                if queues[d].is_empty() {
                    claimed[d] = false;
                } else {
                    push(&mut events, now, EventKind::TaskStart, d);
                }
            }
        }
    }

    let makespan = tasks[graph.exit()].done - tasks[graph.entry()].start;
    Ok(SimTrace { tasks, edges, makespan })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdTime(f64);

impl Eq for OrdTime {}

impl Ord for OrdTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for OrdTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Longest entry-to-exit path of expected compute and communication costs,
/// ignoring device queueing. Uses the same arithmetic as [`simulate`], so the
/// two agree bit for bit on traces without queueing.
pub fn path_makespan(instance: &ProblemInstance, placement: &Placement) -> Result<f64> {
    instance.check_placement(placement)?;
    let graph = instance.graph();
    let assign = placement.as_slice();
    let mut finish = vec![0.0f64; graph.num_tasks()];
    for &t in graph.topo_order() {
        let ready = graph
            .in_edges(t)
            .iter()
            .map(|&e| {
                let p = graph.edge(e).src;
                finish[p] + expected_comm_time(instance, e, assign[p], assign[t])
            })
            .fold(0.0, f64::max);
        finish[t] = ready + compute_time(instance, t, assign[t]);
    }
    Ok(finish[graph.exit()])
}

/// Schedule length ratio: `makespan` over the minimum-compute critical path.
pub fn slr(makespan: f64, instance: &ProblemInstance) -> Result<f64> {
    if !makespan.is_finite() || makespan < 0.0 {
        return Err(Error::InvalidValue { field: "makespan", value: makespan });
    }
    let denom = instance.min_compute_critical_path();
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(makespan / denom)
}

/// Sum of expected compute time over tasks plus expected communication time
/// over edges.
pub fn total_cost(instance: &ProblemInstance, placement: &Placement) -> Result<f64> {
    instance.check_placement(placement)?;
    let graph = instance.graph();
    let assign = placement.as_slice();
    let compute: f64 = (0..graph.num_tasks()).map(|t| compute_time(instance, t, assign[t])).sum();
    let comm: f64 = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| expected_comm_time(instance, i, assign[e.src], assign[e.dst]))
        .sum();
    Ok(compute + comm)
}

/// Quantity minimized by the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Simulated makespan under the configured latency model.
    #[default]
    Makespan,
    /// Expected compute plus communication cost; deterministic.
    TotalCost,
}

impl Objective {
    pub fn evaluate<R: Rng + ?Sized>(
        self,
        instance: &ProblemInstance,
        placement: &Placement,
        model: LatencyModel,
        rng: &mut R,
    ) -> Result<f64> {
        match self {
            Objective::Makespan => Ok(simulate(instance, placement, model, rng)?.makespan),
            Objective::TotalCost => total_cost(instance, placement),
        }
    }
}
