// Small hand-built and randomly drawn instances shared by unit tests.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::*;

pub fn device(id: DeviceId, speed: f64, tags: &[HwTag]) -> Device {
    Device { id, speed, hw_support: tags.iter().copied().collect::<BTreeSet<_>>() }
}

pub fn homogeneous_network(m: usize, speed: f64, bandwidth: f64, delay: f64) -> DeviceNetwork {
    network_with_speeds(&vec![speed; m], bandwidth, delay)
}

pub fn network_with_speeds(speeds: &[f64], bandwidth: f64, delay: f64) -> DeviceNetwork {
    let devices = speeds.iter().enumerate().map(|(id, &s)| device(id, s, &[])).collect();
    let m = speeds.len();
    let links = vec![Link { bandwidth, delay, is_local: false }; m * m];
    DeviceNetwork::from_matrix(devices, links).unwrap()
}

/// Chain `0 -> 1 -> ... ` with the given compute values and edge bytes.
pub fn chain_instance(
    compute: &[f64],
    bytes: &[f64],
    speeds: &[f64],
    bandwidth: f64,
    delay: f64,
) -> ProblemInstance {
    let tasks = compute.iter().enumerate().map(|(id, &c)| Task { id, compute: c, hw_req: 0 }).collect();
    let edges = bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| DataLink { src: i, dst: i + 1, bytes: b })
        .collect();
    let graph = TaskGraph::new(tasks, edges).unwrap();
    ProblemInstance::new(graph, network_with_speeds(speeds, bandwidth, delay)).unwrap()
}

pub fn graph_instance(
    compute: &[f64],
    edges: &[(TaskId, TaskId, f64)],
    network: DeviceNetwork,
) -> ProblemInstance {
    let tasks = compute.iter().enumerate().map(|(id, &c)| Task { id, compute: c, hw_req: 0 }).collect();
    let edges = edges.iter().map(|&(src, dst, bytes)| DataLink { src, dst, bytes }).collect();
    ProblemInstance::new(TaskGraph::new(tasks, edges).unwrap(), network).unwrap()
}

/// Two tasks `v0 -> v1` on three devices with `D_0 = {d0, d1}` and
/// `D_1 = {d1, d2}`.
pub fn fig2_instance() -> ProblemInstance {
    let tasks = vec![
        Task { id: 0, compute: 4.0, hw_req: 1 },
        Task { id: 1, compute: 6.0, hw_req: 2 },
    ];
    let graph = TaskGraph::new(tasks, vec![DataLink { src: 0, dst: 1, bytes: 3.0 }]).unwrap();
    let devices = vec![device(0, 1.0, &[1]), device(1, 2.0, &[1, 2]), device(2, 3.0, &[2])];
    let links = [(0, 1, 2.0, 0.5), (1, 0, 2.0, 0.5), (0, 2, 1.0, 1.0), (2, 0, 1.0, 1.0), (1, 2, 3.0, 0.2), (2, 1, 3.0, 0.2)];
    ProblemInstance::new(graph, DeviceNetwork::new(devices, links).unwrap()).unwrap()
}

/// Every task has exactly one feasible device: v0 only on d1, v1 only on d0.
pub fn constrained_single_choice() -> ProblemInstance {
    let tasks = vec![
        Task { id: 0, compute: 1.0, hw_req: 1 },
        Task { id: 1, compute: 1.0, hw_req: 2 },
    ];
    let graph = TaskGraph::new(tasks, vec![DataLink { src: 0, dst: 1, bytes: 1.0 }]).unwrap();
    let devices = vec![device(0, 1.0, &[2]), device(1, 1.0, &[1])];
    let net = DeviceNetwork::new(devices, [(0, 1, 1.0, 0.0), (1, 0, 1.0, 0.0)]).unwrap();
    ProblemInstance::new(graph, net).unwrap()
}

pub fn enumerate_placements(instance: &ProblemInstance) -> Vec<Placement> {
    let n = instance.graph().num_tasks();
    let sets: Vec<&[DeviceId]> = (0..n).map(|t| instance.feasible_devices(t).unwrap()).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        out.push(Placement::new((0..n).map(|t| sets[t][idx[t]]).collect()));
        let mut pos = n;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < sets[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Random DAG over `tasks` nodes (edge i->j, i<j, with probability 1/2)
/// on a random heterogeneous network with occasional hardware constraints.
pub fn random_small_instance(
    seed: u64,
    tasks: core::ops::RangeInclusive<usize>,
    devices: core::ops::RangeInclusive<usize>,
) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(tasks);
    let m = rng.gen_range(devices);
    let task_list = (0..n)
        .map(|id| Task {
            id,
            compute: rng.gen_range(0.5..5.0),
            hw_req: if rng.gen_bool(0.2) { 1 } else { 0 },
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                edges.push(DataLink { src: i, dst: j, bytes: rng.gen_range(0.0..4.0) });
            }
        }
    }
    let mut dev: Vec<Device> = (0..m)
        .map(|id| {
            let tags: &[HwTag] = if rng.gen_bool(0.5) { &[1] } else { &[] };
            device(id, rng.gen_range(0.5..3.0), tags)
        })
        .collect();
    dev[0].hw_support.insert(1);
    let mut links = Vec::with_capacity(m * m);
    for _ in 0..m * m {
        links.push(Link {
            bandwidth: rng.gen_range(0.5..4.0),
            delay: rng.gen_range(0.0..1.0),
            is_local: false,
        });
    }
    let network = DeviceNetwork::from_matrix(dev, links).unwrap();
    ProblemInstance::new(TaskGraph::new(task_list, edges).unwrap(), network).unwrap()
}
