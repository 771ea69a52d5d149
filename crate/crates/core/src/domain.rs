//! Task graphs, device networks, placements and problem instances.
//!
//! Every type here is immutable once constructed and validated, so a
//! [`ProblemInstance`] can be shared read-only between concurrent searches.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::Rng;

use crate::error::{Error, Result};

pub type TaskId = usize;
pub type DeviceId = usize;
pub type HwTag = u32;

/// Hardware tag every device supports, whether or not it lists it.
pub const UNIVERSAL_TAG: HwTag = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    /// Abstract compute units.
    pub compute: f64,
    pub hw_req: HwTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataLink {
    pub src: TaskId,
    pub dst: TaskId,
    /// Data units carried from `src` to `dst`.
    pub bytes: f64,
}

/// A single-entry, single-exit DAG of tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    tasks: Vec<Task>,
    edges: Vec<DataLink>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    topo: Vec<TaskId>,
    entry: TaskId,
    exit: TaskId,
}

impl TaskGraph {
    /// Validates the graph and inserts a zero-compute pseudo entry (exit) task
    /// when there is more than one task without parents (children).
    pub fn new(mut tasks: Vec<Task>, mut edges: Vec<DataLink>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::EmptyGraph);
        }
        for (position, task) in tasks.iter().enumerate() {
            if task.id != position {
                return Err(Error::NonDenseTaskId { position, id: task.id });
            }
            if !task.compute.is_finite() || task.compute < 0.0 {
                return Err(Error::InvalidValue { field: "compute", value: task.compute });
            }
        }
        for edge in &edges {
            if !edge.bytes.is_finite() || edge.bytes < 0.0 {
                return Err(Error::InvalidValue { field: "bytes", value: edge.bytes });
            }
        }
        let pairs: Vec<(TaskId, TaskId)> = edges.iter().map(|e| (e.src, e.dst)).collect();
        topological_order(tasks.len(), &pairs)?;

        let n = tasks.len();
        let mut has_parent = vec![false; n];
        let mut has_child = vec![false; n];
        for e in &edges {
            has_child[e.src] = true;
            has_parent[e.dst] = true;
        }
        let entries: Vec<TaskId> = (0..n).filter(|&i| !has_parent[i]).collect();
        let exits: Vec<TaskId> = (0..n).filter(|&i| !has_child[i]).collect();
        if entries.len() > 1 {
            let id = tasks.len();
            tasks.push(Task { id, compute: 0.0, hw_req: UNIVERSAL_TAG });
            edges.extend(entries.iter().map(|&dst| DataLink { src: id, dst, bytes: 0.0 }));
        }
        if exits.len() > 1 {
            let id = tasks.len();
            tasks.push(Task { id, compute: 0.0, hw_req: UNIVERSAL_TAG });
            edges.extend(exits.iter().map(|&src| DataLink { src, dst: id, bytes: 0.0 }));
        }

        let n = tasks.len();
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (idx, e) in edges.iter().enumerate() {
            out_edges[e.src].push(idx);
            in_edges[e.dst].push(idx);
        }
        let pairs: Vec<(TaskId, TaskId)> = edges.iter().map(|e| (e.src, e.dst)).collect();
        let topo = topological_order(n, &pairs)?;
        let entry = (0..n).find(|&i| in_edges[i].is_empty()).ok_or(Error::EmptyGraph)?;
        let exit = (0..n).find(|&i| out_edges[i].is_empty()).ok_or(Error::EmptyGraph)?;
        Ok(Self { tasks, edges, in_edges, out_edges, topo, entry, exit })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> Result<&Task> {
        self.tasks.get(id).ok_or(Error::UnknownTask(id))
    }

    pub fn edges(&self) -> &[DataLink] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &DataLink {
        &self.edges[idx]
    }

    /// Indices (into [`TaskGraph::edges`]) of edges entering `task`.
    pub fn in_edges(&self, task: TaskId) -> &[usize] {
        &self.in_edges[task]
    }

    /// Indices (into [`TaskGraph::edges`]) of edges leaving `task`.
    pub fn out_edges(&self, task: TaskId) -> &[usize] {
        &self.out_edges[task]
    }

    pub fn parents(&self, task: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.in_edges[task].iter().map(move |&e| self.edges[e].src)
    }

    pub fn children(&self, task: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.out_edges[task].iter().map(move |&e| self.edges[e].dst)
    }

    pub fn degree(&self, task: TaskId) -> usize {
        self.in_edges[task].len() + self.out_edges[task].len()
    }

    pub fn find_edge(&self, src: TaskId, dst: TaskId) -> Option<usize> {
        self.out_edges.get(src)?.iter().copied().find(|&e| self.edges[e].dst == dst)
    }

    /// Topological order with ties broken by ascending task id.
    pub fn topo_order(&self) -> &[TaskId] {
        &self.topo
    }

    pub fn entry(&self) -> TaskId {
        self.entry
    }

    pub fn exit(&self) -> TaskId {
        self.exit
    }

    /// Number of tasks on the longest entry-to-exit path.
    pub fn depth(&self) -> usize {
        let mut level = vec![1usize; self.num_tasks()];
        for &t in &self.topo {
            for c in self.children(t) {
                level[c] = level[c].max(level[t] + 1);
            }
        }
        level.into_iter().max().unwrap_or(0)
    }
}

/// Kahn's algorithm over `n` tasks, always releasing the smallest ready id.
///
/// On a cycle, the error names one edge closing it.
pub fn topological_order(n: usize, edges: &[(TaskId, TaskId)]) -> Result<Vec<TaskId>> {
    let mut children = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    let mut seen = BTreeSet::new();
    for &(src, dst) in edges {
        if src >= n || dst >= n {
            return Err(Error::DanglingEdge { src, dst });
        }
        if src == dst {
            return Err(Error::SelfLoop(src));
        }
        if !seen.insert((src, dst)) {
            return Err(Error::DuplicateEdge { src, dst });
        }
        children[src].push(dst);
        indeg[dst] += 1;
    }
    let mut ready: BinaryHeap<Reverse<TaskId>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(t)) = ready.pop() {
        order.push(t);
        for &c in &children[t] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    let (src, dst) = find_back_edge(&children, &indeg);
    Err(Error::Cycle { src, dst })
}

// Every node with remaining in-degree lies on or downstream of a cycle, so a
// DFS restricted to them must hit a grey node.
fn find_back_edge(children: &[Vec<TaskId>], indeg: &[usize]) -> (TaskId, TaskId) {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let n = children.len();
    let mut color = vec![Color::White; n];
    for root in (0..n).filter(|&i| indeg[i] > 0) {
        if color[root] != Color::White {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = Color::Grey;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&child) = children[node].get(*next) {
                *next += 1;
                if indeg[child] == 0 {
                    continue;
                }
                match color[child] {
                    Color::Grey => return (node, child),
                    Color::White => {
                        color[child] = Color::Grey;
                        stack.push((child, 0));
                    }
                    Color::Black => {}
                }
            } else {
                color[node] = Color::Black;
                stack.pop();
            }
        }
    }
    unreachable!("Kahn's algorithm stalled without a cycle")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: DeviceId,
    /// Compute units per ms.
    pub speed: f64,
    pub hw_support: BTreeSet<HwTag>,
}

impl Device {
    pub fn supports(&self, tag: HwTag) -> bool {
        tag == UNIVERSAL_TAG || self.hw_support.contains(&tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    /// Data units per ms; infinite on the diagonal.
    pub bandwidth: f64,
    /// ms.
    pub delay: f64,
    pub is_local: bool,
}

impl Link {
    pub const LOCAL: Link = Link { bandwidth: f64::INFINITY, delay: 0.0, is_local: true };
}

/// Fully connected device cluster with a dense link matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceNetwork {
    devices: Vec<Device>,
    links: Vec<Link>,
}

impl DeviceNetwork {
    /// Builds a network from an explicit list of directed off-diagonal links
    /// `(src, dst, bandwidth, delay)`. Every ordered pair of distinct devices
    /// must appear exactly once; the diagonal is implied local.
    pub fn new(
        devices: Vec<Device>,
        links: impl IntoIterator<Item = (DeviceId, DeviceId, f64, f64)>,
    ) -> Result<Self> {
        let m = devices.len();
        let mut matrix: Vec<Option<Link>> = vec![None; m * m];
        for (src, dst, bandwidth, delay) in links {
            if src >= m || dst >= m {
                return Err(Error::UnknownDevice(src.max(dst)));
            }
            let slot = &mut matrix[src * m + dst];
            if src == dst || slot.is_some() {
                return Err(Error::BadLink { src, dst });
            }
            *slot = Some(Link { bandwidth, delay, is_local: false });
        }
        let mut full = Vec::with_capacity(m * m);
        for src in 0..m {
            for dst in 0..m {
                if src == dst {
                    full.push(Link::LOCAL);
                } else {
                    full.push(matrix[src * m + dst].ok_or(Error::MissingLink { src, dst })?);
                }
            }
        }
        Self::from_matrix(devices, full)
    }

    /// Builds a network from a row-major `m x m` link matrix. Diagonal
    /// entries are overwritten with [`Link::LOCAL`].
    pub fn from_matrix(devices: Vec<Device>, mut links: Vec<Link>) -> Result<Self> {
        let m = devices.len();
        if m == 0 {
            return Err(Error::EmptyNetwork);
        }
        if links.len() != m * m {
            return Err(Error::ShapeMismatch(alloc::format!(
                "link matrix has {} entries for {} devices",
                links.len(),
                m
            )));
        }
        for (position, d) in devices.iter().enumerate() {
            if d.id != position {
                return Err(Error::NonDenseDeviceId { position, id: d.id });
            }
            if !d.speed.is_finite() || d.speed <= 0.0 {
                return Err(Error::InvalidValue { field: "speed", value: d.speed });
            }
        }
        for src in 0..m {
            for dst in 0..m {
                let link = &mut links[src * m + dst];
                if src == dst {
                    *link = Link::LOCAL;
                    continue;
                }
                link.is_local = false;
                if !link.bandwidth.is_finite() || link.bandwidth <= 0.0 {
                    return Err(Error::InvalidValue { field: "bandwidth", value: link.bandwidth });
                }
                if !link.delay.is_finite() || link.delay < 0.0 {
                    return Err(Error::InvalidValue { field: "delay", value: link.delay });
                }
            }
        }
        Ok(Self { devices, links })
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, id: DeviceId) -> Result<&Device> {
        self.devices.get(id).ok_or(Error::UnknownDevice(id))
    }

    pub fn link(&self, src: DeviceId, dst: DeviceId) -> &Link {
        &self.links[src * self.devices.len() + dst]
    }

    /// Largest finite bandwidth among off-diagonal links, if any exist.
    pub fn max_bandwidth(&self) -> Option<f64> {
        self.links
            .iter()
            .filter(|l| !l.is_local)
            .map(|l| l.bandwidth)
            .fold(None, |acc, bw| Some(acc.map_or(bw, |a: f64| a.max(bw))))
    }

    /// Union of the tags listed by any device.
    pub fn supported_tags(&self) -> BTreeSet<HwTag> {
        let mut tags: BTreeSet<HwTag> =
            self.devices.iter().flat_map(|d| d.hw_support.iter().copied()).collect();
        tags.insert(UNIVERSAL_TAG);
        tags
    }
}

/// Task-to-device mapping indexed by task id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placement {
    assignment: Vec<DeviceId>,
}

impl Placement {
    pub fn new(assignment: Vec<DeviceId>) -> Self {
        Self { assignment }
    }

    pub fn device_of(&self, task: TaskId) -> DeviceId {
        self.assignment[task]
    }

    pub fn set(&mut self, task: TaskId, device: DeviceId) {
        self.assignment[task] = device;
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn as_slice(&self) -> &[DeviceId] {
        &self.assignment
    }

    pub fn into_inner(self) -> Vec<DeviceId> {
        self.assignment
    }
}

/// A task graph paired with a device network, with feasible device sets
/// precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    graph: TaskGraph,
    network: DeviceNetwork,
    feasible: Vec<Vec<DeviceId>>,
    cp_min: f64,
}

impl ProblemInstance {
    pub fn new(graph: TaskGraph, network: DeviceNetwork) -> Result<Self> {
        let mut feasible = Vec::with_capacity(graph.num_tasks());
        for task in graph.tasks() {
            let set: Vec<DeviceId> = network
                .devices()
                .iter()
                .filter(|d| d.supports(task.hw_req))
                .map(|d| d.id)
                .collect();
            if set.is_empty() {
                return Err(Error::EmptyFeasibleSet { task: task.id, tag: task.hw_req });
            }
            feasible.push(set);
        }
        let cp_min = min_compute_critical_path(&graph, &network, &feasible);
        Ok(Self { graph, network, feasible, cp_min })
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn network(&self) -> &DeviceNetwork {
        &self.network
    }

    /// `D_i`: devices supporting the task's hardware tag, ascending by id.
    pub fn feasible_devices(&self, task: TaskId) -> Result<&[DeviceId]> {
        self.feasible.get(task).map(Vec::as_slice).ok_or(Error::UnknownTask(task))
    }

    pub fn is_feasible_pair(&self, task: TaskId, device: DeviceId) -> bool {
        self.feasible.get(task).is_some_and(|set| set.binary_search(&device).is_ok())
    }

    pub fn check_placement(&self, placement: &Placement) -> Result<()> {
        if placement.len() != self.graph.num_tasks() {
            return Err(Error::PlacementLength {
                expected: self.graph.num_tasks(),
                found: placement.len(),
            });
        }
        for (task, &device) in placement.as_slice().iter().enumerate() {
            if !self.is_feasible_pair(task, device) {
                return Err(Error::Infeasible { task, device });
            }
        }
        Ok(())
    }

    /// `Σ_i |D_i|`.
    pub fn action_space_size(&self) -> usize {
        self.feasible.iter().map(Vec::len).sum()
    }

    /// `Π_i |D_i|`, saturating.
    pub fn state_space_size(&self) -> u128 {
        self.feasible.iter().fold(1u128, |acc, set| acc.saturating_mul(set.len() as u128))
    }

    /// Critical path of the graph when every task weighs its fastest feasible
    /// compute time and edges weigh nothing.
    pub fn min_compute_critical_path(&self) -> f64 {
        self.cp_min
    }
}

fn min_compute_critical_path(
    graph: &TaskGraph,
    network: &DeviceNetwork,
    feasible: &[Vec<DeviceId>],
) -> f64 {
    let mut dist = vec![0.0f64; graph.num_tasks()];
    for &t in graph.topo_order() {
        let compute = graph.tasks()[t].compute;
        let min_w = feasible[t]
            .iter()
            .map(|&d| compute / network.devices()[d].speed)
            .fold(f64::INFINITY, f64::min);
        let ready = graph.parents(t).map(|p| dist[p]).fold(0.0, f64::max);
        dist[t] = ready + min_w;
    }
    dist[graph.exit()]
}

/// Draws each task's device uniformly from its feasible set.
pub fn random_placement<R: Rng + ?Sized>(instance: &ProblemInstance, rng: &mut R) -> Placement {
    let assignment = instance
        .feasible
        .iter()
        .map(|set| set[rng.gen_range(0..set.len())])
        .collect();
    Placement::new(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topo_chain_and_diamond() {
        assert_eq!(topological_order(3, &[(0, 1), (1, 2)]).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            topological_order(4, &[(0, 2), (0, 1), (1, 3), (2, 3)]).unwrap(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn topo_reports_back_edge() {
        let err = topological_order(3, &[(0, 1), (1, 2), (2, 0)]).unwrap_err();
        assert!(matches!(err, Error::Cycle { .. }));
        // the reported edge must be one of the cycle's edges
        if let Error::Cycle { src, dst } = err {
            assert!([(0, 1), (1, 2), (2, 0)].contains(&(src, dst)));
        }
    }

    #[test]
    fn topo_rejects_bad_edges() {
        assert_eq!(topological_order(2, &[(0, 0)]), Err(Error::SelfLoop(0)));
        assert_eq!(
            topological_order(2, &[(0, 1), (0, 1)]),
            Err(Error::DuplicateEdge { src: 0, dst: 1 })
        );
        assert_eq!(topological_order(2, &[(0, 5)]), Err(Error::DanglingEdge { src: 0, dst: 5 }));
    }

    #[test]
    fn pseudo_entry_and_exit_are_inserted() {
        let tasks = (0..3).map(|id| Task { id, compute: 1.0, hw_req: 0 }).collect();
        // 0 and 1 are both entries and both exits except through 2
        let edges = vec![DataLink { src: 0, dst: 2, bytes: 1.0 }];
        let g = TaskGraph::new(tasks, edges).unwrap();
        assert_eq!(g.num_tasks(), 5);
        assert_eq!(g.entry(), 3);
        assert_eq!(g.exit(), 4);
        assert_eq!(g.task(3).unwrap().compute, 0.0);
        assert!(g.edges().iter().filter(|e| e.src == 3 || e.dst == 4).all(|e| e.bytes == 0.0));
        assert_eq!(g.parents(0).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn unconstrained_feasible_set_is_everything() {
        let inst = chain_instance(&[1.0, 1.0], &[1.0], &[1.0, 2.0, 3.0], 1.0, 0.0);
        assert_eq!(inst.feasible_devices(0).unwrap(), &[0, 1, 2]);
        assert_eq!(inst.feasible_devices(9), Err(Error::UnknownTask(9)));
    }

    #[test]
    fn fig2_instance_has_four_states() {
        let inst = fig2_instance();
        assert_eq!(inst.feasible_devices(0).unwrap().len(), 2);
        assert_eq!(inst.feasible_devices(1).unwrap().len(), 2);
        assert_eq!(inst.state_space_size(), 4);
        assert_eq!(inst.action_space_size(), 4);
    }

    #[test]
    fn unsupported_tag_is_rejected() {
        let g = TaskGraph::new(vec![Task { id: 0, compute: 1.0, hw_req: 7 }], vec![]).unwrap();
        let n = homogeneous_network(2, 1.0, 1.0, 0.0);
        assert_eq!(
            ProblemInstance::new(g, n),
            Err(Error::EmptyFeasibleSet { task: 0, tag: 7 })
        );
    }

    #[test]
    fn network_requires_all_links() {
        let devices = (0..2).map(|id| device(id, 1.0, &[])).collect::<Vec<_>>();
        let err = DeviceNetwork::new(devices.clone(), [(0, 1, 1.0, 0.0)]).unwrap_err();
        assert_eq!(err, Error::MissingLink { src: 1, dst: 0 });
        let net = DeviceNetwork::new(devices, [(0, 1, 1.0, 0.5), (1, 0, 2.0, 0.0)]).unwrap();
        assert!(net.link(0, 0).is_local);
        assert_eq!(net.link(1, 1).delay, 0.0);
        assert_eq!(net.link(0, 1).delay, 0.5);
        assert_eq!(net.max_bandwidth(), Some(2.0));
    }

    #[test]
    fn forced_random_placement() {
        let inst = fig2_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let forced = constrained_single_choice();
        for _ in 0..10 {
            assert_eq!(random_placement(&forced, &mut rng).as_slice(), &[1, 0]);
        }
        let a = random_placement(&inst, &mut ChaCha8Rng::seed_from_u64(11));
        let b = random_placement(&inst, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn random_placement_is_uniform_over_fig2_states() {
        let inst = fig2_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let states = enumerate_placements(&inst);
        assert_eq!(states.len(), 4);
        let draws = 100_000;
        let mut counts = vec![0usize; states.len()];
        for _ in 0..draws {
            let p = random_placement(&inst, &mut rng);
            counts[states.iter().position(|s| *s == p).unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
        }
    }

    proptest! {
        #[test]
        fn random_placements_are_feasible(seed in 0u64..1000) {
            let inst = random_small_instance(seed, 2..=6, 1..=4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_placement(&inst, &mut rng);
            prop_assert!(inst.check_placement(&p).is_ok());
        }

        #[test]
        fn topo_order_is_a_respecting_permutation(seed in 0u64..1000) {
            let inst = random_small_instance(seed, 2..=8, 1..=2);
            let g = inst.graph();
            let order = g.topo_order();
            let mut sorted = order.to_vec();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..g.num_tasks()).collect::<Vec<_>>());
            let mut pos = vec![0; g.num_tasks()];
            for (i, &t) in order.iter().enumerate() { pos[t] = i; }
            for e in g.edges() { prop_assert!(pos[e.src] < pos[e.dst]); }
        }
    }
}
