//! The placement graph ("gpNet") of a problem instance under a placement.
//!
//! Every feasible (task, device) pair becomes a node; nodes of the same task
//! form an option group, and the node matching the current placement is the
//! group's pivot. For each task-graph edge `i -> j` the nodes of `O_i` and
//! `O_j` are connected whenever at least one endpoint is a pivot, so the
//! pivot-induced subgraph is a copy of the task graph and every other node
//! hangs off its neighbours' pivots.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::Serialize;

use crate::domain::{DeviceId, Placement, ProblemInstance, TaskId};
use crate::error::{Error, Result};
use crate::simulator::{compute_time, expected_comm_time, SimTrace};

pub const NODE_FEATURES: usize = 4;
pub const EDGE_FEATURES: usize = 4;

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GpNode {
    pub task: TaskId,
    pub device: DeviceId,
    pub is_pivot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GpEdge {
    pub src: usize,
    pub dst: usize,
    /// Index of the task-graph edge this one is derived from.
    pub graph_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GpNet {
    nodes: Vec<GpNode>,
    edges: Vec<GpEdge>,
    /// `(C_i, SP_k, w_ik, stp_ik)` per node.
    raw_node_features: Vec<[f64; NODE_FEATURES]>,
    /// `(B_ij, BW_kl, DL_kl, c_ij,kl)` per edge.
    raw_edge_features: Vec<[f64; EDGE_FEATURES]>,
    node_features: Vec<[f64; NODE_FEATURES]>,
    edge_features: Vec<[f64; EDGE_FEATURES]>,
    groups: Vec<Range<usize>>,
    pivots: Vec<usize>,
    #[serde(skip)]
    in_edges: Vec<Vec<usize>>,
    #[serde(skip)]
    out_edges: Vec<Vec<usize>>,
    #[serde(skip)]
    topo: Vec<usize>,
}

/// Builds the full placement graph. `trace` must come from simulating
/// `placement` without noise; it supplies the start-time potentials.
pub fn build_gpnet(instance: &ProblemInstance, placement: &Placement, trace: &SimTrace) -> Result<GpNet> {
    build(instance, placement, trace, false)
}

/// The subgraph induced by the pivots: one node per task, edges as in the
/// task graph. Used when a policy only chooses tasks.
pub fn build_pivot_net(instance: &ProblemInstance, placement: &Placement, trace: &SimTrace) -> Result<GpNet> {
    build(instance, placement, trace, true)
}

fn build(instance: &ProblemInstance, placement: &Placement, trace: &SimTrace, pivots_only: bool) -> Result<GpNet> {
    instance.check_placement(placement)?;
    let graph = instance.graph();
    if trace.tasks.len() != graph.num_tasks() || trace.edges.len() != graph.num_edges() {
        return Err(Error::TraceMismatch(format!(
            "trace covers {} tasks and {} edges, graph has {} and {}",
            trace.tasks.len(),
            trace.edges.len(),
            graph.num_tasks(),
            graph.num_edges()
        )));
    }
    if let Some(task) = (0..graph.num_tasks()).find(|&t| trace.tasks[t].device != placement.device_of(t)) {
        return Err(Error::TraceMismatch(format!(
            "task {task} runs on {} in the trace but is placed on {}",
            trace.tasks[task].device,
            placement.device_of(task)
        )));
    }

    let mut nodes = Vec::new();
    let mut groups = Vec::with_capacity(graph.num_tasks());
    let mut pivots = Vec::with_capacity(graph.num_tasks());
    let mut raw_node_features = Vec::new();
    for task in 0..graph.num_tasks() {
        let start = nodes.len();
        for &device in instance.feasible_devices(task)? {
            let is_pivot = device == placement.device_of(task);
            if pivots_only && !is_pivot {
                continue;
            }
            if is_pivot {
                pivots.push(nodes.len());
            }
            nodes.push(GpNode { task, device, is_pivot });
            raw_node_features.push(node_features_unchecked(instance, placement, trace, task, device));
        }
        groups.push(start..nodes.len());
    }

    let mut edges = Vec::new();
    let mut raw_edge_features = Vec::new();
    for (graph_edge, e) in graph.edges().iter().enumerate() {
        for src in groups[e.src].clone() {
            for dst in groups[e.dst].clone() {
                if nodes[src].is_pivot || nodes[dst].is_pivot {
                    edges.push(GpEdge { src, dst, graph_edge });
                    raw_edge_features.push(compose_edge_features(
                        instance,
                        graph_edge,
                        nodes[src].device,
                        nodes[dst].device,
                    ));
                }
            }
        }
    }

    let mut in_edges = vec![Vec::new(); nodes.len()];
    let mut out_edges = vec![Vec::new(); nodes.len()];
    for (idx, e) in edges.iter().enumerate() {
        out_edges[e.src].push(idx);
        in_edges[e.dst].push(idx);
    }
    // every edge goes from O_i to O_j with i before j in the task order
    let topo = graph.topo_order().iter().flat_map(|&t| groups[t].clone()).collect();

    Ok(GpNet {
        node_features: normalize(&raw_node_features),
        edge_features: normalize(&raw_edge_features),
        nodes,
        edges,
        raw_node_features,
        raw_edge_features,
        groups,
        pivots,
        in_edges,
        out_edges,
        topo,
    })
}

/// `(C_i, SP_k, w_ik, stp_ik)` where the start-time potential `stp` is the
/// earliest start of task `i` on device `k` given its parents' finish times
/// in `trace` (queueing ignored), minus its actual start in `trace`.
pub fn compose_node_features(
    instance: &ProblemInstance,
    placement: &Placement,
    trace: &SimTrace,
    task: TaskId,
    device: DeviceId,
) -> Result<[f64; NODE_FEATURES]> {
    instance.graph().task(task)?;
    if !instance.is_feasible_pair(task, device) {
        return Err(Error::Infeasible { task, device });
    }
    Ok(node_features_unchecked(instance, placement, trace, task, device))
}

fn node_features_unchecked(
    instance: &ProblemInstance,
    placement: &Placement,
    trace: &SimTrace,
    task: TaskId,
    device: DeviceId,
) -> [f64; NODE_FEATURES] {
    let graph = instance.graph();
    let est = graph
        .in_edges(task)
        .iter()
        .map(|&e| {
            let p = graph.edge(e).src;
            trace.tasks[p].done + expected_comm_time(instance, e, placement.device_of(p), device)
        })
        .fold(0.0, f64::max);
    [
        graph.tasks()[task].compute,
        instance.network().devices()[device].speed,
        compute_time(instance, task, device),
        est - trace.tasks[task].start,
    ]
}

/// `(B_ij, BW_kl, DL_kl, c_ij,kl)`. A local pair has no finite bandwidth, so
/// it reports the network's largest off-diagonal bandwidth, zero delay and
/// zero communication time.
pub fn compose_edge_features(
    instance: &ProblemInstance,
    edge: usize,
    src: DeviceId,
    dst: DeviceId,
) -> [f64; EDGE_FEATURES] {
    let bytes = instance.graph().edge(edge).bytes;
    if src == dst {
        let bw = instance.network().max_bandwidth().unwrap_or(1.0);
        return [bytes, bw, 0.0, 0.0];
    }
    let link = instance.network().link(src, dst);
    [bytes, link.bandwidth, link.delay, expected_comm_time(instance, edge, src, dst)]
}

/// Divides every channel by its mean absolute value over the rows.
fn normalize<const N: usize>(rows: &[[f64; N]]) -> Vec<[f64; N]> {
    if rows.is_empty() {
        return Vec::new();
    }
    let mut scale = [0.0; N];
    for row in rows {
        for (s, x) in scale.iter_mut().zip(row) {
            *s += x.abs();
        }
    }
    for s in &mut scale {
        *s = *s / rows.len() as f64 + NORM_EPS;
    }
    rows.iter()
        .map(|row| {
            let mut out = *row;
            for (x, s) in out.iter_mut().zip(&scale) {
                *x /= s;
            }
            out
        })
        .collect()
}

impl GpNet {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[GpNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GpEdge] {
        &self.edges
    }

    /// Normalized node features, the network's input.
    pub fn node_features(&self) -> &[[f64; NODE_FEATURES]] {
        &self.node_features
    }

    pub fn edge_features(&self) -> &[[f64; EDGE_FEATURES]] {
        &self.edge_features
    }

    pub fn raw_node_features(&self) -> &[[f64; NODE_FEATURES]] {
        &self.raw_node_features
    }

    pub fn raw_edge_features(&self) -> &[[f64; EDGE_FEATURES]] {
        &self.raw_edge_features
    }

    /// Node index range of task `task`'s options.
    pub fn option_group(&self, task: TaskId) -> Range<usize> {
        self.groups[task].clone()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Pivot node of every task, indexed by task.
    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    /// Nodes in an order where every edge points forward.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Index of node `(task, device)`, if that pair is a node.
    pub fn node_index(&self, task: TaskId, device: DeviceId) -> Option<usize> {
        let range = self.groups.get(task)?.clone();
        let offset = self.nodes[range.clone()].binary_search_by_key(&device, |n| n.device).ok()?;
        Some(range.start + offset)
    }

    #[cfg(test)]
    pub(crate) fn perturb_node_feature(&mut self, node: usize, channel: usize, delta: f64) {
        self.node_features[node][channel] += delta;
    }

    /// Copy with node storage reordered: new node `i` is old node `perm[i]`.
    /// Used to check that nothing depends on storage order.
    #[cfg(test)]
    pub(crate) fn permuted(&self, perm: &[usize]) -> GpNet {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let edges: Vec<GpEdge> = self
            .edges
            .iter()
            .map(|e| GpEdge { src: inverse[e.src], dst: inverse[e.dst], graph_edge: e.graph_edge })
            .collect();
        let mut in_edges = vec![Vec::new(); perm.len()];
        let mut out_edges = vec![Vec::new(); perm.len()];
        for (idx, e) in edges.iter().enumerate() {
            out_edges[e.src].push(idx);
            in_edges[e.dst].push(idx);
        }
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.src, e.dst)).collect();
        GpNet {
            nodes: perm.iter().map(|&o| self.nodes[o]).collect(),
            raw_node_features: perm.iter().map(|&o| self.raw_node_features[o]).collect(),
            node_features: perm.iter().map(|&o| self.node_features[o]).collect(),
            edges,
            raw_edge_features: self.raw_edge_features.clone(),
            edge_features: self.edge_features.clone(),
            groups: Vec::new(),
            pivots: self.pivots.iter().map(|&p| inverse[p]).collect(),
            in_edges,
            out_edges,
            topo: crate::domain::topological_order(perm.len(), &pairs).unwrap(),
        }
    }
}
