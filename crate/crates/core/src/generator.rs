//! Parametric random task graphs and device networks, plus the device churn
//! used by the adaptivity experiments.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    DataLink, Device, DeviceId, DeviceNetwork, HwTag, Link, Task, TaskGraph, UNIVERSAL_TAG,
};
use crate::error::{Error, Result};
use crate::math;

/// Task graph generator parameters. Serialized names follow the usual
/// notation (`M`, `alpha`, `p_c`, `C_bar`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphGenParams {
    /// Number of tasks.
    #[serde(rename = "M")]
    pub num_tasks: usize,
    /// Shape parameter: larger values give wider, shallower graphs.
    pub alpha: f64,
    /// Probability of an edge between a node and any node on a lower level.
    pub p_c: f64,
    #[serde(rename = "C_bar")]
    pub mean_compute: f64,
    #[serde(rename = "B_bar")]
    pub mean_bytes: f64,
    #[serde(rename = "eps_C")]
    pub eps_compute: f64,
    #[serde(rename = "eps_B")]
    pub eps_bytes: f64,
    /// `(tag, probability)` that a task requires `tag`. The remaining mass
    /// goes to the universal tag.
    #[serde(default)]
    pub hw_tags: Vec<(HwTag, f64)>,
}

impl Default for GraphGenParams {
    fn default() -> Self {
        Self {
            num_tasks: 20,
            alpha: 1.0,
            p_c: 0.3,
            mean_compute: 10.0,
            mean_bytes: 10.0,
            eps_compute: 0.5,
            eps_bytes: 0.5,
            hw_tags: vec![(1, 0.1), (2, 0.1)],
        }
    }
}

impl GraphGenParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks < 2 {
            return Err(Error::InvalidParams(format!("M must be >= 2, got {}", self.num_tasks)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParams(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.p_c) {
            return Err(Error::InvalidParams(format!("p_c must be in [0,1], got {}", self.p_c)));
        }
        check_mean("C_bar", self.mean_compute, false)?;
        check_mean("B_bar", self.mean_bytes, false)?;
        check_eps("eps_C", self.eps_compute)?;
        check_eps("eps_B", self.eps_bytes)?;
        check_tags(&self.hw_tags, true)
    }
}

/// Device network generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGenParams {
    /// Number of devices.
    #[serde(rename = "m")]
    pub num_devices: usize,
    #[serde(rename = "SP_bar")]
    pub mean_speed: f64,
    #[serde(rename = "BW_bar")]
    pub mean_bandwidth: f64,
    #[serde(rename = "DL_bar")]
    pub mean_delay: f64,
    #[serde(rename = "eps_SP")]
    pub eps_speed: f64,
    #[serde(rename = "eps_BW")]
    pub eps_bandwidth: f64,
    /// `(tag, probability)` that a device supports `tag`. Controls the
    /// average number of feasible devices per constrained task.
    #[serde(default)]
    pub hw_tags: Vec<(HwTag, f64)>,
}

impl Default for NetworkGenParams {
    fn default() -> Self {
        Self {
            num_devices: 8,
            mean_speed: 5.0,
            mean_bandwidth: 10.0,
            mean_delay: 1.0,
            eps_speed: 0.5,
            eps_bandwidth: 0.5,
            hw_tags: vec![(1, 0.5), (2, 0.5)],
        }
    }
}

impl NetworkGenParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 {
            return Err(Error::InvalidParams("m must be >= 1".into()));
        }
        check_mean("SP_bar", self.mean_speed, true)?;
        check_mean("BW_bar", self.mean_bandwidth, true)?;
        check_mean("DL_bar", self.mean_delay, false)?;
        check_eps("eps_SP", self.eps_speed)?;
        check_eps("eps_BW", self.eps_bandwidth)?;
        check_tags(&self.hw_tags, false)
    }
}

fn check_mean(field: &str, value: f64, strictly_positive: bool) -> Result<()> {
    let ok = value.is_finite() && if strictly_positive { value > 0.0 } else { value >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{field} out of range: {value}")))
    }
}

fn check_eps(field: &str, value: f64) -> Result<()> {
    if (0.0..1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{field} must be in [0,1), got {value}")))
    }
}

fn check_tags(tags: &[(HwTag, f64)], must_sum_below_one: bool) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &(tag, p) in tags {
        if tag == UNIVERSAL_TAG {
            return Err(Error::InvalidParams("tag 0 is reserved for the universal tag".into()));
        }
        if !seen.insert(tag) {
            return Err(Error::InvalidParams(format!("tag {tag} listed twice")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParams(format!("probability for tag {tag} out of [0,1]: {p}")));
        }
    }
    let total: f64 = tags.iter().map(|t| t.1).sum();
    if must_sum_below_one && total > 1.0 + 1e-12 {
        return Err(Error::InvalidParams(format!("tag probabilities sum to {total} > 1")));
    }
    Ok(())
}

/// Uniform draw on `[mean(1-eps), mean(1+eps)]`; exactly `mean` when `eps == 0`.
fn around<R: Rng + ?Sized>(rng: &mut R, mean: f64, eps: f64) -> f64 {
    uniform(rng, mean * (1.0 - eps), mean * (1.0 + eps))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Integer drawn uniformly from `[lo, hi]` where `hi` is chosen so the mean
/// is (approximately) `mean`; collapses to `lo` when `mean <= lo`.
fn int_with_mean<R: Rng + ?Sized>(rng: &mut R, mean: f64, lo: usize) -> usize {
    let hi = (math::round(2.0 * mean) as i64 - lo as i64).max(lo as i64) as usize;
    rng.gen_range(lo..=hi)
}

/// Draws a layered single-entry/single-exit DAG with exactly `M` tasks.
///
/// Levels: the first and last hold one task each (entry and exit), the
/// middle levels share the remaining `M - 2` tasks. The number of levels is
/// uniform with mean `sqrt(M)/alpha`; raw widths are uniform with mean
/// `alpha*sqrt(M)` and are rescaled proportionally, the last middle level
/// absorbing the rounding. Every pair (higher level, lower level) gets an
/// edge with probability `p_c`; nodes left without a parent (child) are
/// wired to a uniform node on the level directly above (below).
pub fn generate_task_graph<R: Rng + ?Sized>(params: &GraphGenParams, rng: &mut R) -> Result<TaskGraph> {
    params.validate()?;
    let m = params.num_tasks;
    let sqrt_m = math::sqrt(m as f64);
    let min_levels = m.min(3);
    let levels = int_with_mean(rng, sqrt_m / params.alpha, min_levels).min(m);

    let mut widths = vec![1usize; levels];
    if levels > 2 {
        let middle = levels - 2;
        let target = m - 2;
        let raw: Vec<usize> =
            (0..middle).map(|_| int_with_mean(rng, params.alpha * sqrt_m, 1)).collect();
        let raw_total: usize = raw.iter().sum();
        for (slot, &r) in widths[1..levels - 1].iter_mut().zip(&raw) {
            *slot = ((r * target) / raw_total).max(1);
        }
        let assigned: usize = widths[1..levels - 1].iter().sum();
        if assigned < target {
            widths[levels - 2] += target - assigned;
        } else {
            let mut excess = assigned - target;
            for w in widths[1..levels - 1].iter_mut().rev() {
                let take = excess.min(*w - 1);
                *w -= take;
                excess -= take;
            }
        }
    }
    debug_assert_eq!(widths.iter().sum::<usize>(), m);

    let mut level_nodes: Vec<Vec<usize>> = Vec::with_capacity(levels);
    let mut next_id = 0;
    for &w in &widths {
        level_nodes.push((next_id..next_id + w).collect());
        next_id += w;
    }

    let mut adjacency = BTreeSet::new();
    for hi in 0..levels {
        for lo in hi + 1..levels {
            for &u in &level_nodes[hi] {
                for &v in &level_nodes[lo] {
                    if rng.gen_bool(params.p_c) {
                        adjacency.insert((u, v));
                    }
                }
            }
        }
    }
    let mut has_parent = vec![false; m];
    let mut has_child = vec![false; m];
    for &(u, v) in &adjacency {
        has_child[u] = true;
        has_parent[v] = true;
    }
    for l in 1..levels {
        for &v in &level_nodes[l] {
            if !has_parent[v] {
                let above = &level_nodes[l - 1];
                let u = above[rng.gen_range(0..above.len())];
                adjacency.insert((u, v));
                has_child[u] = true;
                has_parent[v] = true;
            }
        }
    }
    for l in 0..levels.saturating_sub(1) {
        for &u in &level_nodes[l] {
            if !has_child[u] {
                let below = &level_nodes[l + 1];
                let v = below[rng.gen_range(0..below.len())];
                adjacency.insert((u, v));
                has_child[u] = true;
                has_parent[v] = true;
            }
        }
    }

    let tasks = (0..m)
        .map(|id| Task {
            id,
            compute: around(rng, params.mean_compute, params.eps_compute),
            hw_req: sample_requirement(rng, &params.hw_tags),
        })
        .collect();
    let edges = adjacency
        .into_iter()
        .map(|(src, dst)| DataLink {
            src,
            dst,
            bytes: around(rng, params.mean_bytes, params.eps_bytes),
        })
        .collect();
    TaskGraph::new(tasks, edges)
}

fn sample_requirement<R: Rng + ?Sized>(rng: &mut R, tags: &[(HwTag, f64)]) -> HwTag {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(tag, p) in tags {
        acc += p;
        if u < acc {
            return tag;
        }
    }
    UNIVERSAL_TAG
}

fn sample_support<R: Rng + ?Sized>(rng: &mut R, tags: &[(HwTag, f64)]) -> BTreeSet<HwTag> {
    let mut set: BTreeSet<HwTag> = tags.iter().filter(|t| rng.gen_bool(t.1)).map(|t| t.0).collect();
    set.insert(UNIVERSAL_TAG);
    set
}

/// Draws a fully connected heterogeneous network.
///
/// A tag with non-zero support probability that no device drew is given to
/// one uniformly chosen device, so every listed tag has a feasible device.
pub fn generate_network<R: Rng + ?Sized>(params: &NetworkGenParams, rng: &mut R) -> Result<DeviceNetwork> {
    params.validate()?;
    let m = params.num_devices;
    let speeds: Vec<f64> = (0..m).map(|_| around(rng, params.mean_speed, params.eps_speed)).collect();
    let mut supports: Vec<BTreeSet<HwTag>> = (0..m).map(|_| sample_support(rng, &params.hw_tags)).collect();
    for &(tag, p) in &params.hw_tags {
        if p > 0.0 && !supports.iter().any(|s| s.contains(&tag)) {
            supports[rng.gen_range(0..m)].insert(tag);
        }
    }
    let devices = speeds
        .into_iter()
        .zip(supports)
        .enumerate()
        .map(|(id, (speed, hw_support))| Device { id, speed, hw_support })
        .collect();
    let mut links = Vec::with_capacity(m * m);
    for src in 0..m {
        for dst in 0..m {
            links.push(if src == dst { Link::LOCAL } else { sample_link(rng, params, 1.0) });
        }
    }
    DeviceNetwork::from_matrix(devices, links)
}

fn sample_link<R: Rng + ?Sized>(rng: &mut R, params: &NetworkGenParams, factor: f64) -> Link {
    Link {
        bandwidth: around(rng, params.mean_bandwidth, params.eps_bandwidth) * factor,
        delay: uniform(rng, 0.0, 2.0 * params.mean_delay),
        is_local: false,
    }
}

/// Removes `n_remove` uniformly chosen devices and appends as many fresh
/// devices whose speed and bandwidths are scaled by `capacity_factor`
/// (delays unscaled). Surviving devices keep their relative order and are
/// renumbered densely; replacements take the highest ids.
///
/// Fails if any tag in `required_tags` ends up unsupported.
pub fn churn_network<R: Rng + ?Sized>(
    network: &DeviceNetwork,
    params: &NetworkGenParams,
    n_remove: usize,
    capacity_factor: f64,
    required_tags: &[HwTag],
    rng: &mut R,
) -> Result<DeviceNetwork> {
    let m = network.num_devices();
    if n_remove >= m {
        return Err(Error::InvalidParams(format!("cannot remove {n_remove} of {m} devices")));
    }
    if !(capacity_factor > 0.0 && capacity_factor <= 1.0) {
        return Err(Error::InvalidParams(format!("capacity factor must be in (0,1], got {capacity_factor}")));
    }
    let mut order: Vec<DeviceId> = (0..m).collect();
    for i in 0..n_remove {
        let j = rng.gen_range(i..m);
        order.swap(i, j);
    }
    let removed: BTreeSet<DeviceId> = order[..n_remove].iter().copied().collect();
    let kept: Vec<DeviceId> = (0..m).filter(|d| !removed.contains(d)).collect();

    let mut devices: Vec<Device> = kept
        .iter()
        .enumerate()
        .map(|(id, &old)| Device { id, ..network.devices()[old].clone() })
        .collect();
    for _ in 0..n_remove {
        let speed = around(rng, params.mean_speed, params.eps_speed) * capacity_factor;
        let hw_support = sample_support(rng, &params.hw_tags);
        devices.push(Device { id: devices.len(), speed, hw_support });
    }
    let total = devices.len();
    let mut links = Vec::with_capacity(total * total);
    for src in 0..total {
        for dst in 0..total {
            links.push(if src == dst {
                Link::LOCAL
            } else if src < kept.len() && dst < kept.len() {
                *network.link(kept[src], kept[dst])
            } else {
                sample_link(rng, params, capacity_factor)
            });
        }
    }
    let result = DeviceNetwork::from_matrix(devices, links)?;
    let orphaned: Vec<HwTag> = required_tags
        .iter()
        .copied()
        .filter(|&t| !result.devices().iter().any(|d| d.supports(t)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if orphaned.is_empty() {
        Ok(result)
    } else {
        Err(Error::OrphanedTags(orphaned))
    }
}
