//! JSON records for graphs, networks and instances.
//!
//! Every top-level file carries `"format": "giph-v1"`. Diagonal links are
//! never written; they are implied local.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use giph_core::{DataLink, Device, DeviceNetwork, HwTag, ProblemInstance, Task, TaskGraph, UNIVERSAL_TAG};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "giph-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: usize,
    pub compute: f64,
    #[serde(default)]
    pub hw_req: HwTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub tasks: Vec<TaskRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl GraphRecord {
    pub fn from_graph(graph: &TaskGraph) -> Self {
        Self {
            tasks: graph
                .tasks()
                .iter()
                .map(|t| TaskRecord { id: t.id, compute: t.compute, hw_req: t.hw_req })
                .collect(),
            edges: graph
                .edges()
                .iter()
                .map(|e| EdgeRecord { src: e.src, dst: e.dst, bytes: e.bytes })
                .collect(),
        }
    }

    pub fn to_graph(&self) -> giph_core::Result<TaskGraph> {
        let tasks = self.tasks.iter().map(|t| Task { id: t.id, compute: t.compute, hw_req: t.hw_req }).collect();
        let edges = self.edges.iter().map(|e| DataLink { src: e.src, dst: e.dst, bytes: e.bytes }).collect();
        TaskGraph::new(tasks, edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub id: usize,
    pub speed: f64,
    #[serde(default)]
    pub hw_support: Vec<HwTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub src: usize,
    pub dst: usize,
    pub bandwidth: f64,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub devices: Vec<DeviceRecord>,
    pub links: Vec<LinkRecord>,
}

impl NetworkRecord {
    pub fn from_network(network: &DeviceNetwork) -> Self {
        let m = network.num_devices();
        let devices = network
            .devices()
            .iter()
            .map(|d| DeviceRecord {
                id: d.id,
                speed: d.speed,
                hw_support: d.hw_support.iter().copied().filter(|&t| t != UNIVERSAL_TAG).collect(),
            })
            .collect();
        let mut links = Vec::with_capacity(m * m.saturating_sub(1));
        for src in 0..m {
            for dst in (0..m).filter(|&d| d != src) {
                let l = network.link(src, dst);
                links.push(LinkRecord { src, dst, bandwidth: l.bandwidth, delay: l.delay });
            }
        }
        Self { devices, links }
    }

    pub fn to_network(&self) -> giph_core::Result<DeviceNetwork> {
        let devices = self
            .devices
            .iter()
            .map(|d| Device { id: d.id, speed: d.speed, hw_support: d.hw_support.iter().copied().collect() })
            .collect();
        DeviceNetwork::new(devices, self.links.iter().map(|l| (l.src, l.dst, l.bandwidth, l.delay)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub graph: GraphRecord,
    pub network: NetworkRecord,
}

impl InstanceRecord {
    pub fn from_instance(instance: &ProblemInstance) -> Self {
        Self { graph: GraphRecord::from_graph(instance.graph()), network: NetworkRecord::from_network(instance.network()) }
    }

    pub fn to_instance(&self) -> giph_core::Result<ProblemInstance> {
        ProblemInstance::new(self.graph.to_graph()?, self.network.to_network()?)
    }
}

/// A record tagged with the format version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self { format: FORMAT.to_string(), body }
    }
}

pub fn to_json<T: Serialize>(body: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(&Versioned::new(body))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> anyhow::Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT) => {}
        Some(other) => bail!("unsupported format {other:?}, expected {FORMAT:?}"),
        None => bail!("missing \"format\" key"),
    }
    let versioned: Versioned<T> = serde_json::from_value(value)?;
    Ok(versioned.body)
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> anyhow::Result<()> {
    fs::write(path, to_json(body)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_json(&text).with_context(|| format!("parsing {}", path.display()))
}
