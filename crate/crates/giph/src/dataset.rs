//! Generated datasets: train/test graph and network files plus the pairing
//! of graphs with networks into problem instances.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use giph_core::generator::{generate_network, generate_task_graph, GraphGenParams, NetworkGenParams};
use giph_core::ProblemInstance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::format::{read_json, write_json, GraphRecord, NetworkRecord};
use crate::grid::expand;

pub const TRAIN_GRAPHS: &str = "train_graphs.json";
pub const TEST_GRAPHS: &str = "test_graphs.json";
pub const TRAIN_NETWORKS: &str = "train_networks.json";
pub const TEST_NETWORKS: &str = "test_networks.json";

/// Contents of a `generate` parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Graph parameter grid; see [`crate::grid::expand`].
    pub graph: Value,
    pub network: Value,
    /// Graphs per graph-parameter combination, before the split.
    pub graphs_per_combination: usize,
    /// Networks per network-parameter combination, in each split.
    pub networks_per_combination: usize,
    /// Share of each combination's graphs that goes to training.
    pub train_fraction: f64,
    /// Use the training networks for the test split too.
    pub share_networks: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            graph: Value::Null,
            network: Value::Null,
            graphs_per_combination: 10,
            networks_per_combination: 1,
            train_fraction: 0.5,
            share_networks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEntry {
    pub id: usize,
    /// Index of the parameter combination that produced the graph.
    pub combination: usize,
    pub depth: usize,
    #[serde(flatten)]
    pub graph: GraphRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub id: usize,
    pub combination: usize,
    /// Kept so churn can draw replacements from the same distribution.
    pub params: NetworkGenParams,
    #[serde(flatten)]
    pub network: NetworkRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSet {
    pub graphs: Vec<GraphEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSet {
    pub networks: Vec<NetworkEntry>,
}

/// One split of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub graphs: GraphSet,
    pub networks: NetworkSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
}

/// A problem instance with the ids it was built from.
#[derive(Debug, Clone)]
pub struct Case {
    pub graph_id: usize,
    pub network_id: usize,
    pub depth: usize,
    pub instance: ProblemInstance,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// stream layout: (combination << 2) | {train graphs, test graphs, train networks, test networks}
const TRAIN_GRAPH_STREAM: u64 = 0;
const TEST_GRAPH_STREAM: u64 = 1;
const TRAIN_NETWORK_STREAM: u64 = 2;
const TEST_NETWORK_STREAM: u64 = 3;

pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> anyhow::Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        bail!("train_fraction: must be in [0,1], got {}", spec.train_fraction);
    }
    let graph_params = expand("graph", &GraphGenParams::default(), &spec.graph)?;
    let network_params = expand("network", &NetworkGenParams::default(), &spec.network)?;
    for (i, p) in graph_params.iter().enumerate() {
        p.validate().with_context(|| format!("graph combination {i}"))?;
    }
    for (i, p) in network_params.iter().enumerate() {
        p.validate().with_context(|| format!("network combination {i}"))?;
    }

    let n_train = (spec.graphs_per_combination as f64 * spec.train_fraction).round() as usize;
    let mut train_graphs = Vec::new();
    let mut test_graphs = Vec::new();
    for (c, params) in graph_params.iter().enumerate() {
        let mut rng = stream_rng(seed, (c as u64) << 2 | TRAIN_GRAPH_STREAM);
        for _ in 0..n_train {
            let g = generate_task_graph(params, &mut rng)?;
            train_graphs.push(GraphEntry { id: train_graphs.len(), combination: c, depth: g.depth(), graph: GraphRecord::from_graph(&g) });
        }
        let mut rng = stream_rng(seed, (c as u64) << 2 | TEST_GRAPH_STREAM);
        for _ in n_train..spec.graphs_per_combination {
            let g = generate_task_graph(params, &mut rng)?;
            test_graphs.push(GraphEntry { id: test_graphs.len(), combination: c, depth: g.depth(), graph: GraphRecord::from_graph(&g) });
        }
    }

    let networks = |stream: u64| -> anyhow::Result<NetworkSet> {
        let mut out = Vec::new();
        for (c, params) in network_params.iter().enumerate() {
            let mut rng = stream_rng(seed, (c as u64) << 2 | stream);
            for _ in 0..spec.networks_per_combination {
                let n = generate_network(params, &mut rng)?;
                out.push(NetworkEntry { id: out.len(), combination: c, params: params.clone(), network: NetworkRecord::from_network(&n) });
            }
        }
        Ok(NetworkSet { networks: out })
    };
    let train_networks = networks(TRAIN_NETWORK_STREAM)?;
    let test_networks = if spec.share_networks { train_networks.clone() } else { networks(TEST_NETWORK_STREAM)? };

    Ok(Dataset {
        train: Split { graphs: GraphSet { graphs: train_graphs }, networks: train_networks },
        test: Split { graphs: GraphSet { graphs: test_graphs }, networks: test_networks },
    })
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join(TRAIN_GRAPHS), &self.train.graphs)?;
        write_json(&dir.join(TEST_GRAPHS), &self.test.graphs)?;
        write_json(&dir.join(TRAIN_NETWORKS), &self.train.networks)?;
        write_json(&dir.join(TEST_NETWORKS), &self.test.networks)
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        Ok(Self {
            train: Split { graphs: read_json(&dir.join(TRAIN_GRAPHS))?, networks: read_json(&dir.join(TRAIN_NETWORKS))? },
            test: Split { graphs: read_json(&dir.join(TEST_GRAPHS))?, networks: read_json(&dir.join(TEST_NETWORKS))? },
        })
    }
}

impl Split {
    /// Pairs graph `i` with network `i mod #networks`.
    pub fn cases(&self) -> anyhow::Result<Vec<Case>> {
        let networks = &self.networks.networks;
        if networks.is_empty() && !self.graphs.graphs.is_empty() {
            bail!("split has graphs but no networks");
        }
        let built: Vec<_> = networks
            .iter()
            .map(|n| n.network.to_network().with_context(|| format!("network {}", n.id)))
            .collect::<anyhow::Result<_>>()?;
        self.graphs
            .graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let k = i % networks.len();
                let graph = g.graph.to_graph().with_context(|| format!("graph {}", g.id))?;
                let instance = ProblemInstance::new(graph, built[k].clone())
                    .with_context(|| format!("graph {} on network {}", g.id, networks[k].id))?;
                Ok(Case { graph_id: g.id, network_id: networks[k].id, depth: g.depth, instance })
            })
            .collect()
    }
}
