//! Checkpoint files: one JSON header line followed by little-endian `f64`
//! arrays in declaration order.
//!
//! A checkpoint at episode `e` is three files: `embedding_<e>` (message
//! passing layers), `policy_<e>` (score head) and `optimizer_<e>` (Adam
//! moments).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use giph_core::neuralnet::{is_score_layer, Aggregation, PolicyParams, Propagation, Tensors, LAYERS, NUM_PARAMS};
use giph_core::training::AdamState;
use serde::{Deserialize, Serialize};

use crate::format::FORMAT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    /// `[outputs, inputs]`, row-major.
    pub weight: [usize; 2],
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub kind: String,
    pub episode: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation: Option<Propagation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_step: Option<u64>,
    /// Number of `f64` values after the header.
    pub count: usize,
}

fn encode(header: &Header, values: &[f64]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(path: &Path, expected_kind: &str) -> anyhow::Result<(Header, Vec<f64>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let split = bytes.iter().position(|&b| b == b'\n').with_context(|| format!("{}: missing header line", path.display()))?;
    let header: Header = serde_json::from_slice(&bytes[..split]).with_context(|| format!("{}: bad header", path.display()))?;
    ensure!(header.format == FORMAT, "{}: unsupported format {:?}", path.display(), header.format);
    ensure!(header.kind == expected_kind, "{}: expected a {expected_kind} file, found {}", path.display(), header.kind);
    let body = &bytes[split + 1..];
    ensure!(
        body.len() == header.count * 8,
        "{}: header declares {} values but body holds {} bytes",
        path.display(),
        header.count,
        body.len()
    );
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

fn layer_indices(score: bool) -> impl Iterator<Item = usize> {
    (0..LAYERS.len()).filter(move |&i| is_score_layer(i) == score)
}

fn shapes(score: bool) -> Vec<LayerShape> {
    layer_indices(score)
        .map(|i| LayerShape { name: LAYERS[i].name.to_string(), weight: [LAYERS[i].outputs, LAYERS[i].inputs], bias: LAYERS[i].outputs })
        .collect()
}

fn gather(params: &Tensors, score: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for i in layer_indices(score) {
        let (w, b) = params.layer(i);
        out.extend_from_slice(w);
        out.extend_from_slice(b);
    }
    out
}

fn scatter(params: &mut Tensors, score: bool, values: &[f64]) {
    let mut rest = values;
    for i in layer_indices(score) {
        let (w, b) = params.layer_mut(i);
        let (head, tail) = rest.split_at(w.len());
        w.copy_from_slice(head);
        let (head, tail) = tail.split_at(b.len());
        b.copy_from_slice(head);
        rest = tail;
    }
}

pub fn policy_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(format!("policy_{episode}"))
}

pub fn embedding_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(format!("embedding_{episode}"))
}

pub fn optimizer_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(format!("optimizer_{episode}"))
}

pub fn save(dir: &Path, episode: usize, params: &PolicyParams, adam: &AdamState) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (score, kind, path) in [(false, "embedding", embedding_path(dir, episode)), (true, "policy", policy_path(dir, episode))] {
        let values = gather(&params.weights, score);
        let header = Header {
            format: FORMAT.into(),
            kind: kind.into(),
            episode,
            aggregation: Some(params.aggregation),
            propagation: Some(params.propagation),
            layers: shapes(score),
            adam_step: None,
            count: values.len(),
        };
        fs::write(&path, encode(&header, &values)).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut moments = adam.m.as_slice().to_vec();
    moments.extend_from_slice(adam.v.as_slice());
    let header = Header {
        format: FORMAT.into(),
        kind: "optimizer".into(),
        episode,
        aggregation: None,
        propagation: None,
        layers: Vec::new(),
        adam_step: Some(adam.step),
        count: moments.len(),
    };
    let path = optimizer_path(dir, episode);
    fs::write(&path, encode(&header, &moments)).with_context(|| format!("writing {}", path.display()))
}

pub fn load_params(dir: &Path, episode: usize) -> anyhow::Result<PolicyParams> {
    let mut params = PolicyParams::zeros();
    for (score, kind, path) in [(false, "embedding", embedding_path(dir, episode)), (true, "policy", policy_path(dir, episode))] {
        let (header, values) = decode(&path, kind)?;
        ensure!(header.layers == shapes(score), "{}: layer shapes do not match this build", path.display());
        if let Some(a) = header.aggregation {
            params.aggregation = a;
        }
        if let Some(p) = header.propagation {
            params.propagation = p;
        }
        scatter(&mut params.weights, score, &values);
    }
    params.weights.check_finite().context("checkpoint holds non-finite weights")?;
    Ok(params)
}

pub fn load_optimizer(dir: &Path, episode: usize) -> anyhow::Result<AdamState> {
    let path = optimizer_path(dir, episode);
    let (header, values) = decode(&path, "optimizer")?;
    ensure!(values.len() == 2 * NUM_PARAMS, "{}: expected {} values", path.display(), 2 * NUM_PARAMS);
    let step = header.adam_step.with_context(|| format!("{}: missing adam_step", path.display()))?;
    let (m, v) = values.split_at(NUM_PARAMS);
    Ok(AdamState { m: Tensors::from_flat(m.to_vec())?, v: Tensors::from_flat(v.to_vec())?, step })
}

/// Episodes for which a policy file exists, ascending.
pub fn episodes(dir: &Path) -> anyhow::Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        if let Some(ep) = name.to_str().and_then(|n| n.strip_prefix("policy_")).and_then(|n| n.parse().ok()) {
            out.push(ep);
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn latest_episode(dir: &Path) -> anyhow::Result<usize> {
    match episodes(dir)?.last() {
        Some(&ep) => Ok(ep),
        None => bail!("no checkpoint in {}", dir.display()),
    }
}
