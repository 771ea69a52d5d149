//! Two-way message-passing embedding of a gpNet and the per-node score head,
//! with hand-derived reverse-mode gradients.
//!
//! Shapes are fixed: a shared 4→4→5 pre-embedding of node features, for each
//! direction a message layer 9→9 on `[e_v ∥ x_e]` and an aggregate layer
//! 9→5, and a 10→16→1 score head on the concatenated directions. All
//! parameters live in one flat buffer; [`LAYERS`] gives the layout.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpnet::{GpNet, EDGE_FEATURES, NODE_FEATURES};
use crate::math;

pub const EMBED_DIM: usize = 5;
pub const OUTPUT_DIM: usize = 2 * EMBED_DIM;
const MSG_DIM: usize = EMBED_DIM + EDGE_FEATURES;
const SCORE_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerSpec {
    const fn size(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

const fn layer(name: &'static str, inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec { name, inputs, outputs }
}

const PRE1: usize = 0;
const PRE2: usize = 1;
const FWD_H1: usize = 2;
const FWD_H2: usize = 3;
const BWD_H1: usize = 4;
const BWD_H2: usize = 5;
const SCORE1: usize = 6;
const SCORE2: usize = 7;

pub const LAYERS: [LayerSpec; 8] = [
    layer("pre_embed.0", NODE_FEATURES, NODE_FEATURES),
    layer("pre_embed.1", NODE_FEATURES, EMBED_DIM),
    layer("forward.h1", MSG_DIM, MSG_DIM),
    layer("forward.h2", MSG_DIM, EMBED_DIM),
    layer("backward.h1", MSG_DIM, MSG_DIM),
    layer("backward.h2", MSG_DIM, EMBED_DIM),
    layer("score.0", OUTPUT_DIM, SCORE_HIDDEN),
    layer("score.1", SCORE_HIDDEN, 1),
];

const fn offsets() -> [usize; 9] {
    let mut out = [0; 9];
    let mut i = 0;
    while i < 8 {
        out[i + 1] = out[i] + LAYERS[i].size();
        i += 1;
    }
    out
}

const OFFSETS: [usize; 9] = offsets();

/// Total number of scalars in a parameter set.
pub const NUM_PARAMS: usize = OFFSETS[8];

/// Whether layer `index` belongs to the score head rather than the embedding.
pub fn is_score_layer(index: usize) -> bool {
    index >= SCORE1
}

/// How messages from several neighbours are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// How far messages travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// One pass per direction in topological order, so information crosses
    /// the whole graph.
    #[default]
    Sweep,
    /// `k` synchronous rounds per direction starting from the pre-embedded
    /// node features.
    Steps(usize),
}

/// A flat vector shaped like the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    data: Vec<f64>,
}

impl Tensors {
    pub fn zeros() -> Self {
        Self { data: vec![0.0; NUM_PARAMS] }
    }

    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        if data.len() != NUM_PARAMS {
            return Err(Error::ShapeMismatch(format!("expected {NUM_PARAMS} values, got {}", data.len())));
        }
        Ok(Self { data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(weights, bias)` of layer `index`; weights are row-major `outputs × inputs`.
    pub fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        let spec = LAYERS[index];
        let (w, b) = self.data[OFFSETS[index]..OFFSETS[index + 1]].split_at(spec.inputs * spec.outputs);
        (w, b)
    }

    pub fn layer_mut(&mut self, index: usize) -> (&mut [f64], &mut [f64]) {
        let spec = LAYERS[index];
        self.data[OFFSETS[index]..OFFSETS[index + 1]].split_at_mut(spec.inputs * spec.outputs)
    }

    /// Name of the parameter at flat position `index`, for error messages.
    pub fn path_of(index: usize) -> String {
        let l = (0..LAYERS.len()).find(|&l| index < OFFSETS[l + 1]).unwrap_or(LAYERS.len() - 1);
        let local = index - OFFSETS[l];
        let spec = LAYERS[l];
        if local < spec.inputs * spec.outputs {
            format!("{}.weight[{}][{}]", spec.name, local / spec.inputs, local % spec.inputs)
        } else {
            format!("{}.bias[{}]", spec.name, local - spec.inputs * spec.outputs)
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(Error::NonFinite(Self::path_of(i))),
            None => Ok(()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Tensors, factor: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }
}

/// Parameters of one policy network plus the architecture switches that
/// change how they are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub weights: Tensors,
    pub aggregation: Aggregation,
    pub propagation: Propagation,
}

/// Gradient of some scalar with respect to every entry of [`PolicyParams::weights`].
pub type Gradients = Tensors;

impl PolicyParams {
    /// Xavier-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut weights = Tensors::zeros();
        for (index, spec) in LAYERS.iter().enumerate() {
            let limit = math::sqrt(6.0 / (spec.inputs + spec.outputs) as f64);
            let (w, _) = weights.layer_mut(index);
            for x in w {
                *x = rng.gen_range(-limit..=limit);
            }
        }
        Self { weights, aggregation: Aggregation::Mean, propagation: Propagation::Sweep }
    }

    pub fn zeros() -> Self {
        Self { weights: Tensors::zeros(), aggregation: Aggregation::Mean, propagation: Propagation::Sweep }
    }

    pub fn with_propagation(mut self, propagation: Propagation) -> Self {
        self.propagation = propagation;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }
}

// y = W x + b
fn affine(t: &Tensors, layer: usize, x: &[f64], y: &mut [f64]) {
    let spec = LAYERS[layer];
    let (w, b) = t.layer(layer);
    for o in 0..spec.outputs {
        let row = &w[o * spec.inputs..(o + 1) * spec.inputs];
        y[o] = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// Accumulates dW += dy ⊗ x, db += dy, and dx += Wᵀ dy (when asked).
fn affine_backward(t: &Tensors, g: &mut Tensors, layer: usize, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
    let spec = LAYERS[layer];
    {
        let (gw, gb) = g.layer_mut(layer);
        for o in 0..spec.outputs {
            if dy[o] == 0.0 {
                continue;
            }
            gb[o] += dy[o];
            for (gw, xi) in gw[o * spec.inputs..(o + 1) * spec.inputs].iter_mut().zip(x) {
                *gw += dy[o] * xi;
            }
        }
    }
    if let Some(dx) = dx {
        let (w, _) = t.layer(layer);
        for o in 0..spec.outputs {
            if dy[o] == 0.0 {
                continue;
            }
            for (d, wi) in dx.iter_mut().zip(&w[o * spec.inputs..(o + 1) * spec.inputs]) {
                *d += dy[o] * wi;
            }
        }
    }
}

fn relu(z: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v.max(0.0);
    }
}

fn relu_backward(z: &[f64], d: &mut [f64]) {
    for (g, &v) in d.iter_mut().zip(z) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

type Vec5 = [f64; EMBED_DIM];
type Vec9 = [f64; MSG_DIM];

#[derive(Debug, Clone)]
struct MessageCache {
    input: Vec9,
    pre: Vec9,
}

#[derive(Debug, Clone)]
struct NodeCache {
    /// One entry per neighbour, in edge-list order.
    messages: Vec<MessageCache>,
    aggregate: Vec9,
    pre: Vec5,
}

/// One embedding round in one direction: `e_u = h2(agg h1([e_v ∥ x_e])) + x̃_u`.
#[derive(Debug, Clone)]
struct Round {
    nodes: Vec<NodeCache>,
    out: Vec<Vec5>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn layers(self) -> (usize, usize) {
        match self {
            Direction::Forward => (FWD_H1, FWD_H2),
            Direction::Backward => (BWD_H1, BWD_H2),
        }
    }

    // (edge index, neighbour node) pairs feeding `u`
    fn neighbours<'a>(self, net: &'a GpNet, u: usize) -> impl Iterator<Item = (usize, usize)> + 'a {
        let edges = match self {
            Direction::Forward => net.in_edges(u),
            Direction::Backward => net.out_edges(u),
        };
        edges.iter().map(move |&e| {
            let edge = net.edges()[e];
            (e, if self == Direction::Forward { edge.src } else { edge.dst })
        })
    }

    fn order(self, net: &GpNet) -> Vec<usize> {
        let mut order = net.topo_order().to_vec();
        if self == Direction::Backward {
            order.reverse();
        }
        order
    }
}

/// Result of evaluating the network on one gpNet, holding everything needed
/// to differentiate it afterwards.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pre_hidden: Vec<[f64; NODE_FEATURES]>,
    pre_embedded: Vec<Vec5>,
    forward_rounds: Vec<Round>,
    backward_rounds: Vec<Round>,
    embeddings: Vec<[f64; OUTPUT_DIM]>,
    score_hidden: Vec<[f64; SCORE_HIDDEN]>,
    scores: Vec<f64>,
}

impl ForwardPass {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn embeddings(&self) -> &[[f64; OUTPUT_DIM]] {
        &self.embeddings
    }

    /// Node vectors entering message passing.
    pub fn pre_embedded(&self) -> &[[f64; EMBED_DIM]] {
        &self.pre_embedded
    }
}

fn scale_for(aggregation: Aggregation, count: usize) -> f64 {
    match aggregation {
        Aggregation::Mean if count > 0 => 1.0 / count as f64,
        _ => 1.0,
    }
}

fn node_round(
    net: &GpNet,
    params: &PolicyParams,
    dir: Direction,
    u: usize,
    inputs: &[Vec5],
    pre_embedded: &Vec5,
) -> (NodeCache, Vec5) {
    let (h1, h2) = dir.layers();
    let w = &params.weights;
    let mut messages = Vec::new();
    let mut aggregate = [0.0; MSG_DIM];
    for (e, v) in dir.neighbours(net, u) {
        let mut input = [0.0; MSG_DIM];
        input[..EMBED_DIM].copy_from_slice(&inputs[v]);
        input[EMBED_DIM..].copy_from_slice(&net.edge_features()[e]);
        let mut pre = [0.0; MSG_DIM];
        affine(w, h1, &input, &mut pre);
        for (a, &z) in aggregate.iter_mut().zip(&pre) {
            *a += z.max(0.0);
        }
        messages.push(MessageCache { input, pre });
    }
    let s = scale_for(params.aggregation, messages.len());
    aggregate.iter_mut().for_each(|a| *a *= s);
    let mut pre = [0.0; EMBED_DIM];
    affine(w, h2, &aggregate, &mut pre);
    let mut out = [0.0; EMBED_DIM];
    relu(&pre, &mut out);
    for (o, x) in out.iter_mut().zip(pre_embedded) {
        *o += x;
    }
    (NodeCache { messages, aggregate, pre }, out)
}

// Backpropagates d(out_u) through one node round; adds into d(inputs) and d(x̃_u).
#[allow(clippy::too_many_arguments)]
fn node_round_backward(
    net: &GpNet,
    params: &PolicyParams,
    grads: &mut Gradients,
    dir: Direction,
    u: usize,
    cache: &NodeCache,
    d_out: &Vec5,
    d_inputs: &mut [Vec5],
    d_pre_embedded: &mut Vec5,
) {
    let (h1, h2) = dir.layers();
    let w = &params.weights;
    for (d, g) in d_pre_embedded.iter_mut().zip(d_out) {
        *d += g;
    }
    let mut d_pre = *d_out;
    relu_backward(&cache.pre, &mut d_pre);
    if cache.messages.is_empty() {
        affine_backward(w, grads, h2, &cache.aggregate, &d_pre, None);
        return;
    }
    let mut d_agg = [0.0; MSG_DIM];
    affine_backward(w, grads, h2, &cache.aggregate, &d_pre, Some(&mut d_agg));
    let s = scale_for(params.aggregation, cache.messages.len());
    for ((_, v), msg) in dir.neighbours(net, u).zip(&cache.messages) {
        let mut d_msg = d_agg;
        d_msg.iter_mut().for_each(|x| *x *= s);
        relu_backward(&msg.pre, &mut d_msg);
        let mut d_input = [0.0; MSG_DIM];
        affine_backward(w, grads, h1, &msg.input, &d_msg, Some(&mut d_input));
        for (d, g) in d_inputs[v].iter_mut().zip(&d_input[..EMBED_DIM]) {
            *d += g;
        }
    }
}

fn sweep(net: &GpNet, params: &PolicyParams, dir: Direction, pre_embedded: &[Vec5]) -> Round {
    let n = net.num_nodes();
    let mut out = vec![[0.0; EMBED_DIM]; n];
    let mut nodes: Vec<Option<NodeCache>> = vec![None; n];
    for u in dir.order(net) {
        let (cache, e) = node_round(net, params, dir, u, &out, &pre_embedded[u]);
        out[u] = e;
        nodes[u] = Some(cache);
    }
    Round { nodes: nodes.into_iter().map(|c| c.expect("topological order covers every node")).collect(), out }
}

fn rounds(net: &GpNet, params: &PolicyParams, dir: Direction, pre_embedded: &[Vec5], k: usize) -> Vec<Round> {
    let mut all: Vec<Round> = Vec::with_capacity(k);
    for _ in 0..k {
        let inputs = all.last().map_or(pre_embedded, |r| r.out.as_slice());
        let (nodes, out) = (0..net.num_nodes())
            .map(|u| node_round(net, params, dir, u, inputs, &pre_embedded[u]))
            .unzip();
        all.push(Round { nodes, out });
    }
    all
}

/// Evaluates embeddings and scores for every node of `net`.
pub fn forward(net: &GpNet, params: &PolicyParams) -> Result<ForwardPass> {
    if net.num_nodes() == 0 {
        return Err(Error::ShapeMismatch("gpNet has no nodes".into()));
    }
    let w = &params.weights;
    let n = net.num_nodes();
    let mut pre_hidden = Vec::with_capacity(n);
    let mut pre_embedded = Vec::with_capacity(n);
    for x in net.node_features() {
        let mut z = [0.0; NODE_FEATURES];
        affine(w, PRE1, x, &mut z);
        let mut a = [0.0; NODE_FEATURES];
        relu(&z, &mut a);
        let mut e = [0.0; EMBED_DIM];
        affine(w, PRE2, &a, &mut e);
        pre_hidden.push(z);
        pre_embedded.push(e);
    }

    let (forward_rounds, backward_rounds) = match params.propagation {
        Propagation::Sweep => (
            vec![sweep(net, params, Direction::Forward, &pre_embedded)],
            vec![sweep(net, params, Direction::Backward, &pre_embedded)],
        ),
        Propagation::Steps(0) => return Err(Error::InvalidParams("message passing needs k >= 1".into())),
        Propagation::Steps(k) => (
            rounds(net, params, Direction::Forward, &pre_embedded, k),
            rounds(net, params, Direction::Backward, &pre_embedded, k),
        ),
    };

    let fwd = &forward_rounds.last().expect("at least one round").out;
    let bwd = &backward_rounds.last().expect("at least one round").out;
    let mut embeddings = Vec::with_capacity(n);
    let mut score_hidden = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for u in 0..n {
        let mut e = [0.0; OUTPUT_DIM];
        e[..EMBED_DIM].copy_from_slice(&fwd[u]);
        e[EMBED_DIM..].copy_from_slice(&bwd[u]);
        let (h, q) = score_one(w, &e);
        embeddings.push(e);
        score_hidden.push(h);
        scores.push(q);
    }
    Ok(ForwardPass { pre_hidden, pre_embedded, forward_rounds, backward_rounds, embeddings, score_hidden, scores })
}

fn score_one(w: &Tensors, e: &[f64; OUTPUT_DIM]) -> ([f64; SCORE_HIDDEN], f64) {
    let mut z = [0.0; SCORE_HIDDEN];
    affine(w, SCORE1, e, &mut z);
    let mut a = [0.0; SCORE_HIDDEN];
    relu(&z, &mut a);
    let mut q = [0.0];
    affine(w, SCORE2, &a, &mut q);
    (z, q[0])
}

/// Per-node embeddings with the full-depth sweep.
pub fn embed(net: &GpNet, params: &PolicyParams) -> Result<Vec<[f64; OUTPUT_DIM]>> {
    let p = PolicyParams { propagation: Propagation::Sweep, ..params.clone() };
    Ok(forward(net, &p)?.embeddings)
}

/// Per-node embeddings after `k` synchronous rounds.
pub fn embed_k(net: &GpNet, params: &PolicyParams, k: usize) -> Result<Vec<[f64; OUTPUT_DIM]>> {
    let p = PolicyParams { propagation: Propagation::Steps(k), ..params.clone() };
    Ok(forward(net, &p)?.embeddings)
}

/// Applies the score head to each embedding independently.
pub fn score(embeddings: &[[f64; OUTPUT_DIM]], params: &PolicyParams) -> Vec<f64> {
    embeddings.iter().map(|e| score_one(&params.weights, e).1).collect()
}

/// Gradient of `Σ_u upstream[u] · q_u` with respect to all parameters.
pub fn backprop(net: &GpNet, params: &PolicyParams, upstream: &[f64]) -> Result<Gradients> {
    forward(net, params)?.backward(net, params, upstream)
}

impl ForwardPass {
    /// Gradient of `Σ_u upstream[u] · q_u` for the pass that produced `self`.
    pub fn backward(&self, net: &GpNet, params: &PolicyParams, upstream: &[f64]) -> Result<Gradients> {
        let n = self.scores.len();
        if upstream.len() != n || net.num_nodes() != n {
            return Err(Error::ShapeMismatch(format!(
                "upstream has {} entries for {} nodes",
                upstream.len(),
                n
            )));
        }
        let w = &params.weights;
        let mut grads = Tensors::zeros();

        let mut d_fwd = vec![[0.0; EMBED_DIM]; n];
        let mut d_bwd = vec![[0.0; EMBED_DIM]; n];
        for u in 0..n {
            if upstream[u] == 0.0 {
                continue;
            }
            let mut d_hidden = [0.0; SCORE_HIDDEN];
            let mut hidden = [0.0; SCORE_HIDDEN];
            relu(&self.score_hidden[u], &mut hidden);
            affine_backward(w, &mut grads, SCORE2, &hidden, &[upstream[u]], Some(&mut d_hidden));
            relu_backward(&self.score_hidden[u], &mut d_hidden);
            let mut d_e = [0.0; OUTPUT_DIM];
            affine_backward(w, &mut grads, SCORE1, &self.embeddings[u], &d_hidden, Some(&mut d_e));
            d_fwd[u].copy_from_slice(&d_e[..EMBED_DIM]);
            d_bwd[u].copy_from_slice(&d_e[EMBED_DIM..]);
        }

        let mut d_pre_embedded = vec![[0.0; EMBED_DIM]; n];
        for (dir, rounds, d_out) in [
            (Direction::Forward, &self.forward_rounds, d_fwd),
            (Direction::Backward, &self.backward_rounds, d_bwd),
        ] {
            self.rounds_backward(net, params, &mut grads, dir, rounds, d_out, &mut d_pre_embedded);
        }

        for u in 0..n {
            let mut hidden = [0.0; NODE_FEATURES];
            relu(&self.pre_hidden[u], &mut hidden);
            let mut d_hidden = [0.0; NODE_FEATURES];
            affine_backward(w, &mut grads, PRE2, &hidden, &d_pre_embedded[u], Some(&mut d_hidden));
            relu_backward(&self.pre_hidden[u], &mut d_hidden);
            affine_backward(w, &mut grads, PRE1, &net.node_features()[u], &d_hidden, None);
        }
        grads.check_finite()?;
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn rounds_backward(
        &self,
        net: &GpNet,
        params: &PolicyParams,
        grads: &mut Gradients,
        dir: Direction,
        rounds: &[Round],
        mut d_out: Vec<Vec5>,
        d_pre_embedded: &mut [Vec5],
    ) {
        let n = net.num_nodes();
        match params.propagation {
            Propagation::Sweep => {
                // inputs of a sweep are its own outputs: walk the order backwards
                let round = &rounds[0];
                let mut order = dir.order(net);
                order.reverse();
                for u in order {
                    let d = d_out[u];
                    node_round_backward(net, params, grads, dir, u, &round.nodes[u], &d, &mut d_out, &mut d_pre_embedded[u]);
                }
            }
            Propagation::Steps(_) => {
                for round in rounds.iter().rev() {
                    let mut d_in = vec![[0.0; EMBED_DIM]; n];
                    for u in 0..n {
                        node_round_backward(net, params, grads, dir, u, &round.nodes[u], &d_out[u], &mut d_in, &mut d_pre_embedded[u]);
                    }
                    d_out = d_in;
                }
                // the first round reads the pre-embedded features
                for (d, g) in d_pre_embedded.iter_mut().zip(&d_out) {
                    for (a, b) in d.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{random_placement, Placement, ProblemInstance};
    use crate::gpnet::build_gpnet;
    use crate::simulator::{simulate, LatencyModel};
    use crate::testutil::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gpnet_for(seed: u64, tasks: core::ops::RangeInclusive<usize>) -> (ProblemInstance, GpNet) {
        let inst = random_small_instance(seed, tasks, 2..=3);
        let p = random_placement(&inst, &mut ChaCha8Rng::seed_from_u64(seed));
        let trace = simulate(&inst, &p, LatencyModel::EXACT, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let net = build_gpnet(&inst, &p, &trace).unwrap();
        (inst, net)
    }

    // Random params with biases nudged positive so fewer ReLUs sit at zero.
    fn random_params(seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::init(&mut rng);
        for l in 0..LAYERS.len() {
            let (_, b) = p.weights.layer_mut(l);
            for x in b {
                *x = rng.gen_range(-0.1..0.5);
            }
        }
        p
    }

    fn objective(net: &GpNet, params: &PolicyParams, upstream: &[f64]) -> f64 {
        forward(net, params).unwrap().scores().iter().zip(upstream).map(|(q, g)| q * g).sum()
    }

    fn finite_difference_check(propagation: Propagation, aggregation: Aggregation, seeds: core::ops::Range<u64>) {
        let h = 1e-5;
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        for seed in seeds {
            let (_, net) = gpnet_for(seed, 2..=5);
            let params = random_params(seed).with_propagation(propagation).with_aggregation(aggregation);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let upstream: Vec<f64> = (0..net.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let grads = backprop(&net, &params, &upstream).unwrap();
            for _ in 0..5 {
                let i = rng.gen_range(0..NUM_PARAMS);
                let mut plus = params.clone();
                plus.weights.as_mut_slice()[i] += h;
                let mut minus = params.clone();
                minus.weights.as_mut_slice()[i] -= h;
                let numeric = (objective(&net, &plus, &upstream) - objective(&net, &minus, &upstream)) / (2.0 * h);
                let analytic = grads.as_slice()[i];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                // a ReLU kink inside [x-h, x+h] breaks the difference quotient
                if err > 1e-4 {
                    let kink = (numeric - analytic).abs() < 1e-3 * (1.0 + analytic.abs());
                    assert!(kink, "{}: analytic {analytic} numeric {numeric}", Tensors::path_of(i));
                } else {
                    checked += 1;
                }
                worst = worst.max(err);
            }
        }
        assert!(checked >= 90, "only {checked} coordinates were kink-free");
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(Propagation::Sweep, Aggregation::Mean, 0..20);
    }

    #[test]
    fn gradients_match_finite_differences_for_sum_and_k_steps() {
        finite_difference_check(Propagation::Sweep, Aggregation::Sum, 20..40);
        finite_difference_check(Propagation::Steps(2), Aggregation::Mean, 40..60);
    }

    #[test]
    fn every_layer_receives_gradient() {
        let (_, net) = gpnet_for(3, 5..=5);
        let params = random_params(3);
        let upstream = vec![1.0; net.num_nodes()];
        let grads = backprop(&net, &params, &upstream).unwrap();
        for l in 0..LAYERS.len() {
            let (w, _) = grads.layer(l);
            assert!(w.iter().any(|&x| x != 0.0), "layer {} has zero gradient", LAYERS[l].name);
        }
    }

    #[test]
    fn zero_and_scaled_upstream() {
        let (_, net) = gpnet_for(8, 4..=4);
        let params = random_params(8);
        let zero = backprop(&net, &params, &vec![0.0; net.num_nodes()]).unwrap();
        assert!(zero.as_slice().iter().all(|&x| x == 0.0));
        let up: Vec<f64> = (0..net.num_nodes()).map(|i| (i as f64) - 1.5).collect();
        let up2: Vec<f64> = up.iter().map(|x| 2.0 * x).collect();
        let g1 = backprop(&net, &params, &up).unwrap();
        let g2 = backprop(&net, &params, &up2).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        assert!(matches!(backprop(&net, &params, &[1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn isolated_node_gets_bias_aggregate() {
        let inst = chain_instance(&[3.0], &[], &[1.0], 1.0, 0.0);
        let p = Placement::new(vec![0]);
        let trace = simulate(&inst, &p, LatencyModel::EXACT, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let net = build_gpnet(&inst, &p, &trace).unwrap();
        let params = random_params(1);
        let pass = forward(&net, &params).unwrap();
        let x = pass.pre_embedded[0];
        for (dir, offset) in [(FWD_H2, 0), (BWD_H2, EMBED_DIM)] {
            let (_, b) = params.weights.layer(dir);
            for i in 0..EMBED_DIM {
                assert_eq!(pass.embeddings()[0][offset + i], b[i].max(0.0) + x[i]);
            }
        }
    }

    #[test]
    fn zero_message_weights_leave_only_node_features() {
        let (_, net) = gpnet_for(2, 5..=5);
        let mut params = random_params(2);
        for l in [FWD_H1, FWD_H2, BWD_H1, BWD_H2] {
            let (w, b) = params.weights.layer_mut(l);
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = 0.0);
        }
        let pass = forward(&net, &params).unwrap();
        for u in 0..net.num_nodes() {
            assert_eq!(&pass.embeddings()[u][..EMBED_DIM], &pass.pre_embedded[u]);
            assert_eq!(&pass.embeddings()[u][EMBED_DIM..], &pass.pre_embedded[u]);
        }
    }

    #[test]
    fn storage_order_does_not_matter() {
        for seed in 0..10 {
            let (_, net) = gpnet_for(seed, 3..=6);
            let params = random_params(seed);
            let mut perm: Vec<usize> = (0..net.num_nodes()).collect();
            perm.reverse();
            let shift = seed as usize % perm.len();
            perm.rotate_left(shift);
            let shuffled = net.permuted(&perm);
            let a = embed(&net, &params).unwrap();
            let b = embed(&shuffled, &params).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                for i in 0..OUTPUT_DIM {
                    assert!((a[old][i] - b[new][i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scores_are_per_node() {
        let (_, net) = gpnet_for(6, 4..=4);
        let params = random_params(6);
        let e = embed(&net, &params).unwrap();
        let q = score(&e, &params);
        assert_eq!(q.len(), net.num_nodes());
        assert_eq!(score(&[e[0], e[0]], &params), vec![q[0], q[0]]);
        assert_eq!(forward(&net, &params).unwrap().scores(), q.as_slice());
    }

    #[test]
    fn score_gradient_wrt_embedding() {
        let params = random_params(12);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let e: [f64; OUTPUT_DIM] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let (z, _) = score_one(&params.weights, &e);
        let mut hidden = [0.0; SCORE_HIDDEN];
        relu(&z, &mut hidden);
        let mut scratch = Tensors::zeros();
        let mut d_hidden = [0.0; SCORE_HIDDEN];
        affine_backward(&params.weights, &mut scratch, SCORE2, &hidden, &[1.0], Some(&mut d_hidden));
        relu_backward(&z, &mut d_hidden);
        let mut d_e = [0.0; OUTPUT_DIM];
        affine_backward(&params.weights, &mut scratch, SCORE1, &e, &d_hidden, Some(&mut d_e));
        for i in 0..OUTPUT_DIM {
            let mut plus = e;
            plus[i] += 1e-5;
            let mut minus = e;
            minus[i] -= 1e-5;
            let numeric = (score_one(&params.weights, &plus).1 - score_one(&params.weights, &minus).1) / 2e-5;
            assert!((numeric - d_e[i]).abs() <= 1e-4 * numeric.abs().max(1e-6));
        }
    }

    #[test]
    fn k_steps_limit_the_receptive_field() {
        // chain 0 -> 1 -> 2 on one device: three levels
        let inst = chain_instance(&[1.0, 2.0, 3.0], &[1.0, 1.0], &[1.0], 1.0, 0.0);
        let p = Placement::new(vec![0, 0, 0]);
        let trace = simulate(&inst, &p, LatencyModel::EXACT, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let net = build_gpnet(&inst, &p, &trace).unwrap();
        let params = random_params(4);
        let mut perturbed = net.clone();
        perturbed.perturb_node_feature(0, 0, 3.0);

        let a = embed_k(&net, &params, 1).unwrap();
        let b = embed_k(&perturbed, &params, 1).unwrap();
        assert_eq!(&a[2][..EMBED_DIM], &b[2][..EMBED_DIM]);

        let a = embed_k(&net, &params, 2).unwrap();
        let b = embed_k(&perturbed, &params, 2).unwrap();
        let full_a = embed(&net, &params).unwrap();
        let full_b = embed(&perturbed, &params).unwrap();
        let changed = |x: &[f64], y: &[f64]| x.iter().zip(y).any(|(p, q)| p != q);
        assert_eq!(changed(&a[2][..EMBED_DIM], &b[2][..EMBED_DIM]), changed(&full_a[2][..EMBED_DIM], &full_b[2][..EMBED_DIM]));

        assert!(matches!(embed_k(&net, &params, 0), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let a = PolicyParams::init(&mut ChaCha8Rng::seed_from_u64(1));
        let b = PolicyParams::init(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        a.weights.check_finite().unwrap();
        let (w, _) = a.weights.layer(FWD_H1);
        let limit = math::sqrt(6.0 / 18.0);
        assert!(w.iter().all(|x| x.abs() <= limit));
        assert_eq!(NUM_PARAMS, 20 + 25 + 90 + 50 + 90 + 50 + 176 + 17);
        assert_eq!(Tensors::path_of(20), "pre_embed.1.weight[0][0]");
        assert_eq!(Tensors::path_of(NUM_PARAMS - 1), "score.1.bias[0]");
    }
}
