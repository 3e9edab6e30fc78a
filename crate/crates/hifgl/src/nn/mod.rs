//! Dense kernels and the split-form GNN layers.
//!
//! The GCN aggregation is split so that neither endpoint of an edge learns
//! the other's degree: the sender scales its embedding by `1/sqrt(|N_v|)`
//! (source side), the receiver sums what arrives, then applies
//! `b + (sum * W) / sqrt(|N_u|)` (target side). Composed over a graph this
//! equals the standard GCN rule, which is also implemented directly as a
//! centralized oracle for equivalence tests and the Global baseline.
//!
//! Gradients come in two flavors. Device-local gradients treat everything a
//! device received through the protocol as constant, except the device's own
//! self-loop contribution to its own aggregate, which it computed locally -
//! no backward protocol exists, so nothing else can flow. The exact
//! full-graph backward (used by the Global baseline) backpropagates through
//! the aggregation itself.

pub mod tensor;

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::FederatedGraph;
use crate::rng;
pub use tensor::Matrix;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("operation requires arch {expected:?}, model is {got:?}")]
    ArchMismatch { expected: Arch, got: Arch },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("non-finite parameter detected after update")]
    NonFinite,
}

/// Model family. `Gcn` and `Sage` are split into source/target halves for
/// the message-passing protocol; `Mlp` never touches the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Gcn,
    Sage,
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "gcn" => Ok(Arch::Gcn),
            "sage" => Ok(Arch::Sage),
            other => Err(format!("unknown arch {other:?} (expected mlp|gcn|sage)")),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Mlp => write!(f, "mlp"),
            Arch::Gcn => write!(f, "gcn"),
            Arch::Sage => write!(f, "sage"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Per-silo model parameters: the layer list the server averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    /// Layer widths `[input, hidden..., classes]`.
    pub dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// Weight input width of layer `k` (sage concatenates self and mean).
    fn w_in(arch: Arch, d_in: usize) -> usize {
        match arch {
            Arch::Sage => 2 * d_in,
            _ => d_in,
        }
    }

    /// Glorot-uniform weights, zero biases, seeded.
    pub fn init_glorot(arch: Arch, dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut stream = rng::stream(rng::sub_seed(seed, "init"));
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let fan_in = Self::w_in(arch, dims[k]);
            let fan_out = dims[k + 1];
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Matrix::zeros(fan_in, fan_out);
            for v in &mut w.data {
                *v = rng::uniform_in(&mut stream, limit);
            }
            layers.push(Layer {
                w,
                b: vec![0.0; fan_out],
            });
        }
        Self {
            arch,
            dims: dims.to_vec(),
            layers,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total scalar parameter count (the model-size term of the ledger).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data.len() + l.b.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite()))
    }

    /// Check the dims chain and per-layer shapes.
    pub fn check_shapes(&self) -> Result<(), NnError> {
        if self.layers.len() + 1 != self.dims.len() {
            return Err(NnError::Dim(format!(
                "{} layers but {} dims",
                self.layers.len(),
                self.dims.len()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            let want_in = Self::w_in(self.arch, self.dims[k]);
            if layer.w.rows != want_in || layer.w.cols != self.dims[k + 1] {
                return Err(NnError::Dim(format!(
                    "layer {k}: W is {}x{}, expected {}x{}",
                    layer.w.rows,
                    layer.w.cols,
                    want_in,
                    self.dims[k + 1]
                )));
            }
            if layer.b.len() != self.dims[k + 1] {
                return Err(NnError::Dim(format!("layer {k}: bias length")));
            }
        }
        Ok(())
    }

    /// Element-wise visitor over all tensors, paired with another model of
    /// identical shape.
    pub fn zip_apply(&mut self, other: &ModelParams, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.data.iter_mut().zip(&b.w.data) {
                f(x, *y);
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                f(x, *y);
            }
        }
    }

    pub fn flat_len(&self) -> usize {
        self.param_count()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.clear();
        for l in &self.layers {
            out.extend_from_slice(&l.w.data);
            out.extend_from_slice(&l.b);
        }
    }

    pub fn unflatten_from(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for l in &mut self.layers {
            let wlen = l.w.data.len();
            l.w.data.copy_from_slice(&flat[pos..pos + wlen]);
            pos += wlen;
            let blen = l.b.len();
            l.b.copy_from_slice(&flat[pos..pos + blen]);
            pos += blen;
        }
        assert_eq!(pos, flat.len());
    }

    /// Write the checkpoint: one JSON header line, then raw little-endian
    /// f64 tensors in layer order (W then b per layer).
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let header = serde_json::json!({
            "format": "hifgl-checkpoint-v1",
            "arch": self.arch,
            "dims": self.dims,
            "dtype": "f64",
            "endian": "little",
            "tensors": self.layers.iter().enumerate().flat_map(|(k, l)| {
                vec![
                    serde_json::json!({"name": format!("w{k}"), "rows": l.w.rows, "cols": l.w.cols}),
                    serde_json::json!({"name": format!("b{k}"), "len": l.b.len()}),
                ]
            }).collect::<Vec<_>>(),
        });
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, &header)
            .map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
        file.write_all(b"\n")?;
        for l in &self.layers {
            for v in &l.w.data {
                file.write_all(&v.to_le_bytes())?;
            }
            for v in &l.b {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: serde_json::Value = serde_json::from_str(&header_line)
            .map_err(|e| NnError::BadCheckpoint(format!("header: {e}")))?;
        if header["format"] != "hifgl-checkpoint-v1" {
            return Err(NnError::BadCheckpoint("unknown format tag".into()));
        }
        let arch: Arch = serde_json::from_value(header["arch"].clone())
            .map_err(|e| NnError::BadCheckpoint(format!("arch: {e}")))?;
        let dims: Vec<usize> = serde_json::from_value(header["dims"].clone())
            .map_err(|e| NnError::BadCheckpoint(format!("dims: {e}")))?;
        let mut model = ModelParams::init_glorot(arch, &dims, 0);
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf)?;
        let want = model.flat_len() * 8;
        if buf.len() != want {
            return Err(NnError::BadCheckpoint(format!(
                "payload is {} bytes, expected {want}",
                buf.len()
            )));
        }
        let flat: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.unflatten_from(&flat);
        model.check_shapes()?;
        Ok(model)
    }
}

/// Gradient set with the same shapes as the model it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Layer>,
}

impl Grads {
    pub fn zeros_like(model: &ModelParams) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    w: Matrix::zeros(l.w.rows, l.w.cols),
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w.add_assign(&b.w);
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.scale(s);
            for v in &mut l.b {
                *v *= s;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w.data);
            out.extend_from_slice(&l.b);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Split-form layer functions
// ---------------------------------------------------------------------------

/// Source-side half of the split GCN aggregation: scale by 1/sqrt(degree).
pub fn source_side(h: &[f64], degree: usize) -> Vec<f64> {
    assert!(degree >= 1, "degree 0 is prevented by self-loop insertion");
    let inv = 1.0 / (degree as f64).sqrt();
    h.iter().map(|v| v * inv).collect()
}

/// Target-side half: `b + (agg * W) / sqrt(degree)` on the decoded sum of
/// the neighbors' source-side outputs.
pub fn target_side(agg: &[f64], degree: usize, w: &Matrix, b: &[f64]) -> Result<Vec<f64>, NnError> {
    if agg.len() != w.rows || b.len() != w.cols {
        return Err(NnError::Dim(format!(
            "target_side: agg {} vs W {}x{}, b {}",
            agg.len(),
            w.rows,
            w.cols,
            b.len()
        )));
    }
    let inv = 1.0 / (degree as f64).sqrt();
    let mut out = b.to_vec();
    for (k, &av) in agg.iter().enumerate() {
        if av != 0.0 {
            let scaled = av * inv;
            for (o, &wv) in out.iter_mut().zip(w.row(k)) {
                *o += scaled * wv;
            }
        }
    }
    Ok(out)
}

/// Mean-aggregator source side: identity (the receiver does all the work).
pub fn sage_source_side(h: &[f64]) -> Vec<f64> {
    h.to_vec()
}

/// Mean-aggregator target side: concatenate the node's own embedding with
/// the neighbor mean `agg / degree`, then apply `W, b`.
pub fn sage_target_side(
    agg: &[f64],
    degree: usize,
    h_self: &[f64],
    w: &Matrix,
    b: &[f64],
) -> Result<Vec<f64>, NnError> {
    assert!(degree >= 1);
    if agg.len() != h_self.len() || w.rows != 2 * h_self.len() || b.len() != w.cols {
        return Err(NnError::Dim(format!(
            "sage_target_side: agg {} self {} vs W {}x{}",
            agg.len(),
            h_self.len(),
            w.rows,
            w.cols
        )));
    }
    let inv = 1.0 / degree as f64;
    let mut out = b.to_vec();
    for (k, &sv) in h_self.iter().enumerate() {
        if sv != 0.0 {
            for (o, &wv) in out.iter_mut().zip(w.row(k)) {
                *o += sv * wv;
            }
        }
    }
    let half = h_self.len();
    for (k, &av) in agg.iter().enumerate() {
        if av != 0.0 {
            let scaled = av * inv;
            for (o, &wv) in out.iter_mut().zip(w.row(half + k)) {
                *o += scaled * wv;
            }
        }
    }
    Ok(out)
}

pub fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Row-wise stable softmax.
pub fn softmax_rows(logits: &Matrix, workers: usize) -> Matrix {
    let mut out = logits.clone();
    let cols = out.cols;
    let rows = out.rows;
    tensor::par_rows_mut(&mut out.data, rows, cols, workers, |_, chunk| {
        for row in chunk.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
    });
    out
}

/// Probability floor applied before the log in the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Negative log-likelihood of the labeled class. Probabilities at or below
/// the clamp are floored (and the caller's trace flags it).
pub fn cross_entropy_loss(probs: &[f64], label: u32) -> f64 {
    -probs[label as usize].max(PROB_CLAMP).ln()
}

// ---------------------------------------------------------------------------
// Graph structure views used by the forward/backward passes
// ---------------------------------------------------------------------------

/// CSR neighbor lists grouped by destination (in-neighbors), with degrees
/// and a per-node self-loop flag.
#[derive(Debug, Clone)]
pub struct InNeighbors {
    pub offsets: Vec<usize>,
    pub sources: Vec<u32>,
    pub degree: Vec<usize>,
    pub self_loop: Vec<bool>,
}

impl InNeighbors {
    pub fn of(&self, node: usize) -> &[u32] {
        &self.sources[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn from_graph(g: &FederatedGraph) -> Self {
        Self::from_edges(&g.edges, g.num_nodes)
    }

    pub fn from_edges(edges: &[(u32, u32)], n: usize) -> Self {
        let mut counts = vec![0usize; n];
        for &(_, v) in edges {
            counts[v as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + counts[i];
        }
        let mut sources = vec![0u32; edges.len()];
        let mut cursor = offsets.clone();
        let mut sorted = edges.to_vec();
        sorted.sort_unstable_by_key(|&(u, v)| (v, u));
        for (u, v) in sorted {
            sources[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        let mut self_loop = vec![false; n];
        for (i, flag) in self_loop.iter_mut().enumerate() {
            *flag = sources[offsets[i]..offsets[i + 1]].contains(&(i as u32));
        }
        let degree = (0..n).map(|i| offsets[i + 1] - offsets[i]).collect();
        Self {
            offsets,
            sources,
            degree,
            self_loop,
        }
    }

    /// The reverse view (edges grouped by source): needed by the exact
    /// backward to scatter gradients back to senders.
    pub fn reversed(edges: &[(u32, u32)], n: usize) -> Self {
        let flipped: Vec<(u32, u32)> = edges.iter().map(|&(u, v)| (v, u)).collect();
        Self::from_edges(&flipped, n)
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Everything a backward pass needs, for all nodes at once: the embedding
/// entering each layer, the decoded aggregate each node received, the
/// pre-activation, and the final distribution.
#[derive(Debug)]
pub struct ForwardTrace {
    pub arch: Arch,
    /// `inputs[k]` is the embedding entering layer k+1; `inputs[0]` is the
    /// feature matrix, the last entry is the logits.
    pub inputs: Vec<Matrix>,
    /// Decoded aggregate per layer (empty for mlp).
    pub aggregates: Vec<Matrix>,
    /// Pre-activations per layer.
    pub pre_activations: Vec<Matrix>,
    pub probs: Matrix,
    pub degree: Vec<usize>,
    pub self_loop: Vec<bool>,
    /// How many loss evaluations hit the probability clamp.
    pub clamped: std::sync::atomic::AtomicUsize,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        self.inputs.last().expect("forward produced logits")
    }

    pub fn loss_of(&self, node: usize, label: u32) -> f64 {
        let p = self.probs.row(node)[label as usize];
        if p <= PROB_CLAMP {
            self.clamped
                .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        cross_entropy_loss(self.probs.row(node), label)
    }

    pub fn predictions(&self) -> Vec<u32> {
        (0..self.probs.rows)
            .map(|i| {
                let row = self.probs.row(i);
                let mut best = 0usize;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Sum the source-side rows of every in-neighbor: the plain-value equivalent
/// of what secure aggregation decodes.
pub fn aggregate_neighbor_rows(scaled: &Matrix, adj: &InNeighbors, workers: usize) -> Matrix {
    let mut out = Matrix::zeros(scaled.rows, scaled.cols);
    let cols = scaled.cols;
    let rows = scaled.rows;
    tensor::par_rows_mut(&mut out.data, rows, cols, workers, |first, chunk| {
        for (local, out_row) in chunk.chunks_mut(cols).enumerate() {
            let u = first + local;
            for &v in adj.of(u) {
                for (o, &s) in out_row.iter_mut().zip(scaled.row(v as usize)) {
                    *o += s;
                }
            }
        }
    });
    out
}

fn scale_rows_inv_sqrt_deg(m: &Matrix, degree: &[usize], workers: usize) -> Matrix {
    let mut out = m.clone();
    let cols = out.cols;
    let rows = out.rows;
    tensor::par_rows_mut(&mut out.data, rows, cols, workers, |first, chunk| {
        for (local, row) in chunk.chunks_mut(cols).enumerate() {
            let inv = 1.0 / (degree[first + local] as f64).sqrt();
            for v in row {
                *v *= inv;
            }
        }
    });
    out
}

/// Centralized K-layer forward for any arch. For `gcn` this evaluates the
/// unsplit rule `h_u = b + sum_v h_v W / (sqrt(|N_u|) sqrt(|N_v|))` layer by
/// layer; protocol equivalence against this oracle is the integrity check.
pub fn centralized_forward(
    features: &Matrix,
    adj: &InNeighbors,
    params: &ModelParams,
    workers: usize,
) -> Result<ForwardTrace, NnError> {
    params.check_shapes()?;
    let n = features.rows;
    let k_layers = params.num_layers();
    let mut inputs = vec![features.clone()];
    let mut aggregates = Vec::new();
    let mut pre_activations = Vec::new();

    for (k, layer) in params.layers.iter().enumerate() {
        let h = &inputs[k];
        let mut z = match params.arch {
            Arch::Mlp => {
                let mut z = tensor::matmul(h, &layer.w, workers);
                add_bias(&mut z, &layer.b, workers);
                z
            }
            Arch::Gcn => {
                let scaled = scale_rows_inv_sqrt_deg(h, &adj.degree, workers);
                let agg = aggregate_neighbor_rows(&scaled, adj, workers);
                let mut z = tensor::matmul(&agg, &layer.w, workers);
                let cols = z.cols;
                tensor::par_rows_mut(&mut z.data, n, cols, workers, |first, chunk| {
                    for (local, row) in chunk.chunks_mut(cols).enumerate() {
                        let inv = 1.0 / (adj.degree[first + local] as f64).sqrt();
                        for (v, &bv) in row.iter_mut().zip(&layer.b) {
                            *v = *v * inv + bv;
                        }
                    }
                });
                aggregates.push(agg);
                z
            }
            Arch::Sage => {
                let agg = aggregate_neighbor_rows(h, adj, workers);
                let d_in = h.cols;
                let mut concat = Matrix::zeros(n, 2 * d_in);
                let cols = 2 * d_in;
                tensor::par_rows_mut(&mut concat.data, n, cols, workers, |first, chunk| {
                    for (local, row) in chunk.chunks_mut(cols).enumerate() {
                        let u = first + local;
                        let inv = 1.0 / adj.degree[u] as f64;
                        row[..d_in].copy_from_slice(h.row(u));
                        for (dst, &a) in row[d_in..].iter_mut().zip(agg.row(u)) {
                            *dst = a * inv;
                        }
                    }
                });
                let mut z = tensor::matmul(&concat, &layer.w, workers);
                add_bias(&mut z, &layer.b, workers);
                aggregates.push(agg);
                z
            }
        };
        pre_activations.push(z.clone());
        if k + 1 < k_layers {
            relu(&mut z.data);
        }
        inputs.push(z);
    }

    let probs = softmax_rows(inputs.last().unwrap(), workers);
    Ok(ForwardTrace {
        arch: params.arch,
        inputs,
        aggregates,
        pre_activations,
        probs,
        degree: adj.degree.clone(),
        self_loop: adj.self_loop.clone(),
        clamped: std::sync::atomic::AtomicUsize::new(0),
    })
}

/// Centralized GCN oracle on a normalized graph. Rejects non-GCN models.
pub fn centralized_gcn_forward(
    g: &FederatedGraph,
    params: &ModelParams,
    workers: usize,
) -> Result<ForwardTrace, NnError> {
    if params.arch != Arch::Gcn {
        return Err(NnError::ArchMismatch {
            expected: Arch::Gcn,
            got: params.arch,
        });
    }
    let features = Matrix {
        rows: g.num_nodes,
        cols: g.num_features,
        data: g.features.clone(),
    };
    let adj = InNeighbors::from_graph(g);
    centralized_forward(&features, &adj, params, workers)
}

fn add_bias(z: &mut Matrix, b: &[f64], workers: usize) {
    let cols = z.cols;
    let rows = z.rows;
    tensor::par_rows_mut(&mut z.data, rows, cols, workers, |_, chunk| {
        for row in chunk.chunks_mut(cols) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

/// Softmax cross-entropy deltas for the listed nodes: rows `probs - onehot`,
/// scaled by `weight`; all other rows stay zero.
pub fn output_deltas(trace: &ForwardTrace, nodes: &[u32], labels: &[u32], weight: f64) -> Matrix {
    let mut delta = Matrix::zeros(trace.probs.rows, trace.probs.cols);
    for &node in nodes {
        let src = trace.probs.row(node as usize).to_vec();
        let row = delta.row_mut(node as usize);
        row.copy_from_slice(&src);
        row[labels[node as usize] as usize] -= 1.0;
        for v in row {
            *v *= weight;
        }
    }
    delta
}

/// Backpropagate per-node deltas under the stop-gradient convention: only a
/// node's own self-loop contribution to its own aggregate carries gradient
/// to earlier layers. Rows stay independent, so non-listed rows stay zero.
pub fn backprop_deltas_stop_grad(
    trace: &ForwardTrace,
    params: &ModelParams,
    delta_out: Matrix,
    workers: usize,
) -> Vec<Matrix> {
    let k_layers = params.num_layers();
    let mut deltas = vec![Matrix::zeros(0, 0); k_layers];
    deltas[k_layers - 1] = delta_out;
    for k in (1..k_layers).rev() {
        let layer = &params.layers[k];
        let d_prev = params.dims[k];
        let n = trace.probs.rows;
        let mut prev = Matrix::zeros(n, d_prev);
        let delta_k = deltas[k].clone();
        let z_prev = &trace.pre_activations[k - 1];
        tensor::par_rows_mut(&mut prev.data, n, d_prev, workers, |first, chunk| {
            for (local, out_row) in chunk.chunks_mut(d_prev).enumerate() {
                let u = first + local;
                let drow = delta_k.row(u);
                if drow.iter().all(|&v| v == 0.0) {
                    continue;
                }
                match params.arch {
                    Arch::Mlp => {
                        for (c, out) in out_row.iter_mut().enumerate() {
                            let wrow = layer.w.row(c);
                            let mut acc = 0.0;
                            for (dv, wv) in drow.iter().zip(wrow) {
                                acc += dv * wv;
                            }
                            *out = acc;
                        }
                    }
                    Arch::Gcn => {
                        // own share of the aggregate: coefficient 1/deg
                        if trace.self_loop[u] {
                            let coef = 1.0 / trace.degree[u] as f64;
                            for (c, out) in out_row.iter_mut().enumerate() {
                                let wrow = layer.w.row(c);
                                let mut acc = 0.0;
                                for (dv, wv) in drow.iter().zip(wrow) {
                                    acc += dv * wv;
                                }
                                *out = acc * coef;
                            }
                        }
                    }
                    Arch::Sage => {
                        // self half always flows, mean half only via self-loop
                        let d_in = d_prev;
                        for (c, out) in out_row.iter_mut().enumerate() {
                            let wrow_self = layer.w.row(c);
                            let mut acc = 0.0;
                            for (dv, wv) in drow.iter().zip(wrow_self) {
                                acc += dv * wv;
                            }
                            if trace.self_loop[u] {
                                let coef = 1.0 / trace.degree[u] as f64;
                                let wrow_agg = layer.w.row(d_in + c);
                                let mut agg_acc = 0.0;
                                for (dv, wv) in drow.iter().zip(wrow_agg) {
                                    agg_acc += dv * wv;
                                }
                                acc += agg_acc * coef;
                            }
                            *out = acc;
                        }
                    }
                }
                for (out, &z) in out_row.iter_mut().zip(z_prev.row(u)) {
                    if z <= 0.0 {
                        *out = 0.0;
                    }
                }
            }
        });
        deltas[k - 1] = prev;
    }
    deltas
}

/// Backpropagate deltas exactly, flowing through the aggregation itself
/// (Global baseline). `adj_rev` must be the reverse adjacency.
pub fn backprop_deltas_exact(
    trace: &ForwardTrace,
    params: &ModelParams,
    delta_out: Matrix,
    adj_rev: &InNeighbors,
    workers: usize,
) -> Vec<Matrix> {
    let k_layers = params.num_layers();
    let mut deltas = vec![Matrix::zeros(0, 0); k_layers];
    deltas[k_layers - 1] = delta_out;
    let n = trace.probs.rows;
    for k in (1..k_layers).rev() {
        let layer = &params.layers[k];
        let d_prev = params.dims[k];
        let delta_k = deltas[k].clone();
        // per-receiver gradient on its decoded aggregate (or neighbor mean)
        let mut dagg = Matrix::zeros(n, d_prev);
        tensor::par_rows_mut(&mut dagg.data, n, d_prev, workers, |first, chunk| {
            for (local, out_row) in chunk.chunks_mut(d_prev).enumerate() {
                let u = first + local;
                let drow = delta_k.row(u);
                if drow.iter().all(|&v| v == 0.0) {
                    continue;
                }
                match params.arch {
                    Arch::Mlp => {
                        for (c, out) in out_row.iter_mut().enumerate() {
                            let wrow = layer.w.row(c);
                            *out = drow.iter().zip(wrow).map(|(d, w)| d * w).sum();
                        }
                    }
                    Arch::Gcn => {
                        let coef = 1.0 / (trace.degree[u] as f64).sqrt();
                        for (c, out) in out_row.iter_mut().enumerate() {
                            let wrow = layer.w.row(c);
                            let acc: f64 = drow.iter().zip(wrow).map(|(d, w)| d * w).sum();
                            *out = acc * coef;
                        }
                    }
                    Arch::Sage => {
                        let coef = 1.0 / trace.degree[u] as f64;
                        for (c, out) in out_row.iter_mut().enumerate() {
                            let wrow = layer.w.row(d_prev + c);
                            let acc: f64 = drow.iter().zip(wrow).map(|(d, w)| d * w).sum();
                            *out = acc * coef;
                        }
                    }
                }
            }
        });
        // scatter back to senders (gather over the reverse adjacency), add
        // the direct self path for mlp/sage, apply source scale and relu'
        let mut prev = Matrix::zeros(n, d_prev);
        let z_prev = &trace.pre_activations[k - 1];
        tensor::par_rows_mut(&mut prev.data, n, d_prev, workers, |first, chunk| {
            for (local, out_row) in chunk.chunks_mut(d_prev).enumerate() {
                let v = first + local;
                match params.arch {
                    Arch::Mlp => {
                        out_row.copy_from_slice(dagg.row(v));
                    }
                    Arch::Gcn => {
                        for &u in adj_rev.of(v) {
                            for (o, &dv) in out_row.iter_mut().zip(dagg.row(u as usize)) {
                                *o += dv;
                            }
                        }
                        let coef = 1.0 / (trace.degree[v] as f64).sqrt();
                        for o in out_row.iter_mut() {
                            *o *= coef;
                        }
                    }
                    Arch::Sage => {
                        for &u in adj_rev.of(v) {
                            for (o, &dv) in out_row.iter_mut().zip(dagg.row(u as usize)) {
                                *o += dv;
                            }
                        }
                        let drow = delta_k.row(v);
                        if !drow.iter().all(|&x| x == 0.0) {
                            for (c, o) in out_row.iter_mut().enumerate() {
                                let wrow = layer.w.row(c);
                                let acc: f64 = drow.iter().zip(wrow).map(|(d, w)| d * w).sum();
                                *o += acc;
                            }
                        }
                    }
                }
                for (o, &z) in out_row.iter_mut().zip(z_prev.row(v)) {
                    if z <= 0.0 {
                        *o = 0.0;
                    }
                }
            }
        });
        deltas[k - 1] = prev;
    }
    deltas
}

/// What multiplies `W_k` in the forward for each node (the "effective input"
/// of the layer): needed to form weight gradients.
fn layer_effective_input(
    trace: &ForwardTrace,
    params: &ModelParams,
    k: usize,
    workers: usize,
) -> Matrix {
    let n = trace.probs.rows;
    match params.arch {
        Arch::Mlp => trace.inputs[k].clone(),
        Arch::Gcn => {
            let agg = &trace.aggregates[k];
            let mut out = agg.clone();
            let cols = out.cols;
            tensor::par_rows_mut(&mut out.data, n, cols, workers, |first, chunk| {
                for (local, row) in chunk.chunks_mut(cols).enumerate() {
                    let inv = 1.0 / (trace.degree[first + local] as f64).sqrt();
                    for v in row {
                        *v *= inv;
                    }
                }
            });
            out
        }
        Arch::Sage => {
            let h = &trace.inputs[k];
            let agg = &trace.aggregates[k];
            let d_in = h.cols;
            let mut out = Matrix::zeros(n, 2 * d_in);
            let cols = 2 * d_in;
            tensor::par_rows_mut(&mut out.data, n, cols, workers, |first, chunk| {
                for (local, row) in chunk.chunks_mut(cols).enumerate() {
                    let u = first + local;
                    let inv = 1.0 / trace.degree[u] as f64;
                    row[..d_in].copy_from_slice(h.row(u));
                    for (dst, &a) in row[d_in..].iter_mut().zip(agg.row(u)) {
                        *dst = a * inv;
                    }
                }
            });
            out
        }
    }
}

/// Accumulate weight and bias gradients for the listed nodes from the delta
/// chain, in ascending node order. Returns the *sum* over nodes; callers
/// average as they see fit.
pub fn grads_from_deltas(
    trace: &ForwardTrace,
    params: &ModelParams,
    deltas: &[Matrix],
    nodes: &[u32],
    workers: usize,
) -> Grads {
    let mut grads = Grads::zeros_like(params);
    for k in 0..params.num_layers() {
        let eff = layer_effective_input(trace, params, k, workers);
        grads.layers[k].w = tensor::matmul_at_b_rows(&eff, &deltas[k], nodes, workers);
        let gb = &mut grads.layers[k].b;
        for &node in nodes {
            for (o, &dv) in gb.iter_mut().zip(deltas[k].row(node as usize)) {
                *o += dv;
            }
        }
    }
    grads
}

/// Gradient of one device's loss with respect to every parameter tensor,
/// under the stop-gradient convention.
pub fn local_gradients(
    trace: &ForwardTrace,
    node: u32,
    label: u32,
    params: &ModelParams,
) -> Result<Grads, NnError> {
    if trace.arch != params.arch {
        return Err(NnError::ArchMismatch {
            expected: trace.arch,
            got: params.arch,
        });
    }
    let nodes = [node];
    let labels_stub: Vec<u32> = (0..trace.probs.rows as u32)
        .map(|v| if v == node { label } else { 0 })
        .collect();
    let delta = output_deltas(trace, &nodes, &labels_stub, 1.0);
    let deltas = backprop_deltas_stop_grad(trace, params, delta, 1);
    Ok(grads_from_deltas(trace, params, &deltas, &nodes, 1))
}

/// Recompute one device's loss locally, holding everything received from
/// other devices fixed: the finite-difference oracle evaluates this.
pub fn device_local_loss(
    params: &ModelParams,
    feature: &[f64],
    other_sums: &[Vec<f64>],
    degree: usize,
    self_loop: bool,
    label: u32,
) -> f64 {
    let k_layers = params.num_layers();
    let mut h = feature.to_vec();
    for (k, layer) in params.layers.iter().enumerate() {
        let z = match params.arch {
            Arch::Mlp => {
                let mut z = layer.b.clone();
                for (r, &hv) in h.iter().enumerate() {
                    if hv != 0.0 {
                        for (o, &wv) in z.iter_mut().zip(layer.w.row(r)) {
                            *o += hv * wv;
                        }
                    }
                }
                z
            }
            Arch::Gcn => {
                let mut agg = other_sums[k].clone();
                if self_loop {
                    let own = source_side(&h, degree);
                    for (a, o) in agg.iter_mut().zip(&own) {
                        *a += o;
                    }
                }
                target_side(&agg, degree, &layer.w, &layer.b).expect("shapes checked")
            }
            Arch::Sage => {
                let mut agg = other_sums[k].clone();
                if self_loop {
                    for (a, o) in agg.iter_mut().zip(&h) {
                        *a += o;
                    }
                }
                sage_target_side(&agg, degree, &h, &layer.w, &layer.b).expect("shapes checked")
            }
        };
        h = z;
        if k + 1 < k_layers {
            relu(&mut h);
        }
    }
    let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = h.iter().map(|v| (v - max).exp()).sum();
    let logp = h[label as usize] - max - sum.ln();
    -logp
}

/// The per-layer sums of *other* devices' source-side contributions to one
/// node's aggregate, extracted from a trace.
pub fn other_contributions(trace: &ForwardTrace, node: u32) -> Vec<Vec<f64>> {
    let u = node as usize;
    let mut out = Vec::new();
    for (k, agg) in trace.aggregates.iter().enumerate() {
        let mut row = agg.row(u).to_vec();
        if trace.self_loop[u] {
            match trace.arch {
                Arch::Gcn => {
                    let own = source_side(trace.inputs[k].row(u), trace.degree[u]);
                    for (r, o) in row.iter_mut().zip(&own) {
                        *r -= o;
                    }
                }
                Arch::Sage => {
                    for (r, o) in row.iter_mut().zip(trace.inputs[k].row(u)) {
                        *r -= o;
                    }
                }
                Arch::Mlp => {}
            }
        }
        out.push(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{self, Split};

    fn tiny_graph(edges: &[(u32, u32)], n: usize, f: usize, seed: u64) -> FederatedGraph {
        let mut stream = rng::stream(seed);
        let features: Vec<f64> = (0..n * f).map(|_| rng::uniform_sym(&mut stream)).collect();
        let labels: Vec<u32> = (0..n)
            .map(|_| (rng::uniform_sym(&mut stream) > 0.0) as u32)
            .collect();
        FederatedGraph {
            num_nodes: n,
            num_features: f,
            num_classes: 2,
            features,
            labels,
            edges: edges.to_vec(),
            node_keys: (0..n).map(|i| format!("n{i}")).collect(),
            label_names: vec!["0".into(), "1".into()],
            silo_of: vec![0; n],
            num_silos: 1,
            split_of: vec![Split::Train; n],
            dropped_edges: 0,
            duplicate_edges: 0,
        }
    }

    fn random_normalized_graph(n: usize, f: usize, seed: u64) -> FederatedGraph {
        let mut stream = rng::stream(seed);
        let mut edges = Vec::new();
        for u in 0..n as u32 {
            for v in 0..n as u32 {
                if u != v && rng::uniform_sym(&mut stream) > 0.6 {
                    edges.push((u, v));
                }
            }
        }
        let g = tiny_graph(&edges, n, f, seed ^ 0xabcd);
        graph::normalize_structure(&g, true, true)
    }

    #[test]
    fn source_side_examples() {
        assert_eq!(source_side(&[2.0, 2.0], 4), vec![1.0, 1.0]);
        assert_eq!(source_side(&[3.0], 1), vec![3.0]);
        let out = source_side(&[1.0, 0.0], 2);
        assert!((out[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn target_side_examples() {
        let identity = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = target_side(&[1.0, 1.0], 1, &identity, &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
        let out = target_side(&[2.0, 0.0], 4, &identity, &[1.0, 1.0]).unwrap();
        assert_eq!(out, vec![2.0, 1.0]);
        assert!(target_side(&[1.0], 1, &identity, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn sage_sides_examples() {
        assert_eq!(sage_source_side(&[4.0, 5.0]), vec![4.0, 5.0]);
        let ident4 = Matrix::from_rows(vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ]);
        // single self-neighbor with identity weights reproduces [h || h]
        let h = [2.0, 3.0];
        let out = sage_target_side(&h, 1, &h, &ident4, &[0.0; 4]).unwrap();
        assert_eq!(out, vec![2.0, 3.0, 2.0, 3.0]);
        // two neighbors [2], [4]: mean 3
        let w = Matrix::from_rows(vec![vec![0.0], vec![1.0]]);
        let out = sage_target_side(&[6.0], 2, &[9.0], &w, &[0.0]).unwrap();
        assert_eq!(out, vec![3.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy_loss(&[1.0, 0.0, 0.0], 0), 0.0);
        assert!((cross_entropy_loss(&[0.5, 0.5], 1) - std::f64::consts::LN_2).abs() < 1e-10);
        let uniform = vec![1.0 / 7.0; 7];
        assert!((cross_entropy_loss(&uniform, 3) - 1.945910149055313).abs() < 1e-9);
        // zero probability is clamped, not infinite
        assert!(cross_entropy_loss(&[0.0, 1.0], 0).is_finite());
    }

    #[test]
    fn centralized_identity_layer_is_identity() {
        // 1 node with a self-loop, W = I, b = 0
        let g = tiny_graph(&[(0, 0)], 1, 3, 1);
        let mut params = ModelParams::init_glorot(Arch::Gcn, &[3, 3], 0);
        params.layers[0].w = Matrix::from_rows(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let trace = centralized_gcn_forward(&g, &params, 1).unwrap();
        for (a, b) in trace.logits().row(0).iter().zip(g.feature_row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn centralized_two_node_hand_computed() {
        // nodes 0,1 with self-loops and both directions: deg = 2 each.
        // z_u = (h_0 + h_1)/2 * W + b with W = [[2]], b = [1]
        let g = tiny_graph(&[(0, 0), (0, 1), (1, 0), (1, 1)], 2, 1, 2);
        let mut params = ModelParams::init_glorot(Arch::Gcn, &[1, 1], 0);
        params.layers[0].w = Matrix::from_rows(vec![vec![2.0]]);
        params.layers[0].b = vec![1.0];
        let trace = centralized_gcn_forward(&g, &params, 1).unwrap();
        let h0 = g.feature_row(0)[0];
        let h1 = g.feature_row(1)[0];
        let expect = (h0 + h1) / 2.0 * 2.0 + 1.0;
        assert!((trace.logits().row(0)[0] - expect).abs() < 1e-12);
        assert!((trace.logits().row(1)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn centralized_rejects_wrong_arch() {
        let g = tiny_graph(&[(0, 0)], 1, 2, 3);
        let params = ModelParams::init_glorot(Arch::Mlp, &[2, 2], 0);
        assert!(matches!(
            centralized_gcn_forward(&g, &params, 1),
            Err(NnError::ArchMismatch { .. })
        ));
    }

    #[test]
    fn split_composition_equals_centralized_rule() {
        // compose source_side -> sum -> target_side per node and compare
        for seed in 0..5 {
            let g = random_normalized_graph(12, 6, seed);
            let params = ModelParams::init_glorot(Arch::Gcn, &[6, 4], seed);
            let trace = centralized_gcn_forward(&g, &params, 1).unwrap();
            let adj = InNeighbors::from_graph(&g);
            for u in 0..g.num_nodes {
                let mut agg = vec![0.0; g.num_features];
                for &v in adj.of(u) {
                    let s = source_side(g.feature_row(v as usize), adj.degree[v as usize]);
                    for (a, b) in agg.iter_mut().zip(&s) {
                        *a += b;
                    }
                }
                let z = target_side(
                    &agg,
                    adj.degree[u],
                    &params.layers[0].w,
                    &params.layers[0].b,
                )
                .unwrap();
                for (a, b) in z.iter().zip(trace.pre_activations[0].row(u)) {
                    assert!((a - b).abs() < 1e-9, "node {u}");
                }
            }
        }
    }

    #[test]
    fn sage_split_equals_centralized_mean_aggregator() {
        let g = random_normalized_graph(10, 5, 77);
        let params = ModelParams::init_glorot(Arch::Sage, &[5, 3], 7);
        let features = Matrix {
            rows: g.num_nodes,
            cols: g.num_features,
            data: g.features.clone(),
        };
        let adj = InNeighbors::from_graph(&g);
        let trace = centralized_forward(&features, &adj, &params, 1).unwrap();
        for u in 0..g.num_nodes {
            let mut agg = vec![0.0; g.num_features];
            for &v in adj.of(u) {
                for (a, b) in agg
                    .iter_mut()
                    .zip(sage_source_side(g.feature_row(v as usize)))
                {
                    *a += b;
                }
            }
            let z = sage_target_side(
                &agg,
                adj.degree[u],
                g.feature_row(u),
                &params.layers[0].w,
                &params.layers[0].b,
            )
            .unwrap();
            for (a, b) in z.iter().zip(trace.pre_activations[0].row(u)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let g = random_normalized_graph(20, 8, 9);
        let params = ModelParams::init_glorot(Arch::Gcn, &[8, 5, 3], 1);
        let trace = centralized_gcn_forward(&g, &params, 2).unwrap();
        for u in 0..g.num_nodes {
            let s: f64 = trace.probs.row(u).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_loss_trace_has_near_zero_output_gradient() {
        // force a confident correct prediction, check the logit-layer grad
        let g = tiny_graph(&[(0, 0)], 1, 2, 4);
        let mut params = ModelParams::init_glorot(Arch::Gcn, &[2, 2], 0);
        params.layers[0].w = Matrix::from_rows(vec![vec![80.0, -80.0], vec![0.0, 0.0]]);
        let mut g2 = g.clone();
        g2.features = vec![1.0, 0.0];
        g2.labels = vec![0];
        let trace = centralized_gcn_forward(&g2, &params, 1).unwrap();
        let grads = local_gradients(&trace, 0, 0, &params).unwrap();
        for v in grads.flatten() {
            assert!(v.abs() < 1e-6, "grad {v}");
        }
    }

    #[test]
    fn gradient_scales_linearly_with_loss_weight() {
        let g = random_normalized_graph(6, 4, 12);
        let params = ModelParams::init_glorot(Arch::Gcn, &[4, 3], 2);
        let trace = centralized_gcn_forward(&g, &params, 1).unwrap();
        let nodes = [1u32];
        let delta1 = output_deltas(&trace, &nodes, &g.labels, 1.0);
        let delta3 = output_deltas(&trace, &nodes, &g.labels, 3.0);
        let d1 = backprop_deltas_stop_grad(&trace, &params, delta1, 1);
        let d3 = backprop_deltas_stop_grad(&trace, &params, delta3, 1);
        let g1 = grads_from_deltas(&trace, &params, &d1, &nodes, 1);
        let g3 = grads_from_deltas(&trace, &params, &d3, &nodes, 1);
        for (a, b) in g1.flatten().iter().zip(g3.flatten()) {
            assert!((a * 3.0 - b).abs() < 1e-9);
        }
    }

    fn fd_check_local(arch: Arch, seed: u64) {
        let g = random_normalized_graph(8, 5, seed);
        let dims = [5usize, 4, 3];
        let params = ModelParams::init_glorot(arch, &dims, seed + 1);
        let features = Matrix {
            rows: g.num_nodes,
            cols: g.num_features,
            data: g.features.clone(),
        };
        let adj = InNeighbors::from_graph(&g);
        let trace = centralized_forward(&features, &adj, &params, 1).unwrap();
        let node = 3u32;
        let label = 1u32;
        let analytic = local_gradients(&trace, node, label, &params)
            .unwrap()
            .flatten();

        let others = other_contributions(&trace, node);
        let eps = 1e-5;
        let mut p = params.clone();
        let mut flat = Vec::new();
        p.flatten_into(&mut flat);
        let mut fd = vec![0.0; flat.len()];
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + eps;
            p.unflatten_from(&flat);
            let up = device_local_loss(
                &p,
                g.feature_row(node as usize),
                &others,
                adj.degree[node as usize],
                adj.self_loop[node as usize],
                label,
            );
            flat[i] = orig - eps;
            p.unflatten_from(&flat);
            let down = device_local_loss(
                &p,
                g.feature_row(node as usize),
                &others,
                adj.degree[node as usize],
                adj.self_loop[node as usize],
                label,
            );
            flat[i] = orig;
            fd[i] = (up - down) / (2.0 * eps);
        }
        p.unflatten_from(&flat);
        for (i, (a, f)) in analytic.iter().zip(&fd).enumerate() {
            let denom = f.abs().max(a.abs()).max(1e-6);
            assert!(
                (a - f).abs() / denom < 1e-4,
                "{arch:?} param {i}: analytic {a} vs fd {f}"
            );
        }
    }

    #[test]
    fn local_gradients_match_finite_differences_gcn() {
        for seed in [21, 22] {
            fd_check_local(Arch::Gcn, seed);
        }
    }

    #[test]
    fn local_gradients_match_finite_differences_mlp() {
        fd_check_local(Arch::Mlp, 31);
    }

    #[test]
    fn local_gradients_match_finite_differences_sage() {
        fd_check_local(Arch::Sage, 41);
    }

    #[test]
    fn exact_backward_matches_finite_differences() {
        // global-baseline gradients: perturb a parameter, recompute the full
        // forward, compare pooled train loss differences
        let g = random_normalized_graph(7, 4, 55);
        let params = ModelParams::init_glorot(Arch::Gcn, &[4, 3, 2], 5);
        let features = Matrix {
            rows: g.num_nodes,
            cols: g.num_features,
            data: g.features.clone(),
        };
        let adj = InNeighbors::from_graph(&g);
        let adj_rev = InNeighbors::reversed(&g.edges, g.num_nodes);
        let nodes: Vec<u32> = (0..g.num_nodes as u32).collect();
        let labels: Vec<u32> = g.labels.iter().map(|&l| l.min(1)).collect();

        let trace = centralized_forward(&features, &adj, &params, 1).unwrap();
        let weight = 1.0 / nodes.len() as f64;
        let delta = output_deltas(&trace, &nodes, &labels, weight);
        let deltas = backprop_deltas_exact(&trace, &params, delta, &adj_rev, 1);
        let analytic = grads_from_deltas(&trace, &params, &deltas, &nodes, 1).flatten();

        let pooled_loss = |p: &ModelParams| -> f64 {
            let t = centralized_forward(&features, &adj, p, 1).unwrap();
            nodes
                .iter()
                .map(|&v| t.loss_of(v as usize, labels[v as usize]))
                .sum::<f64>()
                / nodes.len() as f64
        };
        let eps = 1e-5;
        let mut p = params.clone();
        let mut flat = Vec::new();
        p.flatten_into(&mut flat);
        for i in (0..flat.len()).step_by(7) {
            let orig = flat[i];
            flat[i] = orig + eps;
            p.unflatten_from(&flat);
            let up = pooled_loss(&p);
            flat[i] = orig - eps;
            p.unflatten_from(&flat);
            let down = pooled_loss(&p);
            flat[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-4,
                "param {i}: {} vs {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn batched_silo_grads_equal_sum_of_device_grads() {
        let g = random_normalized_graph(9, 4, 66);
        let params = ModelParams::init_glorot(Arch::Gcn, &[4, 3, 2], 6);
        let trace = centralized_gcn_forward(&g, &params, 1).unwrap();
        let labels: Vec<u32> = g.labels.iter().map(|&l| l.min(1)).collect();
        let nodes: Vec<u32> = vec![1, 4, 7];
        let delta = output_deltas(&trace, &nodes, &labels, 1.0);
        let deltas = backprop_deltas_stop_grad(&trace, &params, delta, 2);
        let batched = grads_from_deltas(&trace, &params, &deltas, &nodes, 2);

        let mut summed = Grads::zeros_like(&params);
        for &v in &nodes {
            let one = local_gradients(&trace, v, labels[v as usize], &params).unwrap();
            summed.add_assign(&one);
        }
        for (a, b) in batched.flatten().iter().zip(summed.flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init_glorot(Arch::Sage, &[6, 4, 3], 17);
        params.save(&path).unwrap();
        let loaded = ModelParams::load(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init_glorot(Arch::Mlp, &[3, 2], 0);
        params.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            ModelParams::load(&path),
            Err(NnError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let a = ModelParams::init_glorot(Arch::Gcn, &[10, 5, 2], 3);
        let b = ModelParams::init_glorot(Arch::Gcn, &[10, 5, 2], 3);
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert_ne!(a, ModelParams::init_glorot(Arch::Gcn, &[10, 5, 2], 4));
        assert_eq!(a.param_count(), 10 * 5 + 5 + 5 * 2 + 2);
    }
}
