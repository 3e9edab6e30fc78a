//! The federated training loop.
//!
//! One round: broadcast the global model to silos, run the forward (through
//! the secret message passing protocol for the `hifgl` scheme, in the clear
//! on intra-silo subgraphs for the drop-cross-edges baselines, centralized
//! for `global`), compute device gradients on train nodes, average them per
//! silo, take one optimizer step per silo, then average silo models on the
//! server. `local` skips the server step; `global` trains a single model
//! with exact gradients and no federation at all.
//!
//! Silo gradient averages run in ascending node-id order and every parallel
//! kernel writes disjoint rows, so a run is bitwise reproducible for any
//! worker count. Per-silo Adam state lives on the silo and is never
//! averaged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, FederatedGraph, Split};
use crate::nn::{self, Arch, ForwardTrace, Grads, InNeighbors, Matrix, ModelParams};
use crate::rng;
use crate::secmp::{self, CommLedger, ProtocolState, SecmpOptions};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("config: {0}")]
    Config(String),
    #[error("graph: {0}")]
    Graph(#[from] graph::GraphError),
    #[error("model: {0}")]
    Nn(#[from] nn::NnError),
    #[error("protocol: {0}")]
    Secmp(#[from] secmp::SecmpError),
    #[error("gradient list is empty")]
    EmptyGrads,
    #[error("cannot average an empty model list")]
    EmptyModels,
    #[error("model shapes disagree")]
    ShapeMismatch,
    #[error("split {0:?} has no nodes")]
    EmptySplit(Split),
}

/// Which federation recipe drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FedScheme {
    /// Per-silo training on intra-silo edges, no server averaging.
    Local,
    /// Per-silo training on intra-silo edges + server averaging.
    FedAvg,
    /// FedAvg plus a proximal gradient term `mu * (local - global)`.
    FedProx,
    /// One centralized model on the full graph, exact gradients.
    Global,
    /// Full-graph federation through secret message passing.
    Hifgl,
}

impl std::str::FromStr for FedScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(FedScheme::Local),
            "fedavg" => Ok(FedScheme::FedAvg),
            "fedprox" => Ok(FedScheme::FedProx),
            "global" => Ok(FedScheme::Global),
            "hifgl" => Ok(FedScheme::Hifgl),
            other => Err(format!(
                "unknown scheme {other:?} (expected local|fedavg|fedprox|global|hifgl)"
            )),
        }
    }
}

impl std::fmt::Display for FedScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FedScheme::Local => "local",
            FedScheme::FedAvg => "fedavg",
            FedScheme::FedProx => "fedprox",
            FedScheme::Global => "global",
            FedScheme::Hifgl => "hifgl",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd|adam)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate multiplier applied every `lr_step` epochs.
    pub lr_gamma: f64,
    pub lr_step: usize,
    pub optimizer: Optimizer,
    pub fed_scheme: FedScheme,
    pub fedprox_mu: f64,
    pub t_privacy: usize,
    pub seed: u64,
    pub dp_sigma: f64,
    /// Early stopping patience on global validation accuracy; off when None.
    pub patience: Option<usize>,
    pub workers: usize,
    pub symmetrize: bool,
    pub self_loops: bool,
    /// Keep a line-per-message audit log (memory-heavy; small runs only).
    pub audit_lines: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gcn,
            num_layers: 2,
            hidden_dim: 64,
            epochs: 50,
            lr: 0.03,
            lr_gamma: 0.9,
            lr_step: 4,
            optimizer: Optimizer::Adam,
            fed_scheme: FedScheme::Hifgl,
            fedprox_mu: 0.01,
            t_privacy: 1,
            seed: 0,
            dp_sigma: 0.0,
            patience: None,
            workers: 1,
            symmetrize: true,
            self_loops: true,
            audit_lines: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        if self.epochs == 0 {
            return Err(FederationError::Config("epochs must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(FederationError::Config("lr must be > 0".into()));
        }
        if self.hidden_dim == 0 {
            return Err(FederationError::Config("hidden_dim must be >= 1".into()));
        }
        if self.t_privacy == 0 {
            return Err(FederationError::Config("t_privacy must be >= 1".into()));
        }
        if self.num_layers == 0 {
            return Err(FederationError::Config("num_layers must be >= 1".into()));
        }
        if self.dp_sigma < 0.0 {
            return Err(FederationError::Config("dp_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn dims(&self, num_features: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![num_features];
        for _ in 1..self.num_layers {
            dims.push(self.hidden_dim);
        }
        dims.push(num_classes);
        dims
    }

    fn lr_at(&self, round: usize) -> f64 {
        let steps = round.checked_div(self.lr_step).unwrap_or(0);
        self.lr * self.lr_gamma.powi(steps as i32)
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// Per-silo optimizer state over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct OptState {
    kind: Optimizer,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptState {
    pub fn new(kind: Optimizer, len: usize) -> Self {
        Self {
            kind,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One descent step on `params` with the given averaged gradients.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads, lr: f64) {
        let g = grads.flatten();
        let mut flat = Vec::with_capacity(g.len());
        params.flatten_into(&mut flat);
        match self.kind {
            Optimizer::Sgd => {
                for (p, gv) in flat.iter_mut().zip(&g) {
                    *p -= lr * gv;
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let bc1 = 1.0 - B1.powi(self.t as i32);
                let bc2 = 1.0 - B2.powi(self.t as i32);
                for ((p, gv), (m, v)) in flat
                    .iter_mut()
                    .zip(&g)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = B1 * *m + (1.0 - B1) * gv;
                    *v = B2 * *v + (1.0 - B2) * gv * gv;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
        params.unflatten_from(&flat);
    }
}

/// Average the device gradients of one silo and take one optimizer step.
/// Returns the updated model (the silo's state is the caller's copy).
pub fn silo_local_update(
    model: &ModelParams,
    grads: &[Grads],
    opt: &mut OptState,
    lr: f64,
) -> Result<ModelParams, FederationError> {
    if grads.is_empty() {
        return Err(FederationError::EmptyGrads);
    }
    let mut avg = Grads::zeros_like(model);
    for g in grads {
        if g.layers.len() != model.layers.len() {
            return Err(FederationError::ShapeMismatch);
        }
        avg.add_assign(g);
    }
    avg.scale(1.0 / grads.len() as f64);
    let mut out = model.clone();
    opt.step(&mut out, &avg, lr);
    Ok(out)
}

/// Element-wise unweighted mean of silo models.
pub fn fedavg(models: &[ModelParams]) -> Result<ModelParams, FederationError> {
    let first = models.first().ok_or(FederationError::EmptyModels)?;
    let mut out = first.clone();
    for m in &models[1..] {
        if m.dims != first.dims || m.arch != first.arch {
            return Err(FederationError::ShapeMismatch);
        }
        out.zip_apply(m, |a, b| *a += b);
    }
    let inv = 1.0 / models.len() as f64;
    out.zip_apply(first, |a, _| *a *= inv);
    Ok(out)
}

/// FedProx proximal term: `grad + mu * (local - global)`, element-wise.
pub fn fedprox_regularize(
    grads: &Grads,
    local: &ModelParams,
    global: &ModelParams,
    mu: f64,
) -> Result<Grads, FederationError> {
    if local.dims != global.dims || grads.layers.len() != local.layers.len() {
        return Err(FederationError::ShapeMismatch);
    }
    let mut out = grads.clone();
    for ((gl, ll), wl) in out
        .layers
        .iter_mut()
        .zip(&local.layers)
        .zip(&global.layers)
    {
        for ((g, l), w) in gl.w.data.iter_mut().zip(&ll.w.data).zip(&wl.w.data) {
            *g += mu * (l - w);
        }
        for ((g, l), w) in gl.b.iter_mut().zip(&ll.b).zip(&wl.b) {
            *g += mu * (l - w);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Forward helpers
// ---------------------------------------------------------------------------

fn features_of(g: &FederatedGraph) -> Matrix {
    Matrix {
        rows: g.num_nodes,
        cols: g.num_features,
        data: g.features.clone(),
    }
}

fn models_all_equal(models: &[ModelParams]) -> bool {
    models.windows(2).all(|w| w[0] == w[1])
}

/// Plain (un-coded) forward where each node is transformed by its silo's
/// model. Used by the drop-cross-edges baselines and for evaluation.
pub fn multi_model_forward(
    features: &Matrix,
    adj: &InNeighbors,
    models: &[ModelParams],
    silo_of: &[u32],
    workers: usize,
) -> Result<ForwardTrace, FederationError> {
    if models.is_empty() {
        return Err(FederationError::EmptyModels);
    }
    if models_all_equal(models) {
        return Ok(nn::centralized_forward(features, adj, &models[0], workers)?);
    }
    let arch = models[0].arch;
    let n = features.rows;
    let k_layers = models[0].num_layers();
    let mut inputs = vec![features.clone()];
    let mut aggregates = Vec::new();
    let mut pre_activations = Vec::new();
    for layer in 0..k_layers {
        let h = &inputs[layer];
        let agg = match arch {
            Arch::Mlp => Matrix::zeros(0, 0),
            Arch::Gcn => {
                let mut scaled = h.clone();
                for u in 0..n {
                    let inv = 1.0 / (adj.degree[u] as f64).sqrt();
                    for v in scaled.row_mut(u) {
                        *v *= inv;
                    }
                }
                nn::aggregate_neighbor_rows(&scaled, adj, workers)
            }
            Arch::Sage => nn::aggregate_neighbor_rows(h, adj, workers),
        };
        let d_out = models[0].dims[layer + 1];
        let mut z = Matrix::zeros(n, d_out);
        for (s, model) in models.iter().enumerate() {
            let members: Vec<u32> = (0..n as u32)
                .filter(|&v| silo_of[v as usize] == s as u32)
                .collect();
            if members.is_empty() {
                continue;
            }
            let lw = &model.layers[layer];
            let mut compact = Matrix::zeros(members.len(), lw.w.rows);
            for (i, &v) in members.iter().enumerate() {
                let u = v as usize;
                match arch {
                    Arch::Mlp => compact.row_mut(i).copy_from_slice(h.row(u)),
                    Arch::Gcn => {
                        let inv = 1.0 / (adj.degree[u] as f64).sqrt();
                        for (dst, &a) in compact.row_mut(i).iter_mut().zip(agg.row(u)) {
                            *dst = a * inv;
                        }
                    }
                    Arch::Sage => {
                        let d_in = h.cols;
                        let inv = 1.0 / adj.degree[u] as f64;
                        let row = compact.row_mut(i);
                        row[..d_in].copy_from_slice(h.row(u));
                        for (dst, &a) in row[d_in..].iter_mut().zip(agg.row(u)) {
                            *dst = a * inv;
                        }
                    }
                }
            }
            let mut zc = nn::tensor::matmul(&compact, &lw.w, workers);
            for (i, &v) in members.iter().enumerate() {
                let zrow = zc.row_mut(i);
                for (x, &bv) in zrow.iter_mut().zip(&lw.b) {
                    *x += bv;
                }
                z.row_mut(v as usize).copy_from_slice(zrow);
            }
        }
        if arch != Arch::Mlp {
            aggregates.push(agg);
        }
        pre_activations.push(z.clone());
        if layer + 1 < k_layers {
            nn::relu(&mut z.data);
        }
        inputs.push(z);
    }
    let probs = nn::softmax_rows(inputs.last().unwrap(), workers);
    Ok(ForwardTrace {
        arch,
        inputs,
        aggregates,
        pre_activations,
        probs,
        degree: adj.degree.clone(),
        self_loop: adj.self_loop.clone(),
        clamped: std::sync::atomic::AtomicUsize::new(0),
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Pooled accuracy over all split nodes, not the mean of silo scores.
    pub global_acc: f64,
    pub per_silo_acc: Vec<f64>,
}

fn accuracy_from_predictions(
    predictions: &[u32],
    g: &FederatedGraph,
    split: Split,
) -> Result<EvalReport, FederationError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut silo_correct = vec![0usize; g.num_silos];
    let mut silo_total = vec![0usize; g.num_silos];
    for v in 0..g.num_nodes {
        if g.split_of[v] != split {
            continue;
        }
        total += 1;
        silo_total[g.silo_of[v] as usize] += 1;
        if predictions[v] == g.labels[v] {
            correct += 1;
            silo_correct[g.silo_of[v] as usize] += 1;
        }
    }
    if total == 0 {
        return Err(FederationError::EmptySplit(split));
    }
    let per_silo_acc = silo_correct
        .iter()
        .zip(&silo_total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    Ok(EvalReport {
        global_acc: correct as f64 / total as f64,
        per_silo_acc,
    })
}

/// Accuracy of per-silo models on one split: pooled over all nodes of the
/// split (each node predicted by its own silo's model), plus the per-silo
/// breakdown.
pub fn evaluate(
    models: &[ModelParams],
    g: &FederatedGraph,
    split: Split,
    workers: usize,
) -> Result<EvalReport, FederationError> {
    if models.is_empty() {
        return Err(FederationError::EmptyModels);
    }
    let adj = InNeighbors::from_graph(g);
    let trace = multi_model_forward(&features_of(g), &adj, models, &g.silo_of, workers)?;
    accuracy_from_predictions(&trace.predictions(), g, split)
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

/// One line of the run history (one JSON object per round on disk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub per_silo_acc: Vec<f64>,
}

/// Server-side view of the run.
#[derive(Debug)]
pub struct ServerState {
    pub global_params: ModelParams,
    pub round: usize,
    pub history: Vec<RoundRecord>,
}

#[derive(Debug)]
pub struct TrainOutput {
    /// Final per-silo models (single entry for the global scheme).
    pub silo_models: Vec<ModelParams>,
    /// Final server model where one exists (fed schemes and global).
    pub global_model: Option<ModelParams>,
    pub history: Vec<RoundRecord>,
    pub ledger: CommLedger,
    /// Audit from the protocol (empty shell for non-hifgl schemes).
    pub audit_json: serde_json::Value,
    pub single_neighbor_events: u64,
    pub audit_violations: usize,
    /// Round with the best validation accuracy and its test accuracy.
    pub best_round: usize,
    pub best_val_acc: f64,
    pub best_test_acc: f64,
    /// Scalar parameter count of one model.
    pub param_count: usize,
    pub num_silos: usize,
    pub t_privacy: usize,
    pub layer_dims: Vec<usize>,
    pub rounds_run: usize,
}

/// Run the full training loop on a partitioned (feature-ready) graph.
pub fn train(cfg: &TrainConfig, g: &FederatedGraph) -> Result<TrainOutput, FederationError> {
    cfg.validate()?;
    if !g.is_partitioned() {
        return Err(FederationError::Graph(graph::GraphError::Unpartitioned));
    }
    let scheme = cfg.fed_scheme;
    // drop cross edges first for the baselines, then normalize structure
    let working = match scheme {
        FedScheme::Local | FedScheme::FedAvg | FedScheme::FedProx => graph::normalize_structure(
            &graph::drop_cross_edges(g)?,
            cfg.symmetrize,
            cfg.self_loops,
        ),
        FedScheme::Global | FedScheme::Hifgl => {
            graph::normalize_structure(g, cfg.symmetrize, cfg.self_loops)
        }
    };
    let features = features_of(&working);
    let adj = InNeighbors::from_graph(&working);
    let adj_rev = InNeighbors::reversed(&working.edges, working.num_nodes);
    let dims = cfg.dims(working.num_features, working.num_classes);
    let init = ModelParams::init_glorot(cfg.arch, &dims, rng::sub_seed(cfg.seed, "init"));
    let param_count = init.param_count();
    let num_silos = working.num_silos;

    let train_nodes: Vec<u32> = (0..working.num_nodes as u32)
        .filter(|&v| working.split_of[v as usize] == Split::Train)
        .collect();
    if train_nodes.is_empty() {
        return Err(FederationError::EmptySplit(Split::Train));
    }
    let silo_train: Vec<Vec<u32>> = (0..num_silos as u32)
        .map(|s| {
            train_nodes
                .iter()
                .copied()
                .filter(|&v| working.silo_of[v as usize] == s)
                .collect()
        })
        .collect();

    let mut protocol = if scheme == FedScheme::Hifgl {
        let mut p = ProtocolState::new(
            &working,
            SecmpOptions {
                t_privacy: cfg.t_privacy,
                dp_sigma: cfg.dp_sigma,
                mask_root: rng::sub_seed(cfg.seed, "masks"),
                dp_root: rng::sub_seed(cfg.seed, "dp"),
                workers: cfg.workers,
            },
        )?;
        if cfg.audit_lines {
            p.audit = secmp::Audit::with_lines();
        }
        Some(p)
    } else {
        None
    };
    let mut bare_ledger = CommLedger::default();

    let model_slots = if scheme == FedScheme::Global { 1 } else { num_silos };
    let mut silo_models: Vec<ModelParams> = vec![init.clone(); model_slots];
    let mut opts: Vec<OptState> = (0..model_slots)
        .map(|_| OptState::new(cfg.optimizer, param_count))
        .collect();
    let mut global_model = init;

    let mut history: Vec<RoundRecord> = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, 0.0f64);
    let mut since_best = 0usize;
    let mut rounds_run = 0usize;

    for round in 0..cfg.epochs {
        let lr = cfg.lr_at(round);
        let has_server = matches!(
            scheme,
            FedScheme::FedAvg | FedScheme::FedProx | FedScheme::Hifgl
        );
        // broadcast: server -> silos, one model each
        if has_server {
            let ledger = protocol
                .as_mut()
                .map(|p| &mut p.ledger)
                .unwrap_or(&mut bare_ledger);
            ledger.charge_silo_server((param_count * num_silos) as u64);
            for m in silo_models.iter_mut() {
                *m = global_model.clone();
            }
        }

        // forward for gradients
        let trace = match scheme {
            FedScheme::Hifgl => {
                let p = protocol.as_mut().expect("protocol exists for hifgl");
                p.full_forward(&features, &silo_models, round as u64)?
            }
            FedScheme::Global => {
                nn::centralized_forward(&features, &adj, &silo_models[0], cfg.workers)?
            }
            _ => multi_model_forward(
                &features,
                &adj,
                &silo_models,
                &working.silo_of,
                cfg.workers,
            )?,
        };
        let train_loss = train_nodes
            .iter()
            .map(|&v| trace.loss_of(v as usize, working.labels[v as usize]))
            .sum::<f64>()
            / train_nodes.len() as f64;

        // gradients and local updates
        match scheme {
            FedScheme::Global => {
                let weight = 1.0 / train_nodes.len() as f64;
                let delta = nn::output_deltas(&trace, &train_nodes, &working.labels, weight);
                let deltas =
                    nn::backprop_deltas_exact(&trace, &silo_models[0], delta, &adj_rev, cfg.workers);
                let grads =
                    nn::grads_from_deltas(&trace, &silo_models[0], &deltas, &train_nodes, cfg.workers);
                opts[0].step(&mut silo_models[0], &grads, lr);
            }
            _ => {
                let delta = nn::output_deltas(&trace, &train_nodes, &working.labels, 1.0);
                let deltas =
                    nn::backprop_deltas_stop_grad(&trace, &silo_models[0], delta, cfg.workers);
                for s in 0..num_silos {
                    let members = &silo_train[s];
                    if members.is_empty() {
                        continue;
                    }
                    let mut grads = nn::grads_from_deltas(
                        &trace,
                        &silo_models[s],
                        &deltas,
                        members,
                        cfg.workers,
                    );
                    grads.scale(1.0 / members.len() as f64);
                    if scheme == FedScheme::FedProx {
                        grads = fedprox_regularize(
                            &grads,
                            &silo_models[s],
                            &global_model,
                            cfg.fedprox_mu,
                        )?;
                    }
                    let mut updated = silo_models[s].clone();
                    opts[s].step(&mut updated, &grads, lr);
                    silo_models[s] = updated;
                }
            }
        }
        for m in &silo_models {
            if !m.is_finite() {
                return Err(FederationError::Nn(nn::NnError::NonFinite));
            }
        }

        // server step: upload + average
        if has_server {
            let ledger = protocol
                .as_mut()
                .map(|p| &mut p.ledger)
                .unwrap_or(&mut bare_ledger);
            ledger.charge_silo_server((param_count * num_silos) as u64);
            global_model = fedavg(&silo_models)?;
            for m in silo_models.iter_mut() {
                *m = global_model.clone();
            }
        } else if scheme == FedScheme::Global {
            global_model = silo_models[0].clone();
        }

        // evaluation on the scheme's own graph view
        let eval_models: Vec<ModelParams> = if scheme == FedScheme::Global {
            vec![silo_models[0].clone()]
        } else {
            silo_models.clone()
        };
        let eval_trace = if scheme == FedScheme::Global || models_all_equal(&eval_models) {
            nn::centralized_forward(&features, &adj, &eval_models[0], cfg.workers)?
        } else {
            multi_model_forward(&features, &adj, &eval_models, &working.silo_of, cfg.workers)?
        };
        let predictions = eval_trace.predictions();
        let val = accuracy_from_predictions(&predictions, &working, Split::Val)?;
        let test = accuracy_from_predictions(&predictions, &working, Split::Test)?;
        history.push(RoundRecord {
            round,
            train_loss,
            val_acc: val.global_acc,
            test_acc: test.global_acc,
            per_silo_acc: test.per_silo_acc,
        });
        rounds_run = round + 1;

        if val.global_acc > best.1 {
            best = (round, val.global_acc, test.global_acc);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(patience) = cfg.patience {
            if since_best >= patience {
                break;
            }
        }
    }

    let (ledger, audit_json, single_neighbor_events, audit_violations) = match protocol {
        Some(p) => (
            p.ledger.clone(),
            p.audit.to_json(),
            p.audit.single_neighbor_events,
            p.audit.violations.len(),
        ),
        None => (
            bare_ledger,
            secmp::Audit::default().to_json(),
            0,
            0,
        ),
    };

    Ok(TrainOutput {
        global_model: match scheme {
            FedScheme::Local => None,
            _ => Some(global_model),
        },
        silo_models,
        history,
        ledger,
        audit_json,
        single_neighbor_events,
        audit_violations,
        best_round: best.0,
        best_val_acc: best.1,
        best_test_acc: best.2,
        param_count,
        num_silos,
        t_privacy: cfg.t_privacy,
        layer_dims: dims,
        rounds_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graph(num_silos: usize, seed: u64) -> FederatedGraph {
        // ring of 12 nodes, two contiguous label blocks (homophilous), with
        // strongly label-correlated features
        let n = 12;
        let f = 6;
        let mut stream = rng::stream(seed);
        let labels: Vec<u32> = (0..n).map(|v| (v / 6) as u32).collect();
        let mut features = vec![0.0; n * f];
        for v in 0..n {
            for c in 0..f {
                let base = if labels[v] == (c % 2) as u32 { 0.8 } else { 0.1 };
                features[v * f + c] = base + 0.1 * rng::uniform_sym(&mut stream);
            }
        }
        let edges: Vec<(u32, u32)> = (0..n as u32).map(|v| (v, (v + 1) % n as u32)).collect();
        let g = FederatedGraph {
            num_nodes: n,
            num_features: f,
            num_classes: 2,
            features,
            labels,
            edges,
            node_keys: (0..n).map(|i| format!("n{i}")).collect(),
            label_names: vec!["0".into(), "1".into()],
            silo_of: Vec::new(),
            num_silos: 0,
            split_of: Vec::new(),
            dropped_edges: 0,
            duplicate_edges: 0,
        };
        graph::partition_random(&g, num_silos, seed).unwrap()
    }

    fn quick_cfg(scheme: FedScheme) -> TrainConfig {
        TrainConfig {
            fed_scheme: scheme,
            epochs: 12,
            hidden_dim: 8,
            lr: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn silo_update_examples() {
        // grads [1,3] and [3,5] average to [2,4]; sgd lr=0.1 from zero
        let mut model = ModelParams::init_glorot(Arch::Mlp, &[2, 1], 0);
        model.layers[0].w = Matrix::from_rows(vec![vec![0.0], vec![0.0]]);
        model.layers[0].b = vec![0.0];
        let mk = |a: f64, b: f64| Grads {
            layers: vec![nn::Layer {
                w: Matrix::from_rows(vec![vec![a], vec![b]]),
                b: vec![0.0],
            }],
        };
        let mut opt = OptState::new(Optimizer::Sgd, model.param_count());
        let updated = silo_local_update(&model, &[mk(1.0, 3.0), mk(3.0, 5.0)], &mut opt, 0.1).unwrap();
        assert!((updated.layers[0].w.data[0] + 0.2).abs() < 1e-12);
        assert!((updated.layers[0].w.data[1] + 0.4).abs() < 1e-12);
        // single device: update equals that device's gradient step
        let mut opt2 = OptState::new(Optimizer::Sgd, model.param_count());
        let one = silo_local_update(&model, &[mk(1.0, 3.0)], &mut opt2, 0.1).unwrap();
        assert!((one.layers[0].w.data[0] + 0.1).abs() < 1e-12);
        // all-zero grads leave the model unchanged under sgd
        let mut opt3 = OptState::new(Optimizer::Sgd, model.param_count());
        let same = silo_local_update(&model, &[mk(0.0, 0.0)], &mut opt3, 0.1).unwrap();
        assert_eq!(same, model);
        // empty list is an error
        assert!(matches!(
            silo_local_update(&model, &[], &mut opt, 0.1),
            Err(FederationError::EmptyGrads)
        ));
    }

    #[test]
    fn fedavg_examples() {
        let mut a = ModelParams::init_glorot(Arch::Mlp, &[1, 2], 0);
        a.layers[0].w = Matrix::from_rows(vec![vec![0.0, 2.0]]);
        let mut b = a.clone();
        b.layers[0].w = Matrix::from_rows(vec![vec![2.0, 4.0]]);
        let avg = fedavg(&[a.clone(), b]).unwrap();
        assert_eq!(avg.layers[0].w.data, vec![1.0, 3.0]);
        // idempotence on identical models
        let same = fedavg(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same, a);
        assert!(matches!(fedavg(&[]), Err(FederationError::EmptyModels)));
    }

    #[test]
    fn fedavg_matches_elementwise_oracle() {
        let models: Vec<ModelParams> = (0..4)
            .map(|s| ModelParams::init_glorot(Arch::Gcn, &[3, 4, 2], s))
            .collect();
        let avg = fedavg(&models).unwrap();
        let mut flats: Vec<Vec<f64>> = Vec::new();
        for m in &models {
            let mut f = Vec::new();
            m.flatten_into(&mut f);
            flats.push(f);
        }
        let mut avg_flat = Vec::new();
        avg.flatten_into(&mut avg_flat);
        for i in 0..avg_flat.len() {
            let expect: f64 = flats.iter().map(|f| f[i]).sum::<f64>() / flats.len() as f64;
            assert!((avg_flat[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fedprox_examples() {
        let local = ModelParams::init_glorot(Arch::Mlp, &[2, 2], 1);
        let global = ModelParams::init_glorot(Arch::Mlp, &[2, 2], 2);
        let grads = Grads::zeros_like(&local);
        // mu = 0 leaves gradients unchanged
        let same = fedprox_regularize(&grads, &local, &global, 0.0).unwrap();
        assert_eq!(same.flatten(), grads.flatten());
        // local == global leaves gradients unchanged for any mu
        let same2 = fedprox_regularize(&grads, &local, &local, 5.0).unwrap();
        assert_eq!(same2.flatten(), grads.flatten());
        // shift by mu * (local - global)
        let shifted = fedprox_regularize(&grads, &local, &global, 0.01).unwrap();
        let mut lf = Vec::new();
        local.flatten_into(&mut lf);
        let mut gf = Vec::new();
        global.flatten_into(&mut gf);
        for ((s, l), w) in shifted.flatten().iter().zip(&lf).zip(&gf) {
            assert!((s - 0.01 * (l - w)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_silo_fedavg_equals_hifgl_trajectory() {
        // with one silo there are no cross edges to drop and no foreign
        // models to average, so the clear-value scheme and the coded scheme
        // must walk the same trajectory (up to the lossless decode epsilon)
        let g = toy_graph(1, 3);
        let mk = |scheme| TrainConfig {
            epochs: 10,
            hidden_dim: 8,
            lr: 0.01,
            fed_scheme: scheme,
            ..Default::default()
        };
        let fed = train(&mk(FedScheme::FedAvg), &g).unwrap();
        let hif = train(&mk(FedScheme::Hifgl), &g).unwrap();
        assert_eq!(fed.history.len(), 10);
        for (a, b) in fed.history.iter().zip(&hif.history) {
            assert!(
                (a.train_loss - b.train_loss).abs() < 1e-6,
                "round {}: {} vs {}",
                a.round,
                a.train_loss,
                b.train_loss
            );
            assert_eq!(a.val_acc, b.val_acc);
        }
        let min_loss = fed
            .history
            .iter()
            .map(|r| r.train_loss)
            .fold(f64::INFINITY, f64::min);
        let losses: Vec<f64> = fed.history.iter().map(|r| r.train_loss).collect();
        assert!(min_loss < fed.history[0].train_loss, "losses: {losses:?}");
    }

    #[test]
    fn training_runs_all_schemes_and_loss_decreases() {
        let g = toy_graph(2, 5);
        for scheme in [
            FedScheme::Local,
            FedScheme::FedAvg,
            FedScheme::FedProx,
            FedScheme::Global,
            FedScheme::Hifgl,
        ] {
            let out = train(&quick_cfg(scheme), &g).unwrap();
            let first = out.history.first().unwrap().train_loss;
            let min = out
                .history
                .iter()
                .map(|r| r.train_loss)
                .fold(f64::INFINITY, f64::min);
            assert!(
                min < first,
                "{scheme}: loss did not decrease ({first} -> min {min})"
            );
            for m in &out.silo_models {
                assert!(m.is_finite());
            }
        }
    }

    #[test]
    fn hifgl_run_is_reproducible_and_worker_independent() {
        let g = toy_graph(2, 7);
        let mut cfg = quick_cfg(FedScheme::Hifgl);
        cfg.workers = 1;
        let a = train(&cfg, &g).unwrap();
        cfg.workers = 4;
        let b = train(&cfg, &g).unwrap();
        assert_eq!(
            serde_json::to_string(&a.history).unwrap(),
            serde_json::to_string(&b.history).unwrap()
        );
        assert_eq!(a.ledger.device_device_scalars, b.ledger.device_device_scalars);
        assert_eq!(a.silo_models[0], b.silo_models[0]);
    }

    #[test]
    fn fedavg_fixed_point_models_stay_equal() {
        let g = toy_graph(3, 9);
        let out = train(&quick_cfg(FedScheme::FedAvg), &g).unwrap();
        for m in &out.silo_models[1..] {
            assert_eq!(*m, out.silo_models[0]);
        }
        assert_eq!(out.global_model.as_ref().unwrap(), &out.silo_models[0]);
    }

    #[test]
    fn local_scheme_has_no_server_model_and_no_server_traffic() {
        let g = toy_graph(2, 11);
        let out = train(&quick_cfg(FedScheme::Local), &g).unwrap();
        assert!(out.global_model.is_none());
        assert_eq!(out.ledger.silo_server_scalars, 0);
    }

    #[test]
    fn server_traffic_is_two_xi_per_silo_per_round() {
        let g = toy_graph(2, 13);
        let cfg = quick_cfg(FedScheme::FedAvg);
        let out = train(&cfg, &g).unwrap();
        let expect = 2 * out.param_count as u64 * 2 * cfg.epochs as u64;
        assert_eq!(out.ledger.silo_server_scalars, expect);
    }

    #[test]
    fn evaluate_pooled_differs_from_silo_mean() {
        // silo sizes 1 and 3: pooled accuracy is not the mean of silo scores
        let mut g = toy_graph(1, 15);
        g.num_silos = 2;
        g.silo_of = vec![0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0];
        g.split_of = vec![Split::Test; 12];
        let mut model = ModelParams::init_glorot(Arch::Mlp, &[6, 2], 3);
        // constant predictor: always class 0
        for l in &mut model.layers {
            l.w.scale(0.0);
        }
        model.layers[0].b = vec![1.0, 0.0];
        let normalized = graph::normalize_structure(&g, true, true);
        let report = evaluate(
            &[model.clone(), model],
            &normalized,
            Split::Test,
            1,
        )
        .unwrap();
        let class0_total = g.labels.iter().filter(|&&l| l == 0).count() as f64 / 12.0;
        assert!((report.global_acc - class0_total).abs() < 1e-12);
        let silo_mean: f64 = report.per_silo_acc.iter().sum::<f64>() / 2.0;
        assert!((report.global_acc - silo_mean).abs() > 1e-9);
    }

    #[test]
    fn evaluate_rejects_empty_split() {
        let mut g = toy_graph(2, 17);
        g.split_of = vec![Split::Train; 12];
        let model = ModelParams::init_glorot(Arch::Mlp, &[6, 2], 0);
        let normalized = graph::normalize_structure(&g, true, true);
        assert!(matches!(
            evaluate(&[model.clone(), model], &normalized, Split::Val, 1),
            Err(FederationError::EmptySplit(Split::Val))
        ));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let g = toy_graph(2, 19);
        let mut cfg = quick_cfg(FedScheme::FedAvg);
        cfg.epochs = 50;
        cfg.patience = Some(3);
        let out = train(&cfg, &g).unwrap();
        assert!(out.rounds_run < 50, "ran {} rounds", out.rounds_run);
        assert!(out.rounds_run >= out.best_round + 3);
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.t_privacy = 0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::default();
        cfg.hidden_dim = 0;
        assert!(cfg.validate().is_err());
    }
}
