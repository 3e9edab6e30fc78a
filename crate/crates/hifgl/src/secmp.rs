//! The secret message passing engine.
//!
//! One GNN layer runs as three barrier-separated phases:
//!
//! 1. *Privatized message* - every source device applies the source-side
//!    function to its embedding, encodes the result with the destination
//!    silo's coding parameters and fresh per-message masks, and delivers the
//!    T+1 shares. Deliveries are summed in place at the destination, so a
//!    device never holds another device's individual shares.
//! 2. *Secure aggregation* - each device forwards its summed shares to its
//!    own silo, which interpolates them back at the data anchor and returns
//!    the plain aggregate. The silo sees only sums, never node identities or
//!    per-neighbor values.
//! 3. *Neighbor-agnostic update* - the device applies the target-side
//!    transform using only its own degree.
//!
//! Every cross-boundary payload is metered in a [`CommLedger`] (scalar
//! counts per channel) and classified in an [`Audit`]. A device whose
//! aggregate is a single real neighbor's contribution learns that neighbor's
//! source-side output exactly; the audit flags those nodes unless Gaussian
//! noise (`dp_sigma > 0`) is applied to the decoded value.

use std::collections::BTreeMap;
use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::coding::{self, CodingParams, ShareBundle};
use crate::graph::{EgoGraph, FederatedGraph};
use crate::nn::{self, Arch, ForwardTrace, InNeighbors, Matrix, ModelParams};
use crate::rng;

#[derive(Debug, Error)]
pub enum SecmpError {
    #[error("coding: {0}")]
    Coding(#[from] coding::CodingError),
    #[error("model: {0}")]
    Nn(#[from] nn::NnError),
    #[error("graph: {0}")]
    Graph(#[from] crate::graph::GraphError),
    #[error("unknown silo id {0}")]
    UnknownSilo(u32),
    #[error("dp sigma must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("round barrier violated: {0}")]
    Barrier(String),
    #[error("expected one model per silo: {got} models for {silos} silos")]
    ModelCount { got: usize, silos: usize },
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

/// Scalar counts per (round, layer) on the two device-side channels.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LayerTraffic {
    pub round: u64,
    pub layer: usize,
    pub device_device_scalars: u64,
    pub device_silo_scalars: u64,
}

/// Monotone per-channel counters of scalars transferred.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CommLedger {
    pub device_device_scalars: u64,
    pub device_silo_scalars: u64,
    pub silo_server_scalars: u64,
    /// Portion of the device-device channel spent relaying coding
    /// parameters (3T+2 per new device/neighbor-silo pair).
    pub param_request_scalars: u64,
    pub per_layer: Vec<LayerTraffic>,
}

impl CommLedger {
    fn layer_entry(&mut self, round: u64, layer: usize) -> &mut LayerTraffic {
        let found = self
            .per_layer
            .iter()
            .position(|e| e.round == round && e.layer == layer);
        match found {
            Some(i) => &mut self.per_layer[i],
            None => {
                self.per_layer.push(LayerTraffic {
                    round,
                    layer,
                    ..Default::default()
                });
                self.per_layer.last_mut().unwrap()
            }
        }
    }

    pub fn charge_device_device(&mut self, round: u64, layer: usize, scalars: u64) {
        self.device_device_scalars += scalars;
        self.layer_entry(round, layer).device_device_scalars += scalars;
    }

    pub fn charge_param_request(&mut self, round: u64, layer: usize, scalars: u64) {
        self.param_request_scalars += scalars;
        self.charge_device_device(round, layer, scalars);
    }

    pub fn charge_device_silo(&mut self, round: u64, layer: usize, scalars: u64) {
        self.device_silo_scalars += scalars;
        self.layer_entry(round, layer).device_silo_scalars += scalars;
    }

    pub fn charge_silo_server(&mut self, scalars: u64) {
        self.silo_server_scalars += scalars;
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("ledger serializes")
    }
}

// ---------------------------------------------------------------------------
// Audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Device,
    Silo,
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// Coding parameter view (alphas, betas, mask slots): 3T+2 scalars.
    ParamPoints,
    /// T+1 coded vectors from one sender.
    CodedShares,
    /// Element-wise sum of received share bundles.
    SummedShares,
    /// Plain aggregate returned after decoding.
    DecodedAggregate,
    /// Device loss gradients.
    GradientSet,
    /// Model parameters.
    ModelParams,
    /// Anything that would expose node ids, raw features, or un-aggregated
    /// neighbor embeddings to a silo. Never constructed by the engine; the
    /// audit exists to catch it if it ever is.
    ForeignNodeIds,
    RawFeatures,
    PerNeighborEmbedding,
}

impl PayloadKind {
    /// Payload classes a silo must never receive.
    pub fn forbidden_at_silo(self) -> bool {
        matches!(
            self,
            PayloadKind::ForeignNodeIds
                | PayloadKind::RawFeatures
                | PayloadKind::PerNeighborEmbedding
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditChannel {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub payload: PayloadKind,
    pub messages: u64,
    pub scalars: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub round: u64,
    pub layer: usize,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub payload: PayloadKind,
    pub detail: String,
}

/// Classifies every cross-boundary payload and records violations of the
/// silo-visibility rules, plus the single-real-neighbor exposures that
/// remain when no noise is applied.
#[derive(Debug, Default)]
pub struct Audit {
    counters: BTreeMap<(Endpoint, Endpoint, PayloadKind), (u64, u64)>,
    pub violations: Vec<Violation>,
    /// Nodes whose decoded aggregate reveals one neighbor exactly
    /// (deduplicated, ascending).
    pub single_neighbor_nodes: Vec<u32>,
    /// Total flagged aggregation events (across rounds/layers).
    pub single_neighbor_events: u64,
    /// When set, one line per message: `round layer src dst payload scalars`.
    pub lines: Option<Vec<String>>,
}

impl Audit {
    pub fn with_lines() -> Self {
        Self {
            lines: Some(Vec::new()),
            ..Default::default()
        }
    }

    pub fn record(
        &mut self,
        round: u64,
        layer: usize,
        src: Endpoint,
        dst: Endpoint,
        payload: PayloadKind,
        scalars: u64,
    ) {
        let entry = self.counters.entry((src, dst, payload)).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += scalars;
        if dst == Endpoint::Silo && payload.forbidden_at_silo() {
            self.violations.push(Violation {
                round,
                layer,
                src,
                dst,
                payload,
                detail: "silo received a forbidden payload class".into(),
            });
        }
        if let Some(lines) = &mut self.lines {
            lines.push(format!(
                "round={round} layer={layer} src={src:?} dst={dst:?} payload={payload:?} scalars={scalars}"
            ));
        }
    }

    fn merge(&mut self, other: Audit) {
        for (key, (m, s)) in other.counters {
            let entry = self.counters.entry(key).or_insert((0, 0));
            entry.0 += m;
            entry.1 += s;
        }
        self.violations.extend(other.violations);
        self.single_neighbor_events += other.single_neighbor_events;
        self.single_neighbor_nodes.extend(other.single_neighbor_nodes);
        if let (Some(mine), Some(theirs)) = (&mut self.lines, other.lines) {
            mine.extend(theirs);
        }
    }

    fn finish_round(&mut self) {
        self.single_neighbor_nodes.sort_unstable();
        self.single_neighbor_nodes.dedup();
    }

    pub fn flag_single_neighbor(&mut self, node: u32) {
        self.single_neighbor_events += 1;
        self.single_neighbor_nodes.push(node);
    }

    pub fn channels(&self) -> Vec<AuditChannel> {
        self.counters
            .iter()
            .map(|(&(src, dst, payload), &(messages, scalars))| AuditChannel {
                src,
                dst,
                payload,
                messages,
                scalars,
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "channels": self.channels(),
            "violations": self.violations,
            "single_neighbor": {
                "events": self.single_neighbor_events,
                "nodes": self.single_neighbor_nodes,
            },
        });
        if let Some(lines) = &self.lines {
            v["lines"] = serde_json::json!(lines);
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Per-device / per-silo protocol state (the contract-level objects)
// ---------------------------------------------------------------------------

/// A device's protocol-facing state for one layer round.
#[derive(Debug)]
pub struct DeviceState {
    pub ego: EgoGraph,
    pub current_embedding: Vec<f64>,
    /// Running element-wise sums of delivered shares, T+1 slots.
    pub pending_shares: ShareBundle,
}

impl DeviceState {
    pub fn new(ego: EgoGraph, share_count: usize) -> Self {
        let dim = ego.feature.len();
        let feature = ego.feature.clone();
        Self {
            ego,
            current_embedding: feature,
            pending_shares: ShareBundle::zeros(share_count, dim),
        }
    }

    pub fn reset_pending(&mut self, share_count: usize, dim: usize) {
        self.pending_shares = ShareBundle::zeros(share_count, dim);
    }
}

/// A silo's protocol-facing state: coding parameters, model, and the
/// identities (only) of its devices.
#[derive(Debug, Clone)]
pub struct SiloState {
    pub silo_id: u32,
    pub params: CodingParams,
    pub model: ModelParams,
    pub device_ids: Vec<u32>,
}

/// A device requests a silo's encoding-decoding parameter view before
/// sending to that silo's devices. Relayed on the device-device channel:
/// 3T+2 scalars.
pub fn request_params(
    target_silo: &SiloState,
    round: u64,
    layer: usize,
    ledger: &mut CommLedger,
    audit: &mut Audit,
) -> CodingParams {
    let scalars = target_silo.params.wire_scalars();
    ledger.charge_param_request(round, layer, scalars);
    audit.record(
        round,
        layer,
        Endpoint::Device,
        Endpoint::Device,
        PayloadKind::ParamPoints,
        scalars,
    );
    target_silo.params.clone()
}

/// Source-side + encode + deliver: compute the source-side output of `src`,
/// encode it under `dst_params` with fresh masks keyed by the message
/// coordinates, and sum the shares into `dst.pending_shares`.
#[allow(clippy::too_many_arguments)]
pub fn privatized_message(
    src: &DeviceState,
    dst: &mut DeviceState,
    dst_params: &CodingParams,
    arch: Arch,
    round: u64,
    layer: usize,
    ledger: &mut CommLedger,
    audit: &mut Audit,
) -> Result<(), SecmpError> {
    let s = match arch {
        Arch::Sage => nn::sage_source_side(&src.current_embedding),
        _ => nn::source_side(&src.current_embedding, src.ego.degree.max(1)),
    };
    let masks = coding::draw_masks(
        dst_params,
        s.len(),
        &[
            round,
            layer as u64,
            u64::from(src.ego.node_id),
            u64::from(dst.ego.node_id),
        ],
    );
    let bundle = coding::lcc_encode(&s, dst_params, &masks)?;
    let scalars = bundle.wire_scalars();
    dst.pending_shares.add_assign(&bundle)?;
    ledger.charge_device_device(round, layer, scalars);
    audit.record(
        round,
        layer,
        Endpoint::Device,
        Endpoint::Device,
        PayloadKind::CodedShares,
        scalars,
    );
    Ok(())
}

/// The device hands its summed shares to its silo, the silo decodes at the
/// data anchor and returns the plain aggregate. With `dp_sigma > 0` the
/// single-real-neighbor aggregate is perturbed; with `dp_sigma = 0` it is
/// flagged in the audit.
#[allow(clippy::too_many_arguments)]
pub fn secure_aggregate(
    dst: &mut DeviceState,
    home_silo: &SiloState,
    round: u64,
    layer: usize,
    dp_sigma: f64,
    dp_root: u64,
    ledger: &mut CommLedger,
    audit: &mut Audit,
) -> Result<Vec<f64>, SecmpError> {
    if dp_sigma < 0.0 {
        return Err(SecmpError::NegativeSigma(dp_sigma));
    }
    let up = dst.pending_shares.wire_scalars();
    ledger.charge_device_silo(round, layer, up);
    audit.record(
        round,
        layer,
        Endpoint::Device,
        Endpoint::Silo,
        PayloadKind::SummedShares,
        up,
    );
    let mut decoded = coding::lcc_decode(&dst.pending_shares, &home_silo.params)?;
    let real_neighbors = dst.ego.real_in_neighbors().count();
    if real_neighbors == 1 {
        if dp_sigma > 0.0 {
            let mut stream = rng::stream(rng::sub_seed_n(
                dp_root,
                &[round, layer as u64, u64::from(dst.ego.node_id)],
            ));
            decoded = dp_guard(&decoded, dp_sigma, &mut stream)?;
        } else {
            audit.flag_single_neighbor(dst.ego.node_id);
        }
    }
    let down = decoded.len() as u64;
    ledger.charge_device_silo(round, layer, down);
    audit.record(
        round,
        layer,
        Endpoint::Silo,
        Endpoint::Device,
        PayloadKind::DecodedAggregate,
        down,
    );
    Ok(decoded)
}

/// Apply the target-side transform using only the device's own degree, then
/// the hidden activation unless this is the output layer.
pub fn neighbor_agnostic_update(
    dst: &DeviceState,
    decoded: &[f64],
    model: &ModelParams,
    layer: usize,
) -> Result<Vec<f64>, SecmpError> {
    if layer >= model.num_layers() {
        return Err(SecmpError::Barrier(format!(
            "layer {layer} out of range for a {}-layer model",
            model.num_layers()
        )));
    }
    let lw = &model.layers[layer];
    let mut z = match model.arch {
        Arch::Sage => nn::sage_target_side(
            decoded,
            dst.ego.degree.max(1),
            &dst.current_embedding,
            &lw.w,
            &lw.b,
        )?,
        _ => nn::target_side(decoded, dst.ego.degree.max(1), &lw.w, &lw.b)?,
    };
    if layer + 1 < model.num_layers() {
        nn::relu(&mut z);
    }
    Ok(z)
}

/// Add i.i.d. Gaussian noise of scale `sigma`; `sigma = 0` is the identity.
pub fn dp_guard(
    embedding: &[f64],
    sigma: f64,
    stream: &mut rng::Stream,
) -> Result<Vec<f64>, SecmpError> {
    if sigma < 0.0 {
        return Err(SecmpError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(embedding.to_vec());
    }
    Ok(embedding
        .iter()
        .map(|v| v + sigma * rng::gaussian(stream))
        .collect())
}

// ---------------------------------------------------------------------------
// The full forward engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SecmpOptions {
    pub t_privacy: usize,
    pub dp_sigma: f64,
    /// Root seed for the per-message mask streams.
    pub mask_root: u64,
    /// Root seed for dp noise.
    pub dp_root: u64,
    pub workers: usize,
}

impl Default for SecmpOptions {
    fn default() -> Self {
        Self {
            t_privacy: 1,
            dp_sigma: 0.0,
            mask_root: 0,
            dp_root: 1,
            workers: 1,
        }
    }
}

/// Protocol state that persists across rounds: the graph view, per-silo
/// coding parameters, the param-request cache, and the accumulating ledger
/// and audit.
pub struct ProtocolState {
    pub adj: InNeighbors,
    pub silo_params: Vec<CodingParams>,
    pub silo_of: Vec<u32>,
    pub opts: SecmpOptions,
    pub ledger: CommLedger,
    pub audit: Audit,
    /// (device, neighbor-silo) pairs already holding parameters.
    requested: HashSet<(u32, u32)>,
    real_in_neighbors: Vec<u32>,
}

impl ProtocolState {
    pub fn new(g: &FederatedGraph, opts: SecmpOptions) -> Result<Self, SecmpError> {
        if !g.is_partitioned() {
            return Err(SecmpError::Graph(crate::graph::GraphError::Unpartitioned));
        }
        let adj = InNeighbors::from_graph(g);
        let silo_params = (0..g.num_silos as u64)
            .map(|s| {
                coding::generate_params(opts.t_privacy, rng::sub_seed_n(opts.mask_root, &[0xC0DE, s]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut real_in = vec![0u32; g.num_nodes];
        for (u, real) in real_in.iter_mut().enumerate() {
            *real = adj.of(u).iter().filter(|&&v| v as usize != u).count() as u32;
        }
        Ok(Self {
            adj,
            silo_params,
            silo_of: g.silo_of.clone(),
            opts,
            ledger: CommLedger::default(),
            audit: Audit::default(),
            requested: HashSet::new(),
            real_in_neighbors: real_in,
        })
    }

    /// Charge the one-time parameter relays for every (source device,
    /// destination silo) pair not yet served. Deterministic: edges scanned
    /// in destination-grouped order.
    fn serve_param_requests(&mut self, round: u64, layer: usize) {
        let n = self.adj.degree.len();
        for u in 0..n {
            let dst_silo = self.silo_of[u];
            for i in self.adj.offsets[u]..self.adj.offsets[u + 1] {
                let v = self.adj.sources[i];
                if self.requested.insert((v, dst_silo)) {
                    let scalars = self.silo_params[dst_silo as usize].wire_scalars();
                    self.ledger.charge_param_request(round, layer, scalars);
                    self.audit.record(
                        round,
                        layer,
                        Endpoint::Device,
                        Endpoint::Device,
                        PayloadKind::ParamPoints,
                        scalars,
                    );
                }
            }
        }
    }

    /// Run the K-layer protocol forward with one model per silo. When all
    /// silo models are identical this equals the centralized forward within
    /// float tolerance. Returns a trace usable by the gradient machinery.
    pub fn full_forward(
        &mut self,
        features: &Matrix,
        models: &[ModelParams],
        round: u64,
    ) -> Result<ForwardTrace, SecmpError> {
        let num_silos = self.silo_params.len();
        if models.len() != num_silos {
            return Err(SecmpError::ModelCount {
                got: models.len(),
                silos: num_silos,
            });
        }
        let arch = models[0].arch;
        for m in models {
            m.check_shapes()?;
            if m.arch != arch || m.dims != models[0].dims {
                return Err(SecmpError::Barrier(
                    "silo models disagree on arch or dims".into(),
                ));
            }
        }
        let n = features.rows;
        let k_layers = models[0].num_layers();
        let mut inputs = vec![features.clone()];
        let mut aggregates = Vec::new();
        let mut pre_activations = Vec::new();

        for layer in 0..k_layers {
            self.serve_param_requests(round, layer);
            let h = &inputs[layer];
            let agg = self.message_and_aggregate(h, arch, round, layer)?;

            // neighbor-agnostic update, silo by silo so each device uses its
            // own silo's model
            let d_out = models[0].dims[layer + 1];
            let mut z = Matrix::zeros(n, d_out);
            for (s, model) in models.iter().enumerate() {
                let members: Vec<u32> = (0..n as u32)
                    .filter(|&v| self.silo_of[v as usize] == s as u32)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let lw = &model.layers[layer];
                let eff_cols = lw.w.rows;
                let mut compact = Matrix::zeros(members.len(), eff_cols);
                for (i, &v) in members.iter().enumerate() {
                    let u = v as usize;
                    match arch {
                        Arch::Sage => {
                            let d_in = h.cols;
                            let inv = 1.0 / self.adj.degree[u] as f64;
                            let row = compact.row_mut(i);
                            row[..d_in].copy_from_slice(h.row(u));
                            for (dst, &a) in row[d_in..].iter_mut().zip(agg.row(u)) {
                                *dst = a * inv;
                            }
                        }
                        _ => {
                            let inv = 1.0 / (self.adj.degree[u] as f64).sqrt();
                            for (dst, &a) in compact.row_mut(i).iter_mut().zip(agg.row(u)) {
                                *dst = a * inv;
                            }
                        }
                    }
                }
                let mut zc = nn::tensor::matmul(&compact, &lw.w, self.opts.workers);
                for (i, &v) in members.iter().enumerate() {
                    let zrow = zc.row_mut(i);
                    for (x, &bv) in zrow.iter_mut().zip(&lw.b) {
                        *x += bv;
                    }
                    z.row_mut(v as usize).copy_from_slice(zrow);
                }
            }
            aggregates.push(agg);
            pre_activations.push(z.clone());
            if layer + 1 < k_layers {
                nn::relu(&mut z.data);
            }
            inputs.push(z);
        }

        self.audit.finish_round();
        let probs = nn::softmax_rows(inputs.last().unwrap(), self.opts.workers);
        Ok(ForwardTrace {
            arch,
            inputs,
            aggregates,
            pre_activations,
            probs,
            degree: self.adj.degree.clone(),
            self_loop: self.adj.self_loop.clone(),
            clamped: std::sync::atomic::AtomicUsize::new(0),
        })
    }

    /// Phases 1 and 2 for one layer, destination-parallel: encode every
    /// in-edge message with the destination silo's parameters, sum shares at
    /// the destination, ship the sums to the silo, decode, meter everything.
    fn message_and_aggregate(
        &mut self,
        h: &Matrix,
        arch: Arch,
        round: u64,
        layer: usize,
    ) -> Result<Matrix, SecmpError> {
        let n = h.rows;
        let dim = h.cols;
        let mut agg = Matrix::zeros(n, dim);
        let ranges = nn::tensor::row_ranges(n, self.opts.workers);
        let opts = &self.opts;
        let adj = &self.adj;
        let silo_of = &self.silo_of;
        let silo_params = &self.silo_params;
        let real_in = &self.real_in_neighbors;
        let line_audit = self.audit.lines.is_some();

        let results: Vec<Result<(Audit, CommLedger), SecmpError>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            let mut rest = agg.data.as_mut_slice();
            for range in ranges {
                let (chunk, tail) = rest.split_at_mut((range.end - range.start) * dim);
                rest = tail;
                handles.push(scope.spawn(move || {
                    let mut audit = if line_audit {
                        Audit::with_lines()
                    } else {
                        Audit::default()
                    };
                    let mut ledger = CommLedger::default();
                    for (local, out_row) in chunk.chunks_mut(dim).enumerate() {
                        let u = range.start + local;
                        let params = &silo_params[silo_of[u] as usize];
                        let mut pending = ShareBundle::zeros(params.share_count(), dim);
                        for &v in adj.of(u) {
                            let s = match arch {
                                Arch::Sage => nn::sage_source_side(h.row(v as usize)),
                                _ => nn::source_side(h.row(v as usize), adj.degree[v as usize]),
                            };
                            let masks = coding::draw_masks(
                                params,
                                dim,
                                &[round, layer as u64, u64::from(v), u as u64],
                            );
                            let bundle = coding::lcc_encode(&s, params, &masks)?;
                            let scalars = bundle.wire_scalars();
                            pending.add_assign(&bundle)?;
                            ledger.charge_device_device(round, layer, scalars);
                            audit.record(
                                round,
                                layer,
                                Endpoint::Device,
                                Endpoint::Device,
                                PayloadKind::CodedShares,
                                scalars,
                            );
                        }
                        // device -> silo: the summed shares; silo -> device:
                        // the decoded aggregate
                        let up = pending.wire_scalars();
                        ledger.charge_device_silo(round, layer, up);
                        audit.record(
                            round,
                            layer,
                            Endpoint::Device,
                            Endpoint::Silo,
                            PayloadKind::SummedShares,
                            up,
                        );
                        let mut decoded = coding::lcc_decode(&pending, params)?;
                        if real_in[u] == 1 {
                            if opts.dp_sigma > 0.0 {
                                let mut stream = rng::stream(rng::sub_seed_n(
                                    opts.dp_root,
                                    &[round, layer as u64, u as u64],
                                ));
                                decoded = dp_guard(&decoded, opts.dp_sigma, &mut stream)?;
                            } else {
                                audit.flag_single_neighbor(u as u32);
                            }
                        }
                        ledger.charge_device_silo(round, layer, decoded.len() as u64);
                        audit.record(
                            round,
                            layer,
                            Endpoint::Silo,
                            Endpoint::Device,
                            PayloadKind::DecodedAggregate,
                            decoded.len() as u64,
                        );
                        out_row.copy_from_slice(&decoded);
                    }
                    Ok((audit, ledger))
                }));
            }
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });

        for result in results {
            let (audit, ledger) = result?;
            self.audit.merge(audit);
            self.ledger.device_device_scalars += ledger.device_device_scalars;
            self.ledger.device_silo_scalars += ledger.device_silo_scalars;
            for e in ledger.per_layer {
                let entry = self.ledger.layer_entry(e.round, e.layer);
                entry.device_device_scalars += e.device_device_scalars;
                entry.device_silo_scalars += e.device_silo_scalars;
            }
        }
        Ok(agg)
    }
}
