//! The operator surface: `partition`, `train`, `report` and `selftest`
//! subcommands, configuration handling and result files.
//!
//! Configuration precedence is CLI flags over config-file entries (a
//! `key = value` text file) over built-in defaults; the resolved snapshot is
//! recorded in `manifest.json` next to every result file. All randomness
//! flows from the single `--seed` through named sub-seeds, and no timing
//! information is written into the normative outputs, so identical manifests
//! reproduce byte-identical history files at any `--workers` setting.
//!
//! Exit codes: 0 on success, 1 on user error (bad flags, missing files),
//! 2 on an internal invariant violation (including selftest failures).

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::coding;
use crate::federation::{self, FedScheme, Optimizer, TrainConfig};
use crate::graph::{self, FederatedGraph, Split};
use crate::metrics;
use crate::nn::{self, Arch};
use crate::rng;
use crate::secmp;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureNorm {
    None,
    L1,
    L2,
}

impl std::str::FromStr for FeatureNorm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FeatureNorm::None),
            "l1" => Ok(FeatureNorm::L1),
            "l2" => Ok(FeatureNorm::L2),
            other => Err(format!(
                "unknown feature norm {other:?} (expected none|l1|l2)"
            )),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "hifgl",
    version,
    about = "Hierarchical federated graph learning simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Partition a dataset into silos and report structural leakage.
    Partition(PartitionArgs),
    /// Train under a federation scheme and write history/checkpoint/ledger.
    Train(TrainArgs),
    /// Gain and conformance reports over completed runs.
    Report(ReportArgs),
    /// Built-in property suites over synthetic fixtures.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Clone)]
struct DatasetArgs {
    /// Content file: `node_key <features...> <label>` per line (.gz ok).
    #[arg(long)]
    dataset_content: Option<PathBuf>,
    /// Cites file: `cited_key citing_key` per line (.gz ok).
    #[arg(long)]
    dataset_cites: Option<PathBuf>,
    #[arg(long)]
    silos: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional key=value config file; CLI flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Reuse an existing partition file instead of partitioning on the fly.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Partition with a different seed than the training seed (defaults to
    /// --seed); pins the node assignment while training randomness varies.
    #[arg(long)]
    partition_seed: Option<u64>,
    #[arg(long)]
    scheme: Option<FedScheme>,
    #[arg(long)]
    arch: Option<Arch>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_gamma: Option<f64>,
    #[arg(long)]
    lr_step: Option<usize>,
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    fedprox_mu: Option<f64>,
    #[arg(long)]
    t_privacy: Option<usize>,
    #[arg(long)]
    dp_sigma: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    feature_norm: Option<FeatureNorm>,
    /// Early-stopping patience on validation accuracy (off by default).
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    no_symmetrize: bool,
    #[arg(long)]
    no_self_loops: bool,
    /// Also write a line-per-message audit log (small runs only).
    #[arg(long)]
    audit_log: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Completed run directory for conformance checks.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Run directories for the gain report.
    #[arg(long)]
    model_run: Option<PathBuf>,
    #[arg(long)]
    lower_run: Option<PathBuf>,
    #[arg(long)]
    upper_run: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Restrict to one suite: coding | nn | secmp.
    #[arg(long)]
    suite: Option<String>,
    /// Privacy threshold for the coding sweeps.
    #[arg(long, default_value_t = 4)]
    t: usize,
}

fn log_level() -> u8 {
    match std::env::var("HIFGL_LOG").as_deref() {
        Ok("quiet") => 0,
        Ok("debug") => 2,
        _ => 1,
    }
}

macro_rules! info {
    ($($arg:tt)*) => {
        if log_level() >= 1 {
            eprintln!($($arg)*);
        }
    };
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Partition(args) => cmd_partition(args),
        Command::Train(args) => cmd_train(args),
        Command::Report(args) => cmd_report(args),
        Command::Selftest(args) => cmd_selftest(args),
    };
    match result {
        Ok(code) => code,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USER
        }
        Err(CliError::Invariant(msg)) => {
            eprintln!("invariant violation: {msg}");
            EXIT_INVARIANT
        }
    }
}

#[derive(Debug)]
enum CliError {
    User(String),
    Invariant(String),
}

impl From<graph::GraphError> for CliError {
    fn from(e: graph::GraphError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<federation::FederationError> for CliError {
    fn from(e: federation::FederationError) -> Self {
        match e {
            federation::FederationError::Config(_) | federation::FederationError::Graph(_) => {
                CliError::User(e.to_string())
            }
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Config file + manifest
// ---------------------------------------------------------------------------

fn parse_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::User(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn file_val<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| CliError::User(format!("config key {key}: {e}"))),
    }
}

/// FNV-1a over a file's raw bytes: the dataset fingerprint in manifests.
fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("fnv1a:{h:016x}"))
}

fn version_string() -> String {
    format!("hifgl-{}", env!("CARGO_PKG_VERSION"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct DatasetManifest {
    content_path: String,
    cites_path: String,
    content_digest: String,
    cites_digest: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    version: String,
    command: &'a str,
    dataset: DatasetManifest,
    seed: u64,
    silos: usize,
    feature_norm: FeatureNorm,
    config: Option<&'a TrainConfig>,
    outputs: Vec<String>,
}

// ---------------------------------------------------------------------------
// Shared dataset resolution
// ---------------------------------------------------------------------------

struct ResolvedDataset {
    graph: FederatedGraph,
    manifest: DatasetManifest,
    silos: usize,
    seed: u64,
    file_cfg: HashMap<String, String>,
}

fn resolve_dataset(args: &DatasetArgs) -> Result<ResolvedDataset, CliError> {
    let file_cfg = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => HashMap::new(),
    };
    let content = args
        .dataset_content
        .clone()
        .or_else(|| file_cfg.get("dataset_content").map(PathBuf::from))
        .ok_or_else(|| CliError::User("--dataset-content is required".into()))?;
    let cites = args
        .dataset_cites
        .clone()
        .or_else(|| file_cfg.get("dataset_cites").map(PathBuf::from))
        .ok_or_else(|| CliError::User("--dataset-cites is required".into()))?;
    let silos = match args.silos {
        Some(s) => s,
        None => file_val::<usize>(&file_cfg, "silos")?.unwrap_or(5),
    };
    let seed = match args.seed {
        Some(s) => s,
        None => file_val::<u64>(&file_cfg, "seed")?.unwrap_or(0),
    };
    let manifest = DatasetManifest {
        content_path: content.display().to_string(),
        cites_path: cites.display().to_string(),
        content_digest: file_digest(&content)?,
        cites_digest: file_digest(&cites)?,
    };
    let graph = graph::load_dataset(&content, &cites)?;
    info!(
        "loaded {} nodes, {} features, {} classes, {} edges ({} dropped, {} duplicates)",
        graph.num_nodes,
        graph.num_features,
        graph.num_classes,
        graph.edges.len(),
        graph.dropped_edges,
        graph.duplicate_edges
    );
    Ok(ResolvedDataset {
        graph,
        manifest,
        silos,
        seed,
        file_cfg,
    })
}

// ---------------------------------------------------------------------------
// partition
// ---------------------------------------------------------------------------

fn cmd_partition(args: PartitionArgs) -> Result<i32, CliError> {
    let resolved = resolve_dataset(&args.dataset)?;
    let g = graph::partition_random(&resolved.graph, resolved.silos, resolved.seed)?;
    let leakage = graph::privacy_leakage(&g)?;
    let loss = graph::edge_loss_stats(&g)?;

    let out_dir = &args.dataset.out_dir;
    let mut partition_bytes = Vec::new();
    graph::write_partition_json(&g, &mut partition_bytes)?;
    write_atomic(&out_dir.join("partition.json"), &partition_bytes)?;
    let leakage_json = serde_json::json!({
        "leakage": leakage,
        "edge_loss": loss,
    });
    write_atomic(
        &out_dir.join("leakage.json"),
        serde_json::to_string_pretty(&leakage_json).unwrap().as_bytes(),
    )?;
    let manifest = RunManifest {
        version: version_string(),
        command: "partition",
        dataset: resolved.manifest,
        seed: resolved.seed,
        silos: resolved.silos,
        feature_norm: FeatureNorm::None,
        config: None,
        outputs: vec!["partition.json".into(), "leakage.json".into()],
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap().as_bytes(),
    )?;

    let mut sizes = vec![0usize; g.num_silos];
    for &s in &g.silo_of {
        sizes[s as usize] += 1;
    }
    println!("silo sizes: {sizes:?}");
    println!(
        "leakage: per-silo counts {:?}, fractions {:?}, mean {:.4}",
        leakage.per_silo_count,
        leakage
            .per_silo_fraction
            .iter()
            .map(|f| (f * 1e4).round() / 1e4)
            .collect::<Vec<_>>(),
        leakage.mean_fraction
    );
    println!(
        "edge loss: cross {} / total {} -> silo-view ratio {:.4} (plain cross fraction {:.4})",
        loss.cross_total, loss.total_undirected, loss.loss_ratio, loss.cross_fraction
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn load_partition_file(g: &FederatedGraph, path: &Path) -> Result<FederatedGraph, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read partition {}: {e}", path.display())))?;
    let parsed: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::User(format!("bad partition json: {e}")))?;
    let obj = parsed
        .as_object()
        .ok_or_else(|| CliError::User("partition file must be a JSON object".into()))?;
    if obj.len() != g.num_nodes {
        return Err(CliError::User(format!(
            "partition covers {} nodes, dataset has {}",
            obj.len(),
            g.num_nodes
        )));
    }
    let mut out = g.clone();
    out.silo_of = vec![0; g.num_nodes];
    out.split_of = vec![Split::Train; g.num_nodes];
    let mut max_silo = 0u32;
    for (key, entry) in obj {
        let id: usize = key
            .parse()
            .map_err(|_| CliError::User(format!("bad node id {key:?}")))?;
        if id >= g.num_nodes {
            return Err(CliError::User(format!("node id {id} out of range")));
        }
        let silo = entry["silo"]
            .as_u64()
            .ok_or_else(|| CliError::User(format!("node {id}: missing silo")))?
            as u32;
        let split = match entry["split"].as_str() {
            Some("train") => Split::Train,
            Some("val") => Split::Val,
            Some("test") => Split::Test,
            other => {
                return Err(CliError::User(format!("node {id}: bad split {other:?}")));
            }
        };
        out.silo_of[id] = silo;
        out.split_of[id] = split;
        max_silo = max_silo.max(silo);
    }
    out.num_silos = (max_silo + 1) as usize;
    Ok(out)
}

#[allow(clippy::too_many_lines)]
fn cmd_train(args: TrainArgs) -> Result<i32, CliError> {
    let resolved = resolve_dataset(&args.dataset)?;
    let fc = &resolved.file_cfg;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        arch: match args.arch {
            Some(a) => a,
            None => file_val::<Arch>(fc, "arch")?.unwrap_or(defaults.arch),
        },
        num_layers: args
            .layers
            .or(file_val(fc, "layers")?)
            .unwrap_or(defaults.num_layers),
        hidden_dim: args
            .hidden
            .or(file_val(fc, "hidden")?)
            .unwrap_or(defaults.hidden_dim),
        epochs: args
            .epochs
            .or(file_val(fc, "epochs")?)
            .unwrap_or(defaults.epochs),
        lr: args.lr.or(file_val(fc, "lr")?).unwrap_or(defaults.lr),
        lr_gamma: args
            .lr_gamma
            .or(file_val(fc, "lr_gamma")?)
            .unwrap_or(defaults.lr_gamma),
        lr_step: args
            .lr_step
            .or(file_val(fc, "lr_step")?)
            .unwrap_or(defaults.lr_step),
        optimizer: match args.optimizer {
            Some(o) => o,
            None => file_val::<Optimizer>(fc, "optimizer")?.unwrap_or(defaults.optimizer),
        },
        fed_scheme: match args.scheme {
            Some(s) => s,
            None => file_val::<FedScheme>(fc, "scheme")?.unwrap_or(defaults.fed_scheme),
        },
        fedprox_mu: args
            .fedprox_mu
            .or(file_val(fc, "fedprox_mu")?)
            .unwrap_or(defaults.fedprox_mu),
        t_privacy: args
            .t_privacy
            .or(file_val(fc, "t_privacy")?)
            .unwrap_or(defaults.t_privacy),
        seed: resolved.seed,
        dp_sigma: args
            .dp_sigma
            .or(file_val(fc, "dp_sigma")?)
            .unwrap_or(defaults.dp_sigma),
        patience: args.patience.or(file_val(fc, "patience")?),
        workers: args
            .workers
            .or(file_val(fc, "workers")?)
            .unwrap_or(defaults.workers),
        symmetrize: !args.no_symmetrize
            && file_val::<bool>(fc, "symmetrize")?.unwrap_or(defaults.symmetrize),
        self_loops: !args.no_self_loops
            && file_val::<bool>(fc, "self_loops")?.unwrap_or(defaults.self_loops),
        audit_lines: args.audit_log,
    };
    cfg.validate().map_err(|e| CliError::User(e.to_string()))?;
    let feature_norm = match args.feature_norm {
        Some(f) => f,
        None => file_val::<FeatureNorm>(fc, "feature_norm")?.unwrap_or(FeatureNorm::L1),
    };

    let mut g = resolved.graph;
    match feature_norm {
        FeatureNorm::None => {}
        FeatureNorm::L1 => g.normalize_features_l1(),
        FeatureNorm::L2 => g.normalize_features_l2(),
    }
    let g = match &args.partition {
        Some(path) => load_partition_file(&g, path)?,
        None => {
            let pseed = args
                .partition_seed
                .or(file_val(fc, "partition_seed")?)
                .unwrap_or(resolved.seed);
            graph::partition_random(&g, resolved.silos, pseed)?
        }
    };

    let started = std::time::Instant::now();
    let out = federation::train(&cfg, &g)?;
    let wall_ms = started.elapsed().as_millis() as u64;
    info!(
        "trained {} rounds in {:.1}s: best val {:.4} test {:.4}",
        out.rounds_run,
        wall_ms as f64 / 1e3,
        out.best_val_acc,
        out.best_test_acc
    );

    let out_dir = &args.dataset.out_dir;
    // history: one JSON object per round, deterministic bytes
    let mut history = Vec::new();
    for r in &out.history {
        history.extend(serde_json::to_string(r).unwrap().into_bytes());
        history.push(b'\n');
    }
    write_atomic(&out_dir.join("history.jsonl"), &history)?;

    // checkpoints via the binary tensor format
    let mut outputs = vec!["history.jsonl".into(), "ledger.json".into(), "result.json".into()];
    if let Some(global) = &out.global_model {
        let path = out_dir.join("global.ckpt");
        global
            .save(&path)
            .map_err(|e| CliError::Invariant(e.to_string()))?;
        outputs.push("global.ckpt".into());
    } else {
        for (i, m) in out.silo_models.iter().enumerate() {
            let path = out_dir.join(format!("silo_{i}.ckpt"));
            m.save(&path)
                .map_err(|e| CliError::Invariant(e.to_string()))?;
            outputs.push(format!("silo_{i}.ckpt"));
        }
    }

    write_atomic(
        &out_dir.join("ledger.json"),
        serde_json::to_string_pretty(&out.ledger.to_json())
            .unwrap()
            .as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("audit.json"),
        serde_json::to_string_pretty(&out.audit_json).unwrap().as_bytes(),
    )?;

    // everything the report command needs to recheck this run
    let working = {
        let pre = match cfg.fed_scheme {
            FedScheme::Local | FedScheme::FedAvg | FedScheme::FedProx => {
                graph::drop_cross_edges(&g).map_err(|e| CliError::Invariant(e.to_string()))?
            }
            _ => g.clone(),
        };
        graph::normalize_structure(&pre, cfg.symmetrize, cfg.self_loops)
    };
    let protocol_rounds = if cfg.fed_scheme == FedScheme::Hifgl {
        out.rounds_run as u64
    } else {
        0
    };
    let server_rounds = if matches!(
        cfg.fed_scheme,
        FedScheme::FedAvg | FedScheme::FedProx | FedScheme::Hifgl
    ) {
        out.rounds_run as u64
    } else {
        0
    };
    let shape = metrics::CommShape::from_graph(
        &working,
        out.layer_dims[..out.layer_dims.len() - 1].to_vec(),
        cfg.t_privacy,
        out.param_count,
        protocol_rounds,
        server_rounds,
    );
    let loss_stats = graph::edge_loss_stats(&g)?;
    let result = serde_json::json!({
        "scheme": cfg.fed_scheme,
        "arch": cfg.arch,
        "best_round": out.best_round,
        "best_val_acc": out.best_val_acc,
        "best_test_acc": out.best_test_acc,
        "rounds_run": out.rounds_run,
        "param_count": out.param_count,
        "num_silos": out.num_silos,
        "t_privacy": out.t_privacy,
        "layer_dims": out.layer_dims,
        "single_neighbor_events": out.single_neighbor_events,
        "audit_violations": out.audit_violations,
        "comm_shape": {
            "directed_edges": shape.directed_edges,
            "param_pairs": shape.param_pairs,
            "num_nodes": shape.num_nodes,
            "protocol_rounds": shape.protocol_rounds,
            "server_rounds": shape.server_rounds,
            "layer_in_dims": shape.layer_in_dims,
        },
        "graph_stats": {
            "num_nodes": g.num_nodes,
            "num_features": g.num_features,
            "undirected_edges": loss_stats.total_undirected,
            "cross_edges": loss_stats.cross_total,
            "intra_edges": loss_stats.intra_total,
        },
    });
    write_atomic(
        &out_dir.join("result.json"),
        serde_json::to_string_pretty(&result).unwrap().as_bytes(),
    )?;
    // wall-clock timing lives outside the deterministic outputs
    write_atomic(
        &out_dir.join("timings.json"),
        serde_json::to_string_pretty(&serde_json::json!({"wall_ms": wall_ms}))
            .unwrap()
            .as_bytes(),
    )?;
    if args.audit_log {
        if let Some(lines) = out.audit_json.get("lines").and_then(|v| v.as_array()) {
            let mut buf = Vec::new();
            for l in lines {
                buf.extend(l.as_str().unwrap_or_default().as_bytes());
                buf.push(b'\n');
            }
            write_atomic(&out_dir.join("audit.log"), &buf)?;
        }
    }

    let manifest = RunManifest {
        version: version_string(),
        command: "train",
        dataset: resolved.manifest,
        seed: resolved.seed,
        silos: resolved.silos,
        feature_norm,
        config: Some(&cfg),
        outputs,
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap().as_bytes(),
    )?;

    println!(
        "{}-{}: best val {:.4} test {:.4} (round {}, {} rounds run)",
        cfg.fed_scheme, cfg.arch, out.best_val_acc, out.best_test_acc, out.best_round, out.rounds_run
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn read_result(dir: &Path) -> Result<serde_json::Value, CliError> {
    let path = dir.join("result.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::User(format!("bad result.json: {e}")))
}

fn cmd_report(args: ReportArgs) -> Result<i32, CliError> {
    let mut wrote_anything = false;
    let mut all_green = true;

    if let (Some(model), Some(lower), Some(upper)) =
        (&args.model_run, &args.lower_run, &args.upper_run)
    {
        let acc = |d: &Path| -> Result<f64, CliError> {
            read_result(d)?["best_test_acc"]
                .as_f64()
                .ok_or_else(|| CliError::User(format!("{}: missing best_test_acc", d.display())))
        };
        let report = metrics::graph_information_gain(acc(model)?, acc(lower)?, acc(upper)?)
            .map_err(|e| CliError::User(e.to_string()))?;
        let pct = report.gain * 100.0 + 0.0; // normalize negative zero
        println!(
            "gain: ({:.4} - {:.4}) / ({:.4} - {:.4}) = {:+.2}%",
            report.acc_model, report.acc_lower, report.acc_upper, report.acc_lower, pct
        );
        write_atomic(
            &args.out_dir.join("gain.json"),
            serde_json::to_string_pretty(&report).unwrap().as_bytes(),
        )?;
        wrote_anything = true;
    }

    if let Some(run) = &args.run {
        let result = read_result(run)?;
        let ledger_text = std::fs::read_to_string(run.join("ledger.json"))
            .map_err(|e| CliError::User(format!("cannot read ledger.json: {e}")))?;
        let ledger: serde_json::Value = serde_json::from_str(&ledger_text)
            .map_err(|e| CliError::User(format!("bad ledger.json: {e}")))?;
        let mut measured = secmp::CommLedger::default();
        measured.device_device_scalars = ledger["device_device_scalars"].as_u64().unwrap_or(0);
        measured.device_silo_scalars = ledger["device_silo_scalars"].as_u64().unwrap_or(0);
        measured.silo_server_scalars = ledger["silo_server_scalars"].as_u64().unwrap_or(0);
        measured.param_request_scalars = ledger["param_request_scalars"].as_u64().unwrap_or(0);

        let cs = &result["comm_shape"];
        let shape = metrics::CommShape {
            directed_edges: cs["directed_edges"].as_u64().unwrap_or(0),
            param_pairs: cs["param_pairs"].as_u64().unwrap_or(0),
            num_nodes: cs["num_nodes"].as_u64().unwrap_or(0),
            protocol_rounds: cs["protocol_rounds"].as_u64().unwrap_or(0),
            server_rounds: cs["server_rounds"].as_u64().unwrap_or(0),
            layer_in_dims: cs["layer_in_dims"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_u64().map(|x| x as usize)).collect())
                .unwrap_or_default(),
            t_privacy: result["t_privacy"].as_u64().unwrap_or(1) as usize,
            param_count: result["param_count"].as_u64().unwrap_or(0) as usize,
            num_silos: result["num_silos"].as_u64().unwrap_or(1) as usize,
        };
        let comm = metrics::comm_report(&measured, &shape);
        print!("{}", metrics::render_comm_table(&comm));
        all_green &= comm.all_green;
        write_atomic(
            &args.out_dir.join("comm_report.json"),
            serde_json::to_string_pretty(&comm).unwrap().as_bytes(),
        )?;

        // storage accounting from the recorded graph stats
        let gs = &result["graph_stats"];
        let space = serde_json::json!({
            "silo_scalars": shape.num_silos as u64
                * (shape.param_count as u64 + 3 * shape.t_privacy as u64 + 2),
            "edge_records": gs["undirected_edges"],
            "feature_scalars": gs["num_nodes"].as_u64().unwrap_or(0)
                * gs["num_features"].as_u64().unwrap_or(0),
            "cross_edges": gs["cross_edges"],
        });
        println!(
            "space: silo scalars {}, edge records {}, cross edges {}",
            space["silo_scalars"], space["edge_records"], space["cross_edges"]
        );
        write_atomic(
            &args.out_dir.join("space_report.json"),
            serde_json::to_string_pretty(&space).unwrap().as_bytes(),
        )?;
        wrote_anything = true;
    }

    if !wrote_anything {
        return Err(CliError::User(
            "nothing to report: pass --run and/or --model-run/--lower-run/--upper-run".into(),
        ));
    }
    if all_green {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Invariant("conformance check failed".into()))
    }
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

struct SuiteOutcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> SuiteOutcome {
    match outcome {
        Ok(detail) => SuiteOutcome {
            name,
            passed: true,
            detail,
        },
        Err(detail) => SuiteOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

fn suite_coding(t_max: usize) -> Vec<SuiteOutcome> {
    let mut out = Vec::new();
    // roundtrip + homomorphism sweep
    out.push(check("coding/roundtrip", {
        let mut worst: f64 = 0.0;
        let mut stream = rng::stream(101);
        'outer: for t in 1..=t_max {
            let params = coding::generate_params(t, 7).unwrap();
            for rep in 0..50 {
                let dim = 1 + rep % 32;
                let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 5.0)).collect();
                let masks = coding::draw_masks(&params, dim, &[t as u64, rep as u64]);
                let bundle = coding::lcc_encode(&h, &params, &masks).unwrap();
                let back = coding::lcc_decode(&bundle, &params).unwrap();
                for (a, b) in back.iter().zip(&h) {
                    let rel = (a - b).abs() / b.abs().max(1.0);
                    worst = worst.max(rel);
                    if rel > 1e-9 {
                        break 'outer;
                    }
                }
            }
        }
        if worst <= 1e-9 {
            Ok(format!("worst relative error {worst:.2e}"))
        } else {
            Err(format!("worst relative error {worst:.2e} exceeds 1e-9"))
        }
    }));
    out.push(check("coding/homomorphism", {
        let mut stream = rng::stream(102);
        let params = coding::generate_params(t_max.max(1), 9).unwrap();
        let dim = 24;
        let mut agg = coding::ShareBundle::zeros(params.share_count(), dim);
        let mut total = vec![0.0; dim];
        for v in 0..40u64 {
            let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 2.0)).collect();
            for (acc, x) in total.iter_mut().zip(&h) {
                *acc += x;
            }
            let masks = coding::draw_masks(&params, dim, &[v]);
            agg.add_assign(&coding::lcc_encode(&h, &params, &masks).unwrap())
                .unwrap();
        }
        let back = coding::lcc_decode(&agg, &params).unwrap();
        let worst = back
            .iter()
            .zip(&total)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0f64, f64::max);
        if worst <= 1e-6 {
            Ok(format!("worst relative error {worst:.2e}"))
        } else {
            Err(format!("worst relative error {worst:.2e} exceeds 1e-6"))
        }
    }));
    out.push(check("coding/matrix-consistency", {
        let mut stream = rng::stream(103);
        let mut worst: f64 = 0.0;
        for t in 1..=t_max {
            let params = coding::generate_params(t, 3).unwrap();
            let u = coding::encoding_matrix(&params);
            let dim = 9;
            let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 3.0)).collect();
            let masks = coding::draw_masks(&params, dim, &[t as u64]);
            let bundle = coding::lcc_encode(&h, &params, &masks).unwrap();
            for (k, share) in bundle.shares().iter().enumerate() {
                for d in 0..dim {
                    let mut via = u[0][k] * h[d];
                    for (j, m) in masks.iter().enumerate() {
                        via += u[j + 1][k] * m[d];
                    }
                    worst = worst.max((via - share[d]).abs());
                }
            }
        }
        if worst <= 1e-9 {
            Ok(format!("max |polynomial - matrix| {worst:.2e}"))
        } else {
            Err(format!("max |polynomial - matrix| {worst:.2e}"))
        }
    }));
    out.push(check("coding/bottom-submatrix", {
        let mut min_det = f64::INFINITY;
        for t in 1..=t_max {
            for seed in 0..25 {
                let params = coding::generate_params(t, seed).unwrap();
                let diag = coding::bottom_submatrix_nonsingular(&params);
                min_det = min_det.min(diag.min_abs_det);
                if !diag.invertible {
                    return vec![check(
                        "coding/bottom-submatrix",
                        Err(format!("singular at t={t} seed={seed}")),
                    )];
                }
            }
        }
        Ok(format!("min |det| {min_det:.3e} over the sweep"))
    }));
    out.push(check("coding/duplicated-beta-detected", {
        let params = coding::generate_params(2, 0).unwrap().corrupt_duplicate_beta();
        let diag = coding::bottom_submatrix_nonsingular(&params);
        if diag.invertible {
            Err("corrupt fixture not detected".into())
        } else {
            Ok(format!("det {:.1e} flagged as singular", diag.min_abs_det))
        }
    }));
    out
}

fn suite_nn() -> Vec<SuiteOutcome> {
    let mut out = Vec::new();
    out.push(check("nn/split-central-equality", {
        // random graphs: protocol-form layer equals the centralized rule
        let mut worst: f64 = 0.0;
        for seed in 0..4 {
            let g = synthetic_graph(24, 8, 2, seed);
            let params = nn::ModelParams::init_glorot(Arch::Gcn, &[8, 5, 3], seed);
            let trace = nn::centralized_gcn_forward(&g, &params, 1).unwrap();
            let adj = nn::InNeighbors::from_graph(&g);
            for u in 0..g.num_nodes {
                let mut agg = vec![0.0; 8];
                for &v in adj.of(u) {
                    let s = nn::source_side(g.feature_row(v as usize), adj.degree[v as usize]);
                    for (a, b) in agg.iter_mut().zip(&s) {
                        *a += b;
                    }
                }
                let z = nn::target_side(&agg, adj.degree[u], &params.layers[0].w, &params.layers[0].b)
                    .unwrap();
                for (a, b) in z.iter().zip(trace.pre_activations[0].row(u)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        if worst <= 1e-9 {
            Ok(format!("max deviation {worst:.2e}"))
        } else {
            Err(format!("max deviation {worst:.2e}"))
        }
    }));
    out.push(check("nn/finite-difference", {
        let g = synthetic_graph(10, 5, 2, 77);
        let params = nn::ModelParams::init_glorot(Arch::Gcn, &[5, 4, 2], 7);
        let features = nn::Matrix {
            rows: g.num_nodes,
            cols: g.num_features,
            data: g.features.clone(),
        };
        let adj = nn::InNeighbors::from_graph(&g);
        let trace = nn::centralized_forward(&features, &adj, &params, 1).unwrap();
        let node = 4u32;
        let label = 1u32;
        let analytic = nn::local_gradients(&trace, node, label, &params)
            .unwrap()
            .flatten();
        let others = nn::other_contributions(&trace, node);
        let mut p = params.clone();
        let mut flat = Vec::new();
        p.flatten_into(&mut flat);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..flat.len()).step_by(3) {
            let orig = flat[i];
            flat[i] = orig + eps;
            p.unflatten_from(&flat);
            let up = nn::device_local_loss(
                &p,
                g.feature_row(node as usize),
                &others,
                adj.degree[node as usize],
                adj.self_loop[node as usize],
                label,
            );
            flat[i] = orig - eps;
            p.unflatten_from(&flat);
            let down = nn::device_local_loss(
                &p,
                g.feature_row(node as usize),
                &others,
                adj.degree[node as usize],
                adj.self_loop[node as usize],
                label,
            );
            flat[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max((analytic[i] - fd).abs() / denom);
        }
        if worst <= 1e-4 {
            Ok(format!("worst relative gap {worst:.2e}"))
        } else {
            Err(format!("worst relative gap {worst:.2e} exceeds 1e-4"))
        }
    }));
    out
}

fn suite_secmp() -> Vec<SuiteOutcome> {
    let mut out = Vec::new();
    out.push(check("secmp/oracle-equivalence", {
        let mut worst: f64 = 0.0;
        for seed in 0..4 {
            let g = synthetic_graph(20, 6, 3, seed);
            let model = nn::ModelParams::init_glorot(Arch::Gcn, &[6, 4, 2], seed + 1);
            let models = vec![model.clone(); g.num_silos];
            let mut proto = secmp::ProtocolState::new(&g, secmp::SecmpOptions::default()).unwrap();
            let features = nn::Matrix {
                rows: g.num_nodes,
                cols: g.num_features,
                data: g.features.clone(),
            };
            let trace = proto.full_forward(&features, &models, 0).unwrap();
            let oracle = nn::centralized_gcn_forward(&g, &model, 1).unwrap();
            for (a, b) in trace.logits().data.iter().zip(&oracle.logits().data) {
                worst = worst.max((a - b).abs());
            }
        }
        if worst <= 1e-5 {
            Ok(format!("max |delta logit| {worst:.2e}"))
        } else {
            Err(format!("max |delta logit| {worst:.2e} exceeds 1e-5"))
        }
    }));
    out.push(check("secmp/ledger-closed-form", {
        let g = synthetic_graph(16, 4, 2, 5);
        let model = nn::ModelParams::init_glorot(Arch::Gcn, &[4, 3, 2], 2);
        let models = vec![model.clone(); g.num_silos];
        let mut proto = secmp::ProtocolState::new(&g, secmp::SecmpOptions::default()).unwrap();
        let features = nn::Matrix {
            rows: g.num_nodes,
            cols: g.num_features,
            data: g.features.clone(),
        };
        proto.full_forward(&features, &models, 0).unwrap();
        let shape = metrics::CommShape::from_graph(&g, vec![4, 3], 1, model.param_count(), 1, 0);
        let report = metrics::comm_report(&proto.ledger, &shape);
        let device_checks_green = report.checks[0].matches && report.checks[2].matches;
        if device_checks_green {
            Ok("device-device and device-silo match exactly".into())
        } else {
            Err(metrics::render_comm_table(&report))
        }
    }));
    out.push(check("secmp/worker-determinism", {
        let g = synthetic_graph(18, 5, 2, 9);
        let model = nn::ModelParams::init_glorot(Arch::Gcn, &[5, 4, 2], 3);
        let models = vec![model.clone(); g.num_silos];
        let features = nn::Matrix {
            rows: g.num_nodes,
            cols: g.num_features,
            data: g.features.clone(),
        };
        let run = |workers| {
            let mut proto = secmp::ProtocolState::new(
                &g,
                secmp::SecmpOptions {
                    workers,
                    ..Default::default()
                },
            )
            .unwrap();
            proto.full_forward(&features, &models, 0).unwrap().logits().data.clone()
        };
        if run(1) == run(4) {
            Ok("bitwise identical at 1 and 4 workers".into())
        } else {
            Err("logits differ across worker counts".into())
        }
    }));
    out
}

/// Random partitioned, normalized graph for selftests.
fn synthetic_graph(n: usize, f: usize, silos: usize, seed: u64) -> FederatedGraph {
    let mut stream = rng::stream(seed ^ 0x5EED);
    let features: Vec<f64> = (0..n * f).map(|_| rng::uniform_sym(&mut stream)).collect();
    let labels: Vec<u32> = (0..n).map(|_| (rng::uniform_sym(&mut stream) > 0.0) as u32).collect();
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in 0..n as u32 {
            if u != v && rng::uniform_sym(&mut stream) > 0.7 {
                edges.push((u, v));
            }
        }
    }
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
    let g = graph::partition_random(&g, silos, seed).unwrap();
    graph::normalize_structure(&g, true, true)
}

fn cmd_selftest(args: SelftestArgs) -> Result<i32, CliError> {
    if args.t == 0 {
        return Err(CliError::User("--t must be >= 1".into()));
    }
    let run_coding = args.suite.as_deref().is_none_or(|s| s == "coding");
    let run_nn = args.suite.as_deref().is_none_or(|s| s == "nn");
    let run_secmp = args.suite.as_deref().is_none_or(|s| s == "secmp");
    if let Some(s) = &args.suite {
        if !["coding", "nn", "secmp"].contains(&s.as_str()) {
            return Err(CliError::User(format!(
                "unknown suite {s:?} (expected coding|nn|secmp)"
            )));
        }
    }
    let mut outcomes = Vec::new();
    if run_coding {
        outcomes.extend(suite_coding(args.t));
    }
    if run_nn {
        outcomes.extend(suite_nn());
    }
    if run_secmp {
        outcomes.extend(suite_secmp());
    }
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{} {:<32} {}",
            if o.passed { "ok  " } else { "FAIL" },
            o.name,
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    let _ = std::io::stdout().flush();
    if failed == 0 {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Invariant(format!("{failed} selftest checks failed")))
    }
}
