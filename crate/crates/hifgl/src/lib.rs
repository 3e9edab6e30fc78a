//! Hierarchical federated graph learning over a three-tier client hierarchy
//! (server / silo-clients / device-clients), with secret message passing.
//!
//! The crate simulates federated GNN training on a citation graph that is
//! partitioned across silos while every node (a device) keeps its feature,
//! label and neighbor list private. Cross-device messages are protected by
//! Lagrange-coded masking: a device never sees a neighbor's plain embedding,
//! and a silo only ever decodes aggregated sums. Transport is simulated, with
//! exact per-channel scalar accounting.
//!
//! Module map:
//!
//! - [`coding`] - Lagrange coded computing over real vectors: parameter
//!   generation, polynomial encoding, aggregation-compatible decoding, and
//!   encoding-matrix diagnostics.
//! - [`graph`] - dataset ingestion (content/cites text layout), random silo
//!   partitioning, ego-graph construction, and structural leakage statistics.
//! - [`nn`] - dense kernels, split-form GCN / mean-aggregator layers, MLP,
//!   loss and gradients, plus a centralized forward oracle.
//! - [`secmp`] - the secret message passing engine: privatized message,
//!   secure aggregation, neighbor-agnostic update, communication ledger and
//!   privacy audit.
//! - [`federation`] - the training loop: silo-side updates, FedAvg/FedProx,
//!   Local/Global baselines, evaluation.
//! - [`metrics`] - graph information gain, communication/space conformance
//!   reports.
//! - [`cli`] - the `hifgl` binary: `partition`, `train`, `report`,
//!   `selftest` subcommands.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --release --example lcc_roundtrip
//! cargo run --release --example encoding_matrix
//! cargo run --release --example partition_and_leakage
//! cargo run --release --example secmp_vs_centralized
//! cargo run --release --example gradient_check
//! cargo run --release --example privacy_audit
//! cargo run --release --example comm_ledger
//! cargo run --release --example train_cora
//! cargo run --release --example gain_report
//! ```
//!
//! The dataset-driven examples read the gzipped citation datasets from the
//! workspace `data/` directory and print where to put them if missing.

pub mod cli;
pub mod coding;
pub mod federation;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod secmp;

pub use coding::{CodingParams, ShareBundle};
pub use federation::{FedScheme, TrainConfig, TrainOutput};
pub use graph::{EgoGraph, FederatedGraph, FederatedSubgraph};
pub use nn::{Arch, ModelParams};
pub use secmp::{Audit, CommLedger};
