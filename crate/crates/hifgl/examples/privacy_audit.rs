//! The cross-boundary payload audit: what each tier of the hierarchy
//! actually receives during a protocol round, the single-real-neighbor
//! exposures that remain without noise, and how the detector reacts to a
//! payload that should never exist.
//!
//! ```bash
//! cargo run --release --example privacy_audit
//! ```

use hifgl::graph;
use hifgl::nn::{Arch, Matrix, ModelParams};
use hifgl::secmp::{Audit, Endpoint, PayloadKind, ProtocolState, SecmpOptions};

fn star_graph() -> graph::FederatedGraph {
    // hub node 0 with three leaves: every leaf has exactly one real neighbor
    let g = graph::FederatedGraph {
        num_nodes: 4,
        num_features: 2,
        num_classes: 2,
        features: vec![0.2, 0.8, 0.9, 0.1, 0.7, 0.3, 0.4, 0.6],
        labels: vec![0, 1, 1, 0],
        edges: vec![(0, 1), (0, 2), (0, 3)],
        node_keys: (0..4).map(|i| format!("n{i}")).collect(),
        label_names: vec!["a".into(), "b".into()],
        silo_of: vec![0, 0, 1, 1],
        num_silos: 2,
        split_of: vec![graph::Split::Train; 4],
        dropped_edges: 0,
        duplicate_edges: 0,
    };
    graph::normalize_structure(&g, true, true)
}

fn main() {
    let g = star_graph();
    let model = ModelParams::init_glorot(Arch::Gcn, &[2, 4, 2], 0);
    let models = vec![model.clone(); 2];
    let features = Matrix {
        rows: g.num_nodes,
        cols: g.num_features,
        data: g.features.clone(),
    };

    let mut proto = ProtocolState::new(&g, SecmpOptions::default()).unwrap();
    proto.audit = Audit::with_lines();
    proto.full_forward(&features, &models, 0).unwrap();

    println!("channel summary after one protocol round:");
    for c in proto.audit.channels() {
        println!(
            "  {:?} -> {:?} {:?}: {} messages, {} scalars",
            c.src, c.dst, c.payload, c.messages, c.scalars
        );
    }
    println!(
        "violations: {} | single-neighbor exposures: {} (nodes {:?})",
        proto.audit.violations.len(),
        proto.audit.single_neighbor_events,
        proto.audit.single_neighbor_nodes
    );
    assert!(proto.audit.violations.is_empty());
    assert!(proto.audit.single_neighbor_events > 0);

    println!("\nfirst audit lines:");
    for line in proto.audit.lines.as_ref().unwrap().iter().take(6) {
        println!("  {line}");
    }

    // with noise enabled the exposed aggregates are perturbed, not flagged
    let mut noisy = ProtocolState::new(
        &g,
        SecmpOptions {
            dp_sigma: 0.5,
            ..Default::default()
        },
    )
    .unwrap();
    noisy.full_forward(&features, &models, 0).unwrap();
    println!(
        "\nwith dp_sigma = 0.5: single-neighbor exposures flagged: {}",
        noisy.audit.single_neighbor_events
    );
    assert_eq!(noisy.audit.single_neighbor_events, 0);

    // the detector itself: a forbidden payload class addressed to a silo
    let mut audit = Audit::default();
    audit.record(0, 0, Endpoint::Device, Endpoint::Silo, PayloadKind::RawFeatures, 8);
    println!(
        "\ninjected a raw-feature payload to a silo -> violations recorded: {}",
        audit.violations.len()
    );
    assert_eq!(audit.violations.len(), 1);
}
