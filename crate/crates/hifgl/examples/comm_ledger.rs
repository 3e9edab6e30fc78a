//! Communication accounting against the closed forms: per directed edge per
//! layer `d*(T+1)` scalars plus a one-time `3T+2` parameter relay, a
//! `d*(T+1) + d` device/silo round trip per node per layer, and `2*xi` per
//! silo per round on the server channel.
//!
//! ```bash
//! cargo run --release --example comm_ledger
//! ```

use hifgl::federation::{self, FedScheme, TrainConfig};
use hifgl::graph;
use hifgl::metrics;
use hifgl::nn::Arch;
use hifgl::rng;

fn main() {
    // mid-size synthetic graph, 3 silos
    let n = 60;
    let f = 12;
    let mut stream = rng::stream(5);
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in 0..n as u32 {
            if u != v && rng::uniform_sym(&mut stream) > 0.8 {
                edges.push((u, v));
            }
        }
    }
    let g = graph::FederatedGraph {
        num_nodes: n,
        num_features: f,
        num_classes: 3,
        features: (0..n * f).map(|_| rng::uniform_sym(&mut stream)).collect(),
        labels: (0..n).map(|i| (i % 3) as u32).collect(),
        edges,
        node_keys: (0..n).map(|i| format!("n{i}")).collect(),
        label_names: vec!["a".into(), "b".into(), "c".into()],
        silo_of: Vec::new(),
        num_silos: 0,
        split_of: Vec::new(),
        dropped_edges: 0,
        duplicate_edges: 0,
    };
    let g = graph::partition_random(&g, 3, 1).unwrap();

    let cfg = TrainConfig {
        arch: Arch::Gcn,
        fed_scheme: FedScheme::Hifgl,
        epochs: 4,
        hidden_dim: 8,
        t_privacy: 2,
        lr: 0.01,
        ..Default::default()
    };
    let out = federation::train(&cfg, &g).unwrap();

    let working = graph::normalize_structure(&g, cfg.symmetrize, cfg.self_loops);
    let shape = metrics::CommShape::from_graph(
        &working,
        out.layer_dims[..out.layer_dims.len() - 1].to_vec(),
        cfg.t_privacy,
        out.param_count,
        out.rounds_run as u64,
        out.rounds_run as u64,
    );
    let report = metrics::comm_report(&out.ledger, &shape);
    print!("{}", metrics::render_comm_table(&report));
    println!(
        "directed edges {} | layers {:?} | T {} | xi {} | rounds {}",
        shape.directed_edges, shape.layer_in_dims, cfg.t_privacy, out.param_count, out.rounds_run
    );
    println!("all checks green: {}", report.all_green);
    assert!(report.all_green);

    // the per-edge instance: T=1, d=16 costs 3T+2 + d(T+1) = 37 scalars once
    let t = 1u64;
    let d = 16u64;
    println!(
        "one fresh edge at T=1, d=16: {} + {} = {} scalars",
        3 * t + 2,
        d * (t + 1),
        3 * t + 2 + d * (t + 1)
    );
}
