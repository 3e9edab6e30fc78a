//! Central finite differences against the analytic device-local gradients,
//! for every parameter tensor of every arch, under the stop-gradient
//! convention (whatever a device received from others is held fixed).
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use hifgl::graph;
use hifgl::nn::{self, Arch, Matrix, ModelParams};
use hifgl::rng;

fn random_graph(n: usize, f: usize, seed: u64) -> graph::FederatedGraph {
    let mut stream = rng::stream(seed);
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in 0..n as u32 {
            if u != v && rng::uniform_sym(&mut stream) > 0.5 {
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
        silo_of: vec![0; n],
        num_silos: 1,
        split_of: vec![graph::Split::Train; n],
        dropped_edges: 0,
        duplicate_edges: 0,
    };
    graph::normalize_structure(&g, true, true)
}

fn main() {
    let eps = 1e-5;
    for (arch, seed) in [(Arch::Gcn, 1u64), (Arch::Sage, 2), (Arch::Mlp, 3)] {
        let g = random_graph(12, 6, seed);
        let params = ModelParams::init_glorot(arch, &[6, 5, 3], seed);
        let features = Matrix {
            rows: g.num_nodes,
            cols: g.num_features,
            data: g.features.clone(),
        };
        let adj = nn::InNeighbors::from_graph(&g);
        let trace = nn::centralized_forward(&features, &adj, &params, 1).unwrap();
        let node = 5u32;
        let label = g.labels[node as usize];
        let analytic = nn::local_gradients(&trace, node, label, &params)
            .unwrap()
            .flatten();
        let others = nn::other_contributions(&trace, node);

        let mut p = params.clone();
        let mut flat = Vec::new();
        p.flatten_into(&mut flat);
        let mut worst = 0.0f64;
        for i in 0..flat.len() {
            let orig = flat[i];
            let mut probe = |delta: f64| {
                flat[i] = orig + delta;
                p.unflatten_from(&flat);
                nn::device_local_loss(
                    &p,
                    g.feature_row(node as usize),
                    &others,
                    adj.degree[node as usize],
                    adj.self_loop[node as usize],
                    label,
                )
            };
            let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
            flat[i] = orig;
            let rel = (analytic[i] - fd).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        p.unflatten_from(&flat);
        println!(
            "{arch}: {} parameters checked, worst relative gap {worst:.2e}",
            flat.len()
        );
        assert!(worst < 1e-4);
    }
}
