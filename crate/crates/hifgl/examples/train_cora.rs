//! End-to-end federated training on Cora: loads the dataset, partitions it
//! into 5 silos, trains with the selected scheme and prints the history tail
//! plus the best-validation test accuracy.
//!
//! ```bash
//! cargo run --release --example train_cora -- hifgl gcn 50 0
//! ```

use std::path::PathBuf;

use hifgl::federation::{self, FedScheme, TrainConfig};
use hifgl::graph;
use hifgl::nn::Arch;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scheme: FedScheme = args.get(1).map_or(Ok(FedScheme::Hifgl), |s| s.parse()).unwrap();
    let arch: Arch = args.get(2).map_or(Ok(Arch::Gcn), |s| s.parse()).unwrap();
    let epochs: usize = args.get(3).map_or(50, |s| s.parse().unwrap());
    let seed: u64 = args.get(4).map_or(0, |s| s.parse().unwrap());

    let content = data_dir().join("cora.content.gz");
    let cites = data_dir().join("cora.cites.gz");
    if !content.exists() {
        eprintln!(
            "missing dataset: expected {} - put the gzipped content/cites files under data/",
            content.display()
        );
        std::process::exit(1);
    }

    let started = std::time::Instant::now();
    let mut g = graph::load_dataset(&content, &cites).expect("load cora");
    g.normalize_features_l1();
    let g = graph::partition_random(&g, 5, seed).expect("partition");
    println!(
        "cora: {} nodes, {} features, {} classes, {} edges ({} silos)",
        g.num_nodes,
        g.num_features,
        g.num_classes,
        g.edges.len(),
        g.num_silos
    );

    let cfg = TrainConfig {
        arch,
        fed_scheme: scheme,
        epochs,
        seed,
        workers: 2,
        ..Default::default()
    };
    let out = federation::train(&cfg, &g).expect("train");
    for r in out.history.iter().rev().take(3).collect::<Vec<_>>().iter().rev() {
        println!(
            "round {:>3}: train_loss {:.4} val_acc {:.4} test_acc {:.4}",
            r.round, r.train_loss, r.val_acc, r.test_acc
        );
    }
    println!(
        "{scheme}-{arch}: best round {} val {:.4} test {:.4} ({} rounds, {:.1}s)",
        out.best_round,
        out.best_val_acc,
        out.best_test_acc,
        out.rounds_run,
        started.elapsed().as_secs_f64()
    );
    println!(
        "ledger: device-device {} (params {}), device-silo {}, silo-server {}",
        out.ledger.device_device_scalars,
        out.ledger.param_request_scalars,
        out.ledger.device_silo_scalars,
        out.ledger.silo_server_scalars
    );
    if out.single_neighbor_events > 0 {
        println!(
            "audit: {} single-neighbor exposures flagged, {} violations",
            out.single_neighbor_events, out.audit_violations
        );
    }
}
