//! Random silo partitioning of a citation dataset and the structural
//! statistics a naive federation would expose: how many nodes have
//! cross-silo neighbors, and how many edges a drop-cross-edges scheme loses.
//!
//! ```bash
//! cargo run --release --example partition_and_leakage -- cora 5
//! ```

use std::path::PathBuf;

use hifgl::graph;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map_or("cora", String::as_str);
    let silos: usize = args.get(2).map_or(5, |s| s.parse().unwrap());

    let content = data_dir().join(format!("{name}.content.gz"));
    let cites = data_dir().join(format!("{name}.cites.gz"));
    if !content.exists() {
        eprintln!("missing {}; put the dataset under data/", content.display());
        std::process::exit(1);
    }
    let g = graph::load_dataset(&content, &cites).expect("load dataset");
    println!(
        "{name}: {} nodes, {} features, {} classes, {} unique undirected edges",
        g.num_nodes,
        g.num_features,
        g.num_classes,
        g.undirected_pairs().len()
    );

    let mut leak_sum = 0.0;
    let mut loss_sum = 0.0;
    let mut plain_sum = 0.0;
    let seeds = 10;
    for seed in 0..seeds {
        let p = graph::partition_random(&g, silos, seed).unwrap();
        let leak = graph::privacy_leakage(&p).unwrap();
        let loss = graph::edge_loss_stats(&p).unwrap();
        if seed == 0 {
            let mut sizes = vec![0usize; silos];
            for &s in &p.silo_of {
                sizes[s as usize] += 1;
            }
            println!("seed 0 silo sizes: {sizes:?}");
            println!(
                "seed 0 per-silo leakage counts {:?} intra {:?} cross {}",
                leak.per_silo_count, loss.intra_per_silo, loss.cross_total
            );
        }
        leak_sum += leak.mean_fraction;
        loss_sum += loss.loss_ratio;
        plain_sum += loss.cross_fraction;
    }
    println!(
        "{seeds}-seed means: leakage {:.4}, silo-view edge loss {:.4}, plain cross fraction {:.4}",
        leak_sum / seeds as f64,
        loss_sum / seeds as f64,
        plain_sum / seeds as f64
    );
}
