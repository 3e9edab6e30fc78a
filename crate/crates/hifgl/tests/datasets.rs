//! Dataset-level checks against the shipped citation files: loaded shapes,
//! silo block sizes, structural statistics, and ego-graph reconstruction at
//! full scale.

use std::path::PathBuf;

use hifgl::graph;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn load(name: &str) -> graph::FederatedGraph {
    graph::load_dataset(
        &data_dir().join(format!("{name}.content.gz")),
        &data_dir().join(format!("{name}.cites.gz")),
    )
    .expect("load dataset")
}

#[test]
fn cora_shape_and_silo_sizes() {
    let g = load("cora");
    assert_eq!(g.num_nodes, 2708);
    assert_eq!(g.num_features, 1433);
    assert_eq!(g.num_classes, 7);
    let p = graph::partition_random(&g, 5, 0).unwrap();
    let mut sizes = vec![0usize; 5];
    for &s in &p.silo_of {
        sizes[s as usize] += 1;
    }
    for &size in &sizes {
        assert!(size == 541 || size == 542, "silo sizes {sizes:?}");
    }
    assert_eq!(sizes.iter().sum::<usize>(), 2708);
}

#[test]
fn citeseer_and_pubmed_shapes() {
    let g = load("citeseer");
    assert_eq!(
        (g.num_nodes, g.num_features, g.num_classes),
        (3327, 3703, 6)
    );
    let g = load("pubmed");
    assert_eq!((g.num_nodes, g.num_features, g.num_classes), (19717, 500, 3));
}

#[test]
fn cora_leakage_in_reference_window() {
    let g = load("cora");
    let p = graph::partition_random(&g, 5, 0).unwrap();
    let leak = graph::privacy_leakage(&p).unwrap();
    assert!(
        (leak.mean_fraction - 0.9516).abs() < 0.03,
        "leakage {:.4}",
        leak.mean_fraction
    );
    // single silo leaks nothing
    let one = graph::partition_random(&g, 1, 0).unwrap();
    assert_eq!(graph::privacy_leakage(&one).unwrap().mean_fraction, 0.0);
    assert_eq!(graph::cross_edge_loss(&one).unwrap(), 0.0);
}

#[test]
fn cora_ego_graphs_reconstruct_edge_set() {
    let g = load("cora");
    let p = graph::partition_random(&g, 5, 0).unwrap();
    let n = graph::normalize_structure(&p, true, true);
    let egos = graph::build_ego_graphs(&n).unwrap();
    // intra + cross out-edges partition the edge set exactly
    let mut intra = 0usize;
    let mut cross = 0usize;
    let mut reconstructed: Vec<(u32, u32)> = Vec::with_capacity(n.edges.len());
    for ego in &egos {
        let my_silo = n.silo_of[ego.node_id as usize];
        for &(dst, dst_silo) in &ego.out_neighbors {
            reconstructed.push((ego.node_id, dst));
            if dst_silo == my_silo {
                intra += 1;
            } else {
                cross += 1;
            }
        }
    }
    reconstructed.sort_unstable();
    assert_eq!(reconstructed, n.edges);
    assert_eq!(intra + cross, n.edges.len());
    assert!(cross > 0 && intra > 0);
}

#[test]
fn loader_is_deterministic_over_gz_bytes() {
    let a = load("cora");
    let b = load("cora");
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.edges, b.edges);
    assert_eq!(a.node_keys, b.node_keys);
}
