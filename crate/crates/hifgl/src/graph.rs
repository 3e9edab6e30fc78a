//! Federated graph construction and structural privacy statistics.
//!
//! Datasets arrive in the classic whitespace-delimited citation layout: a
//! `content` file with one `node_key <features...> <label>` line per node and
//! a `cites` file with one `cited_key citing_key` line per edge (stored as a
//! directed edge from the citing node to the cited node). Files ending in
//! `.gz` are read through a gzip decoder transparently.
//!
//! Partitioning assigns nodes to silos by a seeded shuffle into near-equal
//! blocks, then splits each silo 6/2/2 into train/val/test. The structural
//! statistics quantify what a naive federation would expose: how many nodes
//! have at least one neighbor outside their silo, and how many edges a
//! drop-cross-edges scheme loses.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("content file {path} has rows with {got} features, expected {expected}")]
    FeatureCount {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cannot split {nodes} nodes into {silos} silos")]
    TooManySilos { nodes: usize, silos: usize },
    #[error("graph is not partitioned; call partition_random first")]
    Unpartitioned,
}

/// Train/val/test membership of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// The global graph the simulator partitions: dense node ids, a row-major
/// feature matrix, class labels, directed edges, and (once partitioned) the
/// silo assignment and train/val/test split.
#[derive(Debug, Clone)]
pub struct FederatedGraph {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    /// Row-major `num_nodes x num_features`.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    /// Directed `(src, dst)` pairs, deduplicated.
    pub edges: Vec<(u32, u32)>,
    /// Original node keys from the content file, by dense id.
    pub node_keys: Vec<String>,
    /// Label names in first-appearance order, indexed by class id.
    pub label_names: Vec<String>,
    /// Empty until partitioned.
    pub silo_of: Vec<u32>,
    pub num_silos: usize,
    pub split_of: Vec<Split>,
    /// Count of cites rows referencing unknown node keys (dropped).
    pub dropped_edges: usize,
    /// Count of exact duplicate edge rows removed.
    pub duplicate_edges: usize,
}

impl FederatedGraph {
    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.features[node * self.num_features..(node + 1) * self.num_features]
    }

    pub fn is_partitioned(&self) -> bool {
        self.num_silos > 0 && self.silo_of.len() == self.num_nodes
    }

    fn require_partition(&self) -> Result<(), GraphError> {
        if self.is_partitioned() {
            Ok(())
        } else {
            Err(GraphError::Unpartitioned)
        }
    }

    /// Nodes of one silo in ascending id order.
    pub fn silo_nodes(&self, silo: u32) -> Vec<u32> {
        (0..self.num_nodes as u32)
            .filter(|&v| self.silo_of[v as usize] == silo)
            .collect()
    }

    /// Unique undirected node pairs (u < v), self-loops excluded. This is the
    /// edge universe the structural statistics are computed over, so that
    /// symmetrization and self-loop insertion do not change them.
    pub fn undirected_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs: Vec<(u32, u32)> = self
            .edges
            .iter()
            .filter(|(u, v)| u != v)
            .map(|&(u, v)| if u < v { (u, v) } else { (v, u) })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// In-place L1 row normalization of the feature matrix (rows scaled to
    /// sum 1; zero rows left untouched). Standard preprocessing for
    /// bag-of-words citation features.
    pub fn normalize_features_l1(&mut self) {
        for row in 0..self.num_nodes {
            let s: f64 = self.feature_row(row).iter().sum();
            if s > 0.0 {
                let inv = 1.0 / s;
                for v in
                    &mut self.features[row * self.num_features..(row + 1) * self.num_features]
                {
                    *v *= inv;
                }
            }
        }
    }

    /// In-place L2 row normalization (rows scaled to unit euclidean norm).
    pub fn normalize_features_l2(&mut self) {
        for row in 0..self.num_nodes {
            let s: f64 = self
                .feature_row(row)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if s > 0.0 {
                let inv = 1.0 / s;
                for v in
                    &mut self.features[row * self.num_features..(row + 1) * self.num_features]
                {
                    *v *= inv;
                }
            }
        }
    }
}

/// One device's private record: its feature, label, and directed neighbor
/// lists with the silo each neighbor belongs to.
#[derive(Debug, Clone)]
pub struct EgoGraph {
    pub node_id: u32,
    pub feature: Vec<f64>,
    pub label: u32,
    /// Nodes with an edge into this node, as `(node_id, silo_id)`.
    pub in_neighbors: Vec<(u32, u32)>,
    /// Nodes this node has an edge to, as `(node_id, silo_id)`.
    pub out_neighbors: Vec<(u32, u32)>,
    /// |N| after normalization (in-degree, self-loop included).
    pub degree: usize,
}

impl EgoGraph {
    /// In-neighbors other than the node itself.
    pub fn real_in_neighbors(&self) -> impl Iterator<Item = &(u32, u32)> {
        let me = self.node_id;
        self.in_neighbors.iter().filter(move |(v, _)| *v != me)
    }
}

/// What a silo is allowed to know about its subgraph: device identities only.
/// The type deliberately carries no features, labels or adjacency.
#[derive(Debug, Clone, Serialize)]
pub struct FederatedSubgraph {
    pub silo_id: u32,
    pub device_ids: Vec<u32>,
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>, GraphError> {
    let file = File::open(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(reader)))
}

/// Load a content/cites dataset. Nodes are reindexed densely in file order,
/// label strings become class ids in first-appearance order, and cites rows
/// naming unknown keys are dropped (counted in `dropped_edges`).
pub fn load_dataset(content_path: &Path, cites_path: &Path) -> Result<FederatedGraph, GraphError> {
    let mut node_keys = Vec::new();
    let mut key_to_id: HashMap<String, u32> = HashMap::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut label_ids: HashMap<String, u32> = HashMap::new();
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut num_features = usize::MAX;

    let content_name = content_path.display().to_string();
    for (lineno, line) in open_maybe_gz(content_path)?.lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: content_name.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts
            .next()
            .ok_or_else(|| GraphError::Parse {
                path: content_name.clone(),
                line: lineno + 1,
                msg: "missing node key".into(),
            })?
            .to_string();
        let fields: Vec<&str> = parts.collect();
        if fields.is_empty() {
            return Err(GraphError::Parse {
                path: content_name.clone(),
                line: lineno + 1,
                msg: "missing label".into(),
            });
        }
        let (feat_fields, label_str) = fields.split_at(fields.len() - 1);
        if num_features == usize::MAX {
            num_features = feat_fields.len();
        } else if feat_fields.len() != num_features {
            return Err(GraphError::FeatureCount {
                path: content_name.clone(),
                expected: num_features,
                got: feat_fields.len(),
            });
        }
        for f in feat_fields {
            let v: f64 = f.parse().map_err(|_| GraphError::Parse {
                path: content_name.clone(),
                line: lineno + 1,
                msg: format!("bad feature value {f:?}"),
            })?;
            features.push(v);
        }
        let label = label_str[0];
        let label_id = *label_ids.entry(label.to_string()).or_insert_with(|| {
            label_names.push(label.to_string());
            (label_names.len() - 1) as u32
        });
        labels.push(label_id);
        let id = node_keys.len() as u32;
        key_to_id.insert(key.clone(), id);
        node_keys.push(key);
    }
    if node_keys.is_empty() {
        return Err(GraphError::EmptyDataset);
    }

    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut dropped = 0usize;
    let cites_name = cites_path.display().to_string();
    for (lineno, line) in open_maybe_gz(cites_path)?.lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: cites_name.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (cited, citing) = match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(GraphError::Parse {
                    path: cites_name.clone(),
                    line: lineno + 1,
                    msg: "expected `cited_key citing_key`".into(),
                })
            }
        };
        match (key_to_id.get(cited), key_to_id.get(citing)) {
            (Some(&c), Some(&g)) => edges.push((g, c)),
            _ => dropped += 1,
        }
    }
    let before = edges.len();
    edges.sort_unstable();
    edges.dedup();
    let duplicate_edges = before - edges.len();

    Ok(FederatedGraph {
        num_nodes: node_keys.len(),
        num_features,
        num_classes: label_names.len(),
        features,
        labels,
        edges,
        node_keys,
        label_names,
        silo_of: Vec::new(),
        num_silos: 0,
        split_of: Vec::new(),
        dropped_edges: dropped,
        duplicate_edges,
    })
}

/// Assign nodes to `num_silos` near-equal blocks by a seeded shuffle, then
/// split each silo 6/2/2 into train/val/test with a second seeded shuffle.
pub fn partition_random(
    g: &FederatedGraph,
    num_silos: usize,
    seed: u64,
) -> Result<FederatedGraph, GraphError> {
    if num_silos == 0 || num_silos > g.num_nodes {
        return Err(GraphError::TooManySilos {
            nodes: g.num_nodes,
            silos: num_silos,
        });
    }
    let mut out = g.clone();
    let mut perm: Vec<u32> = (0..g.num_nodes as u32).collect();
    let mut stream = rng::stream(rng::sub_seed(seed, "partition"));
    rng::shuffle(&mut stream, &mut perm);

    let base = g.num_nodes / num_silos;
    let rem = g.num_nodes % num_silos;
    let mut silo_of = vec![0u32; g.num_nodes];
    let mut pos = 0;
    let mut silo_members: Vec<Vec<u32>> = Vec::with_capacity(num_silos);
    for s in 0..num_silos {
        let size = base + usize::from(s < rem);
        let block = &perm[pos..pos + size];
        for &v in block {
            silo_of[v as usize] = s as u32;
        }
        silo_members.push(block.to_vec());
        pos += size;
    }

    let mut split_of = vec![Split::Train; g.num_nodes];
    let mut split_stream = rng::stream(rng::sub_seed(seed, "split"));
    for members in &mut silo_members {
        rng::shuffle(&mut split_stream, members);
        let n = members.len();
        let n_train = ((n as f64) * 0.6).round() as usize;
        let n_val = ((n as f64) * 0.2).round() as usize;
        for (i, &v) in members.iter().enumerate() {
            split_of[v as usize] = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    out.silo_of = silo_of;
    out.num_silos = num_silos;
    out.split_of = split_of;
    Ok(out)
}

/// Symmetrize and/or add self-loops, removing duplicates. Standard GCN
/// preprocessing; guarantees degree >= 1 so the 1/sqrt(|N|) terms are defined.
pub fn normalize_structure(
    g: &FederatedGraph,
    symmetrize: bool,
    add_self_loops: bool,
) -> FederatedGraph {
    let mut out = g.clone();
    let mut edges = g.edges.clone();
    if symmetrize {
        let reversed: Vec<(u32, u32)> = g.edges.iter().map(|&(u, v)| (v, u)).collect();
        edges.extend(reversed);
    }
    if add_self_loops {
        edges.extend((0..g.num_nodes as u32).map(|v| (v, v)));
    }
    edges.sort_unstable();
    edges.dedup();
    out.edges = edges;
    out
}

/// Keep only edges whose endpoints share a silo (the drop-cross-edges
/// baseline graph).
pub fn drop_cross_edges(g: &FederatedGraph) -> Result<FederatedGraph, GraphError> {
    g.require_partition()?;
    let mut out = g.clone();
    out.edges = g
        .edges
        .iter()
        .copied()
        .filter(|&(u, v)| g.silo_of[u as usize] == g.silo_of[v as usize])
        .collect();
    Ok(out)
}

/// Materialize every node's ego graph. The union of ego structures carries
/// exactly the graph's edge set: each directed edge appears in its source's
/// out-list and its target's in-list.
pub fn build_ego_graphs(g: &FederatedGraph) -> Result<Vec<EgoGraph>, GraphError> {
    g.require_partition()?;
    let mut egos: Vec<EgoGraph> = (0..g.num_nodes)
        .map(|v| EgoGraph {
            node_id: v as u32,
            feature: g.feature_row(v).to_vec(),
            label: g.labels[v],
            in_neighbors: Vec::new(),
            out_neighbors: Vec::new(),
            degree: 0,
        })
        .collect();
    for &(u, v) in &g.edges {
        let silo_u = g.silo_of[u as usize];
        let silo_v = g.silo_of[v as usize];
        egos[u as usize].out_neighbors.push((v, silo_v));
        egos[v as usize].in_neighbors.push((u, silo_u));
    }
    for ego in &mut egos {
        ego.degree = ego.in_neighbors.len();
    }
    Ok(egos)
}

/// Identity-only silo views.
pub fn federated_subgraphs(g: &FederatedGraph) -> Result<Vec<FederatedSubgraph>, GraphError> {
    g.require_partition()?;
    Ok((0..g.num_silos as u32)
        .map(|silo_id| FederatedSubgraph {
            silo_id,
            device_ids: g.silo_nodes(silo_id),
        })
        .collect())
}

/// How many of each silo's nodes have at least one neighbor in another silo.
#[derive(Debug, Clone, Serialize)]
pub struct LeakageReport {
    pub per_silo_count: Vec<usize>,
    pub per_silo_fraction: Vec<f64>,
    /// Mean of the per-silo fractions.
    pub mean_fraction: f64,
}

pub fn privacy_leakage(g: &FederatedGraph) -> Result<LeakageReport, GraphError> {
    g.require_partition()?;
    let mut exposed = vec![false; g.num_nodes];
    for &(u, v) in &g.edges {
        if u != v && g.silo_of[u as usize] != g.silo_of[v as usize] {
            exposed[u as usize] = true;
            exposed[v as usize] = true;
        }
    }
    let mut per_silo_count = vec![0usize; g.num_silos];
    let mut per_silo_size = vec![0usize; g.num_silos];
    for v in 0..g.num_nodes {
        let s = g.silo_of[v] as usize;
        per_silo_size[s] += 1;
        if exposed[v] {
            per_silo_count[s] += 1;
        }
    }
    let per_silo_fraction: Vec<f64> = per_silo_count
        .iter()
        .zip(&per_silo_size)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    let mean_fraction = per_silo_fraction.iter().sum::<f64>() / g.num_silos as f64;
    Ok(LeakageReport {
        per_silo_count,
        per_silo_fraction,
        mean_fraction,
    })
}

/// Fraction of unique undirected edges whose endpoints live in different
/// silos: `|cross| / |E|`.
pub fn cross_edge_loss(g: &FederatedGraph) -> Result<f64, GraphError> {
    g.require_partition()?;
    let pairs = g.undirected_pairs();
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let cross = pairs
        .iter()
        .filter(|&&(u, v)| g.silo_of[u as usize] != g.silo_of[v as usize])
        .count();
    Ok(cross as f64 / pairs.len() as f64)
}

/// Edge-loss statistics in the per-silo bookkeeping convention: intra edges
/// are tallied per silo (each silo sees only its own retained edge store)
/// while cross edges are a single global count. `loss_ratio` is the cross
/// total against cross total plus the per-silo mean intra count - the share
/// of visible edge records that dropping cross edges destroys, from one
/// silo's vantage point.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeLossStats {
    pub total_undirected: usize,
    pub cross_total: usize,
    pub intra_total: usize,
    pub intra_per_silo: Vec<usize>,
    pub intra_per_silo_mean: f64,
    /// cross / (cross + mean per-silo intra)
    pub loss_ratio: f64,
    /// cross / total - the plain fraction of edges crossing silos
    pub cross_fraction: f64,
}

pub fn edge_loss_stats(g: &FederatedGraph) -> Result<EdgeLossStats, GraphError> {
    g.require_partition()?;
    let pairs = g.undirected_pairs();
    let mut intra_per_silo = vec![0usize; g.num_silos];
    let mut cross_total = 0usize;
    for &(u, v) in &pairs {
        let (su, sv) = (g.silo_of[u as usize], g.silo_of[v as usize]);
        if su == sv {
            intra_per_silo[su as usize] += 1;
        } else {
            cross_total += 1;
        }
    }
    let intra_total: usize = intra_per_silo.iter().sum();
    let intra_per_silo_mean = intra_total as f64 / g.num_silos as f64;
    let denom = cross_total as f64 + intra_per_silo_mean;
    let loss_ratio = if denom == 0.0 {
        0.0
    } else {
        cross_total as f64 / denom
    };
    let cross_fraction = if pairs.is_empty() {
        0.0
    } else {
        cross_total as f64 / pairs.len() as f64
    };
    Ok(EdgeLossStats {
        total_undirected: pairs.len(),
        cross_total,
        intra_total,
        intra_per_silo,
        intra_per_silo_mean,
        loss_ratio,
        cross_fraction,
    })
}

/// Write the partition as JSON mapping node id to silo and split, keys in
/// ascending numeric order (written by hand so the byte layout is stable).
pub fn write_partition_json<W: Write>(g: &FederatedGraph, mut w: W) -> std::io::Result<()> {
    g.require_partition()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    writeln!(w, "{{")?;
    for v in 0..g.num_nodes {
        let comma = if v + 1 == g.num_nodes { "" } else { "," };
        writeln!(
            w,
            "  \"{}\": {{\"silo\": {}, \"split\": \"{}\"}}{}",
            v, g.silo_of[v], g.split_of[v], comma
        )?;
    }
    writeln!(w, "}}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;


    fn write_fixture(
        dir: &Path,
        content: &str,
        cites: &str,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let content_path = dir.join("toy.content");
        let cites_path = dir.join("toy.cites");
        File::create(&content_path)
            .unwrap()
            .write_all(content.as_bytes())
            .unwrap();
        File::create(&cites_path)
            .unwrap()
            .write_all(cites.as_bytes())
            .unwrap();
        (content_path, cites_path)
    }

    fn toy_graph() -> FederatedGraph {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(
            dir.path(),
            "a 1 0 red\nb 0 1 blue\nc 1 1 red\n",
            "a b\nb c\n",
        );
        load_dataset(&c, &e).unwrap()
    }

    /// Path graph 1-2-3-4 (keys n1..n4), silos {n1,n2} and {n3,n4}.
    fn path_graph_two_silos() -> FederatedGraph {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(
            dir.path(),
            "n1 1 x\nn2 1 x\nn3 1 y\nn4 1 y\n",
            "n1 n2\nn2 n3\nn3 n4\n",
        );
        let mut g = load_dataset(&c, &e).unwrap();
        g.silo_of = vec![0, 0, 1, 1];
        g.num_silos = 2;
        g.split_of = vec![Split::Train; 4];
        g
    }

    #[test]
    fn load_toy_fixture() {
        let g = toy_graph();
        assert_eq!(g.num_nodes, 3);
        assert_eq!(g.num_features, 2);
        assert_eq!(g.num_classes, 2);
        assert_eq!(g.edges.len(), 2);
        // labels in first-appearance order: red=0, blue=1
        assert_eq!(g.labels, vec![0, 1, 0]);
        // cites line `a b` means b cites a: edge b -> a
        assert!(g.edges.contains(&(1, 0)));
        assert!(g.edges.contains(&(2, 1)));
    }

    #[test]
    fn load_drops_unknown_keys_with_counter() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(dir.path(), "a 1 red\nb 0 blue\n", "a b\na ghost\n");
        let g = load_dataset(&c, &e).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.dropped_edges, 1);
    }

    #[test]
    fn load_rejects_inconsistent_feature_count() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(dir.path(), "a 1 0 red\nb 1 blue\n", "a b\n");
        assert!(matches!(
            load_dataset(&c, &e),
            Err(GraphError::FeatureCount { .. })
        ));
    }

    #[test]
    fn load_rejects_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(dir.path(), "", "");
        assert!(matches!(load_dataset(&c, &e), Err(GraphError::EmptyDataset)));
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.content");
        let (c, _) = write_fixture(dir.path(), "a 1 red\n", "");
        assert!(matches!(
            load_dataset(&missing, &c),
            Err(GraphError::Io { .. })
        ));
    }

    #[test]
    fn duplicate_rows_dedup_with_counter() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(dir.path(), "a 1 red\nb 0 blue\n", "a b\na b\n");
        let g = load_dataset(&c, &e).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.duplicate_edges, 1);
    }

    #[test]
    fn partition_sizes_near_equal() {
        let dir = tempfile::tempdir().unwrap();
        let content: String = (0..10).map(|i| format!("n{i} 1 c{}\n", i % 2)).collect();
        let (c, e) = write_fixture(dir.path(), &content, "");
        let g = load_dataset(&c, &e).unwrap();
        let p = partition_random(&g, 3, 1).unwrap();
        let mut sizes = vec![0usize; 3];
        for &s in &p.silo_of {
            sizes[s as usize] += 1;
        }
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn partition_single_silo_no_cross_edges() {
        let g = toy_graph();
        let p = partition_random(&g, 1, 0).unwrap();
        assert!(p.silo_of.iter().all(|&s| s == 0));
        assert_eq!(cross_edge_loss(&p).unwrap(), 0.0);
        let leak = privacy_leakage(&p).unwrap();
        assert_eq!(leak.per_silo_count, vec![0]);
        assert_eq!(leak.mean_fraction, 0.0);
    }

    #[test]
    fn partition_rejects_more_silos_than_nodes() {
        let g = toy_graph();
        assert!(matches!(
            partition_random(&g, 4, 0),
            Err(GraphError::TooManySilos { .. })
        ));
    }

    #[test]
    fn partition_is_deterministic_and_covering() {
        let g = toy_graph();
        let a = partition_random(&g, 2, 9).unwrap();
        let b = partition_random(&g, 2, 9).unwrap();
        assert_eq!(a.silo_of, b.silo_of);
        assert_eq!(a.split_of, b.split_of);
        assert!(a.silo_of.iter().all(|&s| (s as usize) < 2));
    }

    #[test]
    fn split_is_six_two_two() {
        let dir = tempfile::tempdir().unwrap();
        let content: String = (0..100).map(|i| format!("n{i} 1 c\n")).collect();
        let (c, e) = write_fixture(dir.path(), &content, "");
        let g = load_dataset(&c, &e).unwrap();
        let p = partition_random(&g, 1, 3).unwrap();
        let train = p.split_of.iter().filter(|s| **s == Split::Train).count();
        let val = p.split_of.iter().filter(|s| **s == Split::Val).count();
        let test = p.split_of.iter().filter(|s| **s == Split::Test).count();
        assert_eq!((train, val, test), (60, 20, 20));
    }

    #[test]
    fn symmetrize_adds_reverse_edges() {
        let g = toy_graph();
        let n = normalize_structure(&g, true, false);
        assert!(n.edges.contains(&(0, 1)));
        assert!(n.edges.contains(&(1, 0)));
        assert_eq!(n.edges.len(), 4);
    }

    #[test]
    fn self_loops_give_isolated_nodes_degree_one() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(dir.path(), "a 1 red\nb 1 red\n", "");
        let mut g = load_dataset(&c, &e).unwrap();
        g.silo_of = vec![0, 0];
        g.num_silos = 1;
        g.split_of = vec![Split::Train; 2];
        let n = normalize_structure(&g, true, true);
        let egos = build_ego_graphs(&n).unwrap();
        assert_eq!(egos[0].degree, 1);
        assert_eq!(egos[1].degree, 1);
    }

    #[test]
    fn normalize_is_idempotent_on_symmetric_graphs() {
        let g = toy_graph();
        let once = normalize_structure(&g, true, true);
        let twice = normalize_structure(&once, true, true);
        assert_eq!(once.edges, twice.edges);
    }

    #[test]
    fn ego_graphs_reconstruct_edges_and_silo_pointers() {
        let g = path_graph_two_silos();
        let n = normalize_structure(&g, true, false);
        let egos = build_ego_graphs(&n).unwrap();
        // node n2 (id 1) has an out edge to n3 (id 2) in silo 1
        assert!(egos[1].out_neighbors.contains(&(2, 1)));
        // reconstruction: union of ego out-lists equals the edge set
        let mut reconstructed: Vec<(u32, u32)> = egos
            .iter()
            .flat_map(|ego| {
                ego.out_neighbors
                    .iter()
                    .map(move |&(v, _)| (ego.node_id, v))
            })
            .collect();
        reconstructed.sort_unstable();
        assert_eq!(reconstructed, n.edges);
    }

    #[test]
    fn ego_graphs_require_partition() {
        let g = toy_graph();
        assert!(matches!(
            build_ego_graphs(&g),
            Err(GraphError::Unpartitioned)
        ));
    }

    #[test]
    fn federated_subgraph_carries_identities_only() {
        let g = path_graph_two_silos();
        let subs = federated_subgraphs(&g).unwrap();
        assert_eq!(subs[0].device_ids, vec![0, 1]);
        assert_eq!(subs[1].device_ids, vec![2, 3]);
    }

    #[test]
    fn leakage_on_path_fixture() {
        // path 1-2-3-4, silos {1,2}/{3,4}: only the 2-3 edge crosses
        let g = path_graph_two_silos();
        let leak = privacy_leakage(&g).unwrap();
        assert_eq!(leak.per_silo_count, vec![1, 1]);
        assert_eq!(leak.per_silo_fraction, vec![0.5, 0.5]);
        assert!((leak.mean_fraction - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_edge_loss_path_fixture() {
        let g = path_graph_two_silos();
        assert!((cross_edge_loss(&g).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cross_edge_loss_bipartite_fixture_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let (c, e) = write_fixture(
            dir.path(),
            "a 1 x\nb 1 x\nc 1 y\nd 1 y\n",
            "a c\na d\nb c\n",
        );
        let mut g = load_dataset(&c, &e).unwrap();
        g.silo_of = vec![0, 0, 1, 1];
        g.num_silos = 2;
        g.split_of = vec![Split::Train; 4];
        assert_eq!(cross_edge_loss(&g).unwrap(), 1.0);
        let stats = edge_loss_stats(&g).unwrap();
        assert_eq!(stats.cross_total, 3);
        assert_eq!(stats.intra_total, 0);
        assert_eq!(stats.loss_ratio, 1.0);
    }

    #[test]
    fn stats_invariant_under_normalization() {
        let g = path_graph_two_silos();
        let n = normalize_structure(&g, true, true);
        assert_eq!(
            privacy_leakage(&g).unwrap().per_silo_count,
            privacy_leakage(&n).unwrap().per_silo_count
        );
        assert_eq!(cross_edge_loss(&g).unwrap(), cross_edge_loss(&n).unwrap());
    }

    #[test]
    fn partition_json_stable_bytes() {
        let g = path_graph_two_silos();
        let mut a = Vec::new();
        write_partition_json(&g, &mut a).unwrap();
        let mut b = Vec::new();
        write_partition_json(&g, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("\"0\": {\"silo\": 0, \"split\": \"train\"}"));
        serde_json::from_str::<serde_json::Value>(&text).unwrap();
    }

    #[test]
    fn l1_normalization_rows_sum_to_one() {
        let mut g = toy_graph();
        g.normalize_features_l1();
        for v in 0..g.num_nodes {
            let s: f64 = g.feature_row(v).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
