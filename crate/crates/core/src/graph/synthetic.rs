//! Small generated graphs for tests, demos and the acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Split};
use crate::rng::{self, Stream};
use crate::tensor::DenseMatrix;

/// Graph with a classified node `center` and a first-hop neighbor `leaf`
/// whose only connection is `center`.
#[derive(Clone, Debug)]
pub struct Gadget {
    pub graph: Graph,
    pub center: usize,
    pub leaf: usize,
}

/// Undirected, loop-free graph where node 1 hangs off node 0 and nothing
/// else. Node 0 also has two regular neighbors (2 and 3) with their own
/// neighbors (4 and 5), so the center's receptive field is not just the leaf.
///
/// ```text
///   1 ── 0 ── 2 ── 4
///        │
///        3 ── 5
/// ```
pub fn zero_gradient_gadget() -> Gadget {
    let features = DenseMatrix::from_rows(&[
        vec![1.0, 0.0, 0.5, 0.0],
        vec![0.0, 1.0, 0.0, 0.5],
        vec![0.2, 0.1, 1.0, 0.0],
        vec![0.0, 0.3, 0.2, 1.0],
        vec![0.5, 0.5, 0.0, 0.0],
        vec![0.1, 0.0, 0.4, 0.6],
    ])
    .expect("rectangular");
    let undirected = [(0, 1), (0, 2), (0, 3), (2, 4), (3, 5)];
    let edges = undirected
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    let labels = [0, 1, 0, 1, 0, 1].map(Some).to_vec();
    let graph = Graph::new(
        "gadget",
        features,
        edges,
        labels,
        vec![Some(Split::Train); 6],
        2,
        false,
    )
    .expect("gadget is well formed");
    Gadget {
        graph,
        center: 0,
        leaf: 1,
    }
}

/// Erdős–Rényi style graph with uniform features in `[-1, 1]`, random labels
/// and every node in the test split.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    nodes: usize,
    features: usize,
    classes: usize,
    edge_prob: f64,
    undirected: bool,
    self_loops: bool,
) -> Graph {
    let mut edges = Vec::new();
    for s in 0..nodes {
        for t in 0..nodes {
            if s == t || (undirected && t < s) {
                continue;
            }
            if rng.random_bool(edge_prob) {
                edges.push((s, t));
                if undirected {
                    edges.push((t, s));
                }
            }
        }
    }
    let data = (0..nodes * features)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let labels = (0..nodes)
        .map(|_| Some(rng.random_range(0..classes)))
        .collect();
    let g = Graph::new(
        "random",
        DenseMatrix::from_vec(nodes, features, data).expect("sized"),
        edges,
        labels,
        vec![Some(Split::Test); nodes],
        classes,
        false,
    )
    .expect("random graph is well formed");
    if self_loops {
        g.set_self_loops(true)
    } else {
        g
    }
}

/// Parameters of [`community_graph`].
#[derive(Clone, Debug)]
pub struct CommunityConfig {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub features: usize,
    /// edge probability inside a class
    pub p_in: f64,
    /// edge probability across classes
    pub p_out: f64,
    /// strength of the class block in the features
    pub signal: f64,
    /// chance that each feature of a node's own class block is on
    pub block_density: f64,
    /// fraction of feature entries switched on at random
    pub noise: f64,
    /// chance of each of up to two degree-one pendants per community node
    pub pendant_prob: f64,
    pub self_loops: bool,
    pub seed: u64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            nodes_per_class: 40,
            features: 24,
            p_in: 0.08,
            p_out: 0.01,
            signal: 1.0,
            block_density: 0.5,
            noise: 0.1,
            pendant_prob: 0.5,
            self_loops: true,
            seed: 0,
        }
    }
}

impl CommunityConfig {
    /// Citation-network-like statistics: 7 classes, 490 sparse binary
    /// features with about 13 active per node, roughly 3 same-class and 0.8
    /// cross-class neighbors per community node, and pendants on about a
    /// quarter of the community nodes.
    pub fn cora_like() -> Self {
        Self {
            classes: 7,
            nodes_per_class: 60,
            features: 490,
            p_in: 0.05,
            p_out: 0.0022,
            block_density: 0.1,
            noise: 0.015,
            pendant_prob: 0.15,
            ..Self::default()
        }
    }
}

/// Homophilous community graph with bag-of-words-like binary features and
/// planted pendant nodes.
///
/// Community nodes carry a noisy block of "on" features for their class and
/// are linked mostly within their class. Each community node may receive
/// pendant neighbors: degree-one nodes with noise-only features whose only
/// edge goes to their anchor. Pendants take the anchor's label but are not
/// in any split. Community nodes are split 30% train, 20% val, 50% test
/// within each class. Every feature row has at least one entry set.
pub fn community_graph(cfg: &CommunityConfig) -> Graph {
    let mut rng = rng::stream(cfg.seed, Stream::Synthetic, 0);
    let core = cfg.classes * cfg.nodes_per_class;
    let block = (cfg.features / cfg.classes).max(1);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for v in 0..core {
        let class = v % cfg.classes;
        let rank = v / cfg.classes;
        let mut row = vec![0.0; cfg.features];
        for (f, x) in row.iter_mut().enumerate() {
            let in_block = f / block == class;
            if (in_block && rng.random_bool(cfg.block_density)) || rng.random_bool(cfg.noise) {
                *x = if in_block { cfg.signal } else { 1.0 };
            }
        }
        if row.iter().all(|&x| x == 0.0) {
            row[(class * block + rng.random_range(0..block)).min(cfg.features - 1)] = cfg.signal;
        }
        rows.push(row);
        labels.push(Some(class));
        let frac = rank as f64 / cfg.nodes_per_class as f64;
        splits.push(Some(if frac < 0.3 {
            Split::Train
        } else if frac < 0.5 {
            Split::Val
        } else {
            Split::Test
        }));
    }

    let mut edges = Vec::new();
    for a in 0..core {
        for b in a + 1..core {
            let p = if a % cfg.classes == b % cfg.classes {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.random_bool(p) {
                edges.push((a, b));
                edges.push((b, a));
            }
        }
    }
    for anchor in 0..core {
        for _ in 0..2 {
            if rng.random_bool(cfg.pendant_prob) {
                let leaf = rows.len();
                let mut row: Vec<f64> = (0..cfg.features)
                    .map(|_| if rng.random_bool(cfg.noise) { 1.0 } else { 0.0 })
                    .collect();
                if row.iter().all(|&x| x == 0.0) {
                    row[rng.random_range(0..cfg.features)] = 1.0;
                }
                rows.push(row);
                labels.push(labels[anchor]);
                splits.push(None);
                edges.push((anchor, leaf));
                edges.push((leaf, anchor));
            }
        }
    }

    let g = Graph::new(
        "community",
        DenseMatrix::from_rows(&rows).expect("rectangular"),
        edges,
        labels,
        splits,
        cfg.classes,
        false,
    )
    .expect("community graph is well formed");
    if cfg.self_loops {
        g.set_self_loops(true)
    } else {
        g
    }
}
