//! Graphs, computational subgraphs and neighbor deletion.

mod io;
pub mod synthetic;

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_graph, save_graph, verify_checksums, write_checksums, Meta};

use crate::error::GraphError;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Node-classification graph with dense features.
///
/// Edges are directed `(source, target)` pairs; undirected datasets store
/// both directions. Messages flow from source to target.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    name: String,
    features: DenseMatrix,
    edges: Vec<(usize, usize)>,
    labels: Vec<Option<usize>>,
    splits: Vec<Option<Split>>,
    num_classes: usize,
    has_self_loops: bool,
    in_sources: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(
        name: impl Into<String>,
        features: DenseMatrix,
        edges: Vec<(usize, usize)>,
        labels: Vec<Option<usize>>,
        splits: Vec<Option<Split>>,
        num_classes: usize,
        has_self_loops: bool,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        let dim_err = |message: String| GraphError::DimensionMismatch {
            path: "<memory>".into(),
            message,
        };
        if labels.len() != n || splits.len() != n {
            return Err(dim_err(format!(
                "{n} feature rows but {} labels and {} split entries",
                labels.len(),
                splits.len()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= num_classes) {
            return Err(dim_err(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(GraphError::NonFinite {
                path: "<memory>".into(),
                line: 0,
            });
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut in_sources = vec![Vec::new(); n];
        for &(s, t) in &edges {
            for node in [s, t] {
                if node >= n {
                    return Err(GraphError::InvalidNode { node, num_nodes: n });
                }
            }
            if !seen.insert((s, t)) {
                return Err(GraphError::DuplicateEdge {
                    source_node: s,
                    target: t,
                });
            }
            in_sources[t].push(s);
        }
        let loops = edges.iter().filter(|(s, t)| s == t).count();
        if has_self_loops && loops != n {
            return Err(GraphError::SelfLoopMismatch {
                flag: true,
                message: format!("{loops} of {n} nodes carry a self-loop"),
            });
        }
        if !has_self_loops && loops != 0 {
            return Err(GraphError::SelfLoopMismatch {
                flag: false,
                message: format!("{loops} self-loops present"),
            });
        }
        Ok(Self {
            name: name.into(),
            features,
            edges,
            labels,
            splits,
            num_classes,
            has_self_loops,
            in_sources,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn splits(&self) -> &[Option<Split>] {
        &self.splits
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    /// Nodes assigned to `split`, ascending.
    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.splits[v] == Some(split))
            .collect()
    }

    /// Sources of the edges entering `node`.
    pub fn in_sources(&self, node: usize) -> &[usize] {
        &self.in_sources[node]
    }

    /// Total range of the feature values (max − min), 0 for empty graphs.
    pub fn feature_range(&self) -> f64 {
        let data = self.features.data();
        if data.is_empty() {
            return 0.0;
        }
        let (lo, hi) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    /// Whole-graph view for message passing.
    pub fn view(&self) -> GraphView<'_> {
        GraphView {
            features: &self.features,
            edges: &self.edges,
            in_degree: self.in_sources.iter().map(|s| s.len() as f64).collect(),
        }
    }

    /// Copy of the graph with all self-loops added (`enabled`) or removed.
    pub fn set_self_loops(&self, enabled: bool) -> Graph {
        let n = self.num_nodes();
        let mut edges: Vec<(usize, usize)> =
            self.edges.iter().copied().filter(|(s, t)| s != t).collect();
        if enabled {
            let mut has_loop = vec![false; n];
            for &(s, t) in &self.edges {
                if s == t {
                    has_loop[s] = true;
                }
            }
            // keep existing loops where they were; append the missing ones
            edges = self
                .edges
                .iter()
                .copied()
                .chain((0..n).filter(|&v| !has_loop[v]).map(|v| (v, v)))
                .collect();
        }
        let mut in_sources = vec![Vec::new(); n];
        for &(s, t) in &edges {
            in_sources[t].push(s);
        }
        Graph {
            name: self.name.clone(),
            features: self.features.clone(),
            edges,
            labels: self.labels.clone(),
            splits: self.splits.clone(),
            num_classes: self.num_classes,
            has_self_loops: enabled,
            in_sources,
        }
    }

    /// Same graph with different node features.
    pub fn with_features(&self, features: DenseMatrix) -> Result<Graph, GraphError> {
        if features.shape() != self.features.shape() {
            return Err(GraphError::DimensionMismatch {
                path: "<memory>".into(),
                message: format!(
                    "features {:?} do not match graph {:?}",
                    features.shape(),
                    self.features.shape()
                ),
            });
        }
        Ok(Graph {
            features,
            ..self.clone()
        })
    }

    /// Copy of the graph with `victims` and all their incident edges removed;
    /// the node ids of the remaining nodes are preserved by keeping victims
    /// as isolated, loop-free rows.
    pub fn without_nodes(&self, victims: &BTreeSet<usize>) -> Graph {
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .copied()
            .filter(|(s, t)| !victims.contains(s) && !victims.contains(t))
            .collect();
        let mut in_sources = vec![Vec::new(); self.num_nodes()];
        for &(s, t) in &edges {
            in_sources[t].push(s);
        }
        Graph {
            edges,
            in_sources,
            ..self.clone()
        }
    }

    /// Hop distance from every node to `center` along message-flow edges,
    /// limited to `hops`.
    fn distances_to(&self, center: usize, hops: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_nodes()];
        dist[center] = Some(0);
        let mut queue = VecDeque::from([center]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued nodes have a distance");
            if d == hops {
                continue;
            }
            for &u in &self.in_sources[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Computational subgraph of `center` for an `hops`-layer model.
    pub fn khop_subgraph(&self, center: usize, hops: usize) -> Result<Subgraph, GraphError> {
        let n = self.num_nodes();
        if center >= n {
            return Err(GraphError::InvalidNode {
                node: center,
                num_nodes: n,
            });
        }
        let dist = self.distances_to(center, hops);
        let nodes: Vec<usize> = (0..n).filter(|&v| dist[v].is_some()).collect();
        let mut local = vec![usize::MAX; n];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }

        let mut edges = Vec::new();
        let mut aux_edges = Vec::new();
        let mut outside_in_degree = vec![0usize; nodes.len()];
        for &(s, t) in &self.edges {
            let Some(dt) = dist[t] else { continue };
            if dist[s].is_none() {
                outside_in_degree[local[t]] += 1;
            } else if dt < hops {
                edges.push((local[s], local[t]));
            } else {
                aux_edges.push((local[s], local[t]));
            }
        }
        let neighbor_ids = nodes.iter().copied().filter(|&v| v != center).collect();
        Ok(Subgraph {
            center,
            center_local: local[center],
            features: self.features.select_rows(&nodes),
            nodes,
            neighbor_ids,
            edges,
            aux_edges,
            outside_in_degree,
            hops,
            has_self_loops: self.has_self_loops,
        })
    }
}

/// Borrowed input for one message-passing forward pass.
///
/// `in_degree` is the number of incoming edges of each node in the graph the
/// view stands for; for a [`Subgraph`] it still counts edges from nodes
/// outside the receptive field, so normalisation matches the whole graph.
#[derive(Clone, Debug)]
pub struct GraphView<'a> {
    pub features: &'a DenseMatrix,
    pub edges: &'a [(usize, usize)],
    pub in_degree: Vec<f64>,
}

impl GraphView<'_> {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Receptive field of one node: every node that can reach `center` along
/// at most `hops` edges, plus the edges that lie on such paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    center: usize,
    center_local: usize,
    /// local index → original id, ascending
    nodes: Vec<usize>,
    neighbor_ids: Vec<usize>,
    features: DenseMatrix,
    /// message-carrying edges in local ids
    edges: Vec<(usize, usize)>,
    /// edges among receptive-field nodes that end at the outermost ring;
    /// they never carry a message to the center but count toward degrees
    aux_edges: Vec<(usize, usize)>,
    outside_in_degree: Vec<usize>,
    hops: usize,
    has_self_loops: bool,
}

impl Subgraph {
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn center_local(&self) -> usize {
        self.center_local
    }

    /// Original ids of the neighbors, ascending, center excluded.
    pub fn neighbor_ids(&self) -> &[usize] {
        &self.neighbor_ids
    }

    /// Original ids of all nodes in local order.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    /// Local index of an original node id.
    pub fn local_of(&self, original: usize) -> Option<usize> {
        self.nodes.binary_search(&original).ok()
    }

    /// Message-carrying edges in local ids.
    pub fn local_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Message-carrying edges in original ids.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .map(|&(s, t)| (self.nodes[s], self.nodes[t]))
            .collect()
    }

    pub fn in_degrees(&self) -> Vec<f64> {
        let mut deg: Vec<f64> = self.outside_in_degree.iter().map(|&d| d as f64).collect();
        for &(_, t) in self.edges.iter().chain(&self.aux_edges) {
            deg[t] += 1.0;
        }
        deg
    }

    pub fn view(&self) -> GraphView<'_> {
        self.view_with(&self.features)
    }

    /// View over replacement features (same row order as [`Self::features`]).
    pub fn view_with<'a>(&'a self, features: &'a DenseMatrix) -> GraphView<'a> {
        assert_eq!(
            features.rows(),
            self.nodes.len(),
            "one feature row per subgraph node"
        );
        GraphView {
            features,
            edges: &self.edges,
            in_degree: self.in_degrees(),
        }
    }

    /// Removes `victims` (original ids) and every edge touching them.
    pub fn delete_neighbors(&self, victims: &[usize]) -> Result<Subgraph, GraphError> {
        let mut dead = vec![false; self.nodes.len()];
        for &v in victims {
            match self.local_of(v) {
                Some(l) if l != self.center_local => dead[l] = true,
                _ => {
                    return Err(GraphError::NotANeighbor {
                        node: v,
                        center: self.center,
                    })
                }
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut keep_rows = Vec::with_capacity(self.nodes.len());
        for (l, &orig) in self.nodes.iter().enumerate() {
            if !dead[l] {
                remap[l] = nodes.len();
                nodes.push(orig);
                keep_rows.push(l);
            }
        }
        let keep = |edges: &[(usize, usize)]| -> Vec<(usize, usize)> {
            edges
                .iter()
                .filter(|(s, t)| !dead[*s] && !dead[*t])
                .map(|&(s, t)| (remap[s], remap[t]))
                .collect()
        };
        Ok(Subgraph {
            center: self.center,
            center_local: remap[self.center_local],
            features: self.features.select_rows(&keep_rows),
            neighbor_ids: nodes
                .iter()
                .copied()
                .filter(|&v| v != self.center)
                .collect(),
            outside_in_degree: keep_rows
                .iter()
                .map(|&l| self.outside_in_degree[l])
                .collect(),
            edges: keep(&self.edges),
            aux_edges: keep(&self.aux_edges),
            nodes,
            hops: self.hops,
            has_self_loops: self.has_self_loops,
        })
    }
}
