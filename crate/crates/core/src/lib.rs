//! Neighbor-importance explanations for two-layer GNN node classifiers.
//!
//! The crate trains GCN and GATv2 classifiers on dense citation-style
//! graphs, explains each node's prediction by scoring the nodes of its
//! receptive field with six methods (saliency, SmoothGrad, Deconvnet,
//! guided backpropagation, a node-mask GNNExplainer and a
//! parameterised edge-mask explainer), and checks those scores by deleting
//! neighbors in importance order and watching the prediction.
//!
//! ```no_run
//! use neighbor_xai::{explain, graph, metrics, model};
//!
//! let g = graph::load_graph("data/cora").unwrap();
//! let m = model::train(&g, &model::ModelConfig::gcn()).unwrap();
//! let g = g.set_self_loops(m.config.self_loops);
//! let test = g.nodes_in(graph::Split::Test);
//! let exps: Vec<_> = test
//!     .iter()
//!     .map(|&k| explain::saliency(&m, &g, k).unwrap())
//!     .collect();
//! let curve = metrics::loyalty(&m, &g, &exps, metrics::Direction::Descending).unwrap();
//! println!("loyalty AUC {:.3}", metrics::auc(&curve).unwrap());
//! ```

pub mod error;
pub mod explain;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
mod par;
pub mod report;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::Error;
