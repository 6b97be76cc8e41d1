//! Two-layer GCN and GATv2 node classifiers.
//!
//! Both architectures are `layer → ReLU → dropout → layer` with dropout
//! also applied to the input features while training. GCN layers use
//! symmetric degree normalisation over the edges exactly as given; no
//! self-loops are inserted behind the caller's back. GATv2 layers score each
//! edge with `att · LeakyReLU(W_src x_s + W_dst x_t)` and normalise the
//! scores over the incoming edges of every node; the hidden layer
//! concatenates its heads, the output layer averages them.

mod checkpoint;
mod forward;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{gcn_coefficients, Dropout, ForwardInputs};

use crate::error::{ModelError, ShapeError};
use crate::graph::{Graph, GraphView, Split, Subgraph};
use crate::optim::Adam;
use crate::rng::{self, Stream};
use crate::tape::{BackpropMode, Tape, Var};
use crate::tensor::{argmax, softmax, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    #[serde(rename = "gatv2")]
    GatV2,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::GatV2 => "gat",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gat" | "gatv2" => Ok(Arch::GatV2),
            other => Err(format!(
                "unknown architecture {other:?} (expected gcn or gat)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// hidden width per head (GCN: total hidden width)
    pub hidden_dim: usize,
    /// attention heads of the hidden layer (GATv2 only)
    pub heads: usize,
    /// attention heads of the output layer, averaged (GATv2 only)
    pub output_heads: usize,
    pub dropout_rate: f64,
    pub self_loops: bool,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl ModelConfig {
    pub fn gcn() -> Self {
        Self {
            arch: Arch::Gcn,
            hidden_dim: 16,
            heads: 1,
            output_heads: 1,
            dropout_rate: 0.5,
            self_loops: true,
            seed: 0,
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 5e-4,
        }
    }

    pub fn gatv2() -> Self {
        Self {
            arch: Arch::GatV2,
            hidden_dim: 8,
            heads: 8,
            ..Self::gcn()
        }
    }

    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Gcn => Self::gcn(),
            Arch::GatV2 => Self::gatv2(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.hidden_dim == 0 || self.heads == 0 || self.output_heads == 0 {
            return Err(ModelError::Config(
                "hidden_dim, heads and output_heads must be >= 1".into(),
            ));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(ModelError::Config(
                "learning_rate must be > 0 and weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Names and shapes of the parameter tensors, in storage order.
    pub fn parameter_shapes(
        &self,
        num_features: usize,
        num_classes: usize,
    ) -> Vec<(&'static str, usize, usize)> {
        match self.arch {
            Arch::Gcn => vec![
                ("layer1.weight", num_features, self.hidden_dim),
                ("layer1.bias", 1, self.hidden_dim),
                ("layer2.weight", self.hidden_dim, num_classes),
                ("layer2.bias", 1, num_classes),
            ],
            Arch::GatV2 => {
                let hidden = self.heads * self.hidden_dim;
                let out = self.output_heads * num_classes;
                vec![
                    ("layer1.weight_src", num_features, hidden),
                    ("layer1.weight_dst", num_features, hidden),
                    ("layer1.attention", 1, hidden),
                    ("layer1.bias", 1, hidden),
                    ("layer2.weight_src", hidden, out),
                    ("layer2.weight_dst", hidden, out),
                    ("layer2.attention", 1, out),
                    ("layer2.bias", 1, num_classes),
                ]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Classifier output for one node.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub node: usize,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

impl Prediction {
    pub fn from_logits(node: usize, logits: Vec<f64>) -> Self {
        let probabilities = softmax(&logits);
        let predicted_class = argmax(&logits);
        Self {
            node,
            logits,
            probabilities,
            predicted_class,
        }
    }
}

/// Forward pass recorded for differentiation, see [`TrainedModel::forward`].
#[derive(Debug)]
pub struct Recording {
    pub tape: Tape,
    /// subgraph feature rows, in local order
    pub features: Var,
    /// `n × C` logits of all subgraph nodes
    pub logits: Var,
    pub center_local: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub num_features: usize,
    pub num_classes: usize,
    parameters: Vec<DenseMatrix>,
    pub log: Vec<EpochLog>,
}

impl TrainedModel {
    /// Model with Glorot-initialised weights and zero biases.
    pub fn initialize(
        config: ModelConfig,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, Stream::Init, 0);
        let parameters = config
            .parameter_shapes(num_features, num_classes)
            .into_iter()
            .map(|(name, r, c)| {
                if name.ends_with("bias") {
                    DenseMatrix::zeros(r, c)
                } else {
                    rng::glorot(&mut rng, r, c)
                }
            })
            .collect();
        Ok(Self {
            config,
            num_features,
            num_classes,
            parameters,
            log: Vec::new(),
        })
    }

    /// Model with the given tensors, validated against the config shapes.
    pub fn from_parameters(
        config: ModelConfig,
        num_features: usize,
        num_classes: usize,
        parameters: Vec<DenseMatrix>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let shapes = config.parameter_shapes(num_features, num_classes);
        if shapes.len() != parameters.len() {
            return Err(ShapeError::new(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                parameters.len()
            ))
            .into());
        }
        for ((name, r, c), p) in shapes.iter().zip(&parameters) {
            if p.shape() != (*r, *c) {
                return Err(ShapeError::new(format!(
                    "{name} should be {r}x{c}, got {:?}",
                    p.shape()
                ))
                .into());
            }
            if !p.is_finite() {
                return Err(ModelError::Config(format!(
                    "{name} contains non-finite values"
                )));
            }
        }
        Ok(Self {
            config,
            num_features,
            num_classes,
            parameters,
            log: Vec::new(),
        })
    }

    pub fn parameters(&self) -> &[DenseMatrix] {
        &self.parameters
    }

    pub fn parameter_names(&self) -> Vec<&'static str> {
        self.config
            .parameter_shapes(self.num_features, self.num_classes)
            .into_iter()
            .map(|(name, _, _)| name)
            .collect()
    }

    /// Message-passing depth, i.e. the receptive-field radius.
    pub fn hops(&self) -> usize {
        2
    }

    fn check_features(&self, width: usize) -> Result<(), ModelError> {
        if width != self.num_features {
            return Err(ShapeError::new(format!(
                "model expects {} features, graph has {width}",
                self.num_features
            ))
            .into());
        }
        Ok(())
    }

    fn check_loops(&self, has_self_loops: bool) -> Result<(), ModelError> {
        if has_self_loops != self.config.self_loops {
            return Err(ModelError::Config(format!(
                "model was configured with self_loops={} but the graph has self_loops={has_self_loops}",
                self.config.self_loops
            )));
        }
        Ok(())
    }

    /// Checks that `graph` can be fed to this model.
    pub fn check_graph(&self, graph: &Graph) -> Result<(), ModelError> {
        self.check_features(graph.num_features())?;
        self.check_loops(graph.has_self_loops())
    }

    /// Prediction for the center of `sg` in evaluation mode; with `record`
    /// the tape needed to differentiate any logit with respect to the
    /// feature rows of every subgraph node is returned as well.
    pub fn forward(
        &self,
        sg: &Subgraph,
        record: bool,
    ) -> Result<(Prediction, Option<Recording>), ModelError> {
        self.check_features(sg.features().cols())?;
        self.check_loops(sg.has_self_loops())?;
        let view = sg.view();
        let mut tape = Tape::new();
        let features = if record {
            tape.leaf(sg.features().clone())
        } else {
            tape.constant(sg.features().clone())
        };
        let params = self
            .parameters
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let logits = self.record(
            &mut tape,
            &view,
            ForwardInputs {
                features,
                params,
                edge_weight: None,
                dropout: None,
            },
        );
        let center = sg.center_local();
        let prediction =
            Prediction::from_logits(sg.center(), tape.value(logits).row(center).to_vec());
        let recording = record.then_some(Recording {
            tape,
            features,
            logits,
            center_local: center,
        });
        Ok((prediction, recording))
    }

    /// Prediction for the center of `sg`.
    pub fn predict(&self, sg: &Subgraph) -> Result<Prediction, ModelError> {
        self.forward(sg, false).map(|(p, _)| p)
    }

    /// Predictions for `nodes` from one whole-graph pass.
    pub fn predict_all(
        &self,
        graph: &Graph,
        nodes: &[usize],
    ) -> Result<Vec<Prediction>, ModelError> {
        self.check_graph(graph)?;
        if nodes.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(&bad) = nodes.iter().find(|&&v| v >= graph.num_nodes()) {
            return Err(crate::error::GraphError::InvalidNode {
                node: bad,
                num_nodes: graph.num_nodes(),
            }
            .into());
        }
        let logits = self.logits(&graph.view());
        Ok(nodes
            .iter()
            .map(|&v| Prediction::from_logits(v, logits.row(v).to_vec()))
            .collect())
    }

    /// Accuracy over the labelled nodes of `split` from a precomputed logits
    /// matrix; `None` when the split has no labelled nodes.
    pub fn accuracy(graph: &Graph, logits: &DenseMatrix, split: Split) -> Option<f64> {
        let nodes: Vec<usize> = graph
            .nodes_in(split)
            .into_iter()
            .filter(|&v| graph.labels()[v].is_some())
            .collect();
        if nodes.is_empty() {
            return None;
        }
        let correct = nodes
            .iter()
            .filter(|&&v| Some(argmax(logits.row(v))) == graph.labels()[v])
            .count();
        Some(correct as f64 / nodes.len() as f64)
    }

    /// Final-layer node representations (pre-softmax) for every node.
    pub fn embeddings(&self, view: &GraphView<'_>) -> DenseMatrix {
        self.logits(view)
    }
}

/// Full-batch training with cross-entropy on the training split.
///
/// The graph's self-loops are set to match `config.self_loops` first.
/// Returns the final-epoch parameters; the per-epoch log keeps loss and
/// split accuracies.
pub fn train(graph: &Graph, config: &ModelConfig) -> Result<TrainedModel, ModelError> {
    let graph = graph.set_self_loops(config.self_loops);
    let picks: Vec<(usize, usize)> = graph
        .nodes_in(Split::Train)
        .into_iter()
        .filter_map(|v| graph.labels()[v].map(|c| (v, c)))
        .collect();
    if picks.is_empty() {
        return Err(ModelError::NoTrainingNodes);
    }
    let mut model =
        TrainedModel::initialize(config.clone(), graph.num_features(), graph.num_classes())?;
    let mut adam = Adam::new(
        model.parameters.iter().map(DenseMatrix::shape),
        config.learning_rate,
        config.weight_decay,
    );
    let mut dropout_rng = rng::stream(config.seed, Stream::Dropout, 0);
    let view = graph.view();

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let features = tape.constant(graph.features().clone());
        let params: Vec<Var> = model
            .parameters
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let logits = model.record(
            &mut tape,
            &view,
            ForwardInputs {
                features,
                params: params.clone(),
                edge_weight: None,
                dropout: Some(Dropout {
                    rate: config.dropout_rate,
                    rng: &mut dropout_rng,
                }),
            },
        );
        let log_probs = tape.log_softmax(logits);
        let loss = tape.nll_mean(log_probs, &picks);
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() {
            return Err(ModelError::Divergence {
                epoch,
                loss: loss_value,
            });
        }
        let grads = tape.backward(loss, BackpropMode::Standard)?;
        let grads: Vec<DenseMatrix> = params
            .iter()
            .map(|&p| grads.get_or_zeros(p, &tape))
            .collect();
        let mut refs: Vec<&mut DenseMatrix> = model.parameters.iter_mut().collect();
        adam.step(&mut refs, &grads);
        if model.parameters.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }

        let eval = model.logits(&view);
        model.log.push(EpochLog {
            epoch,
            loss: loss_value,
            train_accuracy: TrainedModel::accuracy(&graph, &eval, Split::Train),
            val_accuracy: TrainedModel::accuracy(&graph, &eval, Split::Val),
            test_accuracy: TrainedModel::accuracy(&graph, &eval, Split::Test),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic;

    fn tiny_separable() -> Graph {
        // two cliques of five, class decided by the first feature
        let mut rows = Vec::new();
        let mut edges = Vec::new();
        for v in 0..10 {
            let class = v / 5;
            rows.push(if class == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            });
            for u in 0..10 {
                if u != v && u / 5 == class {
                    edges.push((u, v));
                }
            }
        }
        let splits = (0..10)
            .map(|v| Some(if v % 5 < 2 { Split::Train } else { Split::Test }))
            .collect();
        Graph::new(
            "separable",
            DenseMatrix::from_rows(&rows).unwrap(),
            edges,
            (0..10).map(|v| Some(v / 5)).collect(),
            splits,
            2,
            false,
        )
        .unwrap()
    }

    #[test]
    fn separable_graph_is_learned() {
        for arch in [Arch::Gcn, Arch::GatV2] {
            let config = ModelConfig {
                epochs: 100,
                ..ModelConfig::for_arch(arch)
            };
            let model = train(&tiny_separable(), &config).unwrap();
            assert_eq!(model.log.last().unwrap().test_accuracy, Some(1.0), "{arch}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let g = tiny_separable();
        let config = ModelConfig {
            epochs: 5,
            ..ModelConfig::gcn()
        };
        assert_eq!(train(&g, &config).unwrap(), train(&g, &config).unwrap());
        let other = ModelConfig { seed: 1, ..config };
        assert_ne!(
            train(&g, &other).unwrap().parameters,
            train(&g, &config).unwrap().parameters
        );
    }

    #[test]
    fn no_training_nodes_is_an_error() {
        let g = synthetic::random_graph(
            &mut rng::stream(0, Stream::Synthetic, 0),
            5,
            3,
            2,
            0.3,
            true,
            true,
        );
        assert!(matches!(
            train(&g, &ModelConfig::gcn()),
            Err(ModelError::NoTrainingNodes)
        ));
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let g = tiny_separable().set_self_loops(true);
        let config = ModelConfig::gcn();
        let mut params: Vec<DenseMatrix> = config
            .parameter_shapes(2, 2)
            .iter()
            .map(|&(_, r, c)| DenseMatrix::zeros(r, c))
            .collect();
        params[3] = DenseMatrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let model = TrainedModel::from_parameters(config, 2, 2, params).unwrap();
        for p in model.predict_all(&g, &(0..10).collect::<Vec<_>>()).unwrap() {
            assert_eq!(p.logits, vec![0.3, -0.7]);
            assert_eq!(p.predicted_class, 0);
        }
    }

    #[test]
    fn predict_all_edge_cases() {
        let g = tiny_separable();
        let model = TrainedModel::initialize(
            ModelConfig {
                self_loops: false,
                ..ModelConfig::gcn()
            },
            2,
            2,
        )
        .unwrap();
        assert!(model.predict_all(&g, &[]).unwrap().is_empty());
        assert_eq!(
            model.predict_all(&g, &[1, 2]).unwrap(),
            model.predict_all(&g, &[1, 2]).unwrap()
        );
        assert!(model.predict_all(&g.set_self_loops(true), &[1]).is_err());
        let wide = TrainedModel::initialize(
            ModelConfig {
                self_loops: false,
                ..ModelConfig::gcn()
            },
            3,
            2,
        )
        .unwrap();
        assert!(matches!(
            wide.predict_all(&g, &[1]),
            Err(ModelError::Shape(_))
        ));
    }

    #[test]
    fn probabilities_are_normalised() {
        let g = tiny_separable();
        let model = TrainedModel::initialize(
            ModelConfig {
                self_loops: false,
                ..ModelConfig::gatv2()
            },
            2,
            2,
        )
        .unwrap();
        for p in model.predict_all(&g, &(0..10).collect::<Vec<_>>()).unwrap() {
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(p.predicted_class, argmax(&p.logits));
        }
    }
}
