use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_min_max, receptive_field, Explanation, Method};
use crate::error::{ExplainError, ModelError};
use crate::graph::{Graph, Subgraph};
use crate::model::{ForwardInputs, TrainedModel};
use crate::optim::Adam;
use crate::rng::{self, Stream};
use crate::tape::{BackpropMode, Tape, Var};
use crate::tensor::{argmax, DenseMatrix};

const FORMAT: &str = "neighbor-xai-pgexplainer";
const LOG_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgExplainerConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// weight of the summed edge mask
    pub size_coefficient: f64,
    /// weight of the mean binary entropy of the edge mask
    pub entropy_coefficient: f64,
    /// concrete-relaxation temperature at the first and last epoch
    pub temperature: (f64, f64),
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for PgExplainerConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.003,
            size_coefficient: 0.05,
            entropy_coefficient: 1.0,
            temperature: (5.0, 1.0),
            hidden_dim: 64,
            seed: 0,
        }
    }
}

impl PgExplainerConfig {
    fn temperature_at(&self, epoch: usize) -> f64 {
        let (t0, t1) = self.temperature;
        if self.epochs <= 1 {
            return t0;
        }
        t0 * (t1 / t0).powf(epoch as f64 / (self.epochs - 1) as f64)
    }
}

/// Edge-scoring MLP `[z_s; z_t; z_center] → hidden → 1`, where `z` are the
/// classifier's final-layer node representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgExplainerModel {
    pub embedding_dim: usize,
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
    pub config: PgExplainerConfig,
    /// mean training loss per epoch
    pub losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    format: String,
    version: u32,
    explainer: PgExplainerModel,
}

/// Non-loop message edges of `sg` (indices into `local_edges`) and the MLP
/// input row of each.
struct EdgeInputs {
    edge_ids: Vec<usize>,
    rows: DenseMatrix,
}

impl PgExplainerModel {
    pub fn initialize(embedding_dim: usize, config: PgExplainerConfig) -> Self {
        let mut rng = rng::stream(config.seed, Stream::PgExplainer, 0);
        let h = config.hidden_dim;
        Self {
            embedding_dim,
            w1: rng::glorot(&mut rng, 3 * embedding_dim, h),
            b1: DenseMatrix::zeros(1, h),
            w2: rng::glorot(&mut rng, h, 1),
            b2: DenseMatrix::zeros(1, 1),
            config,
            losses: Vec::new(),
        }
    }

    /// Pre-sigmoid edge scores for a batch of MLP input rows.
    pub fn edge_logits(&self, inputs: &DenseMatrix) -> Vec<f64> {
        let mut h = inputs.matmul(&self.w1);
        for r in 0..h.rows() {
            for (v, b) in h.row_mut(r).iter_mut().zip(self.b1.data()) {
                *v = (*v + b).max(0.0);
            }
        }
        let out = h.matmul(&self.w2);
        out.data().iter().map(|v| v + self.b2.get(0, 0)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ExplainError> {
        let path = path.as_ref();
        let artifact = Artifact {
            format: FORMAT.into(),
            version: 1,
            explainer: self.clone(),
        };
        let mut text = serde_json::to_string(&artifact).expect("explainer serialises");
        text.push('\n');
        fs::write(path, text).map_err(|e| ExplainError::Artifact {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExplainError> {
        let path = path.as_ref();
        let fail = |message: String| ExplainError::Artifact {
            path: path.into(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let a: Artifact = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        if a.format != FORMAT || a.version != 1 {
            return Err(fail(format!(
                "unsupported container {} v{}",
                a.format, a.version
            )));
        }
        let e = a.explainer;
        let h = e.config.hidden_dim;
        if e.w1.shape() != (3 * e.embedding_dim, h)
            || e.b1.shape() != (1, h)
            || e.w2.shape() != (h, 1)
            || e.b2.shape() != (1, 1)
        {
            return Err(fail(
                "parameter shapes do not match the declared widths".into(),
            ));
        }
        Ok(e)
    }

    fn check(&self, model: &TrainedModel) -> Result<(), ExplainError> {
        if self.embedding_dim != model.num_classes {
            return Err(ExplainError::EmbeddingMismatch {
                expected: self.embedding_dim,
                found: model.num_classes,
            });
        }
        Ok(())
    }

    fn params_mut(&mut self) -> [&mut DenseMatrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

fn edge_inputs(sg: &Subgraph, z: &DenseMatrix) -> EdgeInputs {
    let nodes = sg.nodes();
    let center = z.row(sg.center());
    let mut edge_ids = Vec::new();
    let mut data = Vec::new();
    for (i, &(s, t)) in sg.local_edges().iter().enumerate() {
        if s == t {
            continue;
        }
        edge_ids.push(i);
        data.extend_from_slice(z.row(nodes[s]));
        data.extend_from_slice(z.row(nodes[t]));
        data.extend_from_slice(center);
    }
    let rows = DenseMatrix::from_vec(edge_ids.len(), 3 * z.cols(), data).expect("sized");
    EdgeInputs { edge_ids, rows }
}

/// Loss of one training node under a sampled concrete edge mask.
fn node_loss(
    pgm: &PgExplainerModel,
    model: &TrainedModel,
    sg: &Subgraph,
    inputs: &EdgeInputs,
    class: usize,
    noise: DenseMatrix,
    temperature: f64,
) -> Result<(f64, Vec<DenseMatrix>), ExplainError> {
    let cfg = &pgm.config;
    let mut tape = Tape::new();
    let psi: Vec<Var> = [&pgm.w1, &pgm.b1, &pgm.w2, &pgm.b2]
        .into_iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    let x = tape.constant(inputs.rows.clone());
    let h = tape.matmul(x, psi[0]);
    let h = tape.add_row_bias(h, psi[1]);
    let h = tape.relu(h);
    let logit = tape.matmul(h, psi[2]);
    let logit = tape.add_row_bias(logit, psi[3]);
    let noise = tape.constant(noise);
    let gate = tape.add(logit, noise);
    let gate = tape.scale(gate, 1.0 / temperature);
    let w = tape.sigmoid(gate);

    let all = sg.local_edges();
    let mut select = DenseMatrix::zeros(all.len(), inputs.edge_ids.len());
    let mut loops = DenseMatrix::zeros(all.len(), 1);
    for (j, &i) in inputs.edge_ids.iter().enumerate() {
        select.set(i, j, 1.0);
    }
    for (i, &(s, t)) in all.iter().enumerate() {
        if s == t {
            loops.set(i, 0, 1.0);
        }
    }
    let select = tape.constant(select);
    let loops = tape.constant(loops);
    let spread = tape.matmul(select, w);
    let edge_weight = tape.add(spread, loops);

    let features = tape.constant(sg.features().clone());
    let params = model
        .parameters()
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let logits = model.record(
        &mut tape,
        &sg.view(),
        ForwardInputs {
            features,
            params,
            edge_weight: Some(edge_weight),
            dropout: None,
        },
    );
    let log_probs = tape.log_softmax(logits);
    let picked = tape.select(log_probs, sg.center_local(), class);
    let ce = tape.scale(picked, -1.0);
    let size = tape.sum(w);
    let size = tape.scale(size, cfg.size_coefficient);
    let shifted = tape.add_scalar(w, LOG_EPS);
    let log_w = tape.log(shifted);
    let neg = tape.scale(w, -1.0);
    let rest = tape.add_scalar(neg, 1.0);
    let shifted_rest = tape.add_scalar(rest, LOG_EPS);
    let log_rest = tape.log(shifted_rest);
    let a = tape.mul(w, log_w);
    let b = tape.mul(rest, log_rest);
    let plogp = tape.add(a, b);
    let ent = tape.mean(plogp);
    let ent = tape.scale(ent, -cfg.entropy_coefficient);
    let loss = tape.add(ce, size);
    let loss = tape.add(loss, ent);

    let value = tape.value(loss).get(0, 0);
    let grads = tape
        .backward(loss, BackpropMode::Standard)
        .map_err(ModelError::from)?;
    Ok((
        value,
        psi.iter().map(|&p| grads.get_or_zeros(p, &tape)).collect(),
    ))
}

/// Trains the edge MLP on the receptive fields of `nodes` so that the
/// masked classifier keeps its original predictions while using few edges.
pub fn pgexplainer_train(
    model: &TrainedModel,
    graph: &Graph,
    nodes: &[usize],
    config: &PgExplainerConfig,
) -> Result<PgExplainerModel, ExplainError> {
    if nodes.is_empty() {
        return Err(ExplainError::Config(
            "pgexplainer needs at least one training node".into(),
        ));
    }
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(config.learning_rate)
        || config.hidden_dim == 0
        || !positive(config.temperature.0)
        || !positive(config.temperature.1)
    {
        return Err(ExplainError::Config(format!(
            "invalid pgexplainer settings {config:?}"
        )));
    }
    model.check_graph(graph)?;
    let z = model.embeddings(&graph.view());
    let mut pgm = PgExplainerModel::initialize(model.num_classes, config.clone());

    let mut batch = Vec::new();
    for &v in nodes {
        let sg = graph.khop_subgraph(v, model.hops())?;
        let inputs = edge_inputs(&sg, &z);
        if inputs.edge_ids.is_empty() {
            continue;
        }
        batch.push((sg, inputs, argmax(z.row(v))));
    }
    let shapes: Vec<(usize, usize)> = [&pgm.w1, &pgm.b1, &pgm.w2, &pgm.b2]
        .iter()
        .map(|t| t.shape())
        .collect();
    let mut adam = Adam::new(shapes, config.learning_rate, 0.0);
    for epoch in 0..config.epochs {
        let temperature = config.temperature_at(epoch);
        let mut rng = rng::stream(config.seed, Stream::PgExplainer, 1 + epoch as u64);
        let mut total = 0.0;
        let mut sum: Vec<DenseMatrix> = [&pgm.w1, &pgm.b1, &pgm.w2, &pgm.b2]
            .iter()
            .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
            .collect();
        for (sg, inputs, class) in &batch {
            let noise = (0..inputs.edge_ids.len())
                .map(|_| {
                    let u: f64 = rng.random_range(0.01..0.99);
                    u.ln() - (1.0 - u).ln()
                })
                .collect();
            let noise = DenseMatrix::from_vec(inputs.edge_ids.len(), 1, noise).expect("sized");
            let (loss, grads) = node_loss(&pgm, model, sg, inputs, *class, noise, temperature)?;
            if !loss.is_finite() {
                return Err(ExplainError::NonFiniteLoss {
                    what: "pgexplainer",
                    loss,
                });
            }
            total += loss;
            for (s, g) in sum.iter_mut().zip(&grads) {
                s.add_assign(g);
            }
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        for s in &mut sum {
            s.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        adam.step(&mut pgm.params_mut(), &sum);
        pgm.losses.push(total * scale);
    }
    Ok(pgm)
}

/// Scores each neighbor with the largest MLP score among its outgoing
/// message edges inside the target's receptive field.
pub fn pgexplainer_explain(
    pgm: &PgExplainerModel,
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
) -> Result<Explanation, ExplainError> {
    pgm.check(model)?;
    let sg = receptive_field(model, graph, target)?;
    let z = model.embeddings(&graph.view());
    let inputs = edge_inputs(&sg, &z);
    let logits = pgm.edge_logits(&inputs.rows);
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for (&i, &w) in inputs.edge_ids.iter().zip(&logits) {
        let source = sg.nodes()[sg.local_edges()[i].0];
        if source == target {
            continue;
        }
        best.entry(source)
            .and_modify(|b| *b = b.max(w))
            .or_insert(w);
    }
    let raw: BTreeMap<usize, f64> = sg
        .neighbor_ids()
        .iter()
        .map(|&id| (id, best.get(&id).copied().unwrap_or(0.0)))
        .collect();
    Ok(Explanation {
        target,
        method: Method::PgExplainer,
        predicted_class: argmax(z.row(target)),
        importance: normalize_min_max(&raw),
        raw,
    })
}
