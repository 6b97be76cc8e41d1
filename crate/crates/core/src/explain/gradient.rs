use std::collections::BTreeMap;

use super::{normalize_by_max, receptive_field, Explanation, Method};
use crate::error::{ExplainError, ModelError};
use crate::graph::{Graph, Subgraph};
use crate::model::{ForwardInputs, TrainedModel};
use crate::rng::{self, Stream};
use crate::tape::{BackpropMode, Tape};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothGradConfig {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SmoothGradConfig {
    /// 50 samples with noise at 15% of the graph's feature range.
    pub fn for_graph(graph: &Graph, seed: u64) -> Self {
        Self {
            n: 50,
            sigma: 0.15 * graph.feature_range(),
            seed,
        }
    }

    fn validate(&self) -> Result<(), ExplainError> {
        if self.n == 0 || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ExplainError::Config(format!(
                "smoothgrad needs n >= 1 and a finite sigma >= 0, got n={} sigma={}",
                self.n, self.sigma
            )));
        }
        Ok(())
    }
}

/// Gradient of the `class` logit of the center of `sg` with respect to
/// `features` (one row per subgraph node, local order).
pub fn feature_gradients(
    model: &TrainedModel,
    sg: &Subgraph,
    features: &DenseMatrix,
    class: usize,
    mode: BackpropMode,
) -> Result<DenseMatrix, ExplainError> {
    let view = sg.view_with(features);
    let mut tape = Tape::new();
    let x = tape.leaf(features.clone());
    let params = model
        .parameters()
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let logits = model.record(
        &mut tape,
        &view,
        ForwardInputs {
            features: x,
            params,
            edge_weight: None,
            dropout: None,
        },
    );
    let y = tape.select(logits, sg.center_local(), class);
    let grads = tape.backward(y, mode).map_err(ModelError::from)?;
    Ok(grads.get_or_zeros(x, &tape))
}

/// Mean absolute entry of every non-center row, keyed by original id.
fn reduce(sg: &Subgraph, grad: &DenseMatrix) -> BTreeMap<usize, f64> {
    let width = grad.cols().max(1) as f64;
    sg.nodes()
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != sg.center_local())
        .map(|(l, &id)| (id, grad.row(l).iter().map(|g| g.abs()).sum::<f64>() / width))
        .collect()
}

fn gradient_explanation(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
    mode: BackpropMode,
    method: Method,
) -> Result<Explanation, ExplainError> {
    let sg = receptive_field(model, graph, target)?;
    let class = model.predict(&sg)?.predicted_class;
    let grad = feature_gradients(model, &sg, sg.features(), class, mode)?;
    let raw = reduce(&sg, &grad);
    Ok(Explanation {
        target,
        method,
        predicted_class: class,
        importance: normalize_by_max(&raw),
        raw,
    })
}

/// Mean absolute gradient of the predicted-class logit per neighbor.
pub fn saliency(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
) -> Result<Explanation, ExplainError> {
    gradient_explanation(
        model,
        graph,
        target,
        BackpropMode::Standard,
        Method::Saliency,
    )
}

/// [`saliency`] with the Deconvnet ReLU rule.
pub fn deconvnet_explain(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
) -> Result<Explanation, ExplainError> {
    gradient_explanation(
        model,
        graph,
        target,
        BackpropMode::Deconvnet,
        Method::Deconvnet,
    )
}

/// [`saliency`] with the guided-backpropagation ReLU rule.
pub fn guided_explain(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
) -> Result<Explanation, ExplainError> {
    gradient_explanation(model, graph, target, BackpropMode::Guided, Method::Guided)
}

/// SmoothGrad: signed gradients are averaged over `cfg.n` copies of the
/// subgraph features with i.i.d. Gaussian noise on every entry, and only
/// then reduced to mean absolute values.
pub fn smoothgrad(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
    cfg: &SmoothGradConfig,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    let sg = receptive_field(model, graph, target)?;
    let class = model.predict(&sg)?.predicted_class;
    let (rows, cols) = sg.features().shape();
    let mut rng = rng::stream(cfg.seed, Stream::SmoothGrad, target as u64);
    let mut mean = DenseMatrix::zeros(rows, cols);
    for i in 0..cfg.n {
        let grad = if cfg.sigma > 0.0 {
            let mut noisy = rng::normal_matrix(&mut rng, rows, cols, cfg.sigma);
            noisy.add_assign(sg.features());
            feature_gradients(model, &sg, &noisy, class, BackpropMode::Standard)?
        } else {
            feature_gradients(model, &sg, sg.features(), class, BackpropMode::Standard)?
        };
        let step = 1.0 / (i + 1) as f64;
        for (m, g) in mean.data_mut().iter_mut().zip(grad.data()) {
            *m += (g - *m) * step;
        }
    }
    let raw = reduce(&sg, &mean);
    Ok(Explanation {
        target,
        method: Method::SmoothGrad,
        predicted_class: class,
        importance: normalize_by_max(&raw),
        raw,
    })
}
