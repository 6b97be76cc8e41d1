use std::collections::BTreeMap;

use super::{normalize_min_max, receptive_field, Explanation, Method};
use crate::error::{ExplainError, ModelError};
use crate::graph::{Graph, Subgraph};
use crate::model::{ForwardInputs, TrainedModel};
use crate::optim::Adam;
use crate::rng::{self, Stream};
use crate::tape::{BackpropMode, Tape};
use crate::tensor::DenseMatrix;

const INIT_STD: f64 = 0.1;
const LOG_EPS: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub size_coefficient: f64,
    pub entropy_coefficient: f64,
    pub seed: u64,
}

impl Default for MaskTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            size_coefficient: 0.005,
            entropy_coefficient: 1.0,
            seed: 0,
        }
    }
}

impl MaskTrainConfig {
    fn validate(&self) -> Result<(), ExplainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ExplainError::Config(format!(
                "mask learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

struct Objective<'a> {
    model: &'a TrainedModel,
    sg: &'a Subgraph,
    class: usize,
    cfg: &'a MaskTrainConfig,
}

impl Objective<'_> {
    /// Loss and mask gradient. Regularisers only see the `active` entries;
    /// with `None` the loss is the prediction term alone.
    fn eval(
        &self,
        mask: &DenseMatrix,
        active: Option<&[usize]>,
    ) -> Result<(f64, DenseMatrix), ExplainError> {
        let mut tape = Tape::new();
        let x = tape.constant(self.sg.features().clone());
        let m = tape.leaf(mask.clone());
        let s = tape.sigmoid(m);
        let xs = tape.scale_rows(x, s);
        let params = self
            .model
            .parameters()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let logits = self.model.record(
            &mut tape,
            &self.sg.view(),
            ForwardInputs {
                features: xs,
                params,
                edge_weight: None,
                dropout: None,
            },
        );
        let log_probs = tape.log_softmax(logits);
        let picked = tape.select(log_probs, self.sg.center_local(), self.class);
        let mut loss = tape.scale(picked, -1.0);
        if let Some(active) = active.filter(|a| !a.is_empty()) {
            let sa = tape.gather_rows(s, active);
            let size = tape.mean(sa);
            let size = tape.scale(size, self.cfg.size_coefficient);
            let shifted = tape.add_scalar(sa, LOG_EPS);
            let log_s = tape.log(shifted);
            let neg = tape.scale(sa, -1.0);
            let rest = tape.add_scalar(neg, 1.0);
            let shifted_rest = tape.add_scalar(rest, LOG_EPS);
            let log_rest = tape.log(shifted_rest);
            let a = tape.mul(sa, log_s);
            let b = tape.mul(rest, log_rest);
            let plogp = tape.add(a, b);
            let ent = tape.mean(plogp);
            let ent = tape.scale(ent, -self.cfg.entropy_coefficient);
            loss = tape.add(loss, size);
            loss = tape.add(loss, ent);
        }
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(ExplainError::NonFiniteLoss {
                what: "gnnexplainer mask",
                loss: value,
            });
        }
        let grads = tape
            .backward(loss, BackpropMode::Standard)
            .map_err(ModelError::from)?;
        Ok((value, grads.get_or_zeros(m, &tape)))
    }
}

/// GNNExplainer with one scalar mask per receptive-field node gating that
/// node's feature row.
///
/// Nodes whose mask receives no gradient from the prediction at the start
/// are frozen out of the regularisers and reported with raw value 0. The
/// remaining raw values are the pre-sigmoid mask entries.
pub fn gnnexplainer(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
    cfg: &MaskTrainConfig,
) -> Result<Explanation, ExplainError> {
    gnnexplainer_trace(model, graph, target, cfg).map(|(e, _)| e)
}

/// [`gnnexplainer`] plus the loss after every epoch (the first entry is the
/// loss at initialisation). A step that would raise the loss is undone and
/// the learning rate halved, so the trace never increases.
pub fn gnnexplainer_trace(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
    cfg: &MaskTrainConfig,
) -> Result<(Explanation, Vec<f64>), ExplainError> {
    cfg.validate()?;
    let sg = receptive_field(model, graph, target)?;
    let class = model.predict(&sg)?.predicted_class;
    let objective = Objective {
        model,
        sg: &sg,
        class,
        cfg,
    };
    let n = sg.nodes().len();
    let mut rng = rng::stream(cfg.seed, Stream::Masks, target as u64);
    let mut mask = rng::normal_matrix(&mut rng, n, 1, INIT_STD);

    let (_, probe) = objective.eval(&mask, None)?;
    let active: Vec<usize> = (0..n).filter(|&l| probe.get(l, 0) != 0.0).collect();
    let (mut loss, mut grad) = objective.eval(&mask, Some(&active))?;
    let mut losses = vec![loss];
    let mut adam = Adam::new([(n, 1)], cfg.learning_rate, 0.0);
    for _ in 0..cfg.epochs {
        let (saved_mask, saved_adam) = (mask.clone(), adam.clone());
        adam.step(&mut [&mut mask], std::slice::from_ref(&grad));
        let (next, next_grad) = objective.eval(&mask, Some(&active))?;
        if next <= loss {
            loss = next;
            grad = next_grad;
        } else {
            let rate = adam.learning_rate * 0.5;
            mask = saved_mask;
            adam = saved_adam;
            adam.learning_rate = rate;
        }
        losses.push(loss);
    }

    let mut live = vec![false; n];
    active.iter().for_each(|&l| live[l] = true);
    let raw: BTreeMap<usize, f64> = sg
        .nodes()
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != sg.center_local())
        .map(|(l, &id)| (id, if live[l] { mask.get(l, 0) } else { 0.0 }))
        .collect();
    let explanation = Explanation {
        target,
        method: Method::GnnExplainer,
        predicted_class: class,
        importance: normalize_min_max(&raw),
        raw,
    };
    Ok((explanation, losses))
}
