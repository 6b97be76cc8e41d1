//! Forward passes recorded on a [`Tape`].

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Arch, TrainedModel};
use crate::graph::GraphView;
use crate::tape::{EdgeIndex, Tape, Var};
use crate::tensor::DenseMatrix;

const ATTENTION_SLOPE: f64 = 0.2;

/// Training-time dropout source.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let (r, c) = tape.value(x).shape();
        let keep = 1.0 - self.rate;
        let data = (0..r * c)
            .map(|_| {
                if self.rng.random_bool(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        tape.dropout(x, DenseMatrix::from_vec(r, c, data).expect("sized"))
    }
}

/// Inputs of one recorded forward pass.
pub struct ForwardInputs<'r> {
    /// node features, `n × F`
    pub features: Var,
    /// one var per parameter tensor, in [`TrainedModel::parameters`] order
    pub params: Vec<Var>,
    /// optional multiplicative weight per edge (`E × 1`) applied to messages
    pub edge_weight: Option<Var>,
    /// `Some` only while training
    pub dropout: Option<Dropout<'r>>,
}

/// Degree-normalisation coefficients `d(s)^-1/2 · d(t)^-1/2`, with zero for
/// nodes without incoming edges.
pub fn gcn_coefficients(view: &GraphView<'_>) -> DenseMatrix {
    let inv_sqrt: Vec<f64> = view
        .in_degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let data = view
        .edges
        .iter()
        .map(|&(s, t)| inv_sqrt[s] * inv_sqrt[t])
        .collect();
    DenseMatrix::from_vec(view.edges.len(), 1, data).expect("sized")
}

impl TrainedModel {
    /// Records the two-layer network on `tape` and returns the `n × C`
    /// logits.
    pub fn record(
        &self,
        tape: &mut Tape,
        view: &GraphView<'_>,
        mut inputs: ForwardInputs<'_>,
    ) -> Var {
        let edges = Arc::new(EdgeIndex::new(view.edges));
        let n = view.num_nodes();
        let p = &inputs.params;
        let mut x = inputs.features;
        if let Some(d) = inputs.dropout.as_mut() {
            x = d.apply(tape, x);
        }
        match self.config.arch {
            Arch::Gcn => {
                let mut coef = tape.constant(gcn_coefficients(view));
                if let Some(w) = inputs.edge_weight {
                    coef = tape.mul(coef, w);
                }
                let xw = tape.matmul(x, p[0]);
                let h = tape.edge_aggregate(xw, coef, edges.clone(), 1, n);
                let h = tape.add_row_bias(h, p[1]);
                let mut h = tape.relu(h);
                if let Some(d) = inputs.dropout.as_mut() {
                    h = d.apply(tape, h);
                }
                let hw = tape.matmul(h, p[2]);
                let out = tape.edge_aggregate(hw, coef, edges, 1, n);
                tape.add_row_bias(out, p[3])
            }
            Arch::GatV2 => {
                let heads = self.config.heads;
                let h = gatv2_layer(tape, x, &p[0..3], &edges, heads, n, inputs.edge_weight);
                let h = tape.add_row_bias(h, p[3]);
                let mut h = tape.relu(h);
                if let Some(d) = inputs.dropout.as_mut() {
                    h = d.apply(tape, h);
                }
                let out_heads = self.config.output_heads;
                let out = gatv2_layer(tape, h, &p[4..7], &edges, out_heads, n, inputs.edge_weight);
                let out = if out_heads > 1 {
                    let avg = tape.constant(head_average(out_heads, self.num_classes));
                    tape.matmul(out, avg)
                } else {
                    out
                };
                tape.add_row_bias(out, p[7])
            }
        }
    }

    /// Logits of every node of `view` in evaluation mode.
    pub fn logits(&self, view: &GraphView<'_>) -> DenseMatrix {
        let mut tape = Tape::new();
        let features = tape.constant(view.features.clone());
        let params = self
            .parameters()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let out = self.record(
            &mut tape,
            view,
            ForwardInputs {
                features,
                params,
                edge_weight: None,
                dropout: None,
            },
        );
        tape.value(out).clone()
    }
}

/// One GATv2 attention layer: `params = [w_src, w_dst, att]`. Head `h`
/// owns the `h`-th block of output columns; the heads are left
/// concatenated.
fn gatv2_layer(
    tape: &mut Tape,
    x: Var,
    params: &[Var],
    edges: &Arc<EdgeIndex>,
    heads: usize,
    n: usize,
    edge_weight: Option<Var>,
) -> Var {
    let x_src = tape.matmul(x, params[0]);
    let x_dst = tape.matmul(x, params[1]);
    let at_src = tape.gather_rows(x_src, &edges.src);
    let at_dst = tape.gather_rows(x_dst, &edges.dst);
    let pre = tape.add(at_src, at_dst);
    let act = tape.leaky_relu(pre, ATTENTION_SLOPE);
    let scores = tape.head_dot(act, params[2], heads);
    let mut alpha = tape.segment_softmax(scores, &edges.dst, n);
    if let Some(w) = edge_weight {
        alpha = tape.scale_rows(alpha, w);
    }
    tape.edge_aggregate(x_src, alpha, edges.clone(), heads, n)
}

/// `(heads·C) × C` matrix averaging the head blocks.
fn head_average(heads: usize, classes: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(heads * classes, classes);
    for h in 0..heads {
        for c in 0..classes {
            m.set(h * classes + c, c, 1.0 / heads as f64);
        }
    }
    m
}
