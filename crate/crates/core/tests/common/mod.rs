//! Brute-force reference implementations used as test oracles.
//!
//! Nothing here calls the library's subgraph extraction, deletion or
//! prediction code: graphs are plain edge lists, forward passes are nested
//! loops over `Vec<Vec<f64>>`, and every modified graph is rebuilt from
//! scratch.

#![allow(dead_code)]

use std::collections::BTreeSet;

use neighbor_xai::explain::Explanation;
use neighbor_xai::graph::Graph;
use neighbor_xai::model::{Arch, TrainedModel};

pub type Rows = Vec<Vec<f64>>;

pub struct PlainGraph {
    pub features: Rows,
    pub edges: Vec<(usize, usize)>,
}

impl PlainGraph {
    pub fn of(g: &Graph) -> Self {
        Self {
            features: (0..g.num_nodes())
                .map(|v| g.features().row(v).to_vec())
                .collect(),
            edges: g.edges().to_vec(),
        }
    }

    /// Same node ids; every edge touching `gone` is dropped.
    pub fn without(&self, gone: &BTreeSet<usize>) -> Self {
        Self {
            features: self.features.clone(),
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|(s, t)| !gone.contains(s) && !gone.contains(t))
                .collect(),
        }
    }

    fn in_degree(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.features.len()];
        for &(_, t) in &self.edges {
            d[t] += 1.0;
        }
        d
    }
}

fn matrix(m: &neighbor_xai::tensor::DenseMatrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn times(x: &[f64], w: &Rows) -> Vec<f64> {
    let cols = w[0].len();
    (0..cols)
        .map(|c| x.iter().zip(w).map(|(a, row)| a * row[c]).sum())
        .collect()
}

fn gcn_layer(g: &PlainGraph, x: &Rows, w: &Rows, b: &[f64]) -> Rows {
    let deg = g.in_degree();
    let xw: Rows = x.iter().map(|r| times(r, w)).collect();
    let mut out: Rows = vec![b.to_vec(); x.len()];
    for &(s, t) in &g.edges {
        // a source without incoming edges has degree 0 and sends nothing
        let c = if deg[s] == 0.0 {
            0.0
        } else {
            1.0 / (deg[s].sqrt() * deg[t].sqrt())
        };
        for (o, v) in out[t].iter_mut().zip(&xw[s]) {
            *o += c * v;
        }
    }
    out
}

fn gatv2_layer(
    g: &PlainGraph,
    x: &Rows,
    w_src: &Rows,
    w_dst: &Rows,
    att: &[f64],
    heads: usize,
) -> Rows {
    let n = x.len();
    let width = att.len() / heads;
    let xs: Rows = x.iter().map(|r| times(r, w_src)).collect();
    let xd: Rows = x.iter().map(|r| times(r, w_dst)).collect();
    let mut out = vec![vec![0.0; att.len()]; n];
    for t in 0..n {
        let incoming: Vec<usize> = g.edges.iter().filter(|e| e.1 == t).map(|e| e.0).collect();
        if incoming.is_empty() {
            continue;
        }
        for h in 0..heads {
            let block = h * width..(h + 1) * width;
            let scores: Vec<f64> = incoming
                .iter()
                .map(|&s| {
                    block
                        .clone()
                        .map(|d| {
                            let z = xs[s][d] + xd[t][d];
                            att[d] * if z > 0.0 { z } else { 0.2 * z }
                        })
                        .sum()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (k, &s) in incoming.iter().enumerate() {
                for d in block.clone() {
                    out[t][d] += exps[k] / total * xs[s][d];
                }
            }
        }
    }
    out
}

/// Logits of every node.
pub fn logits(model: &TrainedModel, g: &PlainGraph) -> Rows {
    let p: Vec<Rows> = model.parameters().iter().map(matrix).collect();
    let relu = |rows: Rows| -> Rows {
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect()
    };
    match model.config.arch {
        Arch::Gcn => {
            let h = relu(gcn_layer(g, &g.features, &p[0], &p[1][0]));
            gcn_layer(g, &h, &p[2], &p[3][0])
        }
        Arch::GatV2 => {
            let h = gatv2_layer(g, &g.features, &p[0], &p[1], &p[2][0], model.config.heads);
            let h: Rows = h
                .into_iter()
                .map(|r| r.iter().zip(&p[3][0]).map(|(a, b)| a + b).collect())
                .collect();
            let h = relu(h);
            let heads = model.config.output_heads;
            let out = gatv2_layer(g, &h, &p[4], &p[5], &p[6][0], heads);
            let c = model.num_classes;
            out.into_iter()
                .map(|r| {
                    (0..c)
                        .map(|k| {
                            (0..heads).map(|h| r[h * c + k]).sum::<f64>() / heads as f64
                                + p[7][0][k]
                        })
                        .collect()
                })
                .collect()
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `(predicted class, probabilities)` of `node`.
pub fn predict(model: &TrainedModel, g: &PlainGraph, node: usize) -> (usize, Vec<f64>) {
    let l = logits(model, g);
    (argmax(&l[node]), softmax(&l[node]))
}

/// Nodes other than `center` with a directed path of at most `hops` edges
/// into `center`.
pub fn receptive_field(g: &PlainGraph, center: usize, hops: usize) -> BTreeSet<usize> {
    let mut reached = BTreeSet::from([center]);
    let mut frontier = BTreeSet::from([center]);
    for _ in 0..hops {
        let next: BTreeSet<usize> = g
            .edges
            .iter()
            .filter(|(s, t)| frontier.contains(t) && !reached.contains(s))
            .map(|&(s, _)| s)
            .collect();
        reached.extend(&next);
        frontier = next;
    }
    reached.remove(&center);
    reached
}

/// Nonzero-raw neighbors sorted by score (descending or ascending), ties by
/// id.
pub fn order(e: &Explanation, descending: bool) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = e
        .raw
        .iter()
        .filter(|(_, r)| r.abs() > 1e-12)
        .map(|(&id, _)| (e.importance[&id], id))
        .collect();
    v.sort_by(|a, b| {
        let o = if descending {
            b.0.partial_cmp(&a.0)
        } else {
            a.0.partial_cmp(&b.0)
        };
        o.unwrap().then(a.1.cmp(&b.1))
    });
    v.into_iter().map(|(_, id)| id).collect()
}

pub struct OracleCurves {
    pub loyalty: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub evaluated: usize,
}

/// Both curves for one direction on the grid `0, 10, …, 100`.
pub fn curves(
    model: &TrainedModel,
    g: &Graph,
    exps: &[Explanation],
    descending: bool,
) -> OracleCurves {
    let plain = PlainGraph::of(g);
    let mut loyal = [0.0; 11];
    let mut shift = [0.0; 11];
    let mut evaluated = 0;
    for e in exps {
        let list = order(e, descending);
        if list.is_empty() {
            continue;
        }
        evaluated += 1;
        let (c0, p0) = predict(model, &plain, e.target);
        for (i, t) in (0..=100).step_by(10).enumerate() {
            let k = (t as f64 * list.len() as f64 / 100.0 + 0.5).floor() as usize;
            let gone: BTreeSet<usize> = list[..k].iter().copied().collect();
            let (c, p) = predict(model, &plain.without(&gone), e.target);
            if c == c0 {
                loyal[i] += 1.0;
            }
            shift[i] += (p[c0] - p0[c0]).abs();
        }
    }
    let n = evaluated.max(1) as f64;
    let empty = if evaluated == 0 { 1.0 } else { 0.0 };
    OracleCurves {
        loyalty: loyal.iter().map(|v| v / n + empty).collect(),
        probabilities: shift.iter().map(|v| v / n).collect(),
        evaluated,
    }
}

/// Loyalty after deleting `victims(target)` for every target.
pub fn all_deleted(
    model: &TrainedModel,
    g: &Graph,
    targets: &[usize],
    victims: impl Fn(usize) -> BTreeSet<usize>,
) -> f64 {
    let plain = PlainGraph::of(g);
    let kept = targets
        .iter()
        .filter(|&&t| {
            predict(model, &plain, t).0 == predict(model, &plain.without(&victims(t)), t).0
        })
        .count();
    kept as f64 / targets.len() as f64
}

pub fn trapezoid(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| 10.0 * (w[0] + w[1]) / 2.0)
        .sum::<f64>()
        / 100.0
}
