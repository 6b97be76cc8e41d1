//! Neighbor-importance explainers.
//!
//! Every method maps `(model, graph, target)` to an [`Explanation`] whose
//! keys are exactly the receptive-field neighbors of the target. Scores lie
//! in `[0, 1]`; the raw, unnormalised values are kept next to them because
//! the deletion metrics only look at which raw values are nonzero and how
//! the scores are ordered.

mod gradient;
mod mask;
mod pg;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gradient::{
    deconvnet_explain, feature_gradients, guided_explain, saliency, smoothgrad, SmoothGradConfig,
};
pub use mask::{gnnexplainer, gnnexplainer_trace, MaskTrainConfig};
pub use pg::{pgexplainer_explain, pgexplainer_train, PgExplainerConfig, PgExplainerModel};

use crate::error::{ExplainError, GraphError};
use crate::graph::{Graph, Subgraph};
use crate::model::TrainedModel;

/// Raw values at or below this magnitude count as "no importance".
pub const ZERO_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Saliency,
    #[serde(rename = "smoothgrad")]
    SmoothGrad,
    Deconvnet,
    Guided,
    #[serde(rename = "gnnexplainer")]
    GnnExplainer,
    #[serde(rename = "pgexplainer")]
    PgExplainer,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Saliency,
        Method::SmoothGrad,
        Method::Deconvnet,
        Method::Guided,
        Method::GnnExplainer,
        Method::PgExplainer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::SmoothGrad => "smoothgrad",
            Method::Deconvnet => "deconvnet",
            Method::Guided => "guided",
            Method::GnnExplainer => "gnnexplainer",
            Method::PgExplainer => "pgexplainer",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Saliency => "Saliency Map",
            Method::SmoothGrad => "SmoothGrad",
            Method::Deconvnet => "Deconvnet",
            Method::Guided => "Guided Backprop",
            Method::GnnExplainer => "GNNExplainer",
            Method::PgExplainer => "PGExplainer",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .or(match lower.as_str() {
                "saliency-map" | "saliency_map" => Some(Method::Saliency),
                "guided-backprop" | "guided_backprop" | "guidedbackprop" => Some(Method::Guided),
                _ => None,
            })
            .ok_or_else(|| ExplainError::UnknownMethod(s.to_string()))
    }
}

/// Order in which neighbors are deleted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// most important first
    Descending,
    /// least important first
    Ascending,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Descending => "descending",
            Direction::Ascending => "ascending",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Importance of every receptive-field neighbor of one target node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target: usize,
    pub method: Method,
    pub predicted_class: usize,
    pub importance: BTreeMap<usize, f64>,
    pub raw: BTreeMap<usize, f64>,
}

impl Explanation {
    /// Neighbors whose raw value is nonzero, most (or least) important
    /// first; equal scores are ordered by ascending id.
    pub fn nonzero_neighbors(&self, direction: Direction) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .raw
            .iter()
            .filter(|(_, r)| r.abs() > ZERO_TOLERANCE)
            .map(|(&id, _)| id)
            .collect();
        let score = |id: &usize| self.importance.get(id).copied().unwrap_or(0.0);
        ids.sort_by(|a, b| {
            let ord = score(a).total_cmp(&score(b));
            let ord = match direction {
                Direction::Descending => ord.reverse(),
                Direction::Ascending => ord,
            };
            ord.then(a.cmp(b))
        });
        ids
    }

    /// Checks that the keys are the receptive-field neighbors of `sg` and
    /// the scores lie in `[0, 1]`.
    pub fn matches(&self, sg: &Subgraph) -> Result<(), String> {
        if self.target != sg.center() {
            return Err(format!(
                "explanation targets {}, subgraph centers {}",
                self.target,
                sg.center()
            ));
        }
        let keys: Vec<usize> = self.importance.keys().copied().collect();
        if keys != sg.neighbor_ids() || self.raw.keys().ne(self.importance.keys()) {
            return Err(format!(
                "keys {:?} differ from the receptive field {:?}",
                keys,
                sg.neighbor_ids()
            ));
        }
        if let Some((id, s)) = self
            .importance
            .iter()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(format!("score {s} of neighbor {id} is outside [0, 1]"));
        }
        Ok(())
    }
}

/// Free-function form of [`Explanation::nonzero_neighbors`].
pub fn nonzero_neighbors(e: &Explanation, direction: Direction) -> Vec<usize> {
    e.nonzero_neighbors(direction)
}

/// Scores for nonnegative raw values: divide by the maximum.
pub fn normalize_by_max(raw: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    let max = raw.values().fold(0.0_f64, |m, &v| m.max(v.abs()));
    raw.iter()
        .map(|(&id, &v)| (id, if max > 0.0 { v.abs() / max } else { 0.0 }))
        .collect()
}

/// Scores for signed raw values: min-max over the entries with nonzero raw
/// value; zero raw values score 0. When every nonzero entry has the same
/// value they all score 1.
pub fn normalize_min_max(raw: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    let live = || raw.values().copied().filter(|v| v.abs() > ZERO_TOLERANCE);
    let min = live().fold(f64::INFINITY, f64::min);
    let max = live().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|(&id, &v)| {
            let s = if v.abs() <= ZERO_TOLERANCE {
                0.0
            } else if max > min {
                (v - min) / (max - min)
            } else {
                1.0
            };
            (id, s)
        })
        .collect()
}

/// Runs the explainers that need no trained artifact. PGExplainer needs a
/// [`PgExplainerModel`]; use [`explain_node`] for it.
pub struct ExplainSettings {
    pub smoothgrad: SmoothGradConfig,
    pub mask: MaskTrainConfig,
    pub pg: Option<PgExplainerModel>,
}

impl ExplainSettings {
    /// Defaults derived from `graph` (SmoothGrad noise scale) and `seed`.
    pub fn for_graph(graph: &Graph, seed: u64) -> Self {
        Self {
            smoothgrad: SmoothGradConfig::for_graph(graph, seed),
            mask: MaskTrainConfig {
                seed,
                ..MaskTrainConfig::default()
            },
            pg: None,
        }
    }
}

/// Explanation of `target` by `method`.
pub fn explain_node(
    method: Method,
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
    settings: &ExplainSettings,
) -> Result<Explanation, ExplainError> {
    match method {
        Method::Saliency => saliency(model, graph, target),
        Method::SmoothGrad => smoothgrad(model, graph, target, &settings.smoothgrad),
        Method::Deconvnet => deconvnet_explain(model, graph, target),
        Method::Guided => guided_explain(model, graph, target),
        Method::GnnExplainer => gnnexplainer(model, graph, target, &settings.mask),
        Method::PgExplainer => {
            let pgm = settings.pg.as_ref().ok_or_else(|| {
                ExplainError::Config("pgexplainer needs a trained explainer model".into())
            })?;
            pgexplainer_explain(pgm, model, graph, target)
        }
    }
}

/// Explains every node of `targets` with `jobs` worker threads; the output
/// order follows `targets`.
pub fn explain_nodes(
    method: Method,
    model: &TrainedModel,
    graph: &Graph,
    targets: &[usize],
    settings: &ExplainSettings,
    jobs: usize,
) -> Result<Vec<Explanation>, ExplainError> {
    crate::par::map(targets, jobs, |&t| {
        explain_node(method, model, graph, t, settings)
    })
}

/// Receptive field of `target` after checking the model accepts `graph`.
pub(crate) fn receptive_field(
    model: &TrainedModel,
    graph: &Graph,
    target: usize,
) -> Result<Subgraph, ExplainError> {
    model.check_graph(graph)?;
    Ok(graph.khop_subgraph(target, model.hops())?)
}

/// Writes one JSON record per line.
pub fn write_jsonl(mut out: impl Write, explanations: &[Explanation]) -> std::io::Result<()> {
    for e in explanations {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records written by [`write_jsonl`]; blank lines are skipped.
pub fn read_jsonl(
    input: impl BufRead,
    path: &std::path::Path,
) -> Result<Vec<Explanation>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: path.into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GraphError::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(raw: &[(usize, f64)], importance: &[(usize, f64)]) -> Explanation {
        Explanation {
            target: 0,
            method: Method::Saliency,
            predicted_class: 0,
            raw: raw.iter().copied().collect(),
            importance: importance.iter().copied().collect(),
        }
    }

    #[test]
    fn ties_break_by_id() {
        let e = exp(
            &[(7, 0.5), (3, 0.5), (9, 0.1)],
            &[(7, 0.5), (3, 0.5), (9, 0.1)],
        );
        assert_eq!(e.nonzero_neighbors(Direction::Descending), vec![3, 7, 9]);
        assert_eq!(e.nonzero_neighbors(Direction::Ascending), vec![9, 3, 7]);
    }

    #[test]
    fn zero_raw_values_are_dropped() {
        let e = exp(&[(1, 0.0), (2, 0.0)], &[(1, 0.0), (2, 0.0)]);
        assert!(e.nonzero_neighbors(Direction::Descending).is_empty());
    }

    #[test]
    fn min_max_edge_cases() {
        let raw: BTreeMap<usize, f64> = [(1, 0.9), (2, 0.2)].into();
        assert_eq!(normalize_min_max(&raw), [(1, 1.0), (2, 0.0)].into());
        let one: BTreeMap<usize, f64> = [(4, -0.3)].into();
        assert_eq!(normalize_min_max(&one), [(4, 1.0)].into());
        let zeros: BTreeMap<usize, f64> = [(1, 0.0)].into();
        assert_eq!(normalize_by_max(&zeros), [(1, 0.0)].into());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!(matches!(
            "lime".parse::<Method>(),
            Err(ExplainError::UnknownMethod(_))
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let e = exp(&[(1, 0.25), (5, -1.5)], &[(1, 1.0), (5, 0.0)]);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&e)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.contains("\"importance\":{\"1\":1.0,\"5\":0.0}"),
            "{text}"
        );
        let back = read_jsonl(&buf[..], std::path::Path::new("x")).unwrap();
        assert_eq!(back, vec![e]);
    }
}
