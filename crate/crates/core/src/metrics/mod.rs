//! Deletion-based loyalty metrics.
//!
//! For every explained node the nonzero-importance neighbors are sorted and
//! deleted cumulatively (10%, 20%, ... of the list), the node is classified
//! again on its shrunken receptive field, and the curve records either how
//! many predictions survive (loyalty) or how far the probability of the
//! original class moves (loyalty probabilities). Sorting most-important
//! first gives the plain metric, least-important first the inverse one.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
pub use crate::explain::Direction;
use crate::explain::Explanation;
use crate::graph::{Graph, Subgraph};
use crate::model::{Prediction, TrainedModel};

/// The default percent grid `0, 10, …, 100`.
pub fn default_percents() -> Vec<u32> {
    (0..=10).map(|i| i * 10).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// fraction of unchanged predictions
    Loyalty,
    /// mean absolute change of the original class probability
    LoyaltyProbabilities,
}

impl MetricKind {
    /// Table name of the metric read in `direction`, e.g.
    /// `inverse_loyalty_probabilities`.
    pub fn name(self, direction: Direction) -> &'static str {
        match (self, direction) {
            (MetricKind::Loyalty, Direction::Descending) => "loyalty",
            (MetricKind::Loyalty, Direction::Ascending) => "inverse_loyalty",
            (MetricKind::LoyaltyProbabilities, Direction::Descending) => "loyalty_probabilities",
            (MetricKind::LoyaltyProbabilities, Direction::Ascending) => {
                "inverse_loyalty_probabilities"
            }
        }
    }

    /// Parses the four names produced by [`MetricKind::name`].
    pub fn parse(name: &str) -> Option<(MetricKind, Direction)> {
        [MetricKind::Loyalty, MetricKind::LoyaltyProbabilities]
            .into_iter()
            .flat_map(|k| [Direction::Descending, Direction::Ascending].map(|d| (k, d)))
            .find(|(k, d)| k.name(*d) == name.trim().replace('-', "_"))
    }
}

/// Cumulative victim sets of one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeletionSchedule {
    pub neighbors: Vec<usize>,
    pub percents: Vec<u32>,
    /// number of leading `neighbors` deleted at each percent
    pub counts: Vec<usize>,
}

impl DeletionSchedule {
    pub fn victims(&self, step: usize) -> &[usize] {
        &self.neighbors[..self.counts[step]]
    }
}

/// Victim counts `round(t·M/100)` with halves rounded up, `M` the list
/// length.
pub fn schedule(neighbors: &[usize], percents: &[u32]) -> DeletionSchedule {
    let m = neighbors.len();
    let counts = percents
        .iter()
        .map(|&t| ((2 * t as usize * m + 100) / 200).min(m))
        .collect();
    DeletionSchedule {
        neighbors: neighbors.to_vec(),
        percents: percents.to_vec(),
        counts,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub kind: MetricKind,
    pub direction: Direction,
    /// `(percent deleted, value)`
    pub points: Vec<(f64, f64)>,
    pub n_evaluated: usize,
    /// explained nodes without any nonzero-importance neighbor
    pub n_excluded: usize,
}

impl MetricCurve {
    pub fn name(&self) -> &'static str {
        self.kind.name(self.direction)
    }
}

impl fmt::Display for MetricCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.name())?;
        for (p, v) in &self.points {
            write!(f, " {p}%={v:.4}")?;
        }
        Ok(())
    }
}

/// Trapezoidal area under `curve`, with the percent axis rescaled to
/// `[0, 1]`.
pub fn auc(curve: &MetricCurve) -> Result<f64, MetricError> {
    auc_points(&curve.points)
}

pub fn auc_points(points: &[(f64, f64)]) -> Result<f64, MetricError> {
    if points.len() < 2 {
        return Err(MetricError::TooFewPoints(points.len()));
    }
    let span = points[points.len() - 1].0 - points[0].0;
    let area: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(area / span)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub percents: Vec<u32>,
    /// worker threads; 0 = one per core
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            percents: default_percents(),
            jobs: 0,
        }
    }
}

/// Per-percent outcome for one node.
struct NodeCurve {
    kept: Vec<bool>,
    shift: Vec<f64>,
}

struct Checked<'a> {
    sg: Subgraph,
    original: Prediction,
    explanation: &'a Explanation,
}

fn check<'a>(
    model: &TrainedModel,
    graph: &Graph,
    e: &'a Explanation,
) -> Result<Checked<'a>, MetricError> {
    let sg = graph.khop_subgraph(e.target, model.hops())?;
    e.matches(&sg)
        .map_err(|message| MetricError::ExplanationMismatch {
            target: e.target,
            message,
        })?;
    let original = model.predict(&sg)?;
    if original.predicted_class != e.predicted_class {
        return Err(MetricError::ExplanationMismatch {
            target: e.target,
            message: format!(
                "explanation was made for class {}, the model predicts {}",
                e.predicted_class, original.predicted_class
            ),
        });
    }
    Ok(Checked {
        sg,
        original,
        explanation: e,
    })
}

fn node_curve(
    model: &TrainedModel,
    c: &Checked<'_>,
    direction: Direction,
    percents: &[u32],
) -> Result<Option<NodeCurve>, MetricError> {
    let order = c.explanation.nonzero_neighbors(direction);
    if order.is_empty() {
        return Ok(None);
    }
    let plan = schedule(&order, percents);
    let class = c.original.predicted_class;
    let p0 = c.original.probabilities[class];
    let mut cache: HashMap<usize, (bool, f64)> = HashMap::new();
    let mut kept = Vec::with_capacity(percents.len());
    let mut shift = Vec::with_capacity(percents.len());
    for step in 0..percents.len() {
        let count = plan.counts[step];
        let outcome = match cache.get(&count) {
            Some(&o) => o,
            None => {
                let o = if count == 0 {
                    (true, 0.0)
                } else {
                    let p = model.predict(&c.sg.delete_neighbors(plan.victims(step))?)?;
                    (
                        p.predicted_class == class,
                        (p.probabilities[class] - p0).abs(),
                    )
                };
                cache.insert(count, o);
                o
            }
        };
        kept.push(outcome.0);
        shift.push(outcome.1);
    }
    Ok(Some(NodeCurve { kept, shift }))
}

/// Loyalty and loyalty-probability curves for one direction from a single
/// pass of deletions.
pub fn curves(
    model: &TrainedModel,
    graph: &Graph,
    explanations: &[Explanation],
    direction: Direction,
    options: &EvalOptions,
) -> Result<(MetricCurve, MetricCurve), MetricError> {
    let percents = &options.percents;
    if percents.windows(2).any(|w| w[0] >= w[1]) || percents.iter().any(|&p| p > 100) {
        return Err(MetricError::InvalidPercents(percents.clone()));
    }
    let per_node = crate::par::map(explanations, options.jobs, |e| {
        let c = check(model, graph, e)?;
        node_curve(model, &c, direction, percents)
    })?;
    let evaluated: Vec<&NodeCurve> = per_node.iter().flatten().collect();
    let n = evaluated.len();
    let mean = |f: &dyn Fn(&NodeCurve, usize) -> f64, empty: f64, step: usize| {
        if n == 0 {
            empty
        } else {
            evaluated.iter().map(|c| f(c, step)).sum::<f64>() / n as f64
        }
    };
    let build = |kind, f: &dyn Fn(&NodeCurve, usize) -> f64, empty| MetricCurve {
        kind,
        direction,
        points: (0..percents.len())
            .map(|s| (percents[s] as f64, mean(f, empty, s)))
            .collect(),
        n_evaluated: n,
        n_excluded: explanations.len() - n,
    };
    Ok((
        build(
            MetricKind::Loyalty,
            &|c, s| if c.kept[s] { 1.0 } else { 0.0 },
            1.0,
        ),
        build(MetricKind::LoyaltyProbabilities, &|c, s| c.shift[s], 0.0),
    ))
}

/// Fraction of explained nodes whose prediction survives each deletion
/// step. Nodes without nonzero-importance neighbors are left out of the
/// average and counted in `n_excluded`; with nothing to evaluate the curve
/// is constant 1.
pub fn loyalty(
    model: &TrainedModel,
    graph: &Graph,
    explanations: &[Explanation],
    direction: Direction,
) -> Result<MetricCurve, MetricError> {
    curves(
        model,
        graph,
        explanations,
        direction,
        &EvalOptions::default(),
    )
    .map(|(l, _)| l)
}

/// Mean absolute change of the probability of the originally predicted
/// class at each deletion step; same node set as [`loyalty`].
pub fn loyalty_probabilities(
    model: &TrainedModel,
    graph: &Graph,
    explanations: &[Explanation],
    direction: Direction,
) -> Result<MetricCurve, MetricError> {
    curves(
        model,
        graph,
        explanations,
        direction,
        &EvalOptions::default(),
    )
    .map(|(_, p)| p)
}

/// What to delete for [`all_deleted_loyalty`].
#[derive(Clone, Copy, Debug)]
pub enum AllDeleted<'a> {
    /// every neighbor with nonzero raw importance, per explanation
    NonzeroImportance(&'a [Explanation]),
    /// the whole receptive field of each listed node
    AllNeighbors(&'a [usize]),
}

/// Loyalty after one deletion of the full victim set. Every listed node
/// counts, including nodes with nothing to delete.
pub fn all_deleted_loyalty(
    model: &TrainedModel,
    graph: &Graph,
    mode: AllDeleted<'_>,
) -> Result<f64, MetricError> {
    all_deleted_loyalty_with(model, graph, mode, 0)
}

/// [`all_deleted_loyalty`] with an explicit worker count.
pub fn all_deleted_loyalty_with(
    model: &TrainedModel,
    graph: &Graph,
    mode: AllDeleted<'_>,
    jobs: usize,
) -> Result<f64, MetricError> {
    let kept = match mode {
        AllDeleted::NonzeroImportance(explanations) => crate::par::map(explanations, jobs, |e| {
            let c = check(model, graph, e)?;
            let victims = e.nonzero_neighbors(Direction::Descending);
            survives(model, &c.sg, &c.original, &victims)
        })?,
        AllDeleted::AllNeighbors(nodes) => crate::par::map(nodes, jobs, |&v| {
            let sg = graph.khop_subgraph(v, model.hops())?;
            let original = model.predict(&sg)?;
            survives(model, &sg, &original, sg.neighbor_ids())
        })?,
    };
    if kept.is_empty() {
        return Ok(1.0);
    }
    Ok(kept.iter().filter(|&&k| k).count() as f64 / kept.len() as f64)
}

fn survives(
    model: &TrainedModel,
    sg: &Subgraph,
    original: &Prediction,
    victims: &[usize],
) -> Result<bool, MetricError> {
    if victims.is_empty() {
        return Ok(true);
    }
    let p = model.predict(&sg.delete_neighbors(victims)?)?;
    Ok(p.predicted_class == original.predicted_class)
}
