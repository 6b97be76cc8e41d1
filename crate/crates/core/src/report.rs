//! Tabular and graphical outputs of an evaluation run, the key=value
//! configuration format and the zero-gradient gadget report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, ExplainError};
use crate::explain::{self, Method};
use crate::graph::synthetic::zero_gradient_gadget;
use crate::metrics::{auc, MetricCurve, MetricKind};
use crate::model::{self, ModelConfig};
use crate::tape::BackpropMode;

/// Identifies the experiment a curve or AUC row belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLabel {
    pub method: Method,
    pub dataset: String,
    pub arch: model::Arch,
    pub self_loops: bool,
}

pub const CURVE_HEADER: &str =
    "metric,method,dataset,arch,self_loops,direction,percent,value,n_evaluated,n_excluded";
pub const AUC_HEADER: &str = "table,self_loops,method,dataset,arch,L,I";
pub const ALL_DELETED_HEADER: &str = "dataset,arch,self_loops,method,all_deleted_loyalty,n_nodes";

/// One CSV line per curve point, without header.
pub fn write_curve_rows(
    mut out: impl Write,
    label: &RunLabel,
    curve: &MetricCurve,
) -> io::Result<()> {
    for (percent, value) in &curve.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            curve.name(),
            label.method,
            csv_field(&label.dataset),
            label.arch,
            label.self_loops,
            curve.direction.as_str(),
            percent,
            value,
            curve.n_evaluated,
            curve.n_excluded
        )?;
    }
    Ok(())
}

/// AUC of the plain (`L`) and inverse (`I`) reading of one metric for one
/// method. Either side may be missing when the run was filtered.
#[derive(Clone, Debug, PartialEq)]
pub struct AucRow {
    pub kind: MetricKind,
    pub label: RunLabel,
    pub plain: Option<f64>,
    pub inverse: Option<f64>,
}

impl AucRow {
    /// Builds the row from any subset of the two curves of `kind`.
    pub fn from_curves<'a>(
        kind: MetricKind,
        label: RunLabel,
        curves: impl IntoIterator<Item = &'a MetricCurve>,
    ) -> Result<Self, crate::error::MetricError> {
        let mut row = AucRow {
            kind,
            label,
            plain: None,
            inverse: None,
        };
        for c in curves.into_iter().filter(|c| c.kind == kind) {
            let a = Some(auc(c)?);
            match c.direction {
                explain::Direction::Descending => row.plain = a,
                explain::Direction::Ascending => row.inverse = a,
            }
        }
        Ok(row)
    }
}

pub fn write_auc_rows(mut out: impl Write, rows: &[AucRow]) -> io::Result<()> {
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            table_name(r.kind),
            r.label.self_loops,
            r.label.method,
            csv_field(&r.label.dataset),
            r.label.arch,
            cell(r.plain),
            cell(r.inverse)
        )?;
    }
    Ok(())
}

fn table_name(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::Loyalty => "loyalty",
        MetricKind::LoyaltyProbabilities => "loyalty_probabilities",
    }
}

/// A row of the all-deleted table. `method` is `None` for the
/// without-neighbors baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct AllDeletedRow {
    pub dataset: String,
    pub arch: model::Arch,
    pub self_loops: bool,
    pub method: Option<Method>,
    pub value: f64,
    pub n_nodes: usize,
}

pub fn write_all_deleted_rows(mut out: impl Write, rows: &[AllDeletedRow]) -> io::Result<()> {
    for r in rows {
        let method = r.method.map_or("without_neighbors", Method::as_str);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.dataset),
            r.arch,
            r.self_loops,
            method,
            r.value,
            r.n_nodes
        )?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Standalone SVG line plot of one curve: percent deleted on the x axis,
/// metric value on the y axis. The y range is `[0, 1]` unless a value falls
/// outside it.
pub fn curve_svg(curve: &MetricCurve, title: &str) -> String {
    let (lo, hi) = curve
        .points
        .iter()
        .fold((0.0_f64, 1.0_f64), |(lo, hi), &(_, v)| {
            (lo.min(v), hi.max(v))
        });
    let x_max = curve.points.last().map_or(100.0, |p| p.0.max(1.0));
    let px = |x: f64| MARGIN + x / x_max * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (px(0.0), py(lo), px(x_max), py(hi));
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (x, y) = (px(t * x_max), py(lo + t * (hi - lo)));
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            t * x_max
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            x0 - 6.0,
            y + 4.0,
            lo + t * (hi - lo)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">% neighbors deleted</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        curve.name()
    );
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Parses `key = value` lines. `#` starts a comment, blank lines are
/// ignored, keys are lowercased with `-` mapped to `_`. A repeated key is an
/// error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Usage(format!(
                "config line {}: expected key = value",
                i + 1
            )));
        };
        let key = k.trim().to_ascii_lowercase().replace('-', "_");
        if key.is_empty() {
            return Err(Error::Usage(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Usage(format!(
                "config line {}: duplicate key {key}",
                i + 1
            )));
        }
    }
    Ok(out)
}

/// Gradient score and deletion effect of one neighbor of the gadget's center.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GadgetNeighbor {
    pub node: usize,
    /// largest |∂ logit / ∂ feature| over the node's features
    pub gradient: f64,
    /// change of the predicted-class logit when the node is deleted
    pub delta_logit: f64,
    pub delta_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GadgetReport {
    pub self_loops: bool,
    pub center: usize,
    pub leaf: usize,
    pub predicted_class: usize,
    pub neighbors: Vec<GadgetNeighbor>,
}

impl GadgetReport {
    pub fn leaf_row(&self) -> &GadgetNeighbor {
        self.neighbors
            .iter()
            .find(|n| n.node == self.leaf)
            .expect("the leaf is a neighbor of the center")
    }
}

impl fmt::Display for GadgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gadget center {} (self_loops={}), predicted class {}",
            self.center, self.self_loops, self.predicted_class
        )?;
        writeln!(f, "node  gradient      delta_logit   delta_probability")?;
        for n in &self.neighbors {
            let mark = if n.node == self.leaf {
                "  <- leaf j"
            } else {
                ""
            };
            writeln!(
                f,
                "{:<5} {:<13.6e} {:<13.6e} {:.6e}{mark}",
                n.node, n.gradient, n.delta_logit, n.delta_probability
            )?;
        }
        Ok(())
    }
}

/// Trains a GCN on the zero-gradient gadget and measures, for every
/// neighbor of the center, the largest feature gradient of the predicted
/// logit and the effect of deleting that neighbor.
pub fn gadget_report(self_loops: bool, epochs: usize, seed: u64) -> Result<GadgetReport, Error> {
    let gadget = zero_gradient_gadget();
    let g = gadget.graph.set_self_loops(self_loops);
    let config = ModelConfig {
        self_loops,
        epochs,
        seed,
        ..ModelConfig::gcn()
    };
    let m = model::train(&g, &config)?;
    let sg = g
        .khop_subgraph(gadget.center, m.hops())
        .map_err(ExplainError::from)?;
    let before = m.predict(&sg)?;
    let c = before.predicted_class;
    let grad = explain::feature_gradients(&m, &sg, sg.features(), c, BackpropMode::Standard)?;
    let mut neighbors = Vec::new();
    for &v in sg.neighbor_ids() {
        let row = grad.row(sg.local_of(v).expect("neighbor is in the subgraph"));
        let after = m.predict(&sg.delete_neighbors(&[v]).map_err(ExplainError::from)?)?;
        neighbors.push(GadgetNeighbor {
            node: v,
            gradient: row.iter().fold(0.0, |a, x| a.max(x.abs())),
            delta_logit: after.logits[c] - before.logits[c],
            delta_probability: after.probabilities[c] - before.probabilities[c],
        });
    }
    Ok(GadgetReport {
        self_loops,
        center: gadget.center,
        leaf: gadget.leaf,
        predicted_class: c,
        neighbors,
    })
}
