//! Acceptance run: prints one `PASS`/`FAIL` line per criterion and fails if
//! any primary criterion fails. Run with
//! `cargo test -p neighbor-xai --test acceptance -- --nocapture`.
//!
//! Criteria that need the converted Cora dataset run only when
//! `NEIGHBOR_XAI_CORA` names its directory; otherwise they print `SKIP`.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use neighbor_xai::explain::{self, ExplainSettings, Explanation, Method, PgExplainerConfig};
use neighbor_xai::graph::synthetic::{
    community_graph, random_graph, zero_gradient_gadget, CommunityConfig,
};
use neighbor_xai::graph::{Graph, GraphView, Split};
use neighbor_xai::metrics::{self, AllDeleted, Direction, EvalOptions};
use neighbor_xai::model::{self, Arch, ForwardInputs, ModelConfig, TrainedModel};
use neighbor_xai::rng::{self, Stream};
use neighbor_xai::tape::{relu_backward, BackpropMode, Tape};
use neighbor_xai::tensor::DenseMatrix;

use common::PlainGraph;

struct Outcome {
    primary: bool,
    name: &'static str,
    passed: Option<bool>,
}

fn report(
    outcomes: &mut Vec<Outcome>,
    primary: bool,
    name: &'static str,
    passed: Option<bool>,
    detail: String,
) {
    let tag = match passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    let level = if primary { "PRIMARY" } else { "SECONDARY" };
    println!("{tag} [{level}] {name}: {detail}");
    outcomes.push(Outcome {
        primary,
        name,
        passed,
    });
}

fn random_model(
    rng: &mut ChaCha8Rng,
    arch: Arch,
    self_loops: bool,
    features: usize,
    classes: usize,
) -> TrainedModel {
    let config = match arch {
        Arch::Gcn => ModelConfig {
            hidden_dim: 4,
            self_loops,
            ..ModelConfig::gcn()
        },
        Arch::GatV2 => ModelConfig {
            hidden_dim: 3,
            heads: 2,
            output_heads: 2,
            self_loops,
            ..ModelConfig::gatv2()
        },
    };
    let params = config
        .parameter_shapes(features, classes)
        .into_iter()
        .map(|(_, r, c)| rng::normal_matrix(rng, r, c, 0.7))
        .collect();
    TrainedModel::from_parameters(config, features, classes, params).unwrap()
}

/// `Σ R ⊙ logits` with every feature and parameter recorded as a leaf.
fn weighted_output(
    model: &TrainedModel,
    view: &GraphView<'_>,
    params: &[DenseMatrix],
    weights: &DenseMatrix,
    tape: &mut Tape,
) -> (neighbor_xai::tape::Var, Vec<neighbor_xai::tape::Var>) {
    let x = tape.leaf(view.features.clone());
    let p: Vec<_> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let logits = model.record(
        tape,
        view,
        ForwardInputs {
            features: x,
            params: p.clone(),
            edge_weight: None,
            dropout: None,
        },
    );
    let w = tape.constant(weights.clone());
    let prod = tape.mul(logits, w);
    let y = tape.sum(prod);
    let mut leaves = vec![x];
    leaves.extend(p);
    (y, leaves)
}

fn output_value(
    model: &TrainedModel,
    g: &Graph,
    features: &DenseMatrix,
    params: &[DenseMatrix],
    weights: &DenseMatrix,
) -> f64 {
    let m = TrainedModel::from_parameters(
        model.config.clone(),
        model.num_features,
        model.num_classes,
        params.to_vec(),
    )
    .unwrap();
    let base = g.view();
    let view = GraphView {
        features,
        edges: base.edges,
        in_degree: base.in_degree.clone(),
    };
    let logits = m.logits(&view);
    logits
        .data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}

fn gradient_check() -> (bool, String) {
    const STEP: f64 = 1e-5;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rejected = 0;
    let mut accepted = 0;
    let mut draw = 0u64;
    while accepted < 100 {
        draw += 1;
        let mut rng = rng::stream(draw, Stream::Synthetic, 11);
        let arch = if accepted % 2 == 0 {
            Arch::Gcn
        } else {
            Arch::GatV2
        };
        let nodes = rng.random_range(2..=10);
        let loops = rng.random_bool(0.5);
        let undirected = rng.random_bool(0.5);
        let g = random_graph(&mut rng, nodes, 3, 3, 0.3, undirected, loops);
        let model = random_model(&mut rng, arch, loops, 3, 3);
        let weights = rng::normal_matrix(&mut rng, nodes, 3, 1.0);
        let params = model.parameters().to_vec();
        let mut tape = Tape::new();
        let view = g.view();
        let (y, leaves) = weighted_output(&model, &view, &params, &weights, &mut tape);
        if tape.kink_margin() < 1e-3 {
            rejected += 1;
            continue;
        }
        accepted += 1;
        let grads = tape.backward(y, BackpropMode::Standard).unwrap();
        for (li, &leaf) in leaves.iter().enumerate() {
            let analytic = grads.get_or_zeros(leaf, &tape);
            for i in 0..analytic.data().len() {
                let eval = |delta: f64| {
                    let mut feats = g.features().clone();
                    let mut ps = params.clone();
                    if li == 0 {
                        feats.data_mut()[i] += delta;
                    } else {
                        ps[li - 1].data_mut()[i] += delta;
                    }
                    output_value(&model, &g, &feats, &ps, &weights)
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = start.elapsed();
    (
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "100 computations (GCN/GATv2 alternating, {rejected} redrawn for a ReLU input within 1e-3 of 0), max relative error {worst:.2e} (< 1e-4), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn relu_truth_table() -> (bool, String) {
    let values = [
        -2.5,
        -1.0,
        -f64::MIN_POSITIVE,
        0.0,
        -0.0,
        f64::MIN_POSITIVE,
        0.5,
        3.0,
    ];
    let mut checked = 0;
    let mut ok = true;
    for &x in &values {
        for &g in &values {
            let expect = [
                (BackpropMode::Standard, if x > 0.0 { g } else { 0.0 }),
                (BackpropMode::Deconvnet, if g > 0.0 { g } else { 0.0 }),
                (
                    BackpropMode::Guided,
                    if x > 0.0 && g > 0.0 { g } else { 0.0 },
                ),
            ];
            for (mode, want) in expect {
                checked += 1;
                ok &= relu_backward(mode, x, g) == want;
            }
        }
    }
    (
        ok,
        format!("{checked} (mode, x, g) combinations over an 8×8 sign grid, exact"),
    )
}

fn gadget() -> (bool, String) {
    let gadget = zero_gradient_gadget();
    let (i, j) = (gadget.center, gadget.leaf);
    let mut lines = Vec::new();
    let mut ok = true;
    for self_loops in [false, true] {
        let g = gadget.graph.set_self_loops(self_loops);
        let config = ModelConfig {
            self_loops,
            epochs: 100,
            ..ModelConfig::gcn()
        };
        let model = model::train(&g, &config).unwrap();
        let sg = g.khop_subgraph(i, 2).unwrap();
        let before = model.predict(&sg).unwrap();
        let c = before.predicted_class;
        let grad =
            explain::feature_gradients(&model, &sg, sg.features(), c, BackpropMode::Standard)
                .unwrap();
        let max_grad = grad
            .row(sg.local_of(j).unwrap())
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let after = model.predict(&sg.delete_neighbors(&[j]).unwrap()).unwrap();
        let shift = (after.probabilities[c] - before.probabilities[c]).abs();
        if self_loops {
            ok &= max_grad > 1e-12;
            lines.push(format!(
                "with self-loops max|∂y/∂X_j| = {max_grad:.3e} (> 0)"
            ));
        } else {
            ok &= max_grad < 1e-12 && shift > 1e-6;
            lines.push(format!(
                "without self-loops max|∂y/∂X_j| = {max_grad:.1e} (< 1e-12), deleting j moves P(class {c}) by {shift:.3e} (> 1e-6)"
            ));
        }
    }
    (ok, lines.join("; "))
}

fn random_explanations(rng: &mut ChaCha8Rng, model: &TrainedModel, g: &Graph) -> Vec<Explanation> {
    let plain = PlainGraph::of(g);
    (0..g.num_nodes())
        .map(|t| {
            let mut raw = BTreeMap::new();
            let mut importance = BTreeMap::new();
            for id in common::receptive_field(&plain, t, 2) {
                let r = if rng.random_bool(0.25) {
                    0.0
                } else {
                    rng.random_range(-1.0..1.0)
                };
                raw.insert(id, r);
                // coarse grid so that ties occur
                importance.insert(id, rng.random_range(0..5) as f64 / 4.0);
            }
            Explanation {
                target: t,
                method: Method::Saliency,
                predicted_class: common::predict(model, &plain, t).0,
                importance,
                raw,
            }
        })
        .collect()
}

fn metric_oracle() -> (bool, String) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut nodes_seen = 0;
    for k in 0..50u64 {
        let mut rng = rng::stream(k, Stream::Synthetic, 21);
        let arch = if k % 2 == 0 { Arch::Gcn } else { Arch::GatV2 };
        let nodes = rng.random_range(1..=8);
        let loops = rng.random_bool(0.5);
        let undirected = rng.random_bool(0.5);
        let g = random_graph(&mut rng, nodes, 3, 3, 0.35, undirected, loops);
        let model = random_model(&mut rng, arch, loops, 3, 3);
        let exps = random_explanations(&mut rng, &model, &g);
        nodes_seen += nodes;
        let opts = EvalOptions {
            jobs: 1,
            ..EvalOptions::default()
        };
        for descending in [true, false] {
            let dir = if descending {
                Direction::Descending
            } else {
                Direction::Ascending
            };
            let (l, p) = match metrics::curves(&model, &g, &exps, dir, &opts) {
                Ok(c) => c,
                Err(e) => return (false, format!("graph {k}: {e}")),
            };
            let oracle = common::curves(&model, &g, &exps, descending);
            ok &= l.n_evaluated == oracle.evaluated;
            for (s, &(_, v)) in l.points.iter().enumerate() {
                worst = worst.max((v - oracle.loyalty[s]).abs());
            }
            for (s, &(_, v)) in p.points.iter().enumerate() {
                worst = worst.max((v - oracle.probabilities[s]).abs());
            }
            worst =
                worst.max((metrics::auc(&l).unwrap() - common::trapezoid(&oracle.loyalty)).abs());
            worst = worst
                .max((metrics::auc(&p).unwrap() - common::trapezoid(&oracle.probabilities)).abs());
        }
        let targets: Vec<usize> = (0..nodes).collect();
        let plain = PlainGraph::of(&g);
        let nonzero =
            metrics::all_deleted_loyalty(&model, &g, AllDeleted::NonzeroImportance(&exps)).unwrap();
        let nonzero_oracle = common::all_deleted(&model, &g, &targets, |t| {
            exps[t]
                .raw
                .iter()
                .filter(|(_, r)| r.abs() > 1e-12)
                .map(|(&id, _)| id)
                .collect()
        });
        let all =
            metrics::all_deleted_loyalty(&model, &g, AllDeleted::AllNeighbors(&targets)).unwrap();
        let all_oracle = common::all_deleted(&model, &g, &targets, |t| {
            common::receptive_field(&plain, t, 2)
        });
        worst = worst
            .max((nonzero - nonzero_oracle).abs())
            .max((all - all_oracle).abs());
    }
    let elapsed = start.elapsed();
    ok &= worst <= 1e-12 && elapsed < Duration::from_secs(60);
    (
        ok,
        format!(
            "50 graphs ({nodes_seen} explained nodes), 4 curves + 4 AUCs + 2 all-deleted modes, max |library - oracle| = {worst:.1e} (<= 1e-12), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

struct Trained {
    graph: Graph,
    model: TrainedModel,
    targets: Vec<usize>,
    explanations: Vec<(Method, Vec<Explanation>)>,
}

fn train_and_explain(arch: Arch, self_loops: bool, seed: u64) -> Trained {
    let graph = community_graph(&CommunityConfig {
        self_loops,
        seed,
        ..CommunityConfig::cora_like()
    });
    let config = ModelConfig {
        self_loops,
        seed,
        ..ModelConfig::for_arch(arch)
    };
    let model = model::train(&graph, &config).unwrap();
    let targets = graph.nodes_in(Split::Test);
    let mut settings = ExplainSettings::for_graph(&graph, seed);
    let pg_config = PgExplainerConfig {
        seed,
        ..PgExplainerConfig::default()
    };
    settings.pg = Some(
        explain::pgexplainer_train(&model, &graph, &graph.nodes_in(Split::Train), &pg_config)
            .unwrap(),
    );
    let explanations = Method::ALL
        .iter()
        .map(|&m| {
            (
                m,
                explain::explain_nodes(m, &model, &graph, &targets, &settings, 0).unwrap(),
            )
        })
        .collect();
    Trained {
        graph,
        model,
        targets,
        explanations,
    }
}

fn baseline(t: &Trained) -> f64 {
    metrics::all_deleted_loyalty(&t.model, &t.graph, AllDeleted::AllNeighbors(&t.targets)).unwrap()
}

fn nonzero(t: &Trained, exps: &[Explanation]) -> f64 {
    metrics::all_deleted_loyalty(&t.model, &t.graph, AllDeleted::NonzeroImportance(exps)).unwrap()
}

fn accuracy(t: &Trained) -> f64 {
    t.model
        .log
        .last()
        .and_then(|l| l.test_accuracy)
        .unwrap_or(f64::NAN)
}

fn self_loop_equality(runs: &[&Trained]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for t in runs {
        let base = baseline(t);
        let mut equal = 0;
        for (m, exps) in &t.explanations {
            let v = nonzero(t, exps);
            if v == base {
                equal += 1;
            } else {
                ok = false;
                parts.push(format!("{} {m} {v:.4} != {base:.4}", t.model.config.arch));
            }
        }
        parts.push(format!(
            "{} (test acc {:.2}): {equal}/6 methods equal the all-neighbors value {base:.4}",
            t.model.config.arch,
            accuracy(t)
        ));
    }
    (ok, parts.join("; "))
}

fn deficiency(t: &Trained) -> (bool, String) {
    let base = baseline(t);
    let mut ok = true;
    let mut parts = vec![format!(
        "test acc {:.2}, all-neighbors {base:.3}",
        accuracy(t)
    )];
    for (m, exps) in &t.explanations {
        let v = nonzero(t, exps);
        let pass = if *m == Method::PgExplainer {
            v == base
        } else {
            v - base >= 0.1
        };
        ok &= pass;
        parts.push(format!("{m} {v:.3}"));
    }
    (
        ok,
        format!(
            "{} (PGExplainer must equal the baseline, the rest exceed it by >= 0.1)",
            parts.join(", ")
        ),
    )
}

fn proximity(t: &Trained) -> (bool, String) {
    let mut aucs = Vec::new();
    for (m, exps) in &t.explanations {
        if matches!(m, Method::Saliency | Method::Deconvnet | Method::Guided) {
            let curve = metrics::loyalty(&t.model, &t.graph, exps, Direction::Descending).unwrap();
            aucs.push((*m, metrics::auc(&curve).unwrap()));
        }
    }
    let max = aucs.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
    let min = aucs.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
    let listed: Vec<String> = aucs.iter().map(|(m, a)| format!("{m} {a:.4}")).collect();
    (
        max - min <= 0.02,
        format!(
            "loyalty AUC {}, max pairwise gap {:.4} (<= 0.02)",
            listed.join(", "),
            max - min
        ),
    )
}

fn trapezoids() -> (bool, String) {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 10.0).collect();
    let flat: Vec<(f64, f64)> = grid.iter().map(|&p| (p, 1.0)).collect();
    let line: Vec<(f64, f64)> = grid.iter().map(|&p| (p, 1.0 - p / 100.0)).collect();
    let knee = [(0.0, 1.0), (50.0, 1.0), (100.0, 0.0)];
    let got = [
        metrics::auc_points(&flat).unwrap(),
        metrics::auc_points(&line).unwrap(),
        metrics::auc_points(&knee).unwrap(),
    ];
    (
        got == [1.0, 0.5, 0.75],
        format!(
            "constant 1 -> {}, linear 1..0 -> {}, (0,1),(50,1),(100,0) -> {}",
            got[0], got[1], got[2]
        ),
    )
}

fn secondary(outcomes: &mut Vec<Outcome>) {
    let names = [
        "Cora training accuracy",
        "Cora loyalty AUCs with self-loops",
        "Cora all-deleted without self-loops",
        "Cora saliency probability AUCs",
    ];
    let Some(dir) = std::env::var_os("NEIGHBOR_XAI_CORA") else {
        for name in names {
            report(
                outcomes,
                false,
                name,
                None,
                "NEIGHBOR_XAI_CORA is not set; converted Cora unavailable".into(),
            );
        }
        return;
    };
    let cora = match neighbor_xai::graph::load_graph(&dir) {
        Ok(g) => g,
        Err(e) => {
            for name in names {
                report(
                    outcomes,
                    false,
                    name,
                    Some(false),
                    format!("cannot load Cora: {e}"),
                );
            }
            return;
        }
    };
    let mut accs = Vec::new();
    let mut ok = true;
    for (arch, floor) in [(Arch::Gcn, 0.75), (Arch::GatV2, 0.70)] {
        let start = Instant::now();
        let config = ModelConfig::for_arch(arch);
        let m = model::train(&cora, &config).unwrap();
        let acc = m.log.last().and_then(|l| l.test_accuracy).unwrap_or(0.0);
        ok &= acc >= floor && start.elapsed() < Duration::from_secs(600);
        accs.push(format!(
            "{arch} {acc:.3} (>= {floor}, {:.0}s)",
            start.elapsed().as_secs_f64()
        ));
    }
    report(outcomes, false, names[0], Some(ok), accs.join(", "));

    let with = run_cora(&cora, true);
    let (l, i): (Vec<f64>, Vec<f64>) = with.iter().map(|r| (r.1, r.2)).unzip();
    let gnn = with
        .iter()
        .position(|r| r.0 == Method::GnnExplainer)
        .unwrap();
    let lowest = l.iter().cloned().fold(f64::INFINITY, f64::min) == l[gnn];
    let highest = i.iter().cloned().fold(f64::NEG_INFINITY, f64::max) == i[gnn];
    let near = (l[gnn] - 0.74).abs() <= 0.05 && (i[gnn] - 0.97).abs() <= 0.05;
    report(
        outcomes,
        false,
        names[1],
        Some(lowest && highest && near),
        format!(
            "GNNExplainer L {:.3} I {:.3}; lowest L {lowest}, highest I {highest}",
            l[gnn], i[gnn]
        ),
    );

    let without = cora.set_self_loops(false);
    let config = ModelConfig {
        self_loops: false,
        ..ModelConfig::gcn()
    };
    let m = model::train(&without, &config).unwrap();
    let targets = without.nodes_in(Split::Test);
    let mut settings = ExplainSettings::for_graph(&without, 0);
    settings.pg = Some(
        explain::pgexplainer_train(
            &m,
            &without,
            &without.nodes_in(Split::Train),
            &PgExplainerConfig::default(),
        )
        .unwrap(),
    );
    let base =
        metrics::all_deleted_loyalty(&m, &without, AllDeleted::AllNeighbors(&targets)).unwrap();
    let mut ok = (base - 0.17).abs() <= 0.05;
    let mut parts = vec![format!("without neighbors {base:.3}")];
    for method in Method::ALL {
        let exps = explain::explain_nodes(method, &m, &without, &targets, &settings, 0).unwrap();
        let v = metrics::all_deleted_loyalty(&m, &without, AllDeleted::NonzeroImportance(&exps))
            .unwrap();
        ok &= if method == Method::PgExplainer {
            v == base
        } else {
            (v - 0.61).abs() <= 0.07
        };
        parts.push(format!("{method} {v:.3}"));
    }
    report(outcomes, false, names[2], Some(ok), parts.join(", "));

    let sal = with.iter().find(|r| r.0 == Method::Saliency).unwrap();
    report(
        outcomes,
        false,
        names[3],
        Some((sal.3 - 0.26).abs() <= 0.05 && (sal.4 - 0.09).abs() <= 0.04),
        format!(
            "saliency loyalty-probability AUC {:.3}, inverse {:.3}",
            sal.3, sal.4
        ),
    );
}

/// `(method, L, I, LP, ILP)` AUCs on Cora with self-loops, GCN.
fn run_cora(cora: &Graph, self_loops: bool) -> Vec<(Method, f64, f64, f64, f64)> {
    let g = cora.set_self_loops(self_loops);
    let m = model::train(&g, &ModelConfig::gcn()).unwrap();
    let targets = g.nodes_in(Split::Test);
    let mut settings = ExplainSettings::for_graph(&g, 0);
    settings.pg = Some(
        explain::pgexplainer_train(
            &m,
            &g,
            &g.nodes_in(Split::Train),
            &PgExplainerConfig::default(),
        )
        .unwrap(),
    );
    Method::ALL
        .iter()
        .map(|&method| {
            let exps = explain::explain_nodes(method, &m, &g, &targets, &settings, 0).unwrap();
            let opts = EvalOptions::default();
            let (l, lp) = metrics::curves(&m, &g, &exps, Direction::Descending, &opts).unwrap();
            let (i, ilp) = metrics::curves(&m, &g, &exps, Direction::Ascending, &opts).unwrap();
            let a = |c| metrics::auc(c).unwrap();
            (method, a(&l), a(&i), a(&lp), a(&ilp))
        })
        .collect()
}

fn main() {
    let mut outcomes = Vec::new();
    let (ok, d) = gradient_check();
    report(&mut outcomes, true, "Gradient correctness", Some(ok), d);
    let (ok, d) = relu_truth_table();
    report(&mut outcomes, true, "ReLU-mode truth table", Some(ok), d);
    let (ok, d) = gadget();
    report(&mut outcomes, true, "Zero-gradient gadget", Some(ok), d);
    let (ok, d) = metric_oracle();
    report(
        &mut outcomes,
        true,
        "Metric oracle equivalence",
        Some(ok),
        d,
    );

    let gcn_loops = train_and_explain(Arch::Gcn, true, 0);
    let gat_loops = train_and_explain(Arch::GatV2, true, 0);
    let (ok, d) = self_loop_equality(&[&gcn_loops, &gat_loops]);
    report(
        &mut outcomes,
        true,
        "All-deleted equality with self-loops",
        Some(ok),
        d,
    );
    let gcn_plain = train_and_explain(Arch::Gcn, false, 0);
    let (ok, d) = deficiency(&gcn_plain);
    report(
        &mut outcomes,
        true,
        "Self-loop deficiency pattern",
        Some(ok),
        d,
    );
    let (ok, d) = proximity(&gcn_loops);
    report(
        &mut outcomes,
        true,
        "Gradient-method proximity",
        Some(ok),
        d,
    );
    let (ok, d) = trapezoids();
    report(&mut outcomes, true, "Trapezoid AUC", Some(ok), d);

    secondary(&mut outcomes);

    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| o.primary && o.passed != Some(true))
        .map(|o| o.name)
        .collect();
    if !failed.is_empty() {
        eprintln!("primary criteria failed: {failed:?}");
        std::process::exit(1);
    }
    println!("all primary criteria passed");
}
