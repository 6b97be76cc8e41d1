//! Library forward passes and subgraph extraction against the brute-force
//! implementations in `common`.

mod common;

use std::collections::BTreeSet;

use neighbor_xai::graph::synthetic::random_graph;
use neighbor_xai::model::{ModelConfig, TrainedModel};
use neighbor_xai::rng::{self, Stream};
use rand::Rng;

use common::PlainGraph;

fn models(features: usize, classes: usize, seed: u64, self_loops: bool) -> [TrainedModel; 2] {
    let gcn = ModelConfig {
        hidden_dim: 5,
        seed,
        self_loops,
        ..ModelConfig::gcn()
    };
    let gat = ModelConfig {
        hidden_dim: 3,
        heads: 2,
        output_heads: 2,
        seed,
        self_loops,
        ..ModelConfig::gatv2()
    };
    [gcn, gat].map(|c| TrainedModel::initialize(c, features, classes).unwrap())
}

#[test]
fn whole_graph_logits_match_nested_loops() {
    let mut rng = rng::stream(11, Stream::Synthetic, 0);
    for case in 0..20 {
        let loops = case % 2 == 0;
        let undirected = rng.random_bool(0.5);
        let g = random_graph(&mut rng, 9, 4, 3, 0.3, undirected, loops);
        for m in models(4, 3, case, loops) {
            let got = m.predict_all(&g, &(0..9).collect::<Vec<_>>()).unwrap();
            let want = common::logits(&m, &PlainGraph::of(&g));
            for (p, w) in got.iter().zip(&want) {
                for (a, b) in p.logits.iter().zip(w) {
                    assert!(
                        (a - b).abs() < 1e-12,
                        "{} case {case}: {a} vs {b}",
                        m.config.arch
                    );
                }
            }
        }
    }
}

#[test]
fn subgraph_prediction_equals_whole_graph_prediction() {
    let mut rng = rng::stream(12, Stream::Synthetic, 0);
    for case in 0..20 {
        let loops = case % 3 != 0;
        let g = random_graph(&mut rng, 10, 3, 2, 0.25, case % 2 == 0, loops);
        for m in models(3, 2, case, loops) {
            let whole = m.predict_all(&g, &(0..10).collect::<Vec<_>>()).unwrap();
            for (v, w) in whole.iter().enumerate() {
                let local = m.predict(&g.khop_subgraph(v, 2).unwrap()).unwrap();
                for (a, b) in local.logits.iter().zip(&w.logits) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn khop_neighbors_match_breadth_first_search() {
    let mut rng = rng::stream(13, Stream::Synthetic, 0);
    for case in 0..30 {
        let g = random_graph(&mut rng, 12, 2, 2, 0.15, case % 2 == 0, case % 4 == 0);
        let plain = PlainGraph::of(&g);
        for v in 0..12 {
            for hops in 1..=3 {
                let sg = g.khop_subgraph(v, hops).unwrap();
                let got: BTreeSet<usize> = sg.neighbor_ids().iter().copied().collect();
                assert_eq!(
                    got,
                    common::receptive_field(&plain, v, hops),
                    "node {v}, {hops} hops"
                );
            }
        }
    }
}

#[test]
fn deleting_neighbors_in_the_subgraph_equals_rebuilding_the_graph() {
    let mut rng = rng::stream(14, Stream::Synthetic, 0);
    for case in 0..15 {
        let loops = case % 2 == 1;
        let g = random_graph(&mut rng, 8, 3, 3, 0.35, true, loops);
        let plain = PlainGraph::of(&g);
        for m in models(3, 3, case, loops) {
            for v in 0..8 {
                let sg = g.khop_subgraph(v, 2).unwrap();
                let victims: Vec<usize> = sg
                    .neighbor_ids()
                    .iter()
                    .copied()
                    .filter(|_| rng.random_bool(0.5))
                    .collect();
                let got = m.predict(&sg.delete_neighbors(&victims).unwrap()).unwrap();
                let gone: BTreeSet<usize> = victims.iter().copied().collect();
                let (_, want) = common::predict(&m, &plain.without(&gone), v);
                for (a, b) in got.probabilities.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn self_loop_toggle_is_idempotent() {
    let mut rng = rng::stream(15, Stream::Synthetic, 0);
    for case in 0..10 {
        let g = random_graph(&mut rng, 7, 2, 2, 0.3, case % 2 == 0, case % 3 == 0);
        let on = g.set_self_loops(true);
        assert_eq!(on.edges(), on.set_self_loops(true).edges());
        let off = g.set_self_loops(false);
        assert_eq!(off.edges(), off.set_self_loops(false).edges());
        assert_eq!(off.edges(), on.set_self_loops(false).edges());
        assert_eq!(on.edges().len(), off.edges().len() + 7);
        assert!(off.edges().iter().all(|(s, t)| s != t));
    }
}
