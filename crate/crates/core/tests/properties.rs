use neighbor_xai::metrics::{auc_points, schedule};
use neighbor_xai::tape::{relu_backward, BackpropMode, Tape};
use neighbor_xai::tensor::DenseMatrix;
use proptest::prelude::*;

const MODES: [BackpropMode; 3] = [
    BackpropMode::Standard,
    BackpropMode::Deconvnet,
    BackpropMode::Guided,
];

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |d| DenseMatrix::from_vec(rows, cols, d).unwrap())
}

/// `sum(relu(x·w1)·w2)` when `with_relu`, else `sum(sigmoid(x·w1)·w2)`.
fn record(
    x: &DenseMatrix,
    w1: &DenseMatrix,
    w2: &DenseMatrix,
    with_relu: bool,
) -> (Tape, [neighbor_xai::tape::Var; 4]) {
    let mut t = Tape::new();
    let xv = t.leaf(x.clone());
    let a = t.leaf(w1.clone());
    let b = t.leaf(w2.clone());
    let h = t.matmul(xv, a);
    let h = if with_relu { t.relu(h) } else { t.sigmoid(h) };
    let o = t.matmul(h, b);
    let s = t.sum(o);
    (t, [xv, a, b, s])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_deterministic(x in matrix(3, 4), w1 in matrix(4, 5), w2 in matrix(5, 2)) {
        let (t, [xv, .., s]) = record(&x, &w1, &w2, true);
        for mode in MODES {
            let a = t.backward(s, mode).unwrap();
            let b = t.backward(s, mode).unwrap();
            prop_assert_eq!(a.get(xv), b.get(xv));
        }
    }

    #[test]
    fn modes_agree_without_relu(x in matrix(3, 4), w1 in matrix(4, 5), w2 in matrix(5, 2)) {
        let (t, vars) = record(&x, &w1, &w2, false);
        let s = vars[3];
        let standard = t.backward(s, BackpropMode::Standard).unwrap();
        for mode in [BackpropMode::Deconvnet, BackpropMode::Guided] {
            let other = t.backward(s, mode).unwrap();
            for v in &vars[..3] {
                prop_assert_eq!(standard.get(*v), other.get(*v));
            }
        }
    }

    #[test]
    fn guided_passes_only_where_both_others_pass(x in -3.0..3.0f64, g in -3.0..3.0f64) {
        if relu_backward(BackpropMode::Guided, x, g) != 0.0 {
            prop_assert!(relu_backward(BackpropMode::Standard, x, g) != 0.0);
            prop_assert!(relu_backward(BackpropMode::Deconvnet, x, g) != 0.0);
        }
    }

    #[test]
    fn auc_respects_pointwise_dominance(
        low in prop::collection::vec(0.0..1.0f64, 11),
        bump in prop::collection::vec(0.0..1.0f64, 11),
    ) {
        let pts = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| (i as f64 * 10.0, y)).collect::<Vec<_>>();
        let high: Vec<f64> = low.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let (a, b) = (auc_points(&pts(&low)).unwrap(), auc_points(&pts(&high)).unwrap());
        prop_assert!(b >= a);
        prop_assert!((0.0..=2.0).contains(&b));
    }

    #[test]
    fn deletion_schedules_are_nested(m in 0usize..40, mut percents in prop::collection::btree_set(0u32..=100, 2..12)) {
        percents.insert(0);
        percents.insert(100);
        let percents: Vec<u32> = percents.into_iter().collect();
        let neighbors: Vec<usize> = (0..m).map(|i| i * 3).collect();
        let s = schedule(&neighbors, &percents);
        prop_assert_eq!(s.counts[0], 0);
        prop_assert_eq!(*s.counts.last().unwrap(), m);
        prop_assert!(s.counts.windows(2).all(|w| w[0] <= w[1]));
        for (step, &t) in percents.iter().enumerate() {
            let exact = t as f64 * m as f64 / 100.0;
            prop_assert!((s.counts[step] as f64 - exact).abs() <= 0.5);
            prop_assert!(s.victims(step).iter().zip(&neighbors).all(|(a, b)| a == b));
        }
    }
}
