use proptest::prelude::*;
use views_nn::{ParamSet, Tape, Tensor};

fn matrix() -> impl Strategy<Value = Tensor> {
    (1usize..5, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-30.0f64..30.0, r * c).prop_map(move |d| Tensor::from_vec(r, c, d))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in matrix(), causal in any::<bool>()) {
        let ps = ParamSet::new();
        let mut tape = Tape::new(&ps);
        let v = tape.constant(x.clone());
        let s = tape.softmax_rows(v, causal);
        let out = tape.value(s);
        let (rows, cols) = x.shape();
        for i in 0..rows {
            let row = out.row(i);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if causal {
                prop_assert!(row[(i + 1).min(cols)..].iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(x in matrix(), shift in -50.0f64..50.0) {
        let ps = ParamSet::new();
        let mut tape = Tape::new(&ps);
        let shifted = Tensor::from_vec(x.shape().0, x.shape().1, x.data.iter().map(|v| v + shift).collect());
        let (a, b) = (tape.constant(x), tape.constant(shifted));
        let (sa, sb) = (tape.softmax_rows(a, false), tape.softmax_rows(b, false));
        for (p, q) in tape.value(sa).data.iter().zip(&tape.value(sb).data) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
