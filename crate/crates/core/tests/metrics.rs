mod common;

use common::naive_metrics;
use cuedepth::metrics::{delta_acc, evaluate, MetricsReport};
use proptest::prelude::*;

#[test]
fn perfect_prediction_report() {
    let gt = [1.0, 2.5, 9.0];
    let r = evaluate(&gt, &gt, None).unwrap();
    assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    assert_eq!(r.t, 3);
}

#[test]
fn ratio_of_exactly_one_point_two_five_fails_delta_one() {
    assert_eq!(delta_acc(&[2.5], &[2.0], None, 1).unwrap(), 0.0);
    assert_eq!(delta_acc(&[2.5], &[2.0], None, 2).unwrap(), 1.0);
    assert_eq!(delta_acc(&[2.0], &[2.5], None, 1).unwrap(), 0.0);
}

#[test]
fn json_is_flat_with_pixel_count() {
    let r = evaluate(&[1.1, 1.8, 4.4], &[1.0, 2.0, 4.0], None).unwrap();
    let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), 8);
    assert_eq!(obj["T"], 3);
    let back: MetricsReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (1usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..20.0, n),
            prop::collection::vec(0.05f64..20.0, n),
            prop::collection::vec(prop::bool::weighted(0.8), n),
        )
    })
}

proptest! {
    #[test]
    fn deltas_are_nested((pred, gt, _) in pairs()) {
        let r = evaluate(&pred, &gt, None).unwrap();
        prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
    }

    #[test]
    fn agrees_with_naive_oracle((pred, gt, mask) in pairs()) {
        prop_assume!(mask.iter().any(|&m| m));
        let r = evaluate(&pred, &gt, Some(&mask)).unwrap();
        let (want, t) = naive_metrics(&pred, &gt, Some(&mask));
        prop_assert_eq!(r.t, t);
        for (a, b) in r.values().iter().zip(want) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
