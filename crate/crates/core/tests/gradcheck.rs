mod support;

use support::gradients::{full_model_check, layer_checks, primitive_checks};

fn assert_below(results: &[(String, f64)], bound: f64) {
    for (name, e) in results {
        println!("{name}: {e:.3e}");
    }
    let failures: Vec<_> = results.iter().filter(|(_, e)| e.is_nan() || *e >= bound).collect();
    assert!(failures.is_empty(), "relative error at or above {bound}: {failures:?}");
}

#[test]
fn primitives_match_central_differences() {
    assert_below(&primitive_checks(), 1e-6);
}

#[test]
fn layers_match_central_differences() {
    let (results, key_bias) = layer_checks();
    assert_eq!(results.len(), 14);
    assert_below(&results, 1e-4);
    for (analytic, numeric) in key_bias {
        assert!(
            analytic < 1e-12 && numeric < 1e-9,
            "key bias {analytic:e} / {numeric:e}"
        );
    }
}

#[test]
fn full_detector_matches_central_differences() {
    assert_below(&[full_model_check()], 1e-4);
}
