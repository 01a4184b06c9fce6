//! Moment assembly checked against a dense oracle that materializes the
//! stacked data, the differencing matrix `D` and `P_m = I (x) P_m1`.

mod common;

#[test]
fn streaming_matches_dense_oracle() {
    let (count, worst) = common::oracle_deviation();
    assert!(count >= 100);
    assert!(worst < 1e-12, "largest deviation {worst:.3e}");
}

#[test]
fn jacobian_matches_central_differences() {
    for (case, rel) in common::finite_difference_errors(20).into_iter().enumerate() {
        assert!(rel < 1e-6, "case {case}: relative error {rel:.3e}");
    }
}

#[test]
fn fixed_effects_difference_out() {
    let d = common::fixed_effect_shift();
    assert!(d < 1e-12, "moments moved by {d:.3e}");
}
