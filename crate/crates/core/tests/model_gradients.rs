mod common;

use common::{grad_cfg, max_relative_error, GRAD_IDS};

#[test]
fn backward_matches_central_differences() {
    let (err, at) = max_relative_error(grad_cfg(2), 0.02, &GRAD_IDS);
    eprintln!("max relative error {err:e} at {at}");
    assert!(err < 1e-4, "max relative error {err:e} at {at}");
}

#[test]
fn backward_matches_central_differences_with_grouped_kv_and_large_weights() {
    let (err, at) = max_relative_error(grad_cfg(1), 0.3, &GRAD_IDS);
    eprintln!("max relative error {err:e} at {at}");
    assert!(err < 1e-4, "max relative error {err:e} at {at}");
}
