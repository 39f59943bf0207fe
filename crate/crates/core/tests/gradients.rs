mod common;

use common::fd::{ce_case, grpo_case};

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let (worst, global) = ce_case();
    assert!(worst < 1e-3 && global < 1e-3, "worst {worst:e}, global {global:e}");
}

#[test]
fn grpo_gradient_matches_finite_differences() {
    let (worst, global) = grpo_case();
    assert!(worst < 1e-3 && global < 1e-3, "worst {worst:e}, global {global:e}");
}
