//! Analytic backward passes against central finite differences in f64.

use illumsplat_core::check::{check_gradient, CheckResult, GradOp};

const INSTANCES: usize = 100;

fn run(op: GradOp) -> CheckResult {
    let r = check_gradient(op, 7, INSTANCES, false);
    assert_eq!(r.instances, INSTANCES, "{}: too many rejected instances ({})", r.name, r.rejected);
    assert!(r.passed(), "{}: max relative error {:.3e}", r.name, r.max_error);
    println!("{}: {} instances, {} rejected, max rel err {:.2e}", r.name, r.instances, r.rejected, r.max_error);
    r
}

#[test]
fn field_backward_matches_finite_differences() {
    run(GradOp::Field);
}

#[test]
fn covariance_backward_matches_finite_differences() {
    run(GradOp::Covariance);
}

#[test]
fn projection_backward_matches_finite_differences() {
    run(GradOp::Projection);
}

#[test]
fn conic_backward_matches_finite_differences() {
    run(GradOp::Conic);
}

#[test]
fn view_direction_backward_matches_finite_differences() {
    run(GradOp::ViewDirection);
}

#[test]
fn ide_backward_matches_finite_differences() {
    run(GradOp::Ide);
}

#[test]
fn fourier_backward_matches_finite_differences() {
    run(GradOp::Fourier);
}

#[test]
fn shader_backward_matches_finite_differences() {
    run(GradOp::Shader);
}

#[test]
fn rasterizer_backward_matches_finite_differences() {
    run(GradOp::Rasterizer);
}

#[test]
fn dssim_backward_matches_finite_differences() {
    run(GradOp::Dssim);
}

#[test]
fn l1_backward_matches_finite_differences() {
    run(GradOp::L1);
}

#[test]
fn full_render_backward_matches_finite_differences() {
    run(GradOp::Render);
}

#[test]
fn sign_flip_is_detected() {
    for op in [GradOp::Field, GradOp::Rasterizer, GradOp::Shader] {
        let r = check_gradient(op, 7, 10, true);
        assert!(!r.passed(), "{} passed with a flipped sign", r.name);
    }
}
