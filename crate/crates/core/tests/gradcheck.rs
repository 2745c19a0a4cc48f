mod common;

use common::grad::{self, TOLERANCE};

fn check(name: &str, err: f64) {
    assert!(err < TOLERANCE, "{name}: max relative error {err:e}");
}

#[test]
fn conv2d_gradients() {
    check("conv2d", grad::conv2d_case());
}

#[test]
fn conv_transpose2d_gradients() {
    check("conv_transpose2d", grad::conv_transpose2d_case());
}

#[test]
fn relu_gradients() {
    check("relu", grad::relu_case());
}

#[test]
fn concat_gradients() {
    check("concat", grad::concat_case());
}

#[test]
fn wavelet_gradients() {
    check("dwt2_idwt2", grad::wavelet_case());
}

#[test]
fn loss_gradients() {
    check("losses", grad::losses_case());
}

#[test]
fn pipeline_gradients() {
    check("pipeline", grad::pipeline_case());
}
