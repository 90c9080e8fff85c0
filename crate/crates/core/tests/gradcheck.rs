//! Analytic gradients against central finite differences, per op and for
//! whole networks.

mod common;

use common::gradcheck as checks;

#[test]
fn conv2d_gradients() {
    checks::conv2d_gradients();
}

#[test]
fn channel_pool_gradients() {
    checks::channel_pool_gradients();
}

#[test]
fn elementwise_gradients() {
    checks::elementwise_gradients();
}

#[test]
fn concat_and_pooling_gradients() {
    checks::concat_and_pooling_gradients();
}

#[test]
fn fully_connected_gradients() {
    checks::fully_connected_gradients();
}

#[test]
fn batch_norm_gradients() {
    checks::batch_norm_gradients();
}

#[test]
fn dropout_gradients() {
    checks::dropout_gradients();
}

#[test]
fn bce_gradients() {
    checks::bce_gradients();
}

#[test]
fn sigmoid_of_product_at_origin() {
    checks::sigmoid_of_product_at_origin();
}

#[test]
fn end_to_end_tiny_model_gradients() {
    checks::end_to_end_tiny_model_gradients();
}
