//! Forward values against independent references: nested scalar loops for
//! the array ops and attention modules, arbitrary precision for the loss.

mod common;

use common::oracles as checks;

#[test]
fn conv2d_matches_nested_loops() {
    checks::conv2d_matches_nested_loops();
}

#[test]
fn channel_pools_match_loops() {
    checks::channel_pools_match_loops();
}

#[test]
fn fully_connected_matches_loop_matmul() {
    checks::fully_connected_matches_loop_matmul();
}

#[test]
fn global_average_pool_matches_loop() {
    checks::global_average_pool_matches_loop();
}

#[test]
fn attention_modules_match_scalar_loops_on_100_shapes() {
    checks::attention_modules_match_scalar_loops_on_100_shapes();
}

#[test]
fn avam_on_identical_streams_with_tied_convs_matches_the_loop() {
    checks::avam_on_identical_streams_with_tied_convs_matches_the_loop();
}

#[test]
fn bce_matches_arbitrary_precision() {
    checks::bce_matches_arbitrary_precision();
}

#[test]
fn loss_is_permutation_invariant() {
    checks::loss_is_permutation_invariant();
}

#[test]
fn sigmoid_tails_and_symmetry() {
    checks::sigmoid_tails_and_symmetry();
}

#[test]
fn dropout_keeps_the_mean() {
    checks::dropout_keeps_the_mean();
}

#[test]
fn batch_norm_train_output_is_standardized() {
    checks::batch_norm_train_output_is_standardized();
}
