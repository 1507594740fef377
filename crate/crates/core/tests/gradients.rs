mod common;

use common::gradcheck::{self, Check};

fn assert_all(checks: Vec<Check>) {
    assert!(!checks.is_empty());
    for c in &checks {
        println!("{}: relative error {:.3e} (tol {:e})", c.name, c.error, c.tol);
    }
    for c in &checks {
        assert!(c.passed(), "{}: relative error {:e} >= {:e}", c.name, c.error, c.tol);
    }
}

#[test]
fn depthwise() {
    assert_all(gradcheck::depthwise_gradients());
}

#[test]
fn pointwise() {
    assert_all(gradcheck::pointwise_gradients());
}

#[test]
fn batchnorm_training_mode() {
    assert_all(gradcheck::batchnorm_gradients_in_training_mode());
}

#[test]
fn batchnorm_inference_mode() {
    assert_all(gradcheck::batchnorm_gradients_in_inference_mode());
}

#[test]
fn relu_away_from_kink() {
    assert_all(gradcheck::relu_gradient_away_from_kink());
}

#[test]
fn four_block_model_training_mode() {
    assert_all(gradcheck::four_block_model_end_to_end());
}

#[test]
fn four_block_model_inference_mode() {
    assert_all(gradcheck::four_block_model_inference_mode());
}

#[test]
fn mixed_loss_with_l1_term() {
    assert_all(gradcheck::mixed_loss_through_l1_term());
}

#[test]
fn masked_loss() {
    assert_all(gradcheck::masked_loss_gradient());
}
