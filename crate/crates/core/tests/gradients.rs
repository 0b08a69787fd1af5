mod common;

use common::{embed_gradient_error, lstm_gradient_error, EmbedToy};
use cryptext_core::embed::Mode;

#[test]
fn pv_dm_gradient_all_parameters_reachable() {
    let toy = EmbedToy::new();
    for seed in [1, 2, 3] {
        let (err, active) = embed_gradient_error(Mode::PvDmMean, seed);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
        assert_eq!(active, toy.param_len());
    }
}

#[test]
fn pv_dbow_gradient_skips_input_vectors() {
    let toy = EmbedToy::new();
    for seed in [1, 2, 3] {
        let (err, active) = embed_gradient_error(Mode::PvDbow, seed);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
        assert_eq!(active, toy.param_len() - toy.v * toy.d);
    }
}

#[test]
fn lstm_gradient_matches_naive_network() {
    for seed in [0, 5, 9] {
        let (err, active) = lstm_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
        // recurrent kernels see only the zero initial state
        assert!(active > 50, "only {active} active parameters");
    }
}

#[test]
fn lstm_mask_zeroes_dense_rows() {
    let toy = common::lstm_toy(1);
    let masks = vec![vec![0.0; 3]; 3];
    let (_, grad) = toy.model.loss_and_grad(&toy.x, &toy.y, Some(&masks));
    let dense = toy
        .model
        .tensors()
        .into_iter()
        .find(|t| t.name == "dense/kernel")
        .unwrap();
    assert!(grad[dense.offset..dense.offset + dense.len()]
        .iter()
        .all(|&g| g == 0.0));
}
