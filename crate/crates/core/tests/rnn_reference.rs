mod oracles;

use iknet::nn::{BiLstmStack, GruLayer, GruMode};
use iknet::rng;
use iknet::tensor::Tensor;
use oracles::{max_abs_diff, randomize, rnn, uniform};

#[test]
fn gru_matches_gate_by_gate_reference_on_100_instances() {
    let worst = rnn::gru_oracle(100, 17);
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

#[test]
fn bilstm_matches_gate_by_gate_reference_on_100_instances() {
    let worst = rnn::bilstm_oracle(100, 29);
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

#[test]
fn gru_three_keywords_width_two() {
    let mut layer = GruLayer::zeros(4, 2, GruMode::Bidirectional);
    randomize(&mut layer, 3, 1.0);
    let mut r = rng::rng_from(4);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| uniform(&mut r, 4, -1.0, 1.0)).collect();
    let got = layer.forward_sequence(&xs).unwrap();
    assert_eq!(got.len(), 4);
    assert!(max_abs_diff(&got, &rnn::gru_layer(&layer, &xs)) < 1e-12);
}

#[test]
fn bilstm_four_steps_two_layers() {
    let mut stack = BiLstmStack::zeros(3, 2, 2);
    randomize(&mut stack, 5, 1.0);
    let mut r = rng::rng_from(6);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| uniform(&mut r, 3, -1.0, 1.0)).collect();
    let got = stack.encode(&Tensor::from_rows(&xs).unwrap()).unwrap();
    assert_eq!(got.len(), 4);
    assert!(max_abs_diff(&got, &rnn::bilstm_encode(&stack, &xs)) < 1e-12);
}
