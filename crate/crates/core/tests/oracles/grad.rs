//! Finite-difference gradient checks for every layer and the full network.

use iknet::dataset::ModelInput;
use iknet::model::{Dims, Dropout, IknetParams, Variant};
use iknet::nn::{BiLstmStack, Binder, GruLayer, GruMode, Linear};
use iknet::rng;
use iknet::tensor::{check_gradients, GradCheckReport, Tape, Tensor, Var};

use super::{random_tensor, randomize, uniform};

pub const EPS: f64 = 1e-5;

/// `Σ y⊙w` with a fixed random `w`, so every output element matters.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let mut r = rng::rng_from(seed);
    let w = random_tensor(&mut r, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

fn check(tape: &mut Tape, loss: Var, leaves: &[Var]) -> GradCheckReport {
    check_gradients(tape, loss, leaves, EPS).unwrap()
}

pub fn linear(seed: u64) -> GradCheckReport {
    let mut r = rng::rng_from(seed);
    let mut layer = Linear::zeros(4, 3);
    randomize(&mut layer, seed, 1.0);
    let mut tape = Tape::new();
    let mut binder = Binder::new(true);
    let bound = layer.bind(&mut tape, &mut binder).unwrap();
    let x = tape.param(random_tensor(&mut r, &[2, 4]));
    let y = bound.forward(&mut tape, x).unwrap();
    let loss = weighted_sum(&mut tape, y, seed + 1);
    let mut leaves = binder.into_leaves();
    leaves.push(x);
    check(&mut tape, loss, &leaves)
}

pub fn gru(seed: u64, mode: GruMode) -> GradCheckReport {
    let mut r = rng::rng_from(seed);
    let mut layer = GruLayer::zeros(3, 2, mode);
    randomize(&mut layer, seed, 1.0);
    let mut tape = Tape::new();
    let mut binder = Binder::new(true);
    let bound = layer.bind(&mut tape, &mut binder).unwrap();
    let steps: Vec<Var> = (0..4).map(|_| tape.param(random_tensor(&mut r, &[2, 3]))).collect();
    let y = bound.forward(&mut tape, &steps).unwrap();
    let loss = weighted_sum(&mut tape, y, seed + 1);
    let mut leaves = binder.into_leaves();
    leaves.extend(&steps);
    check(&mut tape, loss, &leaves)
}

pub fn bilstm(seed: u64, layers: usize) -> GradCheckReport {
    let mut r = rng::rng_from(seed);
    let mut stack = BiLstmStack::zeros(3, 2, layers);
    randomize(&mut stack, seed, 1.0);
    let mut tape = Tape::new();
    let mut binder = Binder::new(true);
    let bound = stack.bind(&mut tape, &mut binder).unwrap();
    let steps: Vec<Var> = (0..4).map(|_| tape.param(random_tensor(&mut r, &[2, 3]))).collect();
    let y = bound.encode(&mut tape, &steps).unwrap();
    let loss = weighted_sum(&mut tape, y, seed + 1);
    let mut leaves = binder.into_leaves();
    leaves.extend(&steps);
    check(&mut tape, loss, &leaves)
}

pub fn small_dims() -> Dims {
    Dims {
        window: 3,
        features: 4,
        keywords: 3,
        embed: 3,
        hidden: 3,
    }
}

pub fn random_input(dims: &Dims, seed: u64) -> ModelInput {
    let mut r = rng::rng_from(seed);
    ModelInput {
        keywords: uniform(&mut r, dims.keyword_len(), -1.0, 1.0),
        window: uniform(&mut r, dims.window_len(), -1.5, 1.5),
    }
}

/// MSE of the full network on a random 4-sample batch, checked against
/// every parameter.
pub fn iknet(seed: u64, variant: Variant, gru_mode: GruMode, lstm_layers: usize, dropout: Dropout) -> GradCheckReport {
    let dims = small_dims();
    let mut params = IknetParams::new(dims, lstm_layers, gru_mode, seed);
    randomize(&mut params, seed, 0.8);
    let xs: Vec<ModelInput> = (0..4).map(|i| random_input(&dims, seed * 10 + i)).collect();
    let refs: Vec<&ModelInput> = xs.iter().collect();
    let mut r = rng::rng_from(seed + 7);
    let mut tape = Tape::new();
    let mut binder = Binder::new(true);
    let bound = params.bind(&mut tape, &mut binder).unwrap();
    let y = bound.forward(&mut tape, &refs, variant, dropout).unwrap();
    let target = tape.constant(Tensor::new(vec![4, 1], uniform(&mut r, 4, -1.0, 1.0)).unwrap());
    let loss = tape.mse(y, target).unwrap();
    let leaves = binder.into_leaves();
    check(&mut tape, loss, &leaves)
}

/// Every case of the suite with its report.
pub fn suite() -> Vec<(String, GradCheckReport)> {
    let train_dropout = Dropout {
        rate: 0.3,
        training: true,
        seed: 11,
    };
    let mut out = vec![
        ("linear".to_string(), linear(1)),
        ("gru bidirectional".to_string(), gru(2, GruMode::Bidirectional)),
        ("gru unidirectional-2h".to_string(), gru(3, GruMode::Unidirectional2h)),
        ("bilstm 1 layer".to_string(), bilstm(4, 1)),
        ("bilstm 2 layers".to_string(), bilstm(5, 2)),
    ];
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        out.push((
            format!("iknet {v}"),
            iknet(20 + i as u64, v, GruMode::Bidirectional, 1, Dropout::OFF),
        ));
    }
    out.push((
        "iknet full unidirectional-2h, 2 lstm layers".to_string(),
        iknet(30, Variant::Full, GruMode::Unidirectional2h, 2, Dropout::OFF),
    ));
    out.push((
        "iknet full with training dropout".to_string(),
        iknet(31, Variant::Full, GruMode::Bidirectional, 1, train_dropout),
    ));
    out
}
