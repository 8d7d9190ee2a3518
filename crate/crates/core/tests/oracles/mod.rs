//! Independent reference implementations shared by the integration tests
//! and the acceptance report.
#![allow(dead_code)]

pub mod backtest;
pub mod grad;
pub mod indicators;
pub mod rnn;
pub mod shap;

use iknet::nn::Parameters;
use iknet::rng::{self, Rng};
use iknet::tensor::Tensor;
use rand::Rng as _;

pub fn uniform(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

pub fn random_tensor(r: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(r, n, -1.0, 1.0)).unwrap()
}

/// Overwrite every parameter (biases included) with `U(-scale, scale)`.
pub fn randomize<P: Parameters>(p: &mut P, seed: u64, scale: f64) {
    let mut r = rng::rng_from(seed);
    p.visit_mut("", &mut |_, t| {
        for v in t.data_mut() {
            *v = r.gen_range(-scale..scale);
        }
    });
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W·v` for a row-major `rows×cols` matrix.
pub fn matvec(w: &Tensor, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(cols, v.len());
    (0..rows)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..cols {
                s += w.data()[i * cols + j] * v[j];
            }
            s
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
