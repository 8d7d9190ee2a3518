//! Scalar gate-by-gate GRU and Bi-LSTM references.

use iknet::nn::{BiLstmStack, GruCell, GruLayer, GruMode, LstmCell};
use iknet::rng;
use iknet::tensor::Tensor;
use rand::Rng as _;

use super::{matvec, max_abs_diff, randomize, sigmoid, uniform};

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn affine(w: &Tensor, b: &Tensor, v: &[f64]) -> Vec<f64> {
    matvec(w, v).iter().zip(b.data()).map(|(x, b)| x + b).collect()
}

pub fn gru_step(c: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
    let xh = concat(x, h);
    let z: Vec<f64> = affine(&c.w_update, &c.b_update, &xh).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = affine(&c.w_reset, &c.b_reset, &xh).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
    let n: Vec<f64> = affine(&c.w_candidate, &c.b_candidate, &concat(x, &rh))
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len()).map(|j| z[j] * h[j] + (1.0 - z[j]) * n[j]).collect()
}

pub fn gru_run<'a>(c: &GruCell, xs: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut h = vec![0.0; c.hidden()];
    for x in xs {
        h = gru_step(c, x, &h);
    }
    h
}

pub fn gru_layer(layer: &GruLayer, xs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = gru_run(&layer.forward, xs.iter());
    if let Some(b) = &layer.backward {
        out.extend(gru_run(b, xs.iter().rev()));
    }
    out
}

pub fn lstm_step(c: &LstmCell, x: &[f64], h: &[f64], cell: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let xh = concat(x, h);
    let i: Vec<f64> = affine(&c.w_input, &c.b_input, &xh).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = affine(&c.w_forget, &c.b_forget, &xh).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = affine(&c.w_cell, &c.b_cell, &xh).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = affine(&c.w_output, &c.b_output, &xh).into_iter().map(sigmoid).collect();
    let c_next: Vec<f64> = (0..h.len()).map(|j| f[j] * cell[j] + i[j] * g[j]).collect();
    let h_next = (0..h.len()).map(|j| o[j] * c_next[j].tanh()).collect();
    (h_next, c_next)
}

/// Hidden state at every position, indexed by position.
fn lstm_states(c: &LstmCell, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let hs = c.hidden();
    let mut h = vec![0.0; hs];
    let mut cell = vec![0.0; hs];
    let mut out = vec![Vec::new(); xs.len()];
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for t in order {
        let (hn, cn) = lstm_step(c, &xs[t], &h, &cell);
        h = hn;
        cell = cn;
        out[t] = h.clone();
    }
    out
}

pub fn bilstm_encode(stack: &BiLstmStack, xs: &[Vec<f64>]) -> Vec<f64> {
    let mut seq = xs.to_vec();
    for layer in &stack.layers {
        let f = lstm_states(&layer.forward, &seq, false);
        let b = lstm_states(&layer.backward, &seq, true);
        seq = f.iter().zip(&b).map(|(a, b)| concat(a, b)).collect();
    }
    let width = seq[0].len();
    let mut mean = vec![0.0; width];
    for s in &seq {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter().map(|m| m / seq.len() as f64).collect()
}

/// Worst deviation between the library GRU and the reference over
/// `instances` random shapes, parameters and inputs.
pub fn gru_oracle(instances: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut r = rng::rng_from(seed + k as u64);
        let input = r.gen_range(1..5);
        let hidden = r.gen_range(1..5);
        let n = r.gen_range(1..7);
        let mode = if k % 2 == 0 {
            GruMode::Bidirectional
        } else {
            GruMode::Unidirectional2h
        };
        let mut layer = GruLayer::zeros(input, hidden, mode);
        randomize(&mut layer, seed ^ (1000 + k as u64), 1.0);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| uniform(&mut r, input, -2.0, 2.0)).collect();
        let got = layer.forward_sequence(&xs).unwrap();
        worst = worst.max(max_abs_diff(&got, &gru_layer(&layer, &xs)));
    }
    worst
}

pub fn bilstm_oracle(instances: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut r = rng::rng_from(seed + k as u64);
        let f = r.gen_range(1..5);
        let hidden = r.gen_range(1..4);
        let layers = r.gen_range(1..4);
        let t = r.gen_range(1..7);
        let mut stack = BiLstmStack::zeros(f, hidden, layers);
        randomize(&mut stack, seed ^ (2000 + k as u64), 1.0);
        let xs: Vec<Vec<f64>> = (0..t).map(|_| uniform(&mut r, f, -2.0, 2.0)).collect();
        let window = Tensor::from_rows(&xs).unwrap();
        let got = stack.encode(&window).unwrap();
        worst = worst.max(max_abs_diff(&got, &bilstm_encode(&stack, &xs)));
    }
    worst
}
