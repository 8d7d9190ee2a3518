//! Layers built on the tape: linear projection, GRU, stacked Bi-LSTM, and Adam.
//!
//! Parameters live in plain [`Tensor`]s owned by the layer structs. A forward
//! pass first *binds* a layer to a tape (registering its tensors as leaves),
//! then runs the bound layer on batched `B×dim` inputs.

mod adam;
mod gru;
mod linear;
mod lstm;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gru::{BoundGru, GruCell, GruLayer, GruMode};
pub use linear::{BoundLinear, Linear};
pub use lstm::{BiLstmLayer, BiLstmStack, BoundBiLstm, LstmCell};

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Canonical-order access to a module's parameter tensors.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Registers parameter tensors on a tape, remembering the leaf order.
pub struct Binder {
    trainable: bool,
    leaves: Vec<Var>,
}

impl Binder {
    /// `trainable = false` binds parameters as constants (inference).
    pub fn new(trainable: bool) -> Self {
        Binder {
            trainable,
            leaves: Vec::new(),
        }
    }

    pub fn bind(&mut self, tape: &mut Tape, t: &Tensor) -> Var {
        let v = tape.leaf(t.clone(), self.trainable);
        self.leaves.push(v);
        v
    }

    /// Leaves in the same order as [`Parameters::visit`].
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    pub fn into_leaves(self) -> Vec<Var> {
        self.leaves
    }
}

/// `uniform(−1/√fan_in, 1/√fan_in)` weights of shape `rows × cols`.
pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

/// Stacks per-sample row vectors into a `B×dim` constant.
pub fn batch_rows(tape: &mut Tape, rows: &[&[f64]]) -> Var {
    let dim = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        data.extend_from_slice(r);
    }
    tape.constant(Tensor::matrix(rows.len(), dim, data).expect("batch rows"))
}
