use super::{batch_rows, join, uniform_init, Binder, Parameters};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// One direction of an LSTM layer.
///
/// ```text
/// i = σ(W_i [x; h] + b_i)    f = σ(W_f [x; h] + b_f)
/// g = tanh(W_c [x; h] + b_c) o = σ(W_o [x; h] + b_o)
/// c' = f⊙c + i⊙g             h' = o⊙tanh(c')
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_input: Tensor,
    pub b_input: Tensor,
    pub w_forget: Tensor,
    pub b_forget: Tensor,
    pub w_cell: Tensor,
    pub b_cell: Tensor,
    pub w_output: Tensor,
    pub b_output: Tensor,
}

impl LstmCell {
    /// Forget-gate bias starts at 1.
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let fan_in = input + hidden;
        LstmCell {
            w_input: uniform_init(hidden, fan_in, fan_in, rng),
            b_input: Tensor::zeros(&[hidden]),
            w_forget: uniform_init(hidden, fan_in, fan_in, rng),
            b_forget: Tensor::filled(&[hidden], 1.0),
            w_cell: uniform_init(hidden, fan_in, fan_in, rng),
            b_cell: Tensor::zeros(&[hidden]),
            w_output: uniform_init(hidden, fan_in, fan_in, rng),
            b_output: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[hidden, input + hidden]);
        let b = Tensor::zeros(&[hidden]);
        LstmCell {
            w_input: w.clone(),
            b_input: b.clone(),
            w_forget: w.clone(),
            b_forget: b.clone(),
            w_cell: w.clone(),
            b_cell: b.clone(),
            w_output: w,
            b_output: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_input.rows()
    }

    pub fn input(&self) -> usize {
        self.w_input.cols() - self.hidden()
    }

    fn validate(&self) -> Result<()> {
        let shape = self.w_input.shape();
        for w in [&self.w_forget, &self.w_cell, &self.w_output] {
            if w.shape() != shape {
                return Err(Error::Shape {
                    op: "lstm gate",
                    left: shape.to_vec(),
                    right: w.shape().to_vec(),
                });
            }
        }
        for b in [&self.b_input, &self.b_forget, &self.b_cell, &self.b_output] {
            if b.len() != self.hidden() {
                return Err(Error::Shape {
                    op: "lstm bias",
                    left: vec![self.hidden()],
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> Result<BoundLstmCell> {
        let wi = binder.bind(tape, &self.w_input);
        let bi = binder.bind(tape, &self.b_input);
        let wf = binder.bind(tape, &self.w_forget);
        let bf = binder.bind(tape, &self.b_forget);
        let wc = binder.bind(tape, &self.w_cell);
        let bc = binder.bind(tape, &self.b_cell);
        let wo = binder.bind(tape, &self.w_output);
        let bo = binder.bind(tape, &self.b_output);
        let w = tape.vcat(&[wi, wf, wc, wo])?;
        Ok(BoundLstmCell {
            w_t: tape.transpose(w)?,
            b: tape.hcat(&[bi, bf, bc, bo])?,
            hidden: self.hidden(),
        })
    }
}

impl Parameters for LstmCell {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w_input"), &self.w_input);
        f(join(prefix, "b_input"), &self.b_input);
        f(join(prefix, "w_forget"), &self.w_forget);
        f(join(prefix, "b_forget"), &self.b_forget);
        f(join(prefix, "w_cell"), &self.w_cell);
        f(join(prefix, "b_cell"), &self.b_cell);
        f(join(prefix, "w_output"), &self.w_output);
        f(join(prefix, "b_output"), &self.b_output);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        f(join(prefix, "w_input"), &mut self.w_input);
        f(join(prefix, "b_input"), &mut self.b_input);
        f(join(prefix, "w_forget"), &mut self.w_forget);
        f(join(prefix, "b_forget"), &mut self.b_forget);
        f(join(prefix, "w_cell"), &mut self.w_cell);
        f(join(prefix, "b_cell"), &mut self.b_cell);
        f(join(prefix, "w_output"), &mut self.w_output);
        f(join(prefix, "b_output"), &mut self.b_output);
    }
}

struct BoundLstmCell {
    w_t: Var,
    b: Var,
    hidden: usize,
}

impl BoundLstmCell {
    fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hs = self.hidden;
        let xh = tape.hcat(&[x, h])?;
        let pre = tape.matmul(xh, self.w_t)?;
        let pre = tape.add_row(pre, self.b)?;
        let i_lin = tape.slice_cols(pre, 0, hs)?;
        let f_lin = tape.slice_cols(pre, hs, hs)?;
        let g_lin = tape.slice_cols(pre, 2 * hs, hs)?;
        let o_lin = tape.slice_cols(pre, 3 * hs, hs)?;
        let i = tape.sigmoid(i_lin);
        let f = tape.sigmoid(f_lin);
        let g = tape.tanh(g_lin);
        let o = tape.sigmoid(o_lin);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Hidden state after each step, in the order the steps were consumed.
    fn run(&self, tape: &mut Tape, inputs: &[Var], reverse: bool, batch: usize) -> Result<Vec<Var>> {
        let mut h = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut c = h;
        let mut states = vec![h; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let (hn, cn) = self.step(tape, inputs[t], h, c)?;
            h = hn;
            c = cn;
            states[t] = h;
        }
        Ok(states)
    }
}

/// Forward + backward LSTM over the same input sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl Parameters for BiLstmLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        self.backward.visit_mut(&join(prefix, "bwd"), f);
    }
}

/// `L` stacked Bi-LSTM layers; layers after the first take `2h` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmStack {
    pub layers: Vec<BiLstmLayer>,
}

impl BiLstmStack {
    pub fn new(input: usize, hidden: usize, num_layers: usize, rng: &mut Rng) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                BiLstmLayer {
                    forward: LstmCell::new(inp, hidden, rng),
                    backward: LstmCell::new(inp, hidden, rng),
                }
            })
            .collect();
        BiLstmStack { layers }
    }

    pub fn zeros(input: usize, hidden: usize, num_layers: usize) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                BiLstmLayer {
                    forward: LstmCell::zeros(inp, hidden),
                    backward: LstmCell::zeros(inp, hidden),
                }
            })
            .collect();
        BiLstmStack { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].forward.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].forward.input()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("Bi-LSTM stack needs at least one layer".into()));
        }
        let h = self.hidden();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward.validate()?;
            layer.backward.validate()?;
            let expected_in = if l == 0 { self.input_dim() } else { 2 * h };
            for cell in [&layer.forward, &layer.backward] {
                if cell.hidden() != h || cell.input() != expected_in {
                    return Err(Error::Shape {
                        op: "bilstm layer",
                        left: vec![h, expected_in],
                        right: vec![cell.hidden(), cell.input()],
                    });
                }
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> Result<BoundBiLstm> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let f = layer.forward.bind(tape, binder)?;
            let b = layer.backward.bind(tape, binder)?;
            layers.push((f, b));
        }
        Ok(BoundBiLstm {
            layers,
            input: self.input_dim(),
        })
    }

    /// Encode one `T×f` window into the mean-pooled `2h` summary.
    pub fn encode(&self, window: &Tensor) -> Result<Vec<f64>> {
        let (t, _) = window.dims2()?;
        let mut tape = Tape::new();
        let mut binder = Binder::new(false);
        let bound = self.bind(&mut tape, &mut binder)?;
        let steps: Vec<Var> = (0..t)
            .map(|i| batch_rows(&mut tape, &[window.row_slice(i)]))
            .collect();
        let out = bound.encode(&mut tape, &steps)?;
        Ok(tape.value(out).data().to_vec())
    }
}

impl Parameters for BiLstmStack {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layer{l}")), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layer{l}")), f);
        }
    }
}

pub struct BoundBiLstm {
    layers: Vec<(BoundLstmCell, BoundLstmCell)>,
    input: usize,
}

impl BoundBiLstm {
    /// `steps[t]` is the `B×f` batch at time `t`. Returns `B×2h`: the mean
    /// over time of the last layer's `[→h_t; ←h_t]`.
    pub fn encode(&self, tape: &mut Tape, steps: &[Var]) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(Error::InvalidArgument("Bi-LSTM over an empty window".into()));
        };
        let (batch, width) = tape.value(first).dims2()?;
        if width != self.input {
            return Err(Error::Shape {
                op: "bilstm input",
                left: vec![batch, width],
                right: vec![batch, self.input],
            });
        }
        let mut seq: Vec<Var> = steps.to_vec();
        for (fwd, bwd) in &self.layers {
            let hf = fwd.run(tape, &seq, false, batch)?;
            let hb = bwd.run(tape, &seq, true, batch)?;
            seq = hf
                .iter()
                .zip(&hb)
                .map(|(&a, &b)| tape.hcat(&[a, b]))
                .collect::<Result<_>>()?;
        }
        let mut acc = seq[0];
        for &s in &seq[1..] {
            acc = tape.add(acc, s)?;
        }
        Ok(tape.scale(acc, 1.0 / seq.len() as f64))
    }
}
