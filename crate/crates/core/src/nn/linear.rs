use super::{join, uniform_init, Binder, Parameters};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// `y = x·Wᵀ + b` with `W: out×in`, `b: out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: uniform_init(output, input, input, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.len() != self.output_dim() {
            return Err(Error::Shape {
                op: "linear",
                left: self.weight.shape().to_vec(),
                right: self.bias.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> Result<BoundLinear> {
        let w = binder.bind(tape, &self.weight);
        let b = binder.bind(tape, &self.bias);
        Ok(BoundLinear {
            weight_t: tape.transpose(w)?,
            bias: b,
        })
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    weight_t: Var,
    bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight_t)?;
        tape.add_row(xw, self.bias)
    }
}
