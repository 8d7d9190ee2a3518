use serde::{Deserialize, Serialize};

use super::{batch_rows, join, uniform_init, Binder, Parameters};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// How the keyword GRU produces its `2h`-dimensional summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GruMode {
    /// Forward and backward GRUs of width `h`; output is both final states.
    #[default]
    Bidirectional,
    /// One forward GRU of width `2h`; output is its final state.
    Unidirectional2h,
}

impl std::str::FromStr for GruMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(GruMode::Bidirectional),
            "unidirectional-2h" => Ok(GruMode::Unidirectional2h),
            _ => Err(Error::validation(
                "gru_mode",
                format!("expected bidirectional or unidirectional-2h, got `{s}`"),
            )),
        }
    }
}

/// One direction of a GRU.
///
/// ```text
/// z  = σ(W_z [x; h] + b_z)
/// r  = σ(W_r [x; h] + b_r)
/// ñ  = tanh(W_n [x; r⊙h] + b_n)
/// h' = z⊙h + (1−z)⊙ñ
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_update: Tensor,
    pub b_update: Tensor,
    pub w_reset: Tensor,
    pub b_reset: Tensor,
    pub w_candidate: Tensor,
    pub b_candidate: Tensor,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let fan_in = input + hidden;
        GruCell {
            w_update: uniform_init(hidden, fan_in, fan_in, rng),
            b_update: Tensor::zeros(&[hidden]),
            w_reset: uniform_init(hidden, fan_in, fan_in, rng),
            b_reset: Tensor::zeros(&[hidden]),
            w_candidate: uniform_init(hidden, fan_in, fan_in, rng),
            b_candidate: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[hidden, input + hidden]);
        let b = Tensor::zeros(&[hidden]);
        GruCell {
            w_update: w.clone(),
            b_update: b.clone(),
            w_reset: w.clone(),
            b_reset: b.clone(),
            w_candidate: w,
            b_candidate: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_update.rows()
    }

    pub fn input(&self) -> usize {
        self.w_update.cols() - self.hidden()
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden();
        for w in [&self.w_update, &self.w_reset, &self.w_candidate] {
            if w.shape() != self.w_update.shape() {
                return Err(Error::Shape {
                    op: "gru gate",
                    left: self.w_update.shape().to_vec(),
                    right: w.shape().to_vec(),
                });
            }
        }
        for b in [&self.b_update, &self.b_reset, &self.b_candidate] {
            if b.len() != h {
                return Err(Error::Shape {
                    op: "gru bias",
                    left: vec![h],
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> Result<BoundGruCell> {
        let wz = binder.bind(tape, &self.w_update);
        let bz = binder.bind(tape, &self.b_update);
        let wr = binder.bind(tape, &self.w_reset);
        let br = binder.bind(tape, &self.b_reset);
        let wn = binder.bind(tape, &self.w_candidate);
        let bn = binder.bind(tape, &self.b_candidate);
        let w_zr = tape.vcat(&[wz, wr])?;
        Ok(BoundGruCell {
            w_zr_t: tape.transpose(w_zr)?,
            b_zr: tape.hcat(&[bz, br])?,
            w_n_t: tape.transpose(wn)?,
            b_n: bn,
            hidden: self.hidden(),
        })
    }
}

impl Parameters for GruCell {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w_update"), &self.w_update);
        f(join(prefix, "b_update"), &self.b_update);
        f(join(prefix, "w_reset"), &self.w_reset);
        f(join(prefix, "b_reset"), &self.b_reset);
        f(join(prefix, "w_candidate"), &self.w_candidate);
        f(join(prefix, "b_candidate"), &self.b_candidate);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        f(join(prefix, "w_update"), &mut self.w_update);
        f(join(prefix, "b_update"), &mut self.b_update);
        f(join(prefix, "w_reset"), &mut self.w_reset);
        f(join(prefix, "b_reset"), &mut self.b_reset);
        f(join(prefix, "w_candidate"), &mut self.w_candidate);
        f(join(prefix, "b_candidate"), &mut self.b_candidate);
    }
}

struct BoundGruCell {
    w_zr_t: Var,
    b_zr: Var,
    w_n_t: Var,
    b_n: Var,
    hidden: usize,
}

impl BoundGruCell {
    fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let hs = self.hidden;
        let xh = tape.hcat(&[x, h])?;
        let zr_lin = tape.matmul(xh, self.w_zr_t)?;
        let zr_lin = tape.add_row(zr_lin, self.b_zr)?;
        let zr = tape.sigmoid(zr_lin);
        let z = tape.slice_cols(zr, 0, hs)?;
        let r = tape.slice_cols(zr, hs, hs)?;
        let rh = tape.mul(r, h)?;
        let xrh = tape.hcat(&[x, rh])?;
        let n_lin = tape.matmul(xrh, self.w_n_t)?;
        let n_lin = tape.add_row(n_lin, self.b_n)?;
        let n = tape.tanh(n_lin);
        let h_minus_n = tape.sub(h, n)?;
        let gated = tape.mul(z, h_minus_n)?;
        tape.add(n, gated)
    }

    fn run<'a>(&self, tape: &mut Tape, inputs: impl Iterator<Item = &'a Var>, batch: usize) -> Result<Var> {
        let mut h = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        for &x in inputs {
            h = self.step(tape, x, h)?;
        }
        Ok(h)
    }
}

/// Single GRU layer over the keyword sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub forward: GruCell,
    pub backward: Option<GruCell>,
}

impl GruLayer {
    /// `hidden` is the per-direction width `h`; the output is always `2h`.
    pub fn new(input: usize, hidden: usize, mode: GruMode, rng: &mut Rng) -> Self {
        match mode {
            GruMode::Bidirectional => GruLayer {
                forward: GruCell::new(input, hidden, rng),
                backward: Some(GruCell::new(input, hidden, rng)),
            },
            GruMode::Unidirectional2h => GruLayer {
                forward: GruCell::new(input, 2 * hidden, rng),
                backward: None,
            },
        }
    }

    pub fn zeros(input: usize, hidden: usize, mode: GruMode) -> Self {
        match mode {
            GruMode::Bidirectional => GruLayer {
                forward: GruCell::zeros(input, hidden),
                backward: Some(GruCell::zeros(input, hidden)),
            },
            GruMode::Unidirectional2h => GruLayer {
                forward: GruCell::zeros(input, 2 * hidden),
                backward: None,
            },
        }
    }

    pub fn mode(&self) -> GruMode {
        if self.backward.is_some() {
            GruMode::Bidirectional
        } else {
            GruMode::Unidirectional2h
        }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input()
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden() * if self.backward.is_some() { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        if let Some(b) = &self.backward {
            b.validate()?;
            if b.w_update.shape() != self.forward.w_update.shape() {
                return Err(Error::Shape {
                    op: "gru directions",
                    left: self.forward.w_update.shape().to_vec(),
                    right: b.w_update.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> Result<BoundGru> {
        let forward = self.forward.bind(tape, binder)?;
        let backward = match &self.backward {
            Some(b) => Some(b.bind(tape, binder)?),
            None => None,
        };
        Ok(BoundGru {
            forward,
            backward,
            input: self.input_dim(),
        })
    }

    /// Run over one sequence of input vectors from zero initial state.
    pub fn forward_sequence(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(false);
        let bound = self.bind(&mut tape, &mut binder)?;
        let steps: Vec<Var> = inputs.iter().map(|x| batch_rows(&mut tape, &[x])).collect();
        let out = bound.forward(&mut tape, &steps)?;
        Ok(tape.value(out).data().to_vec())
    }
}

impl Parameters for GruLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.forward.visit(&join(prefix, "fwd"), f);
        if let Some(b) = &self.backward {
            b.visit(&join(prefix, "bwd"), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        if let Some(b) = &mut self.backward {
            b.visit_mut(&join(prefix, "bwd"), f);
        }
    }
}

pub struct BoundGru {
    forward: BoundGruCell,
    backward: Option<BoundGruCell>,
    input: usize,
}

impl BoundGru {
    /// `steps[i]` is the `B×input` batch of the i-th sequence element.
    /// Returns `B×2h`: final forward state, then final backward state.
    pub fn forward(&self, tape: &mut Tape, steps: &[Var]) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(Error::InvalidArgument("GRU over an empty sequence".into()));
        };
        let (batch, width) = tape.value(first).dims2()?;
        if width != self.input {
            return Err(Error::Shape {
                op: "gru input",
                left: vec![batch, width],
                right: vec![batch, self.input],
            });
        }
        let fwd = self.forward.run(tape, steps.iter(), batch)?;
        match &self.backward {
            Some(b) => {
                let bwd = b.run(tape, steps.iter().rev(), batch)?;
                tape.hcat(&[fwd, bwd])
            }
            None => Ok(fwd),
        }
    }
}
