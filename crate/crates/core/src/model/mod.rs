//! The IKNet network and its ablation variants.
//!
//! ```text
//! k̃_i     = dropout(ReLU(W k_i + b_0))           i = 1..n
//! h_news  = GRU(k̃_1, …, k̃_n)                      2h
//! h_price = mean_t [→h_t; ←h_t]  (stacked Bi-LSTM) 2h
//! h_fused = dropout(ReLU(W_f [h_news; h_price] + b_f))
//! ŷ       = W_2 ReLU(W_1 h_fused + b_1) + b_2
//! ```
//!
//! `tech_only` feeds zeros in place of `h_news`, `keyword_only` zeros in
//! place of `h_price`; the fusion input stays `4h` wide in every variant.

mod checkpoint;
mod train;

pub use checkpoint::{file_digest, Checkpoint, Manifest, NamedTensor, CHECKPOINT_FORMAT};
pub use train::{predict, predict_scaled, train, TrainOutcome};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ModelInput;
use crate::error::{Error, Result};
use crate::nn::{join, BiLstmStack, Binder, BoundBiLstm, BoundGru, BoundLinear, GruLayer, GruMode, Linear, Parameters};
use crate::rng::{self, derive_seed};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    TechOnly,
    KeywordOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::TechOnly, Variant::KeywordOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TechOnly => "tech_only",
            Variant::KeywordOnly => "keyword_only",
        }
    }

    fn uses_news(self) -> bool {
        self != Variant::TechOnly
    }

    fn uses_price(self) -> bool {
        self != Variant::KeywordOnly
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::validation("variant", format!("expected full, tech_only or keyword_only, got `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub keywords: usize,
    pub window: usize,
    pub lstm_layers: usize,
    pub gru_mode: GruMode,
    pub variant: Variant,
    pub seed: u64,
    /// Stop when the epoch loss has not improved for this many epochs.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 200,
            dropout: 0.1,
            hidden: 256,
            keywords: 17,
            window: 10,
            lstm_layers: 2,
            gru_mode: GruMode::Bidirectional,
            variant: Variant::Full,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("hidden", self.hidden),
            ("keywords", self.keywords),
            ("window", self.window),
            ("lstm_layers", self.lstm_layers),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::validation(field, "must be >= 1"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", "must be in [0, 1)"));
        }
        if self.patience == Some(0) {
            return Err(Error::validation("patience", "must be >= 1 when set"));
        }
        Ok(())
    }
}

/// Input and width dimensions of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// Window length `T`.
    pub window: usize,
    /// Indicator count `f`.
    pub features: usize,
    /// Keyword count `n`.
    pub keywords: usize,
    /// Keyword embedding width `d`.
    pub embed: usize,
    /// Hidden width `h`.
    pub hidden: usize,
}

impl Dims {
    pub fn window_len(&self) -> usize {
        self.window * self.features
    }

    pub fn keyword_len(&self) -> usize {
        self.keywords * self.embed
    }

    pub fn check_input(&self, x: &ModelInput) -> Result<()> {
        if x.window.len() != self.window_len() || x.keywords.len() != self.keyword_len() {
            return Err(Error::Shape {
                op: "model input",
                left: vec![self.window_len(), self.keyword_len()],
                right: vec![x.window.len(), x.keywords.len()],
            });
        }
        Ok(())
    }
}

/// Every trainable weight of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct IknetParams {
    pub dims: Dims,
    /// `W, b_0`: d → h.
    pub keyword_proj: Linear,
    /// h → 2h.
    pub gru: GruLayer,
    /// f → 2h.
    pub lstm: BiLstmStack,
    /// 4h → 2h.
    pub fusion: Linear,
    /// `W_1, b_1`: 2h → 2h.
    pub head_hidden: Linear,
    /// `W_2, b_2`: 2h → 1.
    pub head_out: Linear,
}

impl IknetParams {
    pub fn new(dims: Dims, lstm_layers: usize, gru_mode: GruMode, seed: u64) -> Self {
        let mut r = rng::stream(seed, "init", &[]);
        let h = dims.hidden;
        IknetParams {
            dims,
            keyword_proj: Linear::new(dims.embed, h, &mut r),
            gru: GruLayer::new(h, h, gru_mode, &mut r),
            lstm: BiLstmStack::new(dims.features, h, lstm_layers, &mut r),
            fusion: Linear::new(4 * h, 2 * h, &mut r),
            head_hidden: Linear::new(2 * h, 2 * h, &mut r),
            head_out: Linear::new(2 * h, 1, &mut r),
        }
    }

    pub fn zeros(dims: Dims, lstm_layers: usize, gru_mode: GruMode) -> Self {
        let h = dims.hidden;
        IknetParams {
            dims,
            keyword_proj: Linear::zeros(dims.embed, h),
            gru: GruLayer::zeros(h, h, gru_mode),
            lstm: BiLstmStack::zeros(dims.features, h, lstm_layers),
            fusion: Linear::zeros(4 * h, 2 * h),
            head_hidden: Linear::zeros(2 * h, 2 * h),
            head_out: Linear::zeros(2 * h, 1),
        }
    }

    pub fn lstm_layers(&self) -> usize {
        self.lstm.layers.len()
    }

    pub fn gru_mode(&self) -> GruMode {
        self.gru.mode()
    }

    /// Checks the dimension chain d→h→2h, f→2h, 4h→2h→1.
    pub fn validate(&self) -> Result<()> {
        let Dims {
            features, embed, hidden: h, ..
        } = self.dims;
        self.keyword_proj.validate()?;
        self.gru.validate()?;
        self.lstm.validate()?;
        self.fusion.validate()?;
        self.head_hidden.validate()?;
        self.head_out.validate()?;
        let chain = [
            ("keyword_proj", self.keyword_proj.input_dim(), embed, self.keyword_proj.output_dim(), h),
            ("gru", self.gru.input_dim(), h, self.gru.output_dim(), 2 * h),
            ("lstm", self.lstm.input_dim(), features, self.lstm.output_dim(), 2 * h),
            ("fusion", self.fusion.input_dim(), 4 * h, self.fusion.output_dim(), 2 * h),
            ("head_hidden", self.head_hidden.input_dim(), 2 * h, self.head_hidden.output_dim(), 2 * h),
            ("head_out", self.head_out.input_dim(), 2 * h, self.head_out.output_dim(), 1),
        ];
        for (name, i, ei, o, eo) in chain {
            if (i, o) != (ei, eo) {
                return Err(Error::Shape {
                    op: name,
                    left: vec![eo, ei],
                    right: vec![o, i],
                });
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, binder: &mut Binder) -> Result<BoundIknet> {
        Ok(BoundIknet {
            dims: self.dims,
            keyword_proj: self.keyword_proj.bind(tape, binder)?,
            gru: self.gru.bind(tape, binder)?,
            lstm: self.lstm.bind(tape, binder)?,
            fusion: self.fusion.bind(tape, binder)?,
            head_hidden: self.head_hidden.bind(tape, binder)?,
            head_out: self.head_out.bind(tape, binder)?,
        })
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.is_finite());
        ok
    }
}

impl Parameters for IknetParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.keyword_proj.visit(&join(prefix, "keyword_proj"), f);
        self.gru.visit(&join(prefix, "gru"), f);
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.head_hidden.visit(&join(prefix, "head_hidden"), f);
        self.head_out.visit(&join(prefix, "head_out"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.keyword_proj.visit_mut(&join(prefix, "keyword_proj"), f);
        self.gru.visit_mut(&join(prefix, "gru"), f);
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        self.head_hidden.visit_mut(&join(prefix, "head_hidden"), f);
        self.head_out.visit_mut(&join(prefix, "head_out"), f);
    }
}

/// Dropout configuration for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
    pub training: bool,
    pub seed: u64,
}

impl Dropout {
    pub const OFF: Dropout = Dropout {
        rate: 0.0,
        training: false,
        seed: 0,
    };

    fn site(&self, path: &[u64]) -> u64 {
        derive_seed(self.seed, path)
    }
}

pub struct BoundIknet {
    dims: Dims,
    keyword_proj: BoundLinear,
    gru: BoundGru,
    lstm: BoundBiLstm,
    fusion: BoundLinear,
    head_hidden: BoundLinear,
    head_out: BoundLinear,
}

impl BoundIknet {
    /// `B×2h` keyword summary.
    pub fn news(&self, tape: &mut Tape, batch: &[&ModelInput], dropout: Dropout) -> Result<Var> {
        let Dims { keywords: n, embed: d, .. } = self.dims;
        let mut steps = Vec::with_capacity(n);
        for i in 0..n {
            let rows: Vec<&[f64]> = batch.iter().map(|x| &x.keywords[i * d..(i + 1) * d]).collect();
            let k = crate::nn::batch_rows(tape, &rows);
            let z = self.keyword_proj.forward(tape, k)?;
            let z = tape.relu(z);
            steps.push(tape.dropout(z, dropout.rate, dropout.training, dropout.site(&[1, i as u64]))?);
        }
        self.gru.forward(tape, &steps)
    }

    /// `B×2h` mean-pooled indicator summary.
    pub fn price(&self, tape: &mut Tape, batch: &[&ModelInput]) -> Result<Var> {
        let Dims { window: t_len, features: f, .. } = self.dims;
        let steps: Vec<Var> = (0..t_len)
            .map(|t| {
                let rows: Vec<&[f64]> = batch.iter().map(|x| &x.window[t * f..(t + 1) * f]).collect();
                crate::nn::batch_rows(tape, &rows)
            })
            .collect();
        self.lstm.encode(tape, &steps)
    }

    /// Fusion and regression head on precomputed branch summaries; `B×1`.
    pub fn head(&self, tape: &mut Tape, news: Var, price: Var, dropout: Dropout) -> Result<Var> {
        let combined = tape.hcat(&[news, price])?;
        let fused = self.fusion.forward(tape, combined)?;
        let fused = tape.relu(fused);
        let fused = tape.dropout(fused, dropout.rate, dropout.training, dropout.site(&[2]))?;
        let hidden = self.head_hidden.forward(tape, fused)?;
        let hidden = tape.relu(hidden);
        self.head_out.forward(tape, hidden)
    }

    /// Scaled predictions for a batch; `B×1`.
    pub fn forward(&self, tape: &mut Tape, batch: &[&ModelInput], variant: Variant, dropout: Dropout) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("forward on an empty batch".into()));
        }
        for x in batch {
            self.dims.check_input(x)?;
        }
        let width = 2 * self.dims.hidden;
        let news = if variant.uses_news() {
            self.news(tape, batch, dropout)?
        } else {
            tape.constant(Tensor::zeros(&[batch.len(), width]))
        };
        let price = if variant.uses_price() {
            self.price(tape, batch)?
        } else {
            tape.constant(Tensor::zeros(&[batch.len(), width]))
        };
        self.head(tape, news, price, dropout)
    }
}

/// Inference on a batch with dropout off; scaled outputs.
pub fn forward_values(params: &IknetParams, batch: &[&ModelInput], variant: Variant) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut binder = Binder::new(false);
    let bound = params.bind(&mut tape, &mut binder)?;
    let y = bound.forward(&mut tape, batch, variant, Dropout::OFF)?;
    Ok(tape.value(y).data().to_vec())
}
