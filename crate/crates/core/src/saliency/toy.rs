use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Piece, SentimentClassifier, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Binder, Linear, Parameters};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pos,
    Neg,
    Neu,
}

impl Polarity {
    pub fn class(self) -> usize {
        match self {
            Polarity::Pos => 0,
            Polarity::Neg => 1,
            Polarity::Neu => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub learning_rate: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dim: 32,
            hidden: 32,
            seed: 0,
            max_epochs: 3000,
            learning_rate: 0.02,
        }
    }
}

/// Small self-contained sentiment model: seeded embedding table, a per-piece
/// `tanh` hidden layer, mean pooling over pieces, and a linear output layer.
/// It is fitted on the lexicon words at construction and frozen afterwards.
#[derive(Clone, Debug)]
pub struct ToyClassifier {
    config: ToyConfig,
    vocab: BTreeMap<String, usize>,
    lexicon: Vec<(String, Polarity)>,
    table: Vec<Vec<f64>>,
    hidden: Linear,
    output: Linear,
    epochs_trained: usize,
}

#[derive(Deserialize)]
struct LexiconRow {
    word: String,
    polarity: Polarity,
}

impl ToyClassifier {
    pub fn from_lexicon_path(path: &Path, config: ToyConfig) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let rows = rdr
            .deserialize()
            .enumerate()
            .map(|(i, r)| {
                let r: LexiconRow = r.map_err(|e| Error::parse(format!("lexicon row {}", i + 1), e))?;
                Ok((r.word, r.polarity))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, config)
    }

    pub fn new(lexicon: Vec<(String, Polarity)>, config: ToyConfig) -> Result<Self> {
        if lexicon.is_empty() {
            return Err(Error::validation("lexicon", "must contain at least one word"));
        }
        if config.dim == 0 || config.hidden == 0 {
            return Err(Error::validation("toy classifier", "dim and hidden must be >= 1"));
        }
        let mut vocab = BTreeMap::new();
        let mut clean = Vec::with_capacity(lexicon.len());
        for (w, p) in lexicon {
            let w = w.to_lowercase();
            if w.is_empty() || !w.chars().all(char::is_alphanumeric) {
                return Err(Error::validation("lexicon", format!("`{w}` is not a single alphanumeric word")));
            }
            if let Some(&i) = vocab.get(&w) {
                let (_, prev): &(String, Polarity) = &clean[i];
                if *prev != p {
                    return Err(Error::validation("lexicon", format!("`{w}` listed with two polarities")));
                }
                continue;
            }
            vocab.insert(w.clone(), clean.len());
            clean.push((w, p));
        }
        let mut r = rng::stream(config.seed, "toy-embed", &[]);
        let table = (0..clean.len())
            .map(|_| (0..config.dim).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut init = rng::stream(config.seed, "toy-init", &[]);
        let mut clf = ToyClassifier {
            hidden: Linear::new(config.dim, config.hidden, &mut init),
            output: Linear::new(config.hidden, NUM_CLASSES, &mut init),
            config,
            vocab,
            lexicon: clean,
            table,
            epochs_trained: 0,
        };
        clf.fit()?;
        Ok(clf)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub fn lexicon(&self) -> &[(String, Polarity)] {
        &self.lexicon
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.table.iter().flatten().copied().collect();
        self.hidden.visit("", &mut |_, t| out.extend_from_slice(t.data()));
        self.output.visit("", &mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Full-batch Adam on single-word inputs until every lexicon word is
    /// classified correctly.
    fn fit(&mut self) -> Result<()> {
        let n = self.lexicon.len();
        let d = self.config.dim;
        let x = Tensor::matrix(n, d, self.table.iter().flatten().copied().collect())?;
        let mut y = vec![0.0; n * NUM_CLASSES];
        for (i, (_, p)) in self.lexicon.iter().enumerate() {
            y[i * NUM_CLASSES + p.class()] = 1.0;
        }
        let y = Tensor::matrix(n, NUM_CLASSES, y)?;
        let adam = AdamConfig {
            learning_rate: self.config.learning_rate,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(adam, [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]);
        for epoch in 0..self.config.max_epochs {
            let mut tape = Tape::new();
            let mut binder = Binder::new(true);
            let hid = self.hidden.bind(&mut tape, &mut binder)?;
            let out = self.output.bind(&mut tape, &mut binder)?;
            let xv = tape.constant(x.clone());
            let h = hid.forward(&mut tape, xv)?;
            let h = tape.tanh(h);
            let logits = out.forward(&mut tape, h)?;
            let correct = (0..n).all(|i| {
                let row = tape.value(logits).row_slice(i);
                super::argmax(row) == self.lexicon[i].1.class()
            });
            if correct {
                self.epochs_trained = epoch;
                return Ok(());
            }
            let yv = tape.constant(y.clone());
            let loss = tape.mse(logits, yv)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::Numeric("toy classifier loss is not finite".into()));
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = binder
                .leaves()
                .iter()
                .map(|&v| tape.grad(v).expect("trainable leaf").to_vec())
                .collect();
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut params = [
                &mut self.hidden.weight,
                &mut self.hidden.bias,
                &mut self.output.weight,
                &mut self.output.bias,
            ];
            state.step(&mut params, &grad_refs)?;
        }
        Err(Error::Numeric(format!(
            "toy classifier did not separate the lexicon within {} epochs",
            self.config.max_epochs
        )))
    }

    /// Deterministic split of an out-of-vocabulary word into 2–4 character pieces.
    fn split_oov(word: &str) -> Vec<Piece> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() <= 4 {
            return vec![Piece::new(word, false)];
        }
        let mut h = rng::label(word);
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let len = (2 + (h % 3) as usize).min(chars.len() - i);
            h = h.rotate_right(7) ^ 0x9E37_79B9;
            out.push(Piece::new(chars[i..i + len].iter().collect::<String>(), i > 0));
            i += len;
        }
        out
    }

    /// Per-text logits without a caller-managed tape.
    pub fn predict_logits(&self, text: &str) -> Result<Vec<f64>> {
        let pieces = self.tokenize(text);
        if pieces.is_empty() {
            return Err(Error::InvalidArgument("text has no tokens".into()));
        }
        let m = super::piece_matrix(self, &pieces)?;
        let mut tape = Tape::new();
        let e = tape.constant(m);
        let l = self.logits(&mut tape, e)?;
        Ok(tape.value(l).data().to_vec())
    }
}

impl SentimentClassifier for ToyClassifier {
    /// Lowercase alphanumeric runs become words; every other non-space
    /// character is its own punctuation piece.
    fn tokenize(&self, text: &str) -> Vec<Piece> {
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<Piece>| {
            if word.is_empty() {
                return;
            }
            if self.vocab.contains_key(word.as_str()) {
                out.push(Piece::new(word.clone(), false));
            } else {
                out.extend(Self::split_oov(word));
            }
            word.clear();
        };
        for c in text.chars() {
            if c.is_alphanumeric() {
                word.extend(c.to_lowercase());
            } else {
                flush(&mut word, &mut out);
                if !c.is_whitespace() {
                    out.push(Piece::new(c.to_string(), false));
                }
            }
        }
        flush(&mut word, &mut out);
        out
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_piece(&self, piece: &Piece) -> Vec<f64> {
        if !piece.continuation {
            if let Some(&i) = self.vocab.get(&piece.text) {
                return self.table[i].clone();
            }
        }
        let mut r = rng::stream(
            self.config.seed,
            "toy-piece",
            &[rng::label(&piece.text), piece.continuation as u64],
        );
        (0..self.config.dim).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    fn logits(&self, tape: &mut Tape, embeddings: Var) -> Result<Var> {
        let (n, _) = tape.value(embeddings).dims2()?;
        let mut binder = Binder::new(false);
        let hid = self.hidden.bind(tape, &mut binder)?;
        let out = self.output.bind(tape, &mut binder)?;
        let h = hid.forward(tape, embeddings)?;
        let h = tape.tanh(h);
        let avg = tape.constant(Tensor::filled(&[1, n], 1.0 / n as f64));
        let pooled = tape.matmul(avg, h)?;
        out.forward(tape, pooled)
    }
}
