//! Gradient-saliency keyword extraction.
//!
//! For each article the classifier's predicted-class logit `p` is
//! differentiated with respect to every input piece embedding `e_i`; the
//! piece saliency is `‖∂p/∂e_i‖₂`. Pieces are merged back into words by
//! averaging, words are pooled across a day's articles, and the top `n`
//! words are re-embedded in isolation.

mod toy;

pub use toy::{Polarity, ToyClassifier, ToyConfig};

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sort_keywords, Keyword, KeywordSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const NUM_CLASSES: usize = 3;

/// A sub-word piece. `continuation` marks pieces that extend the previous word
/// (written `##piece`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    pub continuation: bool,
}

impl Piece {
    pub fn new(text: impl Into<String>, continuation: bool) -> Self {
        Piece {
            text: text.into(),
            continuation,
        }
    }

    /// `"##offs"` parses as a continuation of `"offs"`.
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("##") {
            Some(rest) => Piece::new(rest, true),
            None => Piece::new(s, false),
        }
    }
}

impl std::fmt::Display for Piece {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.continuation {
            write!(f, "##{}", self.text)
        } else {
            f.write_str(&self.text)
        }
    }
}

/// Text classifier over `{positive, negative, neutral}` that is
/// differentiable with respect to its input embeddings.
pub trait SentimentClassifier: Sync {
    fn tokenize(&self, text: &str) -> Vec<Piece>;
    fn dim(&self) -> usize;
    fn embed_piece(&self, piece: &Piece) -> Vec<f64>;
    /// `1×3` logits from a `pieces×d` embedding matrix.
    fn logits(&self, tape: &mut Tape, embeddings: Var) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pool {
    #[default]
    Max,
    Mean,
}

impl FromStr for Pool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pool::Max),
            "mean" => Ok(Pool::Mean),
            other => Err(Error::validation("pool", format!("expected max or mean, got `{other}`"))),
        }
    }
}

const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "before", "but", "by",
    "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if",
    "in", "into", "is", "it", "its", "may", "more", "most", "much", "no", "not", "of", "on", "or", "other", "our",
    "out", "over", "said", "says", "she", "should", "so", "some", "than", "that", "the", "their", "them", "then",
    "there", "these", "they", "this", "those", "through", "to", "up", "was", "we", "were", "what", "when", "which",
    "while", "who", "will", "with", "would", "you",
];

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.binary_search(&word).is_ok()
}

fn is_punctuation(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| !c.is_alphanumeric())
}

fn piece_matrix(clf: &dyn SentimentClassifier, pieces: &[Piece]) -> Result<Tensor> {
    let d = clf.dim();
    let mut data = Vec::with_capacity(pieces.len() * d);
    for p in pieces {
        let e = clf.embed_piece(p);
        if e.len() != d {
            return Err(Error::Shape {
                op: "embed_piece",
                left: vec![d],
                right: vec![e.len()],
            });
        }
        data.extend(e);
    }
    Tensor::matrix(pieces.len(), d, data)
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Saliency of each piece: L2 norm of the predicted-class logit's gradient
/// on that piece's embedding row. Empty tokenization gives an empty result.
pub fn token_saliency(text: &str, clf: &dyn SentimentClassifier) -> Result<Vec<(Piece, f64)>> {
    let pieces = clf.tokenize(text);
    if pieces.is_empty() {
        return Ok(Vec::new());
    }
    let emb = piece_matrix(clf, &pieces)?;
    let d = emb.cols();
    let mut tape = Tape::new();
    let e = tape.param(emb);
    let logits = clf.logits(&mut tape, e)?;
    if tape.value(logits).len() != NUM_CLASSES {
        return Err(Error::Shape {
            op: "logits",
            left: vec![1, NUM_CLASSES],
            right: tape.shape(logits).to_vec(),
        });
    }
    let class = argmax(tape.value(logits).data());
    let picked = tape.slice_cols(logits, class, 1)?;
    let loss = tape.sum(picked);
    tape.backward(loss)?;
    let grad = tape.grad(e).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; pieces.len() * d]);
    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let g = &grad[i * d..(i + 1) * d];
            (p, g.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .collect())
}

/// Joins continuation pieces onto their word and averages their saliencies.
/// Stop-words and pure punctuation are dropped; text order is kept.
pub fn merge_subwords(pieces: &[(Piece, f64)]) -> Vec<(String, f64)> {
    let mut words: Vec<(String, f64, usize)> = Vec::new();
    for (p, s) in pieces {
        match words.last_mut() {
            Some((w, total, count)) if p.continuation => {
                w.push_str(&p.text);
                *total += s;
                *count += 1;
            }
            _ => words.push((p.text.clone(), *s, 1)),
        }
    }
    words
        .into_iter()
        .filter(|(w, _, _)| !is_stop_word(w) && !is_punctuation(w))
        .map(|(w, total, count)| (w, total / count as f64))
        .collect()
}

/// Word saliencies of one article, pooled over repeated occurrences.
pub fn word_saliencies(text: &str, clf: &dyn SentimentClassifier, pool: Pool) -> Result<BTreeMap<String, f64>> {
    let merged = merge_subwords(&token_saliency(text, clf)?);
    Ok(pool_words(merged.iter().map(|(w, s)| (w.as_str(), *s)), pool))
}

fn pool_words<'a>(items: impl Iterator<Item = (&'a str, f64)>, pool: Pool) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (w, s) in items {
        let e = acc.entry(w.to_string()).or_insert((match pool {
            Pool::Max => f64::NEG_INFINITY,
            Pool::Mean => 0.0,
        }, 0));
        match pool {
            Pool::Max => e.0 = e.0.max(s),
            Pool::Mean => e.0 += s,
        }
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(w, (v, c))| (w, if pool == Pool::Mean { v / c as f64 } else { v }))
        .collect()
}

/// Mean of the word's piece embeddings, tokenized on its own.
pub fn embed_word(word: &str, clf: &dyn SentimentClassifier) -> Result<Vec<f64>> {
    let pieces = clf.tokenize(word);
    let d = clf.dim();
    if pieces.is_empty() {
        return Ok(vec![0.0; d]);
    }
    let m = piece_matrix(clf, &pieces)?;
    let mut out = vec![0.0; d];
    for i in 0..pieces.len() {
        for (o, v) in out.iter_mut().zip(m.row_slice(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= pieces.len() as f64);
    Ok(out)
}

/// Top-`n` words for one day, ranked by saliency pooled over articles
/// (ties broken lexicographically) and re-embedded in isolation.
pub fn extract_keywords(texts: &[&str], clf: &dyn SentimentClassifier, n: usize, pool: Pool) -> Result<KeywordSet> {
    if n == 0 {
        return Err(Error::validation("n", "keyword count must be >= 1"));
    }
    let per_article: Vec<BTreeMap<String, f64>> = texts
        .par_iter()
        .map(|t| word_saliencies(t, clf, pool))
        .collect::<Result<_>>()?;
    let day = pool_words(
        per_article.iter().flat_map(|m| m.iter().map(|(w, s)| (w.as_str(), *s))),
        pool,
    );
    let mut ranked: Vec<(String, f64)> = day.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(n);
    let mut entries = ranked
        .into_iter()
        .map(|(word, saliency)| {
            Ok(Keyword {
                embedding: embed_word(&word, clf)?,
                word,
                saliency,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_keywords(&mut entries);
    KeywordSet::new(texts.len(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_word_list_is_sorted() {
        assert!(STOP_WORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn merge_layoffs() {
        let merged = merge_subwords(&[(Piece::parse("lay"), 0.4), (Piece::parse("##offs"), 0.2)]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].0, "layoffs");
        assert!((merged[0].1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn merge_drops_stop_words_and_punctuation() {
        let merged = merge_subwords(&[
            (Piece::parse("the"), 1.0),
            (Piece::parse("rally"), 0.5),
            (Piece::parse(","), 0.9),
        ]);
        assert_eq!(merged, vec![("rally".to_string(), 0.5)]);
    }

    #[test]
    fn pool_parses() {
        assert_eq!("mean".parse::<Pool>().unwrap(), Pool::Mean);
        assert!("median".parse::<Pool>().is_err());
    }
}
