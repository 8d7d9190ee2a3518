use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyword {
    pub word: String,
    pub saliency: f64,
    pub embedding: Vec<f64>,
}

/// One day's keywords, sorted by saliency (descending, ties by word).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeywordSet {
    pub articles: usize,
    entries: Vec<Keyword>,
}

impl KeywordSet {
    pub fn new(articles: usize, mut entries: Vec<Keyword>) -> Result<Self> {
        let dim = entries.first().map(|k| k.embedding.len());
        for k in &entries {
            if !(k.saliency.is_finite() && k.saliency >= 0.0) {
                return Err(Error::validation(
                    format!("keyword `{}`", k.word),
                    "saliency must be finite and >= 0",
                ));
            }
            if Some(k.embedding.len()) != dim || k.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(
                    format!("keyword `{}`", k.word),
                    "embeddings must be finite with one dimension per day",
                ));
            }
        }
        sort_keywords(&mut entries);
        Ok(KeywordSet { articles, entries })
    }

    pub fn empty() -> Self {
        KeywordSet::default()
    }

    pub fn entries(&self) -> &[Keyword] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|k| k.embedding.len())
    }

    /// Number of real (non-padding) rows when truncated to `n`.
    pub fn count(&self, n: usize) -> usize {
        self.entries.len().min(n)
    }

    /// Word at rank `i` if it exists within the top `n`.
    pub fn word(&self, i: usize) -> Option<&str> {
        self.entries.get(i).map(|k| k.word.as_str())
    }

    /// Top-`n` embeddings as a row-major `n×d` block, zero rows appended.
    pub fn padded(&self, n: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * d];
        for (i, k) in self.entries.iter().take(n).enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(&k.embedding);
        }
        out
    }

    /// Union of two days' keywords; a word seen twice keeps its higher saliency.
    pub fn merge(&self, other: &KeywordSet) -> KeywordSet {
        let mut by_word: BTreeMap<&str, &Keyword> = BTreeMap::new();
        for k in self.entries.iter().chain(&other.entries) {
            by_word
                .entry(&k.word)
                .and_modify(|cur| {
                    if k.saliency > cur.saliency {
                        *cur = k;
                    }
                })
                .or_insert(k);
        }
        let mut entries: Vec<Keyword> = by_word.into_values().cloned().collect();
        sort_keywords(&mut entries);
        KeywordSet {
            articles: self.articles + other.articles,
            entries,
        }
    }
}

pub(crate) fn sort_keywords(entries: &mut [Keyword]) {
    entries.sort_by(|a, b| b.saliency.total_cmp(&a.saliency).then_with(|| a.word.cmp(&b.word)));
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    date: NaiveDate,
    articles: usize,
    keywords: Vec<Keyword>,
}

/// Parsed keyword JSONL: one set per news date, with a single embedding dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeywordFile {
    pub dim: Option<usize>,
    pub by_date: BTreeMap<NaiveDate, KeywordSet>,
}

impl KeywordFile {
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut file = KeywordFile::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse("keyword jsonl", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let ctx = format!("keyword jsonl line {}", i + 1);
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(&ctx, e))?;
            let set = KeywordSet::new(rec.articles, rec.keywords).map_err(|e| match e {
                Error::Validation { field, message } => Error::validation(format!("{ctx}: {field}"), message),
                other => other,
            })?;
            file.insert(rec.date, set, &ctx)?;
        }
        Ok(file)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn insert(&mut self, date: NaiveDate, set: KeywordSet, ctx: &str) -> Result<()> {
        if let Some(d) = set.dim() {
            match self.dim {
                None => self.dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::validation(
                        ctx,
                        format!("embedding dimension {d} differs from {expected} used earlier in the file"),
                    ))
                }
                _ => {}
            }
        }
        if self.by_date.insert(date, set).is_some() {
            return Err(Error::validation(ctx, format!("duplicate date {date}")));
        }
        Ok(())
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for (date, set) in &self.by_date {
            let rec = Record {
                date: *date,
                articles: set.articles,
                keywords: set.entries.clone(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::parse("keyword jsonl write", e))?;
            writeln!(w, "{line}").map_err(|e| Error::parse("keyword jsonl write", e))?;
        }
        Ok(())
    }

    /// Attach each news date to the first trading day on or after it.
    /// News after the last trading day is dropped.
    pub fn align(&self, calendar: &[NaiveDate]) -> Vec<Option<KeywordSet>> {
        let mut out: Vec<Option<KeywordSet>> = vec![None; calendar.len()];
        for (date, set) in &self.by_date {
            let idx = calendar.partition_point(|d| d < date);
            if idx == calendar.len() {
                continue;
            }
            out[idx] = Some(match out[idx].take() {
                Some(prev) => prev.merge(set),
                None => set.clone(),
            });
        }
        out
    }
}
