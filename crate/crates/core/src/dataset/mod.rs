//! Supervised samples, walk-forward folds, and train-only scaling.
//!
//! A sample anchored at trading day `t` carries
//! * the indicator rows `t−T+1 ..= t`,
//! * the keywords of news dated `t` (the day before the target; news on a
//!   non-trading day rolls to the next trading day),
//! * the target: the close of trading day `t+1`.
//!
//! Samples are assigned to folds by the calendar year of their target date.

mod audit;
mod folds;
mod keywords;

pub use audit::AuditLog;
pub use folds::{build_folds, check_coverage, FoldSpec};
pub use keywords::{Keyword, KeywordFile, KeywordSet};
pub(crate) use keywords::sort_keywords;

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::indicators::{IndicatorFrame, CLOSE, NUM_FEATURES};

#[derive(Clone, Debug)]
pub struct Sample {
    pub anchor_date: NaiveDate,
    pub target_date: NaiveDate,
    pub window_dates: Vec<NaiveDate>,
    /// Raw indicator rows, oldest first.
    pub window: Vec<[f64; NUM_FEATURES]>,
    pub keywords: Arc<KeywordSet>,
    /// Close at the anchor day.
    pub last_close: f64,
    /// Close at the target day.
    pub target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AssemblyReport {
    pub trading_days: usize,
    pub samples: usize,
    pub skipped_warmup: usize,
    pub missing_news: usize,
}

/// One sample per trading day with a full valid `T`-day window and a next-day target.
pub fn assemble_samples(
    frame: &IndicatorFrame,
    keywords: &[Option<KeywordSet>],
    window: usize,
) -> Result<(Vec<Sample>, AssemblyReport)> {
    if window == 0 {
        return Err(Error::validation("window", "T must be >= 1"));
    }
    if keywords.len() != frame.len() {
        return Err(Error::Shape {
            op: "assemble_samples",
            left: vec![frame.len()],
            right: vec![keywords.len()],
        });
    }
    let empty = Arc::new(KeywordSet::empty());
    let mut report = AssemblyReport {
        trading_days: frame.len(),
        ..Default::default()
    };
    let mut samples = Vec::new();
    for t in window.saturating_sub(1)..frame.len().saturating_sub(1) {
        let lo = t + 1 - window;
        if !frame.valid[lo..=t].iter().all(|&v| v) {
            report.skipped_warmup += 1;
            continue;
        }
        let kw = match &keywords[t] {
            Some(k) => Arc::new(k.clone()),
            None => {
                report.missing_news += 1;
                Arc::clone(&empty)
            }
        };
        samples.push(Sample {
            anchor_date: frame.dates[t],
            target_date: frame.dates[t + 1],
            window_dates: frame.dates[lo..=t].to_vec(),
            window: frame.rows[lo..=t].to_vec(),
            keywords: kw,
            last_close: frame.rows[t][CLOSE],
            target: frame.rows[t + 1][CLOSE],
        });
    }
    report.samples = samples.len();
    Ok((samples, report))
}

pub fn target_years(samples: &[Sample]) -> BTreeSet<i32> {
    samples.iter().map(|s| s.target_date.year()).collect()
}

/// Train and test samples of a fold, split by target year.
pub fn split<'a>(samples: &'a [Sample], fold: &FoldSpec) -> (Vec<&'a Sample>, Vec<&'a Sample>) {
    let train = samples
        .iter()
        .filter(|s| fold.is_train_year(s.target_date.year()))
        .collect();
    let test = samples
        .iter()
        .filter(|s| s.target_date.year() == fold.test_year)
        .collect();
    (train, test)
}

/// Model-ready sample: scaled `T×f` window and padded `n×d` keyword block.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub window: Vec<f64>,
    pub keywords: Vec<f64>,
}

/// Per-feature z-score plus a target z-score, fitted on training data only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub feature_loc: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_loc: f64,
    pub target_scale: f64,
}

fn location_scale(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 1.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl Scaler {
    /// Feature statistics come from the distinct indicator rows inside the
    /// training windows; target statistics from the training targets.
    pub fn fit(train: &[&Sample], audit: Option<&AuditLog>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::validation("training split", "cannot fit a scaler on zero samples"));
        }
        let mut rows: std::collections::BTreeMap<NaiveDate, &[f64; NUM_FEATURES]> = Default::default();
        for s in train {
            for (d, r) in s.window_dates.iter().zip(&s.window) {
                rows.insert(*d, r);
            }
        }
        if let Some(a) = audit {
            a.record("scaler", rows.keys().copied());
            a.record("scaler", train.iter().map(|s| s.target_date));
        }
        let mut feature_loc = Vec::with_capacity(NUM_FEATURES);
        let mut feature_scale = Vec::with_capacity(NUM_FEATURES);
        for j in 0..NUM_FEATURES {
            let col: Vec<f64> = rows.values().map(|r| r[j]).collect();
            let (l, s) = location_scale(&col);
            feature_loc.push(l);
            feature_scale.push(s);
        }
        let targets: Vec<f64> = train.iter().map(|s| s.target).collect();
        let (target_loc, target_scale) = location_scale(&targets);
        Ok(Scaler {
            feature_loc,
            feature_scale,
            target_loc,
            target_scale,
        })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| (x - self.feature_loc[j]) / self.feature_scale[j])
            .collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &z)| z * self.feature_scale[j] + self.feature_loc[j])
            .collect()
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.target_loc) / self.target_scale
    }

    pub fn invert_target(&self, z: f64) -> f64 {
        z * self.target_scale + self.target_loc
    }

    pub fn input(&self, s: &Sample, n: usize, d: usize) -> ModelInput {
        let mut window = Vec::with_capacity(s.window.len() * NUM_FEATURES);
        for r in &s.window {
            window.extend(self.transform_row(r));
        }
        ModelInput {
            window,
            keywords: s.keywords.padded(n, d),
        }
    }

    /// SHA-256 over the exact bit patterns of every statistic.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in self
            .feature_loc
            .iter()
            .chain(&self.feature_scale)
            .chain([&self.target_loc, &self.target_scale])
        {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
