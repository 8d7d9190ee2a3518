//! Synthetic market + news generator for tests and the bundled fixture.
//!
//! Log price follows a mean-reverting process with an indicator-driven term
//! and a news-carried shock:
//!
//! ```text
//! r_{t+1} = −(1−φ)·x_t − κ·dev_t + σ_s·s_t + σ_ε·ε_t,   x = ln(P/P₀)
//! ```
//!
//! `dev_t` is the SMA-10 deviation of the close and `s_t` is the summed effect
//! of the signal words in day `t`'s news. Each day lists `list_len` words
//! ranked by saliency: the active signal words sit at random ranks inside the
//! top `signal_ranks`, inactive signal words appear as distractors at ranks
//! from `distractor_rank` on, and neutral filler words take the rest.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Keyword, KeywordFile, KeywordSet};
use crate::error::{Error, Result};
use crate::indicators::{sma, Bar, OhlcvSeries};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start: NaiveDate,
    /// Number of business days to generate.
    pub days: usize,
    pub base_price: f64,
    pub phi: f64,
    pub kappa: f64,
    pub shock_std: f64,
    pub noise_std: f64,
    pub embed_dim: usize,
    pub signal_words: usize,
    pub active_signals: usize,
    pub signal_ranks: usize,
    pub distractors: usize,
    /// 1-based rank of the first distractor slot.
    pub distractor_rank: usize,
    pub list_len: usize,
    pub filler_words: usize,
    /// Round embeddings and prices to this many decimals.
    pub decimals: Option<i32>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            start: NaiveDate::from_ymd_opt(2014, 9, 1).expect("valid date"),
            days: 2690,
            base_price: 1000.0,
            phi: 0.98,
            kappa: 0.3,
            shock_std: 0.015,
            noise_std: 0.005,
            embed_dim: 16,
            signal_words: 12,
            active_signals: 6,
            signal_ranks: 12,
            distractors: 4,
            distractor_rank: 18,
            list_len: 40,
            filler_words: 80,
            decimals: None,
        }
    }
}

impl SynthConfig {
    /// Small fixture: 600 business days from 2022-01-03, compact keyword lists.
    pub fn fixture() -> Self {
        SynthConfig {
            start: NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date"),
            days: 600,
            embed_dim: 8,
            list_len: 24,
            decimals: Some(4),
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days < 2 {
            return Err(Error::validation("days", "need at least 2 days"));
        }
        if self.active_signals > self.signal_ranks || self.active_signals > self.signal_words {
            return Err(Error::validation("active_signals", "must fit in signal_ranks and signal_words"));
        }
        if self.active_signals + self.distractors > self.signal_words {
            return Err(Error::validation("distractors", "active + distractors exceeds signal_words"));
        }
        if self.distractor_rank <= self.signal_ranks || self.distractor_rank + self.distractors - 1 > self.list_len {
            return Err(Error::validation("distractor_rank", "must lie after signal_ranks and within list_len"));
        }
        let fillers_needed = self.list_len - self.active_signals - self.distractors;
        if self.filler_words < fillers_needed {
            return Err(Error::validation("filler_words", format!("need at least {fillers_needed}")));
        }
        if self.embed_dim == 0 {
            return Err(Error::validation("embed_dim", "must be >= 1"));
        }
        Ok(())
    }
}

pub struct SynthData {
    pub series: OhlcvSeries,
    pub keywords: KeywordFile,
    /// Standardized news shock `s_t` per day.
    pub shocks: Vec<f64>,
    /// Signal words and their effects.
    pub effects: Vec<(String, f64)>,
}

pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn unit_vector(r: &mut rng::Rng, d: usize, decimals: Option<i32>) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| round(x / norm, decimals)).collect()
}

fn round(x: f64, decimals: Option<i32>) -> f64 {
    match decimals {
        Some(k) => {
            let f = 10f64.powi(k);
            (x * f).round() / f
        }
        None => x,
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let dates = business_days(cfg.start, cfg.days);
    let mut r = rng::stream(cfg.seed, "synth", &[]);
    let d = cfg.embed_dim;

    let signal_names: Vec<String> = (0..cfg.signal_words).map(|i| format!("signal{i:02}")).collect();
    let filler_names: Vec<String> = (0..cfg.filler_words).map(|i| format!("filler{i:03}")).collect();
    let effects: Vec<f64> = (0..cfg.signal_words)
        .map(|i| {
            let mag = 0.5 + (i / 2) as f64 / cfg.signal_words.max(1) as f64;
            if i % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let signal_emb: Vec<Vec<f64>> = (0..cfg.signal_words).map(|_| unit_vector(&mut r, d, cfg.decimals)).collect();
    let filler_emb: Vec<Vec<f64>> = (0..cfg.filler_words).map(|_| unit_vector(&mut r, d, cfg.decimals)).collect();
    // Var of a sum of k draws without replacement from the effect list.
    let m = cfg.signal_words as f64;
    let k = cfg.active_signals as f64;
    let mean_e = effects.iter().sum::<f64>() / m;
    let var_e = effects.iter().map(|e| (e - mean_e).powi(2)).sum::<f64>() / m;
    let shock_sd = (k * var_e * (m - k) / (m - 1.0).max(1.0)).sqrt().max(1e-12);

    let mut shocks = Vec::with_capacity(dates.len());
    let mut keywords = KeywordFile::default();
    let all_signals: Vec<usize> = (0..cfg.signal_words).collect();
    let all_fillers: Vec<usize> = (0..cfg.filler_words).collect();
    for date in &dates {
        let chosen: Vec<usize> = all_signals
            .choose_multiple(&mut r, cfg.active_signals + cfg.distractors)
            .copied()
            .collect();
        let (active, distract) = chosen.split_at(cfg.active_signals);
        let s = (active.iter().map(|&i| effects[i]).sum::<f64>() - k * mean_e) / shock_sd;
        shocks.push(s);

        let mut slots: Vec<Option<(bool, usize)>> = vec![None; cfg.list_len];
        let mut top: Vec<usize> = (0..cfg.signal_ranks).collect();
        top.shuffle(&mut r);
        for (&slot, &w) in top.iter().zip(active) {
            slots[slot] = Some((true, w));
        }
        for (j, &w) in distract.iter().enumerate() {
            slots[cfg.distractor_rank - 1 + j] = Some((true, w));
        }
        let mut fill = all_fillers.choose_multiple(&mut r, cfg.list_len).copied();
        for slot in slots.iter_mut().filter(|s| s.is_none()) {
            *slot = Some((false, fill.next().expect("enough fillers")));
        }
        let entries = slots
            .into_iter()
            .enumerate()
            .map(|(rank, slot)| {
                let (is_signal, w) = slot.expect("filled");
                let (word, emb) = if is_signal {
                    (&signal_names[w], &signal_emb[w])
                } else {
                    (&filler_names[w], &filler_emb[w])
                };
                Keyword {
                    word: word.clone(),
                    saliency: 1.0 / (rank as f64 + 1.0),
                    embedding: emb.clone(),
                }
            })
            .collect();
        let articles = r.gen_range(3..=8);
        keywords.insert(*date, KeywordSet::new(articles, entries)?, "synth")?;
    }

    let mut closes = Vec::with_capacity(dates.len());
    let mut x = 0.0f64;
    closes.push(cfg.base_price);
    for t in 0..dates.len() - 1 {
        let dev = if t >= 9 {
            let s = sma(&closes[t - 9..=t], 10)[9].expect("ten values");
            (closes[t] - s) / s
        } else {
            0.0
        };
        let eps: f64 = gaussian(&mut r);
        let ret = -(1.0 - cfg.phi) * x - cfg.kappa * dev + cfg.shock_std * shocks[t] + cfg.noise_std * eps;
        x += ret;
        closes.push(cfg.base_price * x.exp());
    }

    let mut bars = Vec::with_capacity(dates.len());
    for (t, date) in dates.iter().enumerate() {
        let close = round(closes[t], cfg.decimals);
        let open = if t == 0 {
            close
        } else {
            round(closes[t - 1] * (1.0 + 0.001 * gaussian(&mut r)), cfg.decimals)
        };
        let hi = round(open.max(close) * (1.0 + 0.003 * r.gen::<f64>()), cfg.decimals).max(open.max(close));
        let lo = round(open.min(close) * (1.0 - 0.003 * r.gen::<f64>()), cfg.decimals).min(open.min(close));
        let volume = (1.0e6 * (0.3 * gaussian(&mut r)).exp()).round();
        bars.push(Bar {
            date: *date,
            open,
            high: hi,
            low: lo,
            close,
            volume,
        });
    }
    Ok(SynthData {
        series: OhlcvSeries::new(bars)?,
        keywords,
        shocks,
        effects: signal_names.into_iter().zip(effects).collect(),
    })
}

/// Standard normal via Box–Muller.
fn gaussian(r: &mut rng::Rng) -> f64 {
    let u1: f64 = r.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
