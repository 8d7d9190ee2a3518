//! OHLCV ingestion and the 17 technical-indicator features.
//!
//! Feature order (fixed):
//!
//! | # | name | definition |
//! |---|------|------------|
//! | 0–4 | open, high, low, close, volume | raw bar |
//! | 5 | sma10 | mean of last 10 closes |
//! | 6 | ema10 | α = 2/11, seeded by the first SMA10 |
//! | 7 | rsi14 | Wilder smoothing; flat series = 50 |
//! | 8 | macd | EMA12 − EMA26 |
//! | 9 | macd_signal | EMA9 of MACD, seeded by SMA of its first 9 values |
//! | 10 | macd_diff | MACD − signal |
//! | 11–13 | bb_upper, bb_middle, bb_lower | SMA20 ± 2·population std |
//! | 14 | volatility_ratio | std of last 10 log returns ÷ std of last 30; 1 if the latter is 0 |
//! | 15 | volume_change | (v_t − v_{t−1})/v_{t−1}; 0 if v_{t−1} = 0 |
//! | 16 | sma_deviation | (close − SMA10)/SMA10 |
//!
//! Every feature at row `t` reads rows `≤ t` only. The first [`WARMUP`] rows
//! (up to the first MACD signal value) are flagged invalid.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 17;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "open",
    "high",
    "low",
    "close",
    "volume",
    "sma10",
    "ema10",
    "rsi14",
    "macd",
    "macd_signal",
    "macd_diff",
    "bb_upper",
    "bb_middle",
    "bb_lower",
    "volatility_ratio",
    "volume_change",
    "sma_deviation",
];

pub const CLOSE: usize = 3;
pub const RSI: usize = 7;

/// Rows `0..WARMUP` lack at least one feature.
pub const WARMUP: usize = 33;

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

/// Validated daily bars with strictly increasing dates.
#[derive(Clone, Debug, PartialEq)]
pub struct OhlcvSeries {
    bars: Vec<Bar>,
}

impl OhlcvSeries {
    pub fn new(bars: Vec<Bar>) -> Result<Self> {
        for (i, b) in bars.iter().enumerate() {
            let row = format!("row {} ({})", i + 1, b.date);
            let prices = [b.open, b.high, b.low, b.close];
            if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return Err(Error::validation(row, "prices must be finite and > 0"));
            }
            if !b.volume.is_finite() || b.volume < 0.0 {
                return Err(Error::validation(row, "volume must be finite and >= 0"));
            }
            if b.high < b.open.max(b.close) || b.low > b.open.min(b.close) {
                return Err(Error::validation(row, "need high >= max(open, close) >= min(open, close) >= low"));
            }
            if i > 0 && bars[i - 1].date >= b.date {
                return Err(Error::validation(row, "dates must be strictly increasing"));
            }
        }
        Ok(OhlcvSeries { bars })
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse("ohlcv csv", e))?.clone();
        let expected = ["date", "open", "high", "low", "close", "volume"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::validation(
                "ohlcv header",
                format!("expected `{}`", expected.join(",")),
            ));
        }
        let bars = rdr
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::parse(format!("ohlcv csv row {}", i + 1), e)))
            .collect::<Result<Vec<Bar>>>()?;
        Self::new(bars)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::parse("ohlcv csv write", e);
        w.write_record(["date", "open", "high", "low", "close", "volume"]).map_err(err)?;
        for b in &self.bars {
            w.write_record([
                b.date.to_string(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::parse("ohlcv csv write", e))
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.volume).collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.bars.binary_search_by_key(&date, |b| b.date).ok()
    }

    /// First `k` bars.
    pub fn truncate(&self, k: usize) -> Self {
        OhlcvSeries {
            bars: self.bars[..k.min(self.bars.len())].to_vec(),
        }
    }
}

/// Trailing simple moving average; `None` before `n` values exist.
pub fn sma(xs: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; xs.len()];
    if n == 0 {
        return out;
    }
    for t in n.saturating_sub(1)..xs.len() {
        out[t] = Some(xs[t + 1 - n..=t].iter().sum::<f64>() / n as f64);
    }
    out
}

/// EMA with α = 2/(n+1), seeded by the SMA of the first `n` defined values.
pub fn ema(xs: &[Option<f64>], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; xs.len()];
    if n == 0 {
        return out;
    }
    let alpha = 2.0 / (n as f64 + 1.0);
    let Some(start) = xs.iter().position(Option::is_some) else {
        return out;
    };
    let seed_end = start + n - 1;
    if seed_end >= xs.len() {
        return out;
    }
    let seed: Option<f64> = xs[start..=seed_end].iter().copied().sum();
    let mut prev = seed.expect("defined after first value") / n as f64;
    out[seed_end] = Some(prev);
    for t in seed_end + 1..xs.len() {
        let x = xs[t].expect("defined after first value");
        prev += alpha * (x - prev);
        out[t] = Some(prev);
    }
    out
}

pub fn ema_of(xs: &[f64], n: usize) -> Vec<Option<f64>> {
    let wrapped: Vec<Option<f64>> = xs.iter().copied().map(Some).collect();
    ema(&wrapped, n)
}

/// Wilder RSI. First value at index `n`.
pub fn rsi(close: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    if n == 0 || close.len() <= n {
        return out;
    }
    let diff = |t: usize| close[t] - close[t - 1];
    let mut gain = 0.0;
    let mut loss = 0.0;
    for t in 1..=n {
        let d = diff(t);
        gain += d.max(0.0);
        loss += (-d).max(0.0);
    }
    gain /= n as f64;
    loss /= n as f64;
    out[n] = Some(rsi_value(gain, loss));
    let w = n as f64;
    for t in n + 1..close.len() {
        let d = diff(t);
        gain = (gain * (w - 1.0) + d.max(0.0)) / w;
        loss = (loss * (w - 1.0) + (-d).max(0.0)) / w;
        out[t] = Some(rsi_value(gain, loss));
    }
    out
}

fn rsi_value(gain: f64, loss: f64) -> f64 {
    if loss == 0.0 {
        if gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + gain / loss)
    }
}

pub struct Macd {
    pub macd: Vec<Option<f64>>,
    pub signal: Vec<Option<f64>>,
    pub diff: Vec<Option<f64>>,
}

/// MACD(12, 26, 9).
pub fn macd(close: &[f64]) -> Macd {
    let fast = ema_of(close, 12);
    let slow = ema_of(close, 26);
    let macd: Vec<Option<f64>> = fast
        .iter()
        .zip(&slow)
        .map(|(f, s)| Some((*f)? - (*s)?))
        .collect();
    let signal = ema(&macd, 9);
    let diff = macd
        .iter()
        .zip(&signal)
        .map(|(m, s)| Some((*m)? - (*s)?))
        .collect();
    Macd { macd, signal, diff }
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub struct Bollinger {
    pub upper: Vec<Option<f64>>,
    pub middle: Vec<Option<f64>>,
    pub lower: Vec<Option<f64>>,
}

/// Bands at `SMA_n ± k·σ` with population σ.
pub fn bollinger(close: &[f64], n: usize, k: f64) -> Bollinger {
    let middle = sma(close, n);
    let mut upper = vec![None; close.len()];
    let mut lower = vec![None; close.len()];
    for t in 0..close.len() {
        if let Some(m) = middle[t] {
            let sd = population_std(&close[t + 1 - n..=t]);
            upper[t] = Some(m + k * sd);
            lower[t] = Some(m - k * sd);
        }
    }
    Bollinger { upper, middle, lower }
}

/// Short/long realized volatility of log returns; first value at index `long`.
pub fn volatility_ratio(close: &[f64], short: usize, long: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    let returns: Vec<f64> = (1..close.len()).map(|t| (close[t] / close[t - 1]).ln()).collect();
    for t in long..close.len() {
        // returns[t - 1] is the return into day t
        let long_sd = population_std(&returns[t - long..t]);
        let short_sd = population_std(&returns[t - short..t]);
        out[t] = Some(if long_sd == 0.0 { 1.0 } else { short_sd / long_sd });
    }
    out
}

pub fn volume_change(volume: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; volume.len()];
    for t in 1..volume.len() {
        let prev = volume[t - 1];
        out[t] = Some(if prev == 0.0 { 0.0 } else { (volume[t] - prev) / prev });
    }
    out
}

pub fn sma_deviation(close: &[f64], n: usize) -> Vec<Option<f64>> {
    sma(close, n)
        .into_iter()
        .zip(close)
        .map(|(m, c)| m.map(|m| (c - m) / m))
        .collect()
}

/// Indicator rows aligned with the source series.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorFrame {
    pub dates: Vec<NaiveDate>,
    /// NaN-filled on warm-up rows.
    pub rows: Vec<[f64; NUM_FEATURES]>,
    pub valid: Vec<bool>,
}

impl IndicatorFrame {
    pub fn compute(series: &OhlcvSeries) -> Self {
        let close = series.closes();
        let volume = series.volumes();
        let sma10 = sma(&close, 10);
        let ema10 = ema_of(&close, 10);
        let rsi14 = rsi(&close, 14);
        let m = macd(&close);
        let bb = bollinger(&close, 20, 2.0);
        let vr = volatility_ratio(&close, 10, 30);
        let vc = volume_change(&volume);
        let dev = sma_deviation(&close, 10);

        let mut rows = Vec::with_capacity(series.len());
        let mut valid = Vec::with_capacity(series.len());
        for (t, b) in series.bars().iter().enumerate() {
            let derived = [
                sma10[t], ema10[t], rsi14[t], m.macd[t], m.signal[t], m.diff[t], bb.upper[t],
                bb.middle[t], bb.lower[t], vr[t], vc[t], dev[t],
            ];
            let mut row = [f64::NAN; NUM_FEATURES];
            row[..5].copy_from_slice(&[b.open, b.high, b.low, b.close, b.volume]);
            for (slot, v) in row[5..].iter_mut().zip(derived) {
                *slot = v.unwrap_or(f64::NAN);
            }
            valid.push(derived.iter().all(Option::is_some));
            rows.push(row);
        }
        IndicatorFrame {
            dates: series.dates(),
            rows,
            valid,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[feature]).collect()
    }

    /// CSV with `date` plus the 17 feature columns; warm-up rows omitted.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::parse("indicator csv write", e);
        let mut header = vec!["date"];
        header.extend(FEATURE_NAMES);
        w.write_record(&header).map_err(err)?;
        for ((d, row), ok) in self.dates.iter().zip(&self.rows).zip(&self.valid) {
            if !ok {
                continue;
            }
            let mut rec = vec![d.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::parse("indicator csv write", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, c: f64) -> OhlcvSeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let bars = (0..n)
            .map(|i| Bar {
                date: start + chrono::Days::new(i as u64),
                open: c,
                high: c,
                low: c,
                close: c,
                volume: 1000.0,
            })
            .collect();
        OhlcvSeries::new(bars).unwrap()
    }

    #[test]
    fn warmup_is_33_rows() {
        let f = IndicatorFrame::compute(&flat(40, 10.0));
        assert_eq!(f.valid.iter().position(|&v| v), Some(WARMUP));
        assert!(f.valid[WARMUP..].iter().all(|&v| v));
    }

    #[test]
    fn flat_series_conventions() {
        let f = IndicatorFrame::compute(&flat(40, 10.0));
        let r = f.rows[39];
        assert_eq!(r[5], 10.0);
        assert_eq!(r[6], 10.0);
        assert_eq!(r[RSI], 50.0);
        assert_eq!(r[8], 0.0);
        assert_eq!(r[9], 0.0);
        assert_eq!(r[10], 0.0);
        assert_eq!((r[11], r[12], r[13]), (10.0, 10.0, 10.0));
        assert_eq!(r[14], 1.0);
        assert_eq!(r[15], 0.0);
        assert_eq!(r[16], 0.0);
    }

    #[test]
    fn rejects_bad_bars() {
        let mut s = flat(3, 10.0).bars().to_vec();
        s[1].high = 9.0;
        assert!(OhlcvSeries::new(s.clone()).is_err());
        s[1].high = 10.0;
        s[2].date = s[1].date;
        assert!(OhlcvSeries::new(s).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = flat(5, 12.5);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(OhlcvSeries::from_reader(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "day,open,high,low,close,volume\n2020-01-01,1,1,1,1,1\n";
        assert!(matches!(
            OhlcvSeries::from_reader(text.as_bytes()),
            Err(Error::Validation { .. })
        ));
    }
}
