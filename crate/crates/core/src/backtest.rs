//! Long/flat simulation driven by next-day forecasts.
//!
//! The position for trading day `t` is decided at the close of `t−1`: long
//! when `ŷ_t > P_{t−1}`. A long day earns `R_t = ln(P_t / P_{t−1})`. Entering
//! and leaving each cost `ln(1 − c)`; the exit cost is booked on the first
//! flat day, and a position still open after the last day is liquidated on
//! that day.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ForecastSeries, IndexPoints};

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Standard,
    /// Long days whose predicted direction was wrong earn zero.
    PaperLiteral,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "paper_literal" | "paper-literal" => Ok(Mode::PaperLiteral),
            _ => Err(Error::validation("strategy.mode", format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::PaperLiteral => "paper_literal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    /// Proportional cost per entry and per exit.
    pub cost: f64,
    pub mode: Mode,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            cost: 0.003,
            mode: Mode::Standard,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cost) {
            return Err(Error::validation("strategy.cost", "must satisfy 0 <= c < 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Long,
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub date: NaiveDate,
    pub position: Position,
    /// Log return earned before costs.
    pub r_t: f64,
    /// Sum of `ln(1 − c)` terms booked this day.
    pub cost: f64,
    pub net: f64,
    /// `(exp(Σ net) − 1) · 100` up to and including this day.
    pub cumulative_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeLedger {
    pub mode: Mode,
    pub cost_rate: f64,
    pub rows: Vec<LedgerRow>,
    pub entries: usize,
}

impl TradeLedger {
    pub fn net_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.net).collect()
    }

    pub fn total_log_return(&self) -> f64 {
        self.rows.iter().map(|r| r.net).sum()
    }

    pub fn cumulative_pct(&self) -> f64 {
        (self.total_log_return().exp() - 1.0) * 100.0
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        crate::eval::write_csv(writer, &self.rows)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        crate::eval::write_csv_file(path, &self.rows)
    }
}

/// `prices[0]` is the close before the first forecast date and
/// `prices[1..]` must cover exactly the forecast dates.
pub fn simulate(
    forecast: &ForecastSeries,
    prices: &[(NaiveDate, IndexPoints)],
    config: &StrategyConfig,
) -> Result<TradeLedger> {
    config.validate()?;
    if prices.len() != forecast.len() + 1 || prices[1..].iter().map(|p| p.0).ne(forecast.dates.iter().copied()) {
        return Err(Error::validation(
            "backtest",
            "price path must be the previous close followed by every forecast date",
        ));
    }
    if prices.iter().any(|p| !(p.1.get() > 0.0 && p.1.get().is_finite())) {
        return Err(Error::validation("backtest", "prices must be positive and finite"));
    }
    let haircut = (1.0 - config.cost).ln();
    let mut rows = Vec::with_capacity(forecast.len());
    let mut long = false;
    let mut entries = 0;
    let mut total = 0.0;
    for (i, date) in forecast.dates.iter().enumerate() {
        let prev = prices[i].1.get();
        let close = prices[i + 1].1.get();
        let predicted = forecast.predicted[i].get();
        let go_long = predicted > prev;
        let mut cost = 0.0;
        if go_long && !long {
            cost += haircut;
            entries += 1;
        } else if !go_long && long {
            cost += haircut;
        }
        long = go_long;
        let mut r_t = if long { (close / prev).ln() } else { 0.0 };
        if long && config.mode == Mode::PaperLiteral && (predicted - prev).signum() != signum0(close - prev) {
            r_t = 0.0;
        }
        if long && i + 1 == forecast.len() {
            cost += haircut;
        }
        let net = r_t + cost;
        total += net;
        rows.push(LedgerRow {
            date: *date,
            position: if long { Position::Long } else { Position::Flat },
            r_t,
            cost,
            net,
            cumulative_pct: (total.exp() - 1.0) * 100.0,
        });
    }
    Ok(TradeLedger {
        mode: config.mode,
        cost_rate: config.cost,
        rows,
        entries,
    })
}

fn signum0(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Annualized `mean / std` of daily returns (sample std, zero risk-free
/// rate). `Ok(None)` when the std is zero.
pub fn sharpe(returns: &[f64]) -> Result<Option<f64>> {
    if returns.len() < 2 {
        return Err(Error::validation("sharpe", "need at least 2 return observations"));
    }
    let sd = sample_std(returns);
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    if sd == 0.0 || sd < 1e-15 * mean.abs() {
        return Ok(None);
    }
    Ok(Some(mean / sd * TRADING_DAYS.sqrt()))
}

/// Historical volatility in percent: std of daily log returns × √252 × 100.
pub fn hv(prices: &[f64]) -> Result<f64> {
    if prices.len() < 3 {
        return Err(Error::validation("hv", "need at least 3 prices"));
    }
    if prices.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::validation("hv", "prices must be positive"));
    }
    let r: Vec<f64> = prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    Ok(sample_std(&r) * TRADING_DAYS.sqrt() * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub mode: Mode,
    pub cost: f64,
    pub days: usize,
    pub entries: usize,
    pub cumulative_profit_pct: f64,
    pub sharpe: Option<f64>,
    pub sharpe_undefined: bool,
    pub hv_pct: Option<f64>,
}

impl BacktestSummary {
    /// `prices` is the path passed to [`simulate`].
    pub fn new(ledger: &TradeLedger, prices: &[(NaiveDate, IndexPoints)]) -> Self {
        let sharpe = sharpe(&ledger.net_returns()).ok().flatten();
        let closes: Vec<f64> = prices.iter().map(|p| p.1.get()).collect();
        BacktestSummary {
            mode: ledger.mode,
            cost: ledger.cost_rate,
            days: ledger.rows.len(),
            entries: ledger.entries,
            cumulative_profit_pct: ledger.cumulative_pct(),
            sharpe,
            sharpe_undefined: sharpe.is_none(),
            hv_pct: hv(&closes).ok(),
        }
    }
}
