//! Forecast metrics, Diebold–Mariano comparison and baseline forecasters.
//!
//! Metrics only accept [`IndexPoints`], so values still in the model's
//! scaled space cannot reach them by accident:
//!
//! ```compile_fail
//! use iknet::eval::rmse;
//! let scaled: Vec<f64> = vec![0.12, -0.4];
//! let _ = rmse(&scaled, &scaled);
//! ```

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{Sample, Scaler};
use crate::error::{Error, Result};

/// A price level in raw index points.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexPoints(f64);

impl IndexPoints {
    pub fn new(v: f64) -> Self {
        IndexPoints(v)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Predictions and outcomes of one model on one fold's test dates.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSeries {
    pub model: String,
    pub fold: usize,
    pub dates: Vec<NaiveDate>,
    pub predicted: Vec<IndexPoints>,
    pub actual: Vec<IndexPoints>,
}

impl ForecastSeries {
    pub fn new(
        model: impl Into<String>,
        fold: usize,
        dates: Vec<NaiveDate>,
        predicted: Vec<IndexPoints>,
        actual: Vec<IndexPoints>,
    ) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::validation("forecast", "empty series"));
        }
        if predicted.len() != dates.len() || actual.len() != dates.len() {
            return Err(Error::validation("forecast", "dates, predictions and actuals differ in length"));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("forecast", "dates must be strictly increasing"));
        }
        if predicted.iter().chain(&actual).any(|v| !v.0.is_finite()) {
            return Err(Error::Numeric("forecast series contains non-finite values".into()));
        }
        Ok(ForecastSeries {
            model: model.into(),
            fold,
            dates,
            predicted,
            actual,
        })
    }

    /// Series over `test` samples; `predicted[i]` forecasts `test[i].target`.
    pub fn from_samples(model: impl Into<String>, fold: usize, test: &[&Sample], predicted: Vec<IndexPoints>) -> Result<Self> {
        ForecastSeries::new(
            model,
            fold,
            test.iter().map(|s| s.target_date).collect(),
            predicted,
            test.iter().map(|s| IndexPoints(s.target)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn rmse(&self) -> Result<f64> {
        rmse(&self.predicted, &self.actual)
    }

    pub fn smape(&self) -> Result<f64> {
        smape(&self.predicted, &self.actual)
    }
}

fn paired(pred: &[IndexPoints], actual: &[IndexPoints]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::validation("forecast", "empty series"));
    }
    if pred.len() != actual.len() {
        return Err(Error::Shape {
            op: "metric",
            left: vec![pred.len()],
            right: vec![actual.len()],
        });
    }
    Ok(())
}

pub fn rmse(pred: &[IndexPoints], actual: &[IndexPoints]) -> Result<f64> {
    paired(pred, actual)?;
    let sse: f64 = pred.iter().zip(actual).map(|(p, y)| (p.0 - y.0).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Percent, with the mean of `|y|` and `|ŷ|` as denominator.
pub fn smape(pred: &[IndexPoints], actual: &[IndexPoints]) -> Result<f64> {
    paired(pred, actual)?;
    let total: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, y)| {
            let den = (p.0.abs() + y.0.abs()) / 2.0;
            if den == 0.0 {
                0.0
            } else {
                (p.0 - y.0).abs() / den
            }
        })
        .sum();
    Ok(100.0 * total / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Squared,
    Absolute,
}

impl Loss {
    fn of(self, e: f64) -> f64 {
        match self {
            Loss::Squared => e * e,
            Loss::Absolute => e.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmOptions {
    pub loss: Loss,
    /// Small-sample correction with Student-t p-values.
    pub harvey: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    /// Negative when the first model has the lower loss.
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub loss: Loss,
    pub horizon: usize,
    pub n: usize,
    pub mean_differential: f64,
    /// Every loss differential is identical, so the variance is zero.
    pub degenerate: bool,
}

pub const DM_MIN_OBSERVATIONS: usize = 10;

/// One-step Diebold–Mariano test on `d_t = loss(a) − loss(b)`.
pub fn dm_test(a: &ForecastSeries, b: &ForecastSeries, opts: DmOptions) -> Result<DmResult> {
    if a.dates != b.dates {
        return Err(Error::validation("dm_test", "series cover different dates"));
    }
    let n = a.len();
    if n < DM_MIN_OBSERVATIONS {
        return Err(Error::validation(
            "dm_test",
            format!("need at least {DM_MIN_OBSERVATIONS} aligned forecasts, got {n}"),
        ));
    }
    let d: Vec<f64> = (0..n)
        .map(|t| opts.loss.of(a.predicted[t].0 - a.actual[t].0) - opts.loss.of(b.predicted[t].0 - b.actual[t].0))
        .collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let gamma0 = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    if d.iter().all(|x| *x == d[0]) || gamma0 == 0.0 {
        let statistic = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(DmResult {
            statistic,
            p_value: None,
            loss: opts.loss,
            horizon: 1,
            n,
            mean_differential: mean,
            degenerate: true,
        });
    }
    let mut statistic = mean / (gamma0 / nf).sqrt();
    let p_value = if opts.harvey {
        statistic *= ((nf - 1.0) / nf).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
        2.0 * t.cdf(-statistic.abs())
    } else {
        2.0 * Normal::standard().cdf(-statistic.abs())
    };
    Ok(DmResult {
        statistic,
        p_value: Some(p_value),
        loss: opts.loss,
        horizon: 1,
        n,
        mean_differential: mean,
        degenerate: false,
    })
}

pub const RIDGE_LAMBDAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Ridge regression on centered data (the intercept is not penalized).
#[derive(Clone, Debug, PartialEq)]
pub struct Ridge {
    pub lambda: f64,
    x_mean: Vec<f64>,
    y_mean: f64,
    coef: Vec<f64>,
}

impl Ridge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::validation("ridge", "need equally many (nonzero) rows and targets"));
        }
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::validation("ridge.lambda", "must be positive"));
        }
        let p = x[0].len();
        if x.iter().any(|r| r.len() != p) {
            return Err(Error::validation("ridge", "rows differ in length"));
        }
        let n = x.len() as f64;
        let x_mean: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let y_mean = y.iter().sum::<f64>() / n;
        let xc = DMatrix::from_fn(x.len(), p, |i, j| x[i][j] - x_mean[j]);
        let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
        let xt = xc.transpose();
        let mut g = &xt * &xc;
        for i in 0..p {
            g[(i, i)] += lambda;
        }
        let coef = g
            .cholesky()
            .ok_or_else(|| Error::Numeric("ridge normal equations are not positive definite".into()))?
            .solve(&(&xt * &yc));
        Ok(Ridge {
            lambda,
            x_mean,
            y_mean,
            coef: coef.iter().copied().collect(),
        })
    }

    /// Pick λ on the last 20% of rows (chronological holdout), refit on all.
    pub fn select(x: &[Vec<f64>], y: &[f64], grid: &[f64]) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::validation("ridge", "need at least 2 training rows"));
        }
        let hold = (x.len() / 5).max(1);
        let cut = x.len() - hold;
        let mut best: Option<(f64, f64)> = None;
        for &lambda in grid {
            let m = Ridge::fit(&x[..cut], &y[..cut], lambda)?;
            let mse = x[cut..]
                .iter()
                .zip(&y[cut..])
                .map(|(r, t)| (m.predict(r) - t).powi(2))
                .sum::<f64>()
                / hold as f64;
            if best.map_or(true, |(b, _)| mse < b) {
                best = Some((mse, lambda));
            }
        }
        let (_, lambda) = best.ok_or_else(|| Error::validation("ridge", "empty lambda grid"))?;
        Ridge::fit(x, y, lambda)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.y_mean
            + x.iter()
                .zip(&self.x_mean)
                .zip(&self.coef)
                .map(|((v, m), c)| (v - m) * c)
                .sum::<f64>()
    }
}

pub struct Baselines {
    pub ridge: ForecastSeries,
    pub ridge_lambda: f64,
    pub persistence: ForecastSeries,
}

/// Ridge on flattened scaled windows, and `ŷ_{t+1} = y_t`.
pub fn baselines(train: &[&Sample], test: &[&Sample], scaler: &Scaler, fold: usize) -> Result<Baselines> {
    let window = |s: &Sample| scaler.input(s, 0, 0).window;
    let x: Vec<Vec<f64>> = train.iter().map(|s| window(s)).collect();
    let y: Vec<f64> = train.iter().map(|s| scaler.target(s.target)).collect();
    let model = Ridge::select(&x, &y, &RIDGE_LAMBDAS)?;
    let ridge = test
        .iter()
        .map(|s| IndexPoints(scaler.invert_target(model.predict(&window(s)))))
        .collect();
    let persistence = test.iter().map(|s| IndexPoints(s.last_close)).collect();
    Ok(Baselines {
        ridge: ForecastSeries::from_samples("ridge", fold, test, ridge)?,
        ridge_lambda: model.lambda,
        persistence: ForecastSeries::from_samples("persistence", fold, test, persistence)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Fold index, or `mean` for the across-fold average.
    pub fold: String,
    pub test_year: Option<i32>,
    pub model: String,
    pub n: usize,
    pub rmse: f64,
    pub smape: f64,
}

impl MetricsRow {
    pub fn of(series: &ForecastSeries, test_year: i32) -> Result<Self> {
        Ok(MetricsRow {
            fold: series.fold.to_string(),
            test_year: Some(test_year),
            model: series.model.clone(),
            n: series.len(),
            rmse: series.rmse()?,
            smape: series.smape()?,
        })
    }
}

/// Per-model means over fold rows, in first-appearance order.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    models
        .into_iter()
        .map(|m| {
            let rs: Vec<&MetricsRow> = rows.iter().filter(|r| r.model == m).collect();
            let k = rs.len() as f64;
            MetricsRow {
                fold: "mean".into(),
                test_year: None,
                model: m.to_string(),
                n: rs.iter().map(|r| r.n).sum(),
                rmse: rs.iter().map(|r| r.rmse).sum::<f64>() / k,
                smape: rs.iter().map(|r| r.smape).sum::<f64>() / k,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmRow {
    pub fold: usize,
    pub model_a: String,
    pub model_b: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

/// Every ordered pair of distinct models.
pub fn dm_matrix(series: &[ForecastSeries], opts: DmOptions) -> Result<Vec<DmRow>> {
    let mut rows = Vec::new();
    for a in series {
        for b in series.iter().filter(|b| b.model != a.model) {
            let r = dm_test(a, b, opts)?;
            rows.push(DmRow {
                fold: a.fold,
                model_a: a.model.clone(),
                model_b: b.model.clone(),
                statistic: r.statistic,
                p_value: r.p_value,
                degenerate: r.degenerate,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse("csv", e))?;
    }
    w.flush().map_err(|e| Error::io("csv", e))
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(f), rows)
}
