//! Direct indicator definitions and a random OHLCV generator.

use chrono::{Days, NaiveDate};
use iknet::indicators::{Bar, IndicatorFrame, OhlcvSeries, NUM_FEATURES};
use iknet::rng;
use rand::Rng as _;

pub fn random_series(days: usize, seed: u64) -> OhlcvSeries {
    let mut r = rng::rng_from(seed);
    let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
    let mut price = 100.0;
    let bars = (0..days)
        .map(|i| {
            let open = price;
            price *= (r.gen_range(-0.03..0.03f64)).exp();
            let high = open.max(price) * (1.0 + r.gen_range(0.0..0.01));
            let low = open.min(price) * (1.0 - r.gen_range(0.0..0.01));
            Bar {
                date: start + Days::new(i as u64),
                open,
                high,
                low,
                close: price,
                volume: r.gen_range(1e5..1e6f64).round(),
            }
        })
        .collect();
    OhlcvSeries::new(bars).unwrap()
}

/// Row-by-row recomputation in the style of a spreadsheet: every cell is
/// computed from the previous row of the same column.
pub struct Sheet {
    pub ema12: Vec<f64>,
    pub ema26: Vec<f64>,
    pub macd: Vec<f64>,
    pub signal: Vec<f64>,
}

pub fn sheet(close: &[f64]) -> Sheet {
    let n = close.len();
    let nan = f64::NAN;
    let mut s = Sheet {
        ema12: vec![nan; n],
        ema26: vec![nan; n],
        macd: vec![nan; n],
        signal: vec![nan; n],
    };
    for t in 0..n {
        if t == 11 {
            s.ema12[t] = close[..12].iter().sum::<f64>() / 12.0;
        } else if t > 11 {
            s.ema12[t] = close[t] * (2.0 / 13.0) + s.ema12[t - 1] * (11.0 / 13.0);
        }
        if t == 25 {
            s.ema26[t] = close[..26].iter().sum::<f64>() / 26.0;
        } else if t > 25 {
            s.ema26[t] = close[t] * (2.0 / 27.0) + s.ema26[t - 1] * (25.0 / 27.0);
        }
        if t >= 25 {
            s.macd[t] = s.ema12[t] - s.ema26[t];
        }
        if t == 33 {
            s.signal[t] = s.macd[25..34].iter().sum::<f64>() / 9.0;
        } else if t > 33 {
            s.signal[t] = s.macd[t] * 0.2 + s.signal[t - 1] * 0.8;
        }
    }
    s
}

fn population_sd(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Worst relative deviation between frame columns and their direct
/// definitions over every valid row; also fails when row validity is off.
pub fn frame_deviation(series: &OhlcvSeries) -> f64 {
    let frame = IndicatorFrame::compute(series);
    let c = series.closes();
    let v = series.volumes();
    let s = sheet(&c);
    let mut worst: f64 = 0.0;
    for t in 0..c.len() {
        if frame.valid[t] != (t >= 33) {
            return f64::INFINITY;
        }
        if t < 33 {
            continue;
        }
        let row = frame.rows[t];
        let sma10 = c[t - 9..=t].iter().sum::<f64>() / 10.0;
        let w20 = &c[t - 19..=t];
        let m20 = w20.iter().sum::<f64>() / 20.0;
        let sd20 = population_sd(w20);
        let lr: Vec<f64> = (t - 29..=t).map(|k| (c[k] / c[k - 1]).ln()).collect();
        let want = [
            (5, sma10),
            (8, s.macd[t]),
            (9, s.signal[t]),
            (10, s.macd[t] - s.signal[t]),
            (11, m20 + 2.0 * sd20),
            (12, m20),
            (13, m20 - 2.0 * sd20),
            (14, population_sd(&lr[20..]) / population_sd(&lr)),
            (15, (v[t] - v[t - 1]) / v[t - 1]),
            (16, (c[t] - sma10) / sma10),
        ];
        for (j, w) in want {
            worst = worst.max((row[j] - w).abs() / w.abs().max(1.0));
        }
        if !(0.0..=100.0).contains(&row[7]) {
            return f64::INFINITY;
        }
    }
    worst
}

/// Cells of the first `cut` rows that change when later days are removed.
pub fn look_ahead_violations(series: &OhlcvSeries, cut: usize) -> usize {
    let full = IndicatorFrame::compute(series);
    let part = IndicatorFrame::compute(&series.truncate(cut));
    let mut bad = 0;
    for t in 0..cut {
        if part.valid[t] != full.valid[t] {
            bad += 1;
        }
        for j in 0..NUM_FEATURES {
            let (a, b) = (part.rows[t][j], full.rows[t][j]);
            if !(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())) {
                bad += 1;
            }
        }
    }
    bad
}
