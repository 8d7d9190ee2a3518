use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Attribution, Background, FeatureGrouping, GroupPhi, Method, Predictor};
use crate::error::{Error, Result};
use crate::rng;

/// Largest player count for full enumeration.
pub const MAX_EXACT_PLAYERS: usize = 16;

/// Coalitions evaluated per model call.
const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    /// Enumerate when `M <= 16`, otherwise sample.
    Auto,
    Exact,
    Sampled,
}

impl std::str::FromStr for ShapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ShapMode::Auto),
            "exact" => Ok(ShapMode::Exact),
            "sampled" => Ok(ShapMode::Sampled),
            _ => Err(Error::validation("shap.mode", format!("expected auto, exact or sampled, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapConfig {
    pub mode: ShapMode,
    /// Coalition budget for sampled mode.
    pub coalitions: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            mode: ShapMode::Auto,
            coalitions: 512,
            seed: 0,
        }
    }
}

fn check_inputs(x: &[f64], grouping: &FeatureGrouping, background: &Background) -> Result<()> {
    if x.len() != grouping.input_len() || background.width() != grouping.input_len() {
        return Err(Error::Shape {
            op: "shap input",
            left: vec![x.len(), background.width()],
            right: vec![grouping.input_len()],
        });
    }
    Ok(())
}

/// Background-averaged model output for each coalition (`true` = present).
pub fn coalition_values(
    x: &[f64],
    model: &dyn Predictor,
    grouping: &FeatureGrouping,
    background: &Background,
    coalitions: &[Vec<bool>],
) -> Result<Vec<f64>> {
    check_inputs(x, grouping, background)?;
    let b = background.len();
    let chunks: Vec<Result<Vec<f64>>> = coalitions
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut inputs = Vec::with_capacity(chunk.len() * b);
            for mask in chunk {
                for row in background.rows() {
                    let mut z = row.clone();
                    for (g, _) in grouping.groups().iter().zip(mask).filter(|(_, &on)| on) {
                        for &i in &g.indices {
                            z[i] = x[i];
                        }
                    }
                    inputs.push(z);
                }
            }
            let ys = model.predict(&inputs)?;
            Ok(ys.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(coalitions.len());
    for c in chunks {
        out.extend(c?);
    }
    if let Some(v) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("model returned {v} on a masked input")));
    }
    Ok(out)
}

fn mask_of(bits: usize, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits >> i & 1 == 1).collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn finish(
    grouping: &FeatureGrouping,
    base: f64,
    prediction: f64,
    phi: Vec<f64>,
    method: Method,
    coalitions: usize,
) -> Result<Attribution> {
    let attr = Attribution {
        date: None,
        base_value: base,
        prediction,
        method,
        coalitions,
        groups: grouping
            .groups()
            .iter()
            .zip(phi)
            .map(|(g, phi)| GroupPhi {
                label: g.label.clone(),
                kind: g.kind,
                slot: g.slot,
                phi,
            })
            .collect(),
    };
    attr.check_efficiency(1e-6)?;
    Ok(attr)
}

/// Shapley values by direct summation over all `2^M` coalitions.
pub fn exact_shapley(
    x: &[f64],
    model: &dyn Predictor,
    grouping: &FeatureGrouping,
    background: &Background,
) -> Result<Attribution> {
    let m = grouping.len();
    if m > MAX_EXACT_PLAYERS {
        return Err(Error::validation(
            "grouping",
            format!("exact Shapley needs at most {MAX_EXACT_PLAYERS} groups, got {m}"),
        ));
    }
    let masks: Vec<Vec<bool>> = (0..1usize << m).map(|b| mask_of(b, m)).collect();
    let v = coalition_values(x, model, grouping, background, &masks)?;
    // s!(M-s-1)!/M! = 1 / (M · C(M-1, s))
    let weight: Vec<f64> = (0..m).map(|s| 1.0 / (m as f64 * binomial(m - 1, s))).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for s in (0..1usize << m).filter(|s| s & bit == 0) {
            *p += weight[s.count_ones() as usize] * (v[s | bit] - v[s]);
        }
    }
    finish(grouping, v[0], v[(1 << m) - 1], phi, Method::ExactShapley, 1 << m)
}

/// Kernel SHAP: Shapley-kernel weighted least squares with the efficiency
/// constraint eliminated exactly.
pub fn kernel_shap(
    x: &[f64],
    model: &dyn Predictor,
    grouping: &FeatureGrouping,
    background: &Background,
    config: &ShapConfig,
) -> Result<Attribution> {
    let m = grouping.len();
    check_inputs(x, grouping, background)?;
    let exact = match config.mode {
        ShapMode::Exact => {
            if m > MAX_EXACT_PLAYERS {
                return Err(Error::validation(
                    "shap.mode",
                    format!("exact enumeration needs at most {MAX_EXACT_PLAYERS} groups, got {m}"),
                ));
            }
            true
        }
        ShapMode::Auto => m <= MAX_EXACT_PLAYERS,
        ShapMode::Sampled => false,
    };
    let (coalitions, weights) = if exact {
        enumerate_all(m)
    } else {
        if config.coalitions < m + 2 {
            return Err(Error::validation(
                "shap.coalitions",
                format!("need at least M+2 = {} coalitions", m + 2),
            ));
        }
        sample_coalitions(m, config.coalitions, config.seed)
    };
    let mut masks = Vec::with_capacity(coalitions.len() + 2);
    masks.push(vec![false; m]);
    masks.push(vec![true; m]);
    masks.extend(coalitions.iter().cloned());
    let v = coalition_values(x, model, grouping, background, &masks)?;
    let (base, full) = (v[0], v[1]);
    let (phi, regularized) = solve(&coalitions, &weights, &v[2..], base, full - base)?;
    let method = match (regularized, exact) {
        (true, _) => Method::KernelRegularized,
        (false, true) => Method::KernelExact,
        (false, false) => Method::KernelSampled,
    };
    finish(grouping, base, full, phi, method, masks.len())
}

fn kernel_weight(m: usize, s: usize) -> f64 {
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

fn enumerate_all(m: usize) -> (Vec<Vec<bool>>, Vec<f64>) {
    let full = (1usize << m) - 1;
    let masks: Vec<Vec<bool>> = (1..full).map(|b| mask_of(b, m)).collect();
    let weights = (1..full).map(|b| kernel_weight(m, b.count_ones() as usize)).collect();
    (masks, weights)
}

/// Paired sampling: whole coalition sizes are enumerated from the outside in
/// while the budget covers them; the remaining sizes are sampled in
/// proportion to their kernel mass.
fn sample_coalitions(m: usize, budget: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>) {
    let num_sizes = (m - 1).div_ceil(2);
    let num_paired = (m - 1) / 2;
    // Total kernel mass for size s (both s and M-s when paired).
    let mass: Vec<f64> = (1..=num_sizes)
        .map(|s| {
            let w = (m - 1) as f64 / (s as f64 * (m - s) as f64);
            if s <= num_paired {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    let mut left = budget;
    let mut next = 0;
    while next < num_sizes {
        let s = next + 1;
        let paired = s <= num_paired;
        let count = binomial(m, s) * if paired { 2.0 } else { 1.0 };
        let rest: f64 = mass[next..].iter().sum();
        if left as f64 * mass[next] / rest < count - 1e-8 {
            break;
        }
        let w = kernel_weight(m, s);
        for mask in combinations(m, s) {
            if paired {
                masks.push(mask.iter().map(|b| !b).collect());
                weights.push(w);
            }
            masks.push(mask);
            weights.push(w);
        }
        left -= count as usize;
        next += 1;
    }
    if next < num_sizes && left > 0 {
        let rest = &mass[next..];
        let rest_total: f64 = rest.iter().sum();
        let mut r = rng::stream(seed, "kernel_shap", &[m as u64, budget as u64]);
        let mut counts: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
        let mut draws = 0usize;
        let max_draws = 20 * left + 1000;
        while counts.len() < left && draws < max_draws {
            let mut u = r.gen::<f64>() * rest_total;
            let mut k = 0;
            while k + 1 < rest.len() && u >= rest[k] {
                u -= rest[k];
                k += 1;
            }
            let s = next + 1 + k;
            let mut mask = vec![false; m];
            for i in sample(&mut r, m, s) {
                mask[i] = true;
            }
            draws += 1;
            if s <= num_paired {
                if counts.len() + 2 > left && !counts.contains_key(&mask) {
                    break;
                }
                *counts.entry(mask.iter().map(|b| !b).collect()).or_default() += 1.0;
            }
            *counts.entry(mask).or_default() += 1.0;
        }
        // Each draw carries rest_total / draws of the remaining kernel mass,
        // split evenly with its complement when paired.
        let per_draw = rest_total / draws.max(1) as f64;
        for (mask, c) in counts {
            let s = mask.iter().filter(|b| **b).count();
            let share = if s.min(m - s) <= num_paired { 0.5 } else { 1.0 };
            masks.push(mask);
            weights.push(c * per_draw * share);
        }
    }
    (masks, weights)
}

/// All size-`s` subsets of `0..m` in lexicographic order.
fn combinations(m: usize, s: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        let mut mask = vec![false; m];
        for &i in &idx {
            mask[i] = true;
        }
        out.push(mask);
        let Some(k) = (0..s).rev().find(|&k| idx[k] < m - s + k) else {
            return out;
        };
        idx[k] += 1;
        for j in k + 1..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minimize `Σ w (v(S) − base − Σ_{i∈S} φ_i)²` subject to `Σ φ = delta`.
fn solve(masks: &[Vec<bool>], weights: &[f64], values: &[f64], base: f64, delta: f64) -> Result<(Vec<f64>, bool)> {
    let m = masks.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(Error::validation("grouping", "no coalitions to solve"));
    }
    let p = m - 1;
    let rows = masks.len();
    let mut a = DMatrix::<f64>::zeros(rows, p);
    let mut b = DVector::<f64>::zeros(rows);
    for (r, ((mask, w), v)) in masks.iter().zip(weights).zip(values).enumerate() {
        let sw = w.sqrt();
        let last = if mask[p] { 1.0 } else { 0.0 };
        for i in 0..p {
            let zi = if mask[i] { 1.0 } else { 0.0 };
            a[(r, i)] = sw * (zi - last);
        }
        b[r] = sw * (v - base - last * delta);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let (head, regularized) = if p == 0 {
        (DVector::zeros(0), false)
    } else if rows >= p && smin > 1e-10 * smax.max(f64::MIN_POSITIVE) {
        let sol = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
        (sol, false)
    } else {
        log::warn!("Kernel SHAP system is singular (M = {m}, {rows} coalitions); using a ridge-regularized solve");
        let at = a.transpose();
        let mut g = &at * &a;
        let lambda = 1e-8 * (g.trace() / p as f64).max(1e-12);
        for i in 0..p {
            g[(i, i)] += lambda;
        }
        let rhs = &at * &b;
        let sol = g
            .cholesky()
            .ok_or_else(|| Error::Numeric("regularized least squares is not positive definite".into()))?
            .solve(&rhs);
        (sol, true)
    };
    let mut phi: Vec<f64> = head.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok((phi, regularized))
}
