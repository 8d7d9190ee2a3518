//! Grouped Shapley attributions for single forecasts.
//!
//! A model input is a flat vector (see [`flatten`]); a [`FeatureGrouping`]
//! partitions its indices into players. Removing a player replaces its
//! entries with the matching entries of each background row, and the value
//! of a coalition is the model output averaged over the background.

mod report;
mod shap;

use chrono::NaiveDate;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::{KeywordSet, ModelInput, Scaler};
use crate::error::{Error, Result};
use crate::indicators::FEATURE_NAMES;
use crate::model::{forward_values, Dims, IknetParams, Variant};
use crate::rng;

pub use report::{global_importance, render_text_attribution, Importance, RenderedText, TextReport, WordAttribution};
pub use shap::{coalition_values, exact_shapley, kernel_shap, ShapConfig, ShapMode, MAX_EXACT_PLAYERS};

/// Flat layout: keyword block (`n·d`) followed by the window (`T·f`).
pub fn flatten(x: &ModelInput) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.keywords.len() + x.window.len());
    v.extend_from_slice(&x.keywords);
    v.extend_from_slice(&x.window);
    v
}

pub fn unflatten(dims: &Dims, z: &[f64]) -> Result<ModelInput> {
    let k = dims.keyword_len();
    if z.len() != k + dims.window_len() {
        return Err(Error::Shape {
            op: "unflatten",
            left: vec![z.len()],
            right: vec![k + dims.window_len()],
        });
    }
    Ok(ModelInput {
        keywords: z[..k].to_vec(),
        window: z[k..].to_vec(),
    })
}

/// Batch model over flat inputs.
pub trait Predictor: Sync {
    fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>>;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(inputs.iter().map(|x| self(x)).collect())
    }
}

/// Trained network whose outputs are mapped back to index points.
pub struct IknetPredictor<'a> {
    pub params: &'a IknetParams,
    pub scaler: &'a Scaler,
    pub variant: Variant,
}

impl Predictor for IknetPredictor<'_> {
    fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(256) {
            let xs = chunk
                .iter()
                .map(|z| unflatten(&self.params.dims, z))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ModelInput> = xs.iter().collect();
            let ys = forward_values(self.params, &refs, self.variant)?;
            out.extend(ys.into_iter().map(|y| self.scaler.invert_target(y)));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Keyword,
    Indicator,
    Scalar,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub label: String,
    pub kind: GroupKind,
    /// Keyword rank or indicator column, for the first member.
    pub slot: usize,
    pub indices: Vec<usize>,
}

/// Partition of a flat input into players.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureGrouping {
    len: usize,
    groups: Vec<Group>,
}

impl FeatureGrouping {
    pub fn new(len: usize, groups: Vec<Group>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::validation("grouping", "need at least 2 groups"));
        }
        let mut seen = vec![false; len];
        for g in &groups {
            if g.indices.is_empty() {
                return Err(Error::validation("grouping", format!("group `{}` is empty", g.label)));
            }
            for &i in &g.indices {
                if i >= len || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::validation(
                        "grouping",
                        format!("index {i} out of range or in two groups"),
                    ));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::validation("grouping", format!("index {i} belongs to no group")));
        }
        Ok(FeatureGrouping { len, groups })
    }

    /// One group per keyword row and one per indicator trajectory.
    pub fn iknet(dims: &Dims) -> Result<Self> {
        let mut groups = Vec::with_capacity(dims.keywords + dims.features);
        for k in 0..dims.keywords {
            groups.push(Group {
                label: format!("keyword{}", k + 1),
                kind: GroupKind::Keyword,
                slot: k,
                indices: (k * dims.embed..(k + 1) * dims.embed).collect(),
            });
        }
        let off = dims.keyword_len();
        for j in 0..dims.features {
            groups.push(Group {
                label: FEATURE_NAMES.get(j).map_or_else(|| format!("feature{j}"), |s| s.to_string()),
                kind: GroupKind::Indicator,
                slot: j,
                indices: (0..dims.window).map(|t| off + t * dims.features + j).collect(),
            });
        }
        FeatureGrouping::new(dims.keyword_len() + dims.window_len(), groups)
    }

    /// Every scalar is its own player.
    pub fn per_scalar(dims: &Dims) -> Result<Self> {
        let mut groups = Vec::new();
        for k in 0..dims.keywords {
            for e in 0..dims.embed {
                groups.push(Group {
                    label: format!("keyword{}[{e}]", k + 1),
                    kind: GroupKind::Scalar,
                    slot: k,
                    indices: vec![k * dims.embed + e],
                });
            }
        }
        let off = dims.keyword_len();
        for t in 0..dims.window {
            for j in 0..dims.features {
                let name = FEATURE_NAMES.get(j).copied().unwrap_or("feature");
                groups.push(Group {
                    label: format!("{name}@t-{}", dims.window - 1 - t),
                    kind: GroupKind::Scalar,
                    slot: j,
                    indices: vec![off + t * dims.features + j],
                });
            }
        }
        FeatureGrouping::new(off + dims.window_len(), groups)
    }

    /// Merge neighbouring groups into at most `max_groups` players.
    pub fn coarsen(&self, max_groups: usize) -> Result<Self> {
        if max_groups < 2 {
            return Err(Error::validation("max_groups", "must be >= 2"));
        }
        let m = self.groups.len();
        if m <= max_groups {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(max_groups);
        for b in 0..max_groups {
            let chunk = &self.groups[b * m / max_groups..(b + 1) * m / max_groups];
            let kind = if chunk.iter().all(|g| g.kind == chunk[0].kind) {
                chunk[0].kind
            } else {
                GroupKind::Mixed
            };
            out.push(Group {
                label: chunk.iter().map(|g| g.label.as_str()).collect::<Vec<_>>().join("+"),
                kind: if chunk.len() == 1 { kind } else { GroupKind::Mixed },
                slot: chunk[0].slot,
                indices: chunk.iter().flat_map(|g| g.indices.iter().copied()).collect(),
            });
        }
        FeatureGrouping::new(self.len, out)
    }

    /// Label keyword groups with the words of `set`; empty slots become `<pad>`.
    pub fn with_keyword_labels(mut self, set: &KeywordSet) -> Self {
        for g in &mut self.groups {
            if g.kind == GroupKind::Keyword {
                g.label = set.word(g.slot).unwrap_or("<pad>").to_string();
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.len
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }
}

/// Reference rows that stand in for removed players.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    rows: Vec<Vec<f64>>,
}

impl Background {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::validation("background", "empty background"));
        };
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::validation("background", "rows differ in length"));
        }
        Ok(Background { rows })
    }

    /// At most `max` rows chosen with `seed`, kept in their original order.
    pub fn subsample(rows: &[Vec<f64>], max: usize, seed: u64) -> Result<Self> {
        if rows.len() <= max {
            return Background::new(rows.to_vec());
        }
        let mut r = rng::stream(seed, "background", &[]);
        let mut idx = sample(&mut r, rows.len(), max).into_vec();
        idx.sort_unstable();
        Background::new(idx.into_iter().map(|i| rows[i].clone()).collect())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactShapley,
    KernelExact,
    KernelSampled,
    /// Kernel SHAP whose least-squares system needed a ridge term.
    KernelRegularized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPhi {
    pub label: String,
    pub kind: GroupKind,
    pub slot: usize,
    pub phi: f64,
}

/// `base_value + Σ phi == prediction`, all in index points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribution {
    pub date: Option<NaiveDate>,
    pub base_value: f64,
    pub prediction: f64,
    pub method: Method,
    pub coalitions: usize,
    pub groups: Vec<GroupPhi>,
}

impl Attribution {
    pub fn values(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.phi).collect()
    }

    pub fn efficiency_gap(&self) -> f64 {
        (self.base_value + self.groups.iter().map(|g| g.phi).sum::<f64>() - self.prediction).abs()
    }

    pub fn check_efficiency(&self, tol: f64) -> Result<()> {
        let gap = self.efficiency_gap();
        if gap.is_finite() && gap <= tol.max(tol * self.prediction.abs()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("attribution efficiency gap {gap:e} exceeds {tol:e}")))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("attribution", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("attribution", e))
    }
}
