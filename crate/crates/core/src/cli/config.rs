use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::StrategyConfig;
use crate::error::{Error, Result};
use crate::eval::DmOptions;
use crate::explain::ShapMode;
use crate::model::{TrainConfig, Variant};
use crate::saliency::{Pool, ToyConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub ohlcv: Option<PathBuf>,
    /// Keyword sets per date (JSONL).
    pub keywords: Option<PathBuf>,
    /// Raw texts (`{"date", "text"}` JSONL file, or a directory of them),
    /// used with `lexicon` when `keywords` is absent.
    pub texts: Option<PathBuf>,
    /// `word,polarity` CSV for the toy sentiment classifier.
    pub lexicon: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldConfig {
    pub first_train_year: i32,
    pub n_folds: usize,
    pub train_years: usize,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            first_train_year: 2015,
            n_folds: 7,
            train_years: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeywordConfig {
    pub pool: Pool,
    pub classifier: ToyConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapSettings {
    pub mode: ShapMode,
    pub coalitions: usize,
    /// Background rows drawn from the fold's training split.
    pub background: usize,
    /// Test dates explained per fold, evenly spaced.
    pub dates_per_fold: usize,
    /// One player per scalar instead of per keyword / indicator.
    pub per_scalar: bool,
}

impl Default for ShapSettings {
    fn default() -> Self {
        ShapSettings {
            mode: ShapMode::Auto,
            coalitions: 512,
            background: 50,
            dates_per_fold: 10,
            per_scalar: false,
        }
    }
}

/// Everything a run needs; written verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    pub jobs: Option<usize>,
    pub data: DataConfig,
    pub model: TrainConfig,
    /// Variants trained by `train` and `pipeline`; `model.variant` is the
    /// one backtested and explained.
    pub variants: Vec<Variant>,
    pub folds: FoldConfig,
    pub keywords: KeywordConfig,
    pub shap: ShapSettings,
    pub strategy: StrategyConfig,
    pub dm: DmOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            jobs: None,
            data: DataConfig::default(),
            model: TrainConfig::default(),
            variants: Variant::ALL.to_vec(),
            folds: FoldConfig::default(),
            keywords: KeywordConfig::default(),
            shap: ShapSettings::default(),
            strategy: StrategyConfig::default(),
            dm: DmOptions::default(),
        }
    }
}

fn prefixed(section: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}

impl RunConfig {
    /// TOML or JSON, chosen by extension (`.json` is JSON, anything else
    /// TOML). Relative data paths resolve against the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ctx = format!("config {}", path.display());
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::parse(ctx, e))?
        } else {
            toml::from_str(&text).map_err(|e| Error::parse(ctx, e))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.ohlcv,
            &mut cfg.data.keywords,
            &mut cfg.data.texts,
            &mut cfg.data.lexicon,
            &mut cfg.data.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| prefixed("model", e))?;
        if self.variants.is_empty() {
            return Err(Error::validation("variants", "list at least one variant"));
        }
        if !self.variants.contains(&self.model.variant) {
            return Err(Error::validation(
                "variants",
                format!("must include model.variant `{}`", self.model.variant),
            ));
        }
        if self.folds.n_folds == 0 {
            return Err(Error::validation("folds.n_folds", "must be >= 1"));
        }
        if self.folds.train_years == 0 {
            return Err(Error::validation("folds.train_years", "must be >= 1"));
        }
        if self.shap.background == 0 {
            return Err(Error::validation("shap.background", "must be >= 1"));
        }
        if self.shap.coalitions < 4 {
            return Err(Error::validation("shap.coalitions", "must be >= 4"));
        }
        self.strategy.validate()?;
        if self.jobs == Some(0) {
            return Err(Error::validation("jobs", "must be >= 1"));
        }
        let c = &self.keywords.classifier;
        if c.dim == 0 || c.hidden == 0 || c.max_epochs == 0 {
            return Err(Error::validation("keywords.classifier", "dim, hidden and max_epochs must be >= 1"));
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::validation("seed", "a seed is required (pass --seed)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<RunConfig>("[model]\nwindw = 3\n").unwrap_err();
        assert!(err.to_string().contains("windw"));
        assert!(serde_json::from_str::<RunConfig>(r#"{"shap": {"coalitons": 3}}"#).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[model]\nwindow = 5\n").unwrap();
        assert_eq!(cfg.model.window, 5);
        assert_eq!(cfg.model.hidden, 256);
        assert_eq!(cfg.folds.n_folds, 7);
        assert_eq!(cfg.seed().unwrap(), 3);
    }

    #[test]
    fn zero_window_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.model.window = 0;
        match cfg.validate().unwrap_err() {
            Error::Validation { field, .. } => assert_eq!(field, "model.window"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn primary_variant_must_be_trained() {
        let cfg = RunConfig {
            variants: vec![Variant::TechOnly],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"data": {"ohlcv": "prices.csv"}}"#).unwrap();
        let cfg = RunConfig::from_path(&path).unwrap();
        assert_eq!(cfg.data.ohlcv.unwrap(), dir.path().join("prices.csv"));
    }
}
