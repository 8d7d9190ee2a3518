//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | missing or unreadable input, or a date/year the data does not cover |
//! | 3 | invalid configuration or arguments |
//! | 4 | numeric failure (non-finite loss or parameters, singular system) |

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::backtest::Mode;
use crate::dataset::AuditLog;
use crate::error::{Error, Result};
use crate::explain::ShapMode;
use crate::indicators::{IndicatorFrame, OhlcvSeries};
use crate::model::{Checkpoint, Variant};
use crate::nn::GruMode;
use crate::saliency::Pool;
use crate::synth::{self, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Relative output directories are placed under this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "IKNET_OUTPUT_ROOT";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotFound(_) | Error::Io { .. } | Error::Coverage(_) => EXIT_INPUT,
        Error::Validation { .. } | Error::Parse { .. } | Error::Shape { .. } | Error::InvalidArgument(_) => {
            EXIT_VALIDATION
        }
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "iknet", version, about = "News-keyword and technical-indicator index forecaster")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; required for anything that trains or samples.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (relative paths go under $IKNET_OUTPUT_ROOT when set).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// -v info, -vv debug.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Flags that override config file values.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub ohlcv: Option<PathBuf>,
    #[arg(long = "keywords-file", global = true)]
    pub keywords_file: Option<PathBuf>,
    #[arg(long, global = true)]
    pub texts: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Keywords per day fed to the model.
    #[arg(long, global = true)]
    pub keywords: Option<usize>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long = "learning-rate", global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long = "batch-size", global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    #[arg(long = "lstm-layers", global = true)]
    pub lstm_layers: Option<usize>,
    #[arg(long = "gru-mode", global = true)]
    pub gru_mode: Option<GruMode>,
    /// Variant to backtest and explain.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Variants to train (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    #[arg(long = "first-train-year", global = true)]
    pub first_train_year: Option<i32>,
    #[arg(long = "folds", global = true)]
    pub n_folds: Option<usize>,
    #[arg(long = "train-years", global = true)]
    pub train_years: Option<usize>,
    #[arg(long, global = true)]
    pub pool: Option<Pool>,
    #[arg(long = "shap-mode", global = true)]
    pub shap_mode: Option<ShapMode>,
    #[arg(long, global = true)]
    pub coalitions: Option<usize>,
    /// Background rows for SHAP.
    #[arg(long, global = true)]
    pub background: Option<usize>,
    #[arg(long = "explain-dates", global = true)]
    pub explain_dates: Option<usize>,
    /// One SHAP player per scalar input.
    #[arg(long = "per-scalar", global = true)]
    pub per_scalar: bool,
    /// Transaction cost rate per side.
    #[arg(long, global = true)]
    pub cost: Option<f64>,
    #[arg(long = "strategy-mode", global = true)]
    pub strategy_mode: Option<Mode>,
    /// Harvey small-sample correction for the DM test.
    #[arg(long, global = true)]
    pub harvey: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        fn set_opt<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        set_opt(&mut cfg.data.ohlcv, &self.ohlcv);
        set_opt(&mut cfg.data.keywords, &self.keywords_file);
        set_opt(&mut cfg.data.texts, &self.texts);
        set_opt(&mut cfg.data.lexicon, &self.lexicon);
        let m = &mut cfg.model;
        set(&mut m.window, &self.window);
        set(&mut m.keywords, &self.keywords);
        set(&mut m.hidden, &self.hidden);
        set(&mut m.epochs, &self.epochs);
        set(&mut m.learning_rate, &self.learning_rate);
        set(&mut m.batch_size, &self.batch_size);
        set(&mut m.dropout, &self.dropout);
        set(&mut m.lstm_layers, &self.lstm_layers);
        set(&mut m.gru_mode, &self.gru_mode);
        set(&mut m.variant, &self.variant);
        set(&mut cfg.variants, &self.variants);
        set(&mut cfg.folds.first_train_year, &self.first_train_year);
        set(&mut cfg.folds.n_folds, &self.n_folds);
        set(&mut cfg.folds.train_years, &self.train_years);
        set(&mut cfg.keywords.pool, &self.pool);
        set(&mut cfg.shap.mode, &self.shap_mode);
        set(&mut cfg.shap.coalitions, &self.coalitions);
        set(&mut cfg.shap.background, &self.background);
        set(&mut cfg.shap.dates_per_fold, &self.explain_dates);
        cfg.shap.per_scalar |= self.per_scalar;
        set(&mut cfg.strategy.cost, &self.cost);
        set(&mut cfg.strategy.mode, &self.strategy_mode);
        cfg.dm.harvey |= self.harvey;
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the 17 indicator columns to `indicators.csv`.
    Indicators,
    /// Extract per-day keyword sets from raw texts to `keywords.jsonl`.
    Keywords,
    /// Train every configured variant on every fold and save checkpoints.
    Train,
    /// Metrics, DM tests, prediction files and plots from saved checkpoints.
    Eval,
    /// Long/flat strategy backtest from saved checkpoints.
    Backtest,
    /// Attribution for one target date.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target date (YYYY-MM-DD).
        #[arg(long)]
        date: String,
    },
    /// Full experiment: train, evaluate, backtest, explain.
    Pipeline,
    /// Write the synthetic fixture data set.
    Synth {
        #[arg(long)]
        days: Option<usize>,
    },
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.global.verbose);
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::NotFound(format!("config {}", p.display())));
            }
            RunConfig::from_path(p)?
        }
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    if cli.global.seed.is_some() {
        cfg.seed = cli.global.seed;
    }
    if cli.global.jobs.is_some() {
        cfg.jobs = cli.global.jobs;
    }
    if cli.global.output.is_some() {
        cfg.data.output = cli.global.output.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    let out = cfg.data.output.clone().unwrap_or_else(|| PathBuf::from("iknet-out"));
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out,
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let out = output_dir(&cfg);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let config_file = cli.global.config.as_deref();
    pool.install(|| dispatch(&cli.command, &cfg, &out, config_file))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &Path, config_file: Option<&Path>) -> Result<()> {
    let config_files: Vec<PathBuf> = config_file.map(Path::to_path_buf).into_iter().collect();
    match cmd {
        Command::Pipeline => {
            cfg.seed()?;
            let m = run::pipeline(cfg, out, config_file)?;
            println!("{} artifacts written to {}", m.artifacts.len(), out.display());
        }
        Command::Indicators => {
            let path = cfg
                .data
                .ohlcv
                .as_ref()
                .ok_or_else(|| Error::validation("data.ohlcv", "required (set it in the config or pass --ohlcv)"))?;
            let frame = IndicatorFrame::compute(&OhlcvSeries::from_path(path)?);
            create_dir(out)?;
            let file = out.join("indicators.csv");
            let f = std::fs::File::create(&file).map_err(|e| Error::io(&file, e))?;
            frame.write_csv(std::io::BufWriter::new(f))?;
            println!("{}", file.display());
        }
        Command::Keywords => {
            let texts_path = cfg
                .data
                .texts
                .as_ref()
                .ok_or_else(|| Error::validation("data.texts", "required (pass --texts)"))?;
            let lexicon = cfg
                .data
                .lexicon
                .as_ref()
                .ok_or_else(|| Error::validation("data.lexicon", "required (pass --lexicon)"))?;
            let texts = run::read_texts(texts_path)?;
            let file = run::extract_all(&texts, lexicon, cfg)?;
            create_dir(out)?;
            let path = out.join("keywords.jsonl");
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            file.write(std::io::BufWriter::new(f))?;
            println!("{} days -> {}", file.by_date.len(), path.display());
        }
        Command::Train | Command::Eval | Command::Backtest => {
            let inputs = run::load_inputs(cfg)?;
            let folds = inputs
                .folds
                .iter()
                .map(|f| run::fold_data(&inputs, *f, cfg.model.keywords, Some(&AuditLog::new())))
                .collect::<Result<Vec<_>>>()?;
            create_dir(out)?;
            let mut files = inputs.files.clone();
            files.extend(config_files);
            let (name, metrics) = match cmd {
                Command::Train => {
                    cfg.seed()?;
                    run::train_all(cfg, &inputs, &folds, out)?;
                    ("train", serde_json::Value::Null)
                }
                Command::Eval => {
                    let trained = run::load_trained(cfg, &folds, &cfg.variants, out)?;
                    let e = run::evaluate(cfg, &folds, &trained, out)?;
                    ("eval", serde_json::json!({ "forecast": crate::eval::aggregate(&e.metrics) }))
                }
                _ => {
                    let trained = run::load_trained(cfg, &folds, &[cfg.model.variant], out)?;
                    let bt = run::backtest(cfg, &inputs, &folds, &trained, out)?;
                    ("backtest", serde_json::json!({ "backtest": bt }))
                }
            };
            run::write_manifest(cfg, name, &files, &inputs.folds, metrics, out)?;
            println!("{name} finished; outputs in {}", out.display());
        }
        Command::Explain { checkpoint, date } => {
            cfg.seed()?;
            let written = explain_date(cfg, checkpoint, date, out)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Synth { days } => {
            let sc = SynthConfig {
                seed: cfg.seed.unwrap_or(SynthConfig::fixture().seed),
                days: days.unwrap_or(SynthConfig::fixture().days),
                ..SynthConfig::fixture()
            };
            let data = synth::generate(&sc)?;
            create_dir(out)?;
            let ohlcv = out.join("ohlcv.csv");
            let f = std::fs::File::create(&ohlcv).map_err(|e| Error::io(&ohlcv, e))?;
            data.series.write_csv(std::io::BufWriter::new(f))?;
            let kw = out.join("keywords.jsonl");
            let f = std::fs::File::create(&kw).map_err(|e| Error::io(&kw, e))?;
            data.keywords.write(std::io::BufWriter::new(f))?;
            println!("{}\n{}", ohlcv.display(), kw.display());
        }
    }
    Ok(())
}

/// Explain one target date with a saved checkpoint. The date must be a
/// trading day inside the checkpoint fold's test year.
pub fn explain_date(cfg: &RunConfig, checkpoint: &Path, date: &str, out: &Path) -> Result<Vec<PathBuf>> {
    let date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Coverage(format!("date `{date}` is not YYYY-MM-DD ({e})")))?;
    if !checkpoint.exists() {
        return Err(Error::NotFound(format!("checkpoint {}", checkpoint.display())));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let fold = ck
        .fold
        .ok_or_else(|| Error::validation("checkpoint", "checkpoint has no fold; it cannot be explained on test data"))?;
    let mut cfg = cfg.clone();
    cfg.model.window = ck.config.window;
    cfg.model.keywords = ck.config.keywords;
    let inputs = run::load_inputs_for(&cfg, &[fold])?;
    if inputs.series.index_of(date).is_none() {
        return Err(Error::Coverage(format!("{date} is not a trading day in the price series")));
    }
    let fd = run::fold_data(&inputs, fold, cfg.model.keywords, None)?;
    ck.check_scaler(&fd.scaler)?;
    let index = fd.test.iter().position(|s| s.target_date == date).ok_or_else(|| {
        Error::Coverage(format!(
            "{date} is outside the test range of {} ({} to {})",
            fold.label(),
            fd.test.first().map(|s| s.target_date.to_string()).unwrap_or_default(),
            fd.test.last().map(|s| s.target_date.to_string()).unwrap_or_default(),
        ))
    })?;
    let params = ck.params()?;
    let variant = ck.config.variant;
    let attr = run::attribute(&cfg, &fd, &params, variant, index)?;
    let stem = out
        .join("explain")
        .join(format!("fold{}-{}", fold.index, variant))
        .join(date.to_string());
    let files = run::write_attribution(&inputs, fd.test[index], &attr, &stem)?;
    let mut digests = inputs.files.clone();
    digests.push(checkpoint.to_path_buf());
    let metrics = serde_json::json!({
        "date": date,
        "base_value": attr.base_value,
        "prediction": attr.prediction,
        "efficiency_gap": attr.efficiency_gap(),
    });
    run::write_manifest(&cfg, "explain", &digests, &[fold], metrics, out)?;
    Ok(files)
}

