use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::backtest::{simulate, BacktestSummary};
use crate::dataset::{
    assemble_samples, build_folds, check_coverage, split, target_years, AssemblyReport, AuditLog, FoldSpec, KeywordFile,
    ModelInput, Sample, Scaler,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, baselines, dm_matrix, write_csv_file, DmRow, ForecastSeries, IndexPoints, MetricsRow};
use crate::explain::{
    flatten, global_importance, kernel_shap, render_text_attribution, Attribution, Background, FeatureGrouping,
    IknetPredictor, ShapConfig,
};
use crate::indicators::{IndicatorFrame, OhlcvSeries, NUM_FEATURES};
use crate::model::{self, file_digest, Checkpoint, Dims, IknetParams, Manifest, TrainConfig, Variant};
use crate::plot::{self, Series};
use crate::rng::{derive_seed, label};
use crate::saliency::{extract_keywords, ToyClassifier};

pub const MANIFEST: &str = "manifest.json";

/// Everything loaded and aligned before any fold runs.
pub struct Inputs {
    pub series: OhlcvSeries,
    pub frame: IndicatorFrame,
    pub keywords: KeywordFile,
    pub texts: Option<BTreeMap<NaiveDate, Vec<String>>>,
    pub samples: Vec<Sample>,
    pub report: AssemblyReport,
    pub folds: Vec<FoldSpec>,
    pub embed: usize,
    pub files: Vec<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    date: NaiveDate,
    text: String,
}

/// `{"date", "text"}` JSONL from a file, or from every `.jsonl` file in a
/// directory (name order).
pub fn read_texts(path: &Path) -> Result<BTreeMap<NaiveDate, Vec<String>>> {
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out: BTreeMap<NaiveDate, Vec<String>> = BTreeMap::new();
    for f in files {
        let file = std::fs::File::open(&f).map_err(|e| Error::io(&f, e))?;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&f, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TextRecord =
                serde_json::from_str(&line).map_err(|e| Error::parse(format!("{} line {}", f.display(), i + 1), e))?;
            out.entry(r.date).or_default().push(r.text);
        }
    }
    Ok(out)
}

fn required<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::validation(field, "required (set it in the config or pass the flag)"))
}

/// Keyword sets from `data.keywords`, or extracted from `data.texts` with
/// the toy classifier built from `data.lexicon`.
pub fn load_keywords(cfg: &RunConfig) -> Result<(KeywordFile, Option<BTreeMap<NaiveDate, Vec<String>>>, Vec<PathBuf>)> {
    let mut files = Vec::new();
    let texts = match &cfg.data.texts {
        Some(p) => {
            files.push(p.clone());
            Some(read_texts(p)?)
        }
        None => None,
    };
    let keywords = match (&cfg.data.keywords, &texts) {
        (Some(p), _) => {
            files.push(p.clone());
            KeywordFile::from_path(p)?
        }
        (None, Some(texts)) => {
            let lexicon = required(&cfg.data.lexicon, "data.lexicon")?;
            files.push(lexicon.clone());
            extract_all(texts, lexicon, cfg)?
        }
        (None, None) => {
            return Err(Error::validation(
                "data.keywords",
                "provide a keywords JSONL file, or texts plus a lexicon",
            ))
        }
    };
    Ok((keywords, texts, files))
}

pub fn extract_all(texts: &BTreeMap<NaiveDate, Vec<String>>, lexicon: &Path, cfg: &RunConfig) -> Result<KeywordFile> {
    let clf = ToyClassifier::from_lexicon_path(lexicon, cfg.keywords.classifier)?;
    log::info!("toy classifier fitted in {} epochs", clf.epochs_trained());
    let mut file = KeywordFile::default();
    for (date, day) in texts {
        let refs: Vec<&str> = day.iter().map(String::as_str).collect();
        let set = extract_keywords(&refs, &clf, cfg.model.keywords, cfg.keywords.pool)?;
        file.insert(*date, set, "texts")?;
    }
    Ok(file)
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let folds = build_folds(cfg.folds.first_train_year, cfg.folds.n_folds, cfg.folds.train_years)?;
    load_inputs_for(cfg, &folds)
}

/// As [`load_inputs`], for an explicit fold list.
pub fn load_inputs_for(cfg: &RunConfig, folds: &[FoldSpec]) -> Result<Inputs> {
    let ohlcv = required(&cfg.data.ohlcv, "data.ohlcv")?;
    let series = OhlcvSeries::from_path(ohlcv)?;
    let (keywords, texts, mut files) = load_keywords(cfg)?;
    files.insert(0, ohlcv.clone());
    let embed = keywords
        .dim
        .ok_or_else(|| Error::validation("data.keywords", "no keyword embeddings found"))?;
    let frame = IndicatorFrame::compute(&series);
    let aligned = keywords.align(&frame.dates);
    let (samples, report) = assemble_samples(&frame, &aligned, cfg.model.window)?;
    check_coverage(folds, &target_years(&samples))?;
    Ok(Inputs {
        series,
        frame,
        keywords,
        texts,
        samples,
        report,
        folds: folds.to_vec(),
        embed,
        files,
    })
}

pub struct FoldData<'a> {
    pub fold: FoldSpec,
    pub train: Vec<&'a Sample>,
    pub test: Vec<&'a Sample>,
    pub scaler: Scaler,
    pub train_x: Vec<ModelInput>,
    pub train_y: Vec<f64>,
    pub test_x: Vec<ModelInput>,
}

pub fn fold_data<'a>(inputs: &'a Inputs, fold: FoldSpec, n: usize, audit: Option<&AuditLog>) -> Result<FoldData<'a>> {
    let (train, test) = split(&inputs.samples, &fold);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Coverage(format!("{} has no training or no test samples", fold.label())));
    }
    let scaler = Scaler::fit(&train, audit)?;
    let train_x = train.iter().map(|s| scaler.input(s, n, inputs.embed)).collect();
    let train_y = train.iter().map(|s| scaler.target(s.target)).collect();
    let test_x = test.iter().map(|s| scaler.input(s, n, inputs.embed)).collect();
    Ok(FoldData {
        fold,
        train,
        test,
        scaler,
        train_x,
        train_y,
        test_x,
    })
}

pub fn dims(cfg: &TrainConfig, embed: usize) -> Dims {
    Dims {
        window: cfg.window,
        features: NUM_FEATURES,
        keywords: cfg.keywords,
        embed,
        hidden: cfg.hidden,
    }
}

/// Per-fold training configuration; all variants of a fold share it.
pub fn fold_train_config(cfg: &RunConfig, fold: &FoldSpec, variant: Variant) -> Result<TrainConfig> {
    Ok(TrainConfig {
        variant,
        seed: derive_seed(cfg.seed()?, &[label("fold"), fold.index as u64]),
        ..cfg.model.clone()
    })
}

pub fn checkpoint_path(out: &Path, fold: &FoldSpec, variant: Variant) -> PathBuf {
    out.join("checkpoints").join(format!("fold{}-{}.json", fold.index, variant))
}

pub type Trained = BTreeMap<(usize, Variant), IknetParams>;

/// Train every configured variant on every fold, in parallel, and save the
/// checkpoints.
pub fn train_all(cfg: &RunConfig, inputs: &Inputs, folds: &[FoldData], out: &Path) -> Result<Trained> {
    let jobs: Vec<(usize, Variant)> = folds
        .iter()
        .enumerate()
        .flat_map(|(i, _)| cfg.variants.iter().map(move |v| (i, *v)))
        .collect();
    let results: Vec<Result<(TrainConfig, IknetParams)>> = jobs
        .par_iter()
        .map(|&(i, variant)| {
            let fd = &folds[i];
            let tc = fold_train_config(cfg, &fd.fold, variant)?;
            let init = IknetParams::new(dims(&tc, inputs.embed), tc.lstm_layers, tc.gru_mode, tc.seed);
            log::info!("training {} {}", fd.fold.label(), variant);
            let outcome = model::train(&fd.train_x, &fd.train_y, init, &tc)?;
            Ok((tc, outcome.params))
        })
        .collect();
    let mut trained = Trained::new();
    for (&(i, variant), r) in jobs.iter().zip(results) {
        let (tc, params) = r?;
        let fd = &folds[i];
        let path = checkpoint_path(out, &fd.fold, variant);
        create_parent(&path)?;
        Checkpoint::new(&params, &tc, &fd.scaler, Some(fd.fold)).save(&path)?;
        trained.insert((fd.fold.index, variant), params);
    }
    Ok(trained)
}

/// Load checkpoints written by [`train_all`], checking that each was trained
/// on the same fold scaler.
pub fn load_trained(cfg: &RunConfig, folds: &[FoldData], variants: &[Variant], out: &Path) -> Result<Trained> {
    let mut trained = Trained::new();
    for fd in folds {
        for &v in variants {
            let path = checkpoint_path(out, &fd.fold, v);
            if !path.exists() {
                return Err(Error::NotFound(format!(
                    "checkpoint {} (run `iknet train` first)",
                    path.display()
                )));
            }
            let ck = Checkpoint::load(&path)?;
            ck.check_scaler(&fd.scaler)?;
            if ck.config.window != cfg.model.window || ck.config.keywords != cfg.model.keywords {
                return Err(Error::validation(
                    "model",
                    format!("{} was trained with a different window or keyword count", path.display()),
                ));
            }
            trained.insert((fd.fold.index, v), ck.params()?);
        }
    }
    Ok(trained)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn predictions(fd: &FoldData, params: &IknetParams, variant: Variant) -> Result<ForecastSeries> {
    let pred = model::predict(params, &fd.scaler, &fd.test_x, variant)?;
    ForecastSeries::from_samples(
        variant.name(),
        fd.fold.index,
        &fd.test,
        pred.into_iter().map(IndexPoints::new).collect(),
    )
}

#[derive(Default)]
pub struct EvalOutput {
    pub metrics: Vec<MetricsRow>,
    pub dm: Vec<DmRow>,
    pub series: BTreeMap<usize, Vec<ForecastSeries>>,
}

/// Metrics, DM matrix, predictions CSV and prediction plots for every fold.
pub fn evaluate(cfg: &RunConfig, folds: &[FoldData], trained: &Trained, out: &Path) -> Result<EvalOutput> {
    let mut res = EvalOutput::default();
    for fd in folds {
        let mut series = Vec::new();
        for &v in &cfg.variants {
            series.push(predictions(fd, &trained[&(fd.fold.index, v)], v)?);
        }
        let b = baselines(&fd.train, &fd.test, &fd.scaler, fd.fold.index)?;
        log::info!("{} ridge lambda {}", fd.fold.label(), b.ridge_lambda);
        series.push(b.ridge);
        series.push(b.persistence);
        for s in &series {
            res.metrics.push(MetricsRow::of(s, fd.fold.test_year)?);
        }
        res.dm.extend(dm_matrix(&series, cfg.dm)?);
        write_predictions(&out.join("predictions").join(format!("fold{}.csv", fd.fold.index)), &series)?;
        let labels: Vec<String> = series[0].dates.iter().map(|d| d.to_string()).collect();
        let actual: Vec<f64> = series[0].actual.iter().map(|p| p.get()).collect();
        let values: Vec<Vec<f64>> = series
            .iter()
            .map(|s| s.predicted.iter().map(|p| p.get()).collect())
            .collect();
        const COLORS: [&str; 5] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b"];
        let mut lines = vec![Series {
            name: "actual",
            values: &actual,
            color: "black",
        }];
        for (i, s) in series.iter().enumerate() {
            lines.push(Series {
                name: &s.model,
                values: &values[i],
                color: COLORS[i % COLORS.len()],
            });
        }
        let svg = plot::line_chart(
            &format!("Predicted vs actual close, {}", fd.fold.test_year),
            &labels,
            &lines,
        );
        write(
            &out.join("plots").join(format!("fold{}-{}.svg", fd.fold.index, fd.fold.test_year)),
            svg,
        )?;
        res.series.insert(fd.fold.index, series);
    }
    let mut rows = res.metrics.clone();
    rows.extend(aggregate(&res.metrics));
    write_csv_file(&out.join("metrics.csv"), &rows)?;
    write_csv_file(&out.join("dm.csv"), &res.dm)?;
    Ok(res)
}

fn write_predictions(path: &Path, series: &[ForecastSeries]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse("predictions csv", e))?;
    let mut header = vec!["date".to_string(), "actual".to_string()];
    header.extend(series.iter().map(|s| s.model.clone()));
    w.write_record(&header).map_err(|e| Error::parse("predictions csv", e))?;
    for (i, d) in series[0].dates.iter().enumerate() {
        let mut rec = vec![d.to_string(), series[0].actual[i].get().to_string()];
        rec.extend(series.iter().map(|s| s.predicted[i].get().to_string()));
        w.write_record(&rec).map_err(|e| Error::parse("predictions csv", e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldBacktest {
    pub fold: usize,
    pub test_year: i32,
    pub model: String,
    #[serde(flatten)]
    pub summary: BacktestSummary,
}

/// Price path for [`simulate`]: the close before the first forecast date,
/// then each forecast date's close.
pub fn price_path(series: &OhlcvSeries, dates: &[NaiveDate]) -> Result<Vec<(NaiveDate, IndexPoints)>> {
    let first = dates.first().ok_or_else(|| Error::validation("backtest", "no forecast dates"))?;
    let start = series
        .index_of(*first)
        .filter(|&i| i > 0)
        .ok_or_else(|| Error::Coverage(format!("no close before {first}")))?;
    let bars = &series.bars()[start - 1..];
    if bars.len() < dates.len() + 1 {
        return Err(Error::Coverage("price series ends before the forecasts".into()));
    }
    Ok(bars[..=dates.len()]
        .iter()
        .map(|b| (b.date, IndexPoints::new(b.close)))
        .collect())
}

pub fn backtest(
    cfg: &RunConfig,
    inputs: &Inputs,
    folds: &[FoldData],
    trained: &Trained,
    out: &Path,
) -> Result<Vec<FoldBacktest>> {
    let v = cfg.model.variant;
    let mut summaries = Vec::new();
    for fd in folds {
        let forecast = predictions(fd, &trained[&(fd.fold.index, v)], v)?;
        let path = price_path(&inputs.series, &forecast.dates)?;
        let ledger = simulate(&forecast, &path, &cfg.strategy)?;
        let file = out.join("backtest").join(format!("fold{}-ledger.csv", fd.fold.index));
        create_parent(&file)?;
        ledger.write_csv_file(&file)?;
        summaries.push(FoldBacktest {
            fold: fd.fold.index,
            test_year: fd.fold.test_year,
            model: v.name().to_string(),
            summary: BacktestSummary::new(&ledger, &path),
        });
    }
    write(
        &out.join("backtest").join("summary.json"),
        serde_json::to_string_pretty(&summaries).map_err(|e| Error::parse("backtest summary", e))?,
    )?;
    Ok(summaries)
}

fn text_for(inputs: &Inputs, sample: &Sample) -> String {
    match inputs.texts.as_ref().and_then(|t| t.get(&sample.anchor_date)) {
        Some(texts) => texts.join("\n\n"),
        None => sample
            .keywords
            .entries()
            .iter()
            .map(|k| k.word.as_str())
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Attribution for one test sample of a fold, in index points.
pub fn attribute(
    cfg: &RunConfig,
    fd: &FoldData,
    params: &IknetParams,
    variant: Variant,
    index: usize,
) -> Result<Attribution> {
    let seed = cfg.seed()?;
    let sample = fd.test[index];
    let d = params.dims;
    let grouping = if cfg.shap.per_scalar {
        FeatureGrouping::per_scalar(&d)?
    } else {
        FeatureGrouping::iknet(&d)?.with_keyword_labels(&sample.keywords)
    };
    let rows: Vec<Vec<f64>> = fd.train_x.iter().map(flatten).collect();
    let background = Background::subsample(
        &rows,
        cfg.shap.background,
        derive_seed(seed, &[label("background"), fd.fold.index as u64]),
    )?;
    let predictor = IknetPredictor {
        params,
        scaler: &fd.scaler,
        variant,
    };
    let shap = ShapConfig {
        mode: cfg.shap.mode,
        coalitions: cfg.shap.coalitions,
        seed: derive_seed(seed, &[label("shap"), fd.fold.index as u64, sample.target_date.num_days_from_ce() as u64]),
    };
    let mut attr = kernel_shap(&flatten(&fd.test_x[index]), &predictor, &grouping, &background, &shap)?;
    attr.date = Some(sample.target_date);
    attr.check_efficiency(1e-6)?;
    Ok(attr)
}

/// Writes `<stem>.json` and, for keyword groupings, `<stem>.html` / `.svg`.
pub fn write_attribution(inputs: &Inputs, sample: &Sample, attr: &Attribution, stem: &Path) -> Result<Vec<PathBuf>> {
    let json = stem.with_extension("json");
    write(&json, attr.to_json()?)?;
    let mut files = vec![json];
    if attr.groups.iter().any(|g| g.kind == crate::explain::GroupKind::Keyword) {
        let r = render_text_attribution(&text_for(inputs, sample), &sample.keywords, attr)?;
        for (ext, body) in [("words.json", &r.json), ("html", &r.html), ("svg", &r.svg)] {
            let p = stem.with_extension(ext);
            write(&p, body)?;
            files.push(p);
        }
    }
    Ok(files)
}

fn explain_indices(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|j| j * n / k).collect()
}

/// Attributions for evenly spaced test dates of every fold plus per-fold
/// global importance.
pub fn explain_folds(
    cfg: &RunConfig,
    inputs: &Inputs,
    folds: &[FoldData],
    trained: &Trained,
    out: &Path,
) -> Result<Vec<Attribution>> {
    let v = cfg.model.variant;
    let mut all = Vec::new();
    for fd in folds {
        let params = &trained[&(fd.fold.index, v)];
        let picks = explain_indices(fd.test.len(), cfg.shap.dates_per_fold);
        let attrs = picks
            .iter()
            .map(|&i| attribute(cfg, fd, params, v, i))
            .collect::<Result<Vec<_>>>()?;
        let dir = out.join("explain").join(format!("fold{}", fd.fold.index));
        for (&i, a) in picks.iter().zip(&attrs) {
            let sample = fd.test[i];
            write_attribution(inputs, sample, a, &dir.join(sample.target_date.to_string()))?;
        }
        if !attrs.is_empty() {
            let imp = global_importance(&attrs)?;
            let stem = out.join("explain").join(format!("fold{}-importance", fd.fold.index));
            create_parent(&stem)?;
            write_csv_file(&stem.with_extension("csv"), &imp)?;
            let bars: Vec<(String, f64)> = imp.iter().map(|i| (i.label.clone(), i.mean_abs_phi)).collect();
            write(
                &stem.with_extension("svg"),
                plot::bar_chart(&format!("Mean |SHAP|, {}", fd.fold.test_year), &bars),
            )?;
        }
        all.extend(attrs);
    }
    Ok(all)
}

/// Digest every file under `out` (except the manifest) plus the inputs.
pub fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    inputs: &[PathBuf],
    folds: &[FoldSpec],
    metrics: serde_json::Value,
    out: &Path,
) -> Result<Manifest> {
    let mut manifest = Manifest {
        tool: format!("iknet {} {command}", env!("CARGO_PKG_VERSION")),
        seed: cfg.seed.unwrap_or_default(),
        config: serde_json::to_value(cfg).map_err(|e| Error::parse("config", e))?,
        folds: folds.to_vec(),
        metrics,
        assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
        ..Manifest::default()
    };
    for p in inputs {
        manifest.inputs.insert(p.display().to_string(), file_digest(p)?);
    }
    let mut files = Vec::new();
    collect_files(out, &mut files)?;
    files.sort();
    for f in files {
        let rel = f.strip_prefix(out).unwrap_or(&f).to_string_lossy().replace('\\', "/");
        if rel != MANIFEST {
            manifest.artifacts.insert(rel, file_digest(&f)?);
        }
    }
    write(
        &out.join(MANIFEST),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse("manifest", e))?,
    )?;
    Ok(manifest)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub const ASSUMPTIONS: &[&str] = &[
    "news published on day t (rolled forward to the next trading day when t is not one) feeds the forecast of close[t+1]",
    "folds are assigned by the calendar year of the target date",
    "feature and target scalers are fitted on the training split of each fold only",
    "SMAPE uses the mean of |y| and |y_hat| as denominator, in percent",
    "Diebold-Mariano statistic uses the lag-0 variance of the loss differential; negative means the first model is better",
    "backtest: long when the forecast exceeds the previous close; ln(1-c) per entry and per exit; open positions are liquidated on the last day",
    "Sharpe ratio: mean over sample std of daily net log returns times sqrt(252), zero risk-free rate",
    "SHAP: removed groups take background values and the output is averaged over the background rows",
];

/// Full walk-forward experiment.
pub fn pipeline(cfg: &RunConfig, out: &Path, config_file: Option<&Path>) -> Result<Manifest> {
    let inputs = load_inputs(cfg)?;
    log::info!(
        "{} samples ({} warm-up days skipped, {} days without news)",
        inputs.report.samples,
        inputs.report.skipped_warmup,
        inputs.report.missing_news
    );
    let audit = AuditLog::new();
    let folds = inputs
        .folds
        .iter()
        .map(|f| fold_data(&inputs, *f, cfg.model.keywords, Some(&audit)))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let trained = train_all(cfg, &inputs, &folds, out)?;
    let eval = evaluate(cfg, &folds, &trained, out)?;
    let bt = backtest(cfg, &inputs, &folds, &trained, out)?;
    explain_folds(cfg, &inputs, &folds, &trained, out)?;
    let mut files = inputs.files.clone();
    files.extend(config_file.map(Path::to_path_buf));
    let metrics = serde_json::json!({
        "forecast": aggregate(&eval.metrics),
        "backtest": bt,
    });
    write_manifest(cfg, "pipeline", &files, &inputs.folds, metrics, out)
}
