//! Acceptance report: one PASS/FAIL line per criterion. Exits nonzero on
//! any failure.

mod oracles;

use std::path::{Path, PathBuf};
use std::time::Instant;

use iknet::backtest::{simulate, Mode, StrategyConfig};
use iknet::dataset::{assemble_samples, build_folds, split, FoldSpec, ModelInput, Sample, Scaler};
use iknet::eval::{dm_test, DmOptions, ForecastSeries, IndexPoints};
use iknet::explain::{flatten, kernel_shap, Background, FeatureGrouping, Group, GroupKind, ShapConfig, ShapMode};
use iknet::indicators::{bollinger, ema_of, macd, rsi, sma, volume_change, IndicatorFrame, NUM_FEATURES};
use iknet::model::{self, Dims, IknetParams, TrainConfig, Variant};
use iknet::nn::GruMode;
use iknet::rng;
use iknet::synth::{self, SynthConfig};
use oracles::{backtest::scripted, grad, indicators as ind, max_abs_diff, rnn, shap as shap_oracle, uniform};
use rand::Rng as _;
use rayon::prelude::*;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn gradients(r: &mut Report) {
    let start = Instant::now();
    let suite = grad::suite();
    let secs = start.elapsed().as_secs_f64();
    let worst = suite.iter().map(|(_, rep)| rep.max_rel_error).fold(0.0, f64::max);
    let checked: usize = suite.iter().map(|(_, rep)| rep.checked).sum();
    r.line(
        "gradient suite",
        worst < 1e-4 && secs < 60.0 && checked > 0,
        format!("{} cases, {checked} entries, max rel error {worst:.2e}, {secs:.2}s", suite.len()),
    );
}

fn rnn_reference(r: &mut Report) {
    let g = rnn::gru_oracle(100, 17);
    let l = rnn::bilstm_oracle(100, 29);
    r.line(
        "rnn oracle",
        g < 1e-12 && l < 1e-12,
        format!("100 instances each, GRU {g:.1e}, Bi-LSTM {l:.1e}"),
    );
}

fn singletons(len: usize) -> FeatureGrouping {
    let groups = (0..len)
        .map(|i| Group {
            label: format!("x{i}"),
            kind: GroupKind::Scalar,
            slot: i,
            indices: vec![i],
        })
        .collect();
    FeatureGrouping::new(len, groups).unwrap()
}

fn shap_cfg(mode: ShapMode, coalitions: usize) -> ShapConfig {
    ShapConfig {
        mode,
        coalitions,
        seed: 3,
    }
}

fn shap(r: &mut Report) {
    let fx = shap_oracle::trained_fixture();
    let f = shap_oracle::fixture_fn(&fx);
    let bg = shap_oracle::background(&fx, 6);
    let full = FeatureGrouping::iknet(&fx.params.dims).unwrap();
    let mut exact_err: f64 = 0.0;
    let mut efficiency: f64 = 0.0;
    for m in [2, 5, 9, 12] {
        let g = full.coarsen(m).unwrap();
        for x in fx.test_x.iter().step_by(97).take(2) {
            let x = flatten(x);
            let want = shap_oracle::shapley_by_subsets(&f, &x, &g, bg.rows());
            let attr = kernel_shap(&x, &f, &g, &bg, &shap_cfg(ShapMode::Exact, 0)).unwrap();
            exact_err = exact_err.max(max_abs_diff(&attr.values(), &want));
            efficiency = efficiency.max(attr.efficiency_gap());
        }
    }
    let g8 = full.coarsen(8).unwrap();
    let x = flatten(&fx.test_x[10]);
    let want = shap_oracle::shapley_by_permutations(&f, &x, &g8, bg.rows());
    let attr = kernel_shap(&x, &f, &g8, &bg, &shap_cfg(ShapMode::Sampled, 4096)).unwrap();
    let sampled_err = max_abs_diff(&attr.values(), &want);
    efficiency = efficiency.max(attr.efficiency_gap());
    for x in fx.test_x.iter().step_by(40) {
        let attr = kernel_shap(&flatten(x), &f, &full, &bg, &shap_cfg(ShapMode::Sampled, 128)).unwrap();
        efficiency = efficiency.max(attr.efficiency_gap());
    }

    // players 0 and 1 are symmetric, player 3 is a dummy
    let game = |z: &[f64]| z[0] * z[1] + (z[0] + z[1]).sin() * z[2] + z[4];
    let g = singletons(5);
    let xg = [1.5, 1.5, -0.8, 9.0, 0.4];
    let bgg = Background::new(vec![vec![0.2, 0.2, 0.5, -3.0, 0.0], vec![-1.0, -1.0, 0.1, 2.0, 1.0]]).unwrap();
    let mut axiom: f64 = 0.0;
    for mode in [ShapMode::Exact, ShapMode::Sampled] {
        let a = kernel_shap(&xg, &game, &g, &bgg, &shap_cfg(mode, 30)).unwrap();
        axiom = axiom.max((a.values()[0] - a.values()[1]).abs()).max(a.values()[3].abs());
        efficiency = efficiency.max(a.efficiency_gap());
    }
    r.line(
        "shap oracle",
        exact_err < 1e-9 && sampled_err < 1e-6 && efficiency < 1e-6 && axiom < 1e-9,
        format!(
            "exact M<=12 {exact_err:.1e}, sampled M=8 @4096 {sampled_err:.1e}, efficiency {efficiency:.1e}, symmetry/dummy {axiom:.1e}"
        ),
    );
}

fn linear_shap(r: &mut Report) {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut rg = rng::rng_from(77);
    for k in 0..220 {
        let (m, mode, budget) = if k < 200 {
            (rg.gen_range(2..=12), ShapMode::Exact, 0)
        } else {
            (24, ShapMode::Sampled, 300)
        };
        let w = uniform(&mut rg, m, -3.0, 3.0);
        let x = uniform(&mut rg, m, -2.0, 2.0);
        let b = uniform(&mut rg, m, -2.0, 2.0);
        let w2 = w.clone();
        let f = move |z: &[f64]| z.iter().zip(&w2).map(|(a, c)| a * c).sum::<f64>();
        let bg = Background::new(vec![b.clone()]).unwrap();
        let attr = kernel_shap(&x, &f, &singletons(m), &bg, &shap_cfg(mode, budget)).unwrap();
        let want: Vec<f64> = (0..m).map(|i| w[i] * (x[i] - b[i])).collect();
        worst = worst.max(max_abs_diff(&attr.values(), &want));
        cases += 1;
    }
    r.line("linear shap closed form", worst < 1e-10, format!("{cases} games, max error {worst:.1e}"));
}

fn near(x: Option<f64>, want: f64) -> bool {
    x.is_some_and(|v| (v - want).abs() < 1e-9)
}

fn indicators(r: &mut Report) {
    let one_to_ten: Vec<f64> = (1..=10).map(f64::from).collect();
    let up: Vec<f64> = (0..15).map(|i| 100.0 + i as f64).collect();
    let down: Vec<f64> = up.iter().rev().copied().collect();
    let ramp: Vec<f64> = (0..300).map(f64::from).collect();
    let alt: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 11.0 } else { 9.0 }).collect();
    let alt_bb = bollinger(&alt, 20, 2.0);
    let examples = [
        ("sma(1..10)", near(sma(&one_to_ten, 10)[9], 5.5)),
        ("constant ema", near(ema_of(&[7.5; 30], 10)[29], 7.5)),
        ("ema recurrence", near(ema_of(&[2.0, 4.0, 6.0, 8.0], 3)[3], 6.0)),
        ("rsi up", rsi(&up, 14)[14] == Some(100.0)),
        ("rsi down", rsi(&down, 14)[14] == Some(0.0)),
        ("rsi flat", rsi(&[3.0; 15], 14)[14] == Some(50.0)),
        ("macd flat", near(macd(&[50.0; 80]).macd[79], 0.0)),
        ("macd ramp", macd(&ramp).macd[299].is_some_and(|v| (v - 7.0).abs() < 1e-6)),
        ("bollinger", near(alt_bb.upper[19], 12.0) && near(alt_bb.lower[19], 8.0)),
        ("volume change", volume_change(&[100.0, 150.0])[1] == Some(0.5)),
    ];
    let failed: Vec<&str> = examples.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let frame_dev = [5, 6, 7]
        .iter()
        .map(|&s| ind::frame_deviation(&ind::random_series(120, s)))
        .fold(0.0, f64::max);
    let mut violations = 0;
    let mut cuts = 0;
    for seed in 0..3 {
        let series = ind::random_series(1000, seed);
        for cut in (1..1000).step_by(53) {
            violations += ind::look_ahead_violations(&series, cut);
            cuts += 1;
        }
    }
    r.line(
        "indicator suite",
        failed.is_empty() && frame_dev < 1e-9 && violations == 0,
        format!(
            "{} hand examples ({} failed {failed:?}), frame vs definitions {frame_dev:.1e}, look-ahead violations {violations} over {cuts} truncations of 1000-day series",
            examples.len(),
            failed.len()
        ),
    );
}

/// Seven-fold synthetic experiment at desk scale.
struct Experiment {
    samples: Vec<Sample>,
    folds: Vec<FoldSpec>,
    embed: usize,
}

const HIDDEN: usize = 32;
const EPOCHS: usize = 50;
const WINDOW: usize = 10;

impl Experiment {
    fn new() -> Self {
        let data = synth::generate(&SynthConfig::default()).unwrap();
        let frame = IndicatorFrame::compute(&data.series);
        let aligned = data.keywords.align(&frame.dates);
        let (samples, _) = assemble_samples(&frame, &aligned, WINDOW).unwrap();
        Experiment {
            samples,
            folds: build_folds(2015, 7, 3).unwrap(),
            embed: data.keywords.dim.unwrap(),
        }
    }

    /// Test-year forecast of one variant trained on one fold.
    fn run(&self, fold: &FoldSpec, variant: Variant, n: usize) -> ForecastSeries {
        let (train, test) = split(&self.samples, fold);
        let scaler = Scaler::fit(&train, None).unwrap();
        let x: Vec<ModelInput> = train.iter().map(|s| scaler.input(s, n, self.embed)).collect();
        let y: Vec<f64> = train.iter().map(|s| scaler.target(s.target)).collect();
        let test_x: Vec<ModelInput> = test.iter().map(|s| scaler.input(s, n, self.embed)).collect();
        let dims = Dims {
            window: WINDOW,
            features: NUM_FEATURES,
            keywords: n,
            embed: self.embed,
            hidden: HIDDEN,
        };
        let cfg = TrainConfig {
            hidden: HIDDEN,
            epochs: EPOCHS,
            keywords: n,
            window: WINDOW,
            variant,
            seed: 1,
            ..TrainConfig::default()
        };
        let init = IknetParams::new(dims, cfg.lstm_layers, GruMode::Bidirectional, 1);
        let params = model::train(&x, &y, init, &cfg).unwrap().params;
        let pred = model::predict(&params, &scaler, &test_x, variant).unwrap();
        ForecastSeries::from_samples(variant.name(), fold.index, &test, pred.into_iter().map(IndexPoints::new).collect())
            .unwrap()
    }
}

fn table3(r: &mut Report, exp: &Experiment) -> Vec<f64> {
    let start = Instant::now();
    let jobs: Vec<(usize, Variant)> = (0..exp.folds.len())
        .flat_map(|f| Variant::ALL.into_iter().map(move |v| (f, v)))
        .collect();
    let series: Vec<ForecastSeries> = jobs.par_iter().map(|&(f, v)| exp.run(&exp.folds[f], v, 17)).collect();
    let secs = start.elapsed().as_secs_f64();
    let mut wins = 0;
    let mut dm_ok = true;
    let mut full_rmse = Vec::new();
    for (f, fold) in exp.folds.iter().enumerate() {
        let row = &series[f * 3..f * 3 + 3];
        let rmse: Vec<f64> = row.iter().map(|s| s.rmse().unwrap()).collect();
        let dm_tech = dm_test(&row[0], &row[1], DmOptions::default()).unwrap().statistic;
        let dm_kw = dm_test(&row[0], &row[2], DmOptions::default()).unwrap().statistic;
        let win = rmse[0] < rmse[1] && rmse[0] < rmse[2];
        if win {
            wins += 1;
            dm_ok &= dm_tech < 0.0 && dm_kw < 0.0;
        }
        full_rmse.push(rmse[0]);
        println!(
            "    fold {} ({}-{} -> {}): rmse full {:.2} tech_only {:.2} keyword_only {:.2}; DM vs tech_only {dm_tech:.2}, vs keyword_only {dm_kw:.2}{}",
            fold.index,
            fold.train_start,
            fold.train_end,
            fold.test_year,
            rmse[0],
            rmse[1],
            rmse[2],
            if win { "" } else { " (full not best)" }
        );
    }
    r.line(
        "ablation comparison (7 folds)",
        wins >= 5 && dm_ok && secs <= 900.0,
        format!(
            "full best on {wins}/7 folds, DM negative on all of them: {dm_ok}, 21 trainings at h={HIDDEN}, {EPOCHS} epochs in {secs:.0}s"
        ),
    );
    full_rmse
}

fn keyword_sweep(r: &mut Report, exp: &Experiment, n17: Vec<f64>) {
    let ns = [5usize, 9, 17, 33];
    let jobs: Vec<(usize, usize)> = [5usize, 9, 33]
        .iter()
        .flat_map(|&n| (0..exp.folds.len()).map(move |f| (n, f)))
        .collect();
    let runs: Vec<(usize, f64)> = jobs
        .par_iter()
        .map(|&(n, f)| (n, exp.run(&exp.folds[f], Variant::Full, n).rmse().unwrap()))
        .collect();
    let mean = |n: usize| {
        let v: Vec<f64> = if n == 17 {
            n17.clone()
        } else {
            runs.iter().filter(|(k, _)| *k == n).map(|(_, e)| *e).collect()
        };
        v.iter().sum::<f64>() / v.len() as f64
    };
    let means: Vec<f64> = ns.iter().map(|&n| mean(n)).collect();
    let best = (0..ns.len()).min_by(|a, b| means[*a].total_cmp(&means[*b])).unwrap();
    let shown: Vec<String> = ns.iter().zip(&means).map(|(n, m)| format!("n={n}: {m:.2}")).collect();
    r.line(
        "keyword count sweep",
        best != 0 && best != ns.len() - 1,
        format!("mean full-variant rmse {}; minimum at n={}", shown.join(", "), ns[best]),
    );
}

fn backtest(r: &mut Report) {
    use chrono::{Days, NaiveDate};
    let day = |i: u64| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + Days::new(i);
    let setup = |closes: &[f64], predicted: &[f64]| {
        let n = predicted.len();
        let prices: Vec<_> = closes.iter().enumerate().map(|(i, c)| (day(i as u64), IndexPoints::new(*c))).collect();
        let f = ForecastSeries::new(
            "m",
            1,
            (1..=n as u64).map(day).collect(),
            predicted.iter().map(|p| IndexPoints::new(*p)).collect(),
            closes[1..].iter().map(|c| IndexPoints::new(*c)).collect(),
        )
        .unwrap();
        (f, prices)
    };
    let cfg = |cost| StrategyConfig {
        cost,
        mode: Mode::Standard,
    };

    let closes = [100.0, 101.0, 102.5, 101.0, 99.0, 103.0];
    let (f, prices) = setup(&closes, &[100.5, 103.0, 100.0, 102.0, 98.0]);
    let ledger = simulate(&f, &prices, &cfg(0.003)).unwrap();
    let want = scripted(100.0, &closes[1..], &[true, true, false, true, false], 0.003);
    let scripted_err = ledger
        .rows
        .iter()
        .zip(&want)
        .map(|(row, w)| {
            [(row.r_t - w.0).abs(), (row.cost - w.1).abs(), (row.net - w.2).abs(), (row.cumulative_pct - w.3).abs()]
                .into_iter()
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    let (f, prices) = setup(&[100.0, 100.0 * 0.01f64.exp()], &[150.0]);
    let single = simulate(&f, &prices, &cfg(0.0)).unwrap().cumulative_pct();
    let single_err = (single - (0.01f64.exp() - 1.0) * 100.0).abs();

    let mut monotone = true;
    let mut rg = rng::rng_from(91);
    for _ in 0..200 {
        let n = rg.gen_range(2..80);
        let mut c = vec![1000.0];
        for _ in 0..n {
            let last: f64 = *c.last().unwrap();
            c.push(last * rg.gen_range(-0.02..0.02f64).exp());
        }
        let p: Vec<f64> = c[..n].iter().map(|v| v * rg.gen_range(-0.02..0.02f64).exp()).collect();
        let (f, prices) = setup(&c, &p);
        let cum: Vec<f64> = [0.0, 0.001, 0.003, 0.01]
            .iter()
            .map(|&k| simulate(&f, &prices, &cfg(k)).unwrap().cumulative_pct())
            .collect();
        monotone &= cum.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    }
    r.line(
        "backtest fixture",
        scripted_err < 1e-12 && single_err < 1e-12 && monotone,
        format!(
            "5-day ledger vs scripted oracle {scripted_err:.1e}, single held day error {single_err:.1e}, cost monotone on 200 paths: {monotone}"
        ),
    );
}

fn files_under(root: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == ext) {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(r: &mut Report) {
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/config.toml");
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let code = iknet::cli::main_with_args([
            "iknet".into(),
            "--config".into(),
            config.clone().into_os_string(),
            "-o".into(),
            dir.path().as_os_str().to_owned(),
            "pipeline".into(),
        ]);
        (code, dir)
    };
    let (ca, a) = run();
    let (cb, b) = run();
    let explain = files_under(&a.path().join("explain"), "json");
    let same = |rel: &Path| std::fs::read(a.path().join(rel)).ok() == std::fs::read(b.path().join(rel)).ok();
    let metrics_same = same(Path::new("metrics.csv"));
    let differing = explain.iter().filter(|p| !same(&Path::new("explain").join(p))).count();
    r.line(
        "determinism",
        ca == 0 && cb == 0 && metrics_same && differing == 0 && !explain.is_empty(),
        format!(
            "two pipeline runs (exit {ca}, {cb}): metrics.csv identical {metrics_same}, {} attribution JSON files, {differing} differ",
            explain.len()
        ),
    );
}

fn walk_forward(r: &mut Report) {
    let folds = build_folds(2015, 7, 3).unwrap();
    let shape: Vec<(i32, i32, i32)> = folds.iter().map(|f| (f.train_start, f.train_end, f.test_year)).collect();
    let want: Vec<(i32, i32, i32)> = (0..7).map(|i| (2015 + i, 2017 + i, 2018 + i)).collect();
    r.line(
        "walk-forward shape",
        shape == want,
        format!(
            "{} folds, first {:?}, last {:?}",
            folds.len(),
            shape.first().unwrap(),
            shape.last().unwrap()
        ),
    );
}

fn main() {
    let mut r = Report { failures: 0 };
    gradients(&mut r);
    rnn_reference(&mut r);
    shap(&mut r);
    linear_shap(&mut r);
    indicators(&mut r);
    let exp = Experiment::new();
    let n17 = table3(&mut r, &exp);
    keyword_sweep(&mut r, &exp, n17);
    backtest(&mut r);
    determinism(&mut r);
    walk_forward(&mut r);
    if r.failures > 0 {
        println!("{} criteria failed", r.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
