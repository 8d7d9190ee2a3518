use std::path::{Path, PathBuf};

use iknet::cli::main_with_args;
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "iknet".to_string(),
        "--config".into(),
        fixture("config.toml"),
        "-o".into(),
        out.to_string_lossy().into_owned(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    main_with_args(args)
}

fn pipeline() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["pipeline"]), 0);
    dir
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn explain_jsons(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for fold in ["fold1", "fold2"] {
        for e in std::fs::read_dir(root.join("explain").join(fold)).unwrap() {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if name.ends_with(".json") && !name.ends_with(".words.json") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// `base + Σφ` against the reported prediction.
fn efficiency_gap(path: &Path) -> f64 {
    let v: serde_json::Value = serde_json::from_slice(&read(path)).unwrap();
    let base = v["base_value"].as_f64().unwrap();
    let pred = v["prediction"].as_f64().unwrap();
    let sum: f64 = v["groups"].as_array().unwrap().iter().map(|g| g["phi"].as_f64().unwrap()).sum();
    (base + sum - pred).abs()
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = pipeline();
    let root = dir.path();
    for f in [
        "manifest.json",
        "metrics.csv",
        "dm.csv",
        "backtest/summary.json",
        "backtest/fold1-ledger.csv",
        "backtest/fold2-ledger.csv",
        "predictions/fold1.csv",
        "predictions/fold2.csv",
        "plots/fold1-2023.svg",
        "plots/fold2-2024.svg",
        "explain/fold1-importance.csv",
        "explain/fold1-importance.svg",
        "explain/fold2-importance.csv",
        "explain/fold2-importance.svg",
    ] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    for fold in 1..=2 {
        for v in ["full", "tech_only", "keyword_only"] {
            assert!(root.join(format!("checkpoints/fold{fold}-{v}.json")).is_file());
        }
    }
    let jsons = explain_jsons(root);
    assert_eq!(jsons.len(), 4);
    for j in &jsons {
        assert!(efficiency_gap(j) < 1e-6, "{}", j.display());
        for ext in ["words.json", "html", "svg"] {
            assert!(j.with_extension(ext).is_file());
        }
    }

    let metrics = String::from_utf8(read(&root.join("metrics.csv"))).unwrap();
    for model in ["full", "tech_only", "keyword_only", "ridge", "persistence"] {
        assert!(metrics.lines().any(|l| l.starts_with("1,") && l.contains(&format!(",{model},"))), "{model}");
        assert!(metrics.lines().any(|l| l.starts_with("mean,") && l.contains(&format!(",{model},"))));
    }
    let manifest: serde_json::Value = serde_json::from_slice(&read(&root.join("manifest.json"))).unwrap();
    assert!(manifest.is_object());
}

#[test]
fn reruns_are_byte_identical() {
    let a = pipeline();
    let b = pipeline();
    for f in ["metrics.csv", "dm.csv", "predictions/fold1.csv", "backtest/summary.json", "backtest/fold2-ledger.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    for (x, y) in explain_jsons(a.path()).iter().zip(explain_jsons(b.path())) {
        assert_eq!(read(x), read(&y), "{}", x.display());
    }
}

#[test]
fn explain_one_date() {
    let dir = pipeline();
    let root = dir.path();
    let ck = root.join("checkpoints/fold1-full.json");
    let ck = ck.to_string_lossy();
    let explain = |date: &str| run(root, &["explain", "--checkpoint", &ck, "--date", date]);

    assert_eq!(explain("2023-03-15"), 0);
    let json = root.join("explain/fold1-full/2023-03-15.json");
    for ext in ["json", "words.json", "html", "svg"] {
        assert!(json.with_extension(ext).is_file(), "{ext}");
    }
    assert!(efficiency_gap(&json) < 1e-6);
    let first = read(&json);
    assert_eq!(explain("2023-03-15"), 0);
    assert_eq!(read(&json), first);

    // Saturday, training year, malformed
    assert_eq!(explain("2023-03-18"), 2);
    assert_eq!(explain("2022-06-01"), 2);
    assert_eq!(explain("15/03/2023"), 2);
    let missing = root.join("checkpoints/nope.json");
    assert_eq!(
        run(root, &["explain", "--checkpoint", &missing.to_string_lossy(), "--date", "2023-03-15"]),
        2
    );
}

#[test]
fn invalid_window_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--window", "0", "train"]), 3);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_and_lookup_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(main_with_args(["iknet", "--help"]), 0);
    assert_eq!(main_with_args(["iknet", "--no-such-flag", "train"]), 3);
    assert_eq!(main_with_args(["iknet", "--config", "/nonexistent/iknet.toml", "train"]), 2);
    let out = dir.path().to_string_lossy().into_owned();
    // no seed anywhere
    assert_eq!(main_with_args(["iknet", "-o", &out, "--ohlcv", &fixture("ohlcv.csv"), "train"]), 3);
    let missing = dir.path().join("absent.csv").to_string_lossy().into_owned();
    assert_eq!(
        main_with_args(["iknet", "-o", &out, "--seed", "1", "--ohlcv", &missing, "--keywords-file", &fixture("keywords.jsonl"), "train"]),
        2
    );
}

#[test]
fn data_commands() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(run(root, &["indicators"]), 0);
    let csv = String::from_utf8(read(&root.join("indicators.csv"))).unwrap();
    // header plus every post-warm-up day of the 600-day fixture
    assert_eq!(csv.lines().count(), 1 + 600 - iknet::indicators::WARMUP);
    assert!(!csv.contains("NaN"));

    assert_eq!(run(root, &["keywords"]), 0);
    let kw = iknet::dataset::KeywordFile::from_path(&root.join("keywords.jsonl")).unwrap();
    assert!(!kw.by_date.is_empty());
    assert_eq!(kw.dim, Some(8));

    let synth = tempfile::tempdir().unwrap();
    let out = synth.path().to_string_lossy().into_owned();
    assert_eq!(main_with_args(["iknet", "-o", &out, "--seed", "7", "synth"]), 0);
    assert_eq!(read(&synth.path().join("ohlcv.csv")), read(Path::new(&fixture("ohlcv.csv"))));
    assert_eq!(read(&synth.path().join("keywords.jsonl")), read(Path::new(&fixture("keywords.jsonl"))));
}
