//! Shapley values computed straight from the definition.

use std::collections::HashMap;

use iknet::dataset::{assemble_samples, build_folds, split, ModelInput, Scaler};
use iknet::explain::{Background, FeatureGrouping};
use iknet::indicators::{IndicatorFrame, NUM_FEATURES};
use iknet::model::{self, Dims, IknetParams, TrainConfig, Variant};
use iknet::nn::GruMode;
use iknet::synth::{self, SynthConfig};

/// `v(S)`: mean over background rows of `f` with the groups outside `S`
/// taken from the row.
pub fn value(f: &dyn Fn(&[f64]) -> f64, x: &[f64], grouping: &FeatureGrouping, bg: &[Vec<f64>], mask: u32) -> f64 {
    let mut total = 0.0;
    for row in bg {
        let mut z = row.clone();
        for (g, group) in grouping.groups().iter().enumerate() {
            if mask & (1 << g) != 0 {
                for &i in &group.indices {
                    z[i] = x[i];
                }
            }
        }
        total += f(&z);
    }
    total / bg.len() as f64
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `φ_i = Σ_{S ⊆ N∖{i}} |S|!(M−|S|−1)!/M! · (v(S∪{i}) − v(S))`.
pub fn shapley_by_subsets(f: &dyn Fn(&[f64]) -> f64, x: &[f64], grouping: &FeatureGrouping, bg: &[Vec<f64>]) -> Vec<f64> {
    let m = grouping.len();
    assert!(m <= 20);
    let v: Vec<f64> = (0..1u32 << m).map(|s| value(f, x, grouping, bg, s)).collect();
    let mf = factorial(m);
    (0..m)
        .map(|i| {
            let bit = 1u32 << i;
            let mut phi = 0.0;
            for s in 0..1u32 << m {
                if s & bit != 0 {
                    continue;
                }
                let size = s.count_ones() as usize;
                let w = factorial(size) * factorial(m - size - 1) / mf;
                phi += w * (v[(s | bit) as usize] - v[s as usize]);
            }
            phi
        })
        .collect()
}

/// Average marginal contribution over all `M!` player orderings.
pub fn shapley_by_permutations(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    grouping: &FeatureGrouping,
    bg: &[Vec<f64>],
) -> Vec<f64> {
    let m = grouping.len();
    assert!(m <= 8);
    let mut cache: HashMap<u32, f64> = HashMap::new();
    let mut v = |s: u32| *cache.entry(s).or_insert_with(|| value(f, x, grouping, bg, s));
    let mut phi = vec![0.0; m];
    let mut perm: Vec<usize> = (0..m).collect();
    let mut count = 0usize;
    loop {
        let mut s = 0u32;
        for &p in &perm {
            let before = v(s);
            s |= 1 << p;
            phi[p] += v(s) - before;
        }
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    phi.iter().map(|p| p / count as f64).collect()
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Small network trained for a few epochs on the bundled synthetic data.
pub struct TrainedFixture {
    pub params: IknetParams,
    pub scaler: Scaler,
    pub train_x: Vec<ModelInput>,
    pub test_x: Vec<ModelInput>,
}

pub fn trained_fixture() -> TrainedFixture {
    let data = synth::generate(&SynthConfig::fixture()).unwrap();
    let frame = IndicatorFrame::compute(&data.series);
    let aligned = data.keywords.align(&frame.dates);
    let window = 5;
    let (samples, _) = assemble_samples(&frame, &aligned, window).unwrap();
    let fold = build_folds(2022, 1, 1).unwrap()[0];
    let (train, test) = split(&samples, &fold);
    let scaler = Scaler::fit(&train, None).unwrap();
    let dims = Dims {
        window,
        features: NUM_FEATURES,
        keywords: 4,
        embed: data.keywords.dim.unwrap(),
        hidden: 4,
    };
    let train_x: Vec<ModelInput> = train.iter().map(|s| scaler.input(s, dims.keywords, dims.embed)).collect();
    let train_y: Vec<f64> = train.iter().map(|s| scaler.target(s.target)).collect();
    let test_x = test.iter().map(|s| scaler.input(s, dims.keywords, dims.embed)).collect();
    let config = TrainConfig {
        window,
        keywords: dims.keywords,
        hidden: dims.hidden,
        epochs: 3,
        seed: 5,
        ..TrainConfig::default()
    };
    let init = IknetParams::new(dims, 1, GruMode::Bidirectional, 5);
    let params = model::train(&train_x, &train_y, init, &config).unwrap().params;
    TrainedFixture {
        params,
        scaler,
        train_x,
        test_x,
    }
}

/// Index-point output of the fixture network on one flat input.
pub fn fixture_fn(fx: &TrainedFixture) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
    move |z: &[f64]| {
        let x = iknet::explain::unflatten(&fx.params.dims, z).unwrap();
        let y = model::forward_values(&fx.params, &[&x], Variant::Full).unwrap()[0];
        fx.scaler.invert_target(y)
    }
}

pub fn background(fx: &TrainedFixture, rows: usize) -> Background {
    let flat: Vec<Vec<f64>> = fx.train_x.iter().map(iknet::explain::flatten).collect();
    Background::subsample(&flat, rows, 9).unwrap()
}
