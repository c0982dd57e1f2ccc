//! The train-variation x test-variation experiment matrix.
//!
//! A benchmark corpus is prepared once: the training and test originals are
//! expanded into five-region crops under four augmentation variants
//! (plain, flip, relight, flip+relight) and featurized. Each training
//! configuration then selects a subset of one training variant, fits a
//! forest, and is scored against every test variant.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_planned, plan_expansion, ExpansionPolicy, PlannedAugmentation, RegionTag};
use crate::features::{extract, FeatureVector};
use crate::forest::{self, ForestModel, ForestParams};
use crate::image::{LabeledSample, SeverityLabel};
use crate::seed;
use crate::{Error, Result};

pub const BENCH_RELIGHT_MAGNITUDE: i32 = 5;
pub const BENCH_FLIP_PROBABILITY: f64 = 0.5;
pub const BENCH_RELIGHT_PROBABILITY: f64 = 0.5;
pub const BENCH_CROP_FRACTION: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpatialMode {
    /// Only top-left crops.
    FixedTopLeft,
    /// Crops sampled from all five regions.
    RandomRegion,
    AllRegions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spatial: SpatialMode,
    /// Share of the full expanded training set, in (0, 1].
    pub fraction: f64,
    pub flip: bool,
    pub relight: bool,
}

impl TrainConfig {
    const fn new(spatial: SpatialMode, fraction: f64, flip: bool, relight: bool) -> Self {
        Self {
            spatial,
            fraction,
            flip,
            relight,
        }
    }

    /// The ten training rows, top to bottom.
    pub const CANONICAL: [TrainConfig; 10] = [
        Self::new(SpatialMode::FixedTopLeft, 0.05, false, false),
        Self::new(SpatialMode::FixedTopLeft, 0.10, false, false),
        Self::new(SpatialMode::FixedTopLeft, 0.20, false, false),
        Self::new(SpatialMode::RandomRegion, 0.05, false, false),
        Self::new(SpatialMode::RandomRegion, 0.10, false, false),
        Self::new(SpatialMode::RandomRegion, 0.20, false, false),
        Self::new(SpatialMode::AllRegions, 1.0, false, false),
        Self::new(SpatialMode::AllRegions, 1.0, true, false),
        Self::new(SpatialMode::AllRegions, 1.0, false, true),
        Self::new(SpatialMode::AllRegions, 1.0, true, true),
    ];

    pub fn label(&self) -> String {
        let pct = libm::rint(self.fraction * 100.0) as u32;
        match self.spatial {
            SpatialMode::FixedTopLeft => format!("top-left corner ({pct}%)"),
            SpatialMode::RandomRegion => format!("random ({pct}%)"),
            SpatialMode::AllRegions => variant_label("all", self.flip, self.relight),
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::CANONICAL.iter().copied().find(|c| c.label() == label)
    }

    pub fn variant(&self) -> usize {
        variant_index(self.flip, self.relight)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Test-set variation. Five-region cropping always applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestConfig {
    pub flip: bool,
    pub relight: bool,
}

impl TestConfig {
    pub const CANONICAL: [TestConfig; 4] = [
        TestConfig {
            flip: false,
            relight: false,
        },
        TestConfig {
            flip: true,
            relight: false,
        },
        TestConfig {
            flip: false,
            relight: true,
        },
        TestConfig {
            flip: true,
            relight: true,
        },
    ];

    pub fn label(&self) -> String {
        variant_label("all", self.flip, self.relight)
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::CANONICAL.iter().copied().find(|c| c.label() == label)
    }

    pub fn variant(&self) -> usize {
        variant_index(self.flip, self.relight)
    }
}

impl fmt::Display for TestConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn variant_label(base: &str, flip: bool, relight: bool) -> String {
    let mut s = String::from(base);
    if flip {
        s.push_str("+flip");
    }
    if relight {
        s.push_str("+relight");
    }
    s
}

/// Index of an augmentation variant: bit 0 = flip, bit 1 = relight.
pub fn variant_index(flip: bool, relight: bool) -> usize {
    usize::from(flip) | (usize::from(relight) << 1)
}

/// All 40 (train, test) pairs in row-major table order.
pub fn build_matrix() -> Vec<(TrainConfig, TestConfig)> {
    TrainConfig::CANONICAL
        .iter()
        .flat_map(|&tr| TestConfig::CANONICAL.iter().map(move |&te| (tr, te)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Expansion policy for one split and variant. All variants of a split share
/// a seed, so they agree on every flip and relight decision they both make.
pub fn variant_policy(seed: u64, split: Split, flip: bool, relight: bool) -> ExpansionPolicy {
    ExpansionPolicy {
        crop_fraction: BENCH_CROP_FRACTION,
        regions: RegionTag::FIVE.to_vec(),
        flip_probability: if flip { BENCH_FLIP_PROBABILITY } else { 0.0 },
        relight_enabled: relight,
        relight_magnitude: BENCH_RELIGHT_MAGNITUDE,
        relight_probability: BENCH_RELIGHT_PROBABILITY,
        seed: seed::derive_str(seed, split.key()),
    }
}

/// A featurized crop of one original sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedCrop {
    pub source: usize,
    pub region: RegionTag,
    pub sample_id: String,
    pub label: SeverityLabel,
    pub features: FeatureVector,
}

pub fn featurize(source_index: usize, source: &LabeledSample, planned: &PlannedAugmentation) -> Result<FeaturizedCrop> {
    let crop = apply_planned(source, planned)?;
    Ok(FeaturizedCrop {
        source: source_index,
        region: planned.region(),
        sample_id: crop.meta.sample_id,
        label: source.label,
        features: extract(&crop.image)?,
    })
}

pub fn plan_variant(samples: &[LabeledSample], policy: &ExpansionPolicy) -> Result<Vec<PlannedAugmentation>> {
    plan_expansion(
        samples
            .iter()
            .map(|s| (s.meta.sample_id.as_str(), s.image.width(), s.image.height())),
        policy,
    )
}

/// Featurized crops for every (split, variant).
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCorpus {
    train: [Vec<FeaturizedCrop>; 4],
    test: [Vec<FeaturizedCrop>; 4],
}

impl BenchCorpus {
    /// Serial preparation; the `ravel` crate offers a parallel equivalent.
    pub fn prepare(train: &[LabeledSample], test: &[LabeledSample], seed: u64) -> Result<Self> {
        let build = |samples: &[LabeledSample], split: Split| -> Result<[Vec<FeaturizedCrop>; 4]> {
            let mut out: [Vec<FeaturizedCrop>; 4] = Default::default();
            for (v, slot) in out.iter_mut().enumerate() {
                let policy = variant_policy(seed, split, v & 1 == 1, v & 2 == 2);
                *slot = plan_variant(samples, &policy)?
                    .iter()
                    .map(|p| featurize(p.source, &samples[p.source], p))
                    .collect::<Result<_>>()?;
            }
            Ok(out)
        };
        Self::from_parts(build(train, Split::Train)?, build(test, Split::Test)?)
    }

    pub fn from_parts(train: [Vec<FeaturizedCrop>; 4], test: [Vec<FeaturizedCrop>; 4]) -> Result<Self> {
        for split in [&train, &test] {
            if split.iter().any(|v| v.len() != split[0].len()) {
                return Err(Error::Configuration("augmentation variants differ in size".into()));
            }
        }
        if train[0].is_empty() || test[0].is_empty() {
            return Err(Error::Configuration(
                "benchmark needs non-empty train and test splits".into(),
            ));
        }
        Ok(Self { train, test })
    }

    pub fn train_variant(&self, variant: usize) -> &[FeaturizedCrop] {
        &self.train[variant]
    }

    pub fn test_variant(&self, variant: usize) -> &[FeaturizedCrop] {
        &self.test[variant]
    }
}

/// Indices (ascending) of the training crops a configuration uses.
///
/// Per class, `round(fraction * class_total)` crops are drawn without
/// replacement from the allowed regions, where `class_total` counts that
/// class over all regions. For top-left training at 20% this is exactly
/// every top-left crop.
pub fn select_training(config: &TrainConfig, crops: &[FeaturizedCrop], seed: u64) -> Result<Vec<usize>> {
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::Configuration(format!(
            "training fraction {} outside (0, 1]",
            config.fraction
        )));
    }
    let mut selected = Vec::new();
    for label in SeverityLabel::ALL {
        let class_total = crops.iter().filter(|c| c.label == label).count();
        let mut pool: Vec<usize> = crops
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == label)
            .filter(|(_, c)| config.spatial != SpatialMode::FixedTopLeft || c.region == RegionTag::TopLeft)
            .map(|(i, _)| i)
            .collect();
        let want = (libm::rint(config.fraction * class_total as f64) as usize).min(pool.len());
        let mut rng = seed::rng(seed::derive(seed, label.index() as u64));
        for k in 0..want {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
        }
        selected.extend_from_slice(&pool[..want]);
    }
    selected.sort_unstable();
    if selected.is_empty() {
        return Err(Error::Configuration(format!(
            "`{}` selects no training samples",
            config.label()
        )));
    }
    Ok(selected)
}

/// Seed for one training row, independent of row order.
pub fn row_seed(seed: u64, config: &TrainConfig) -> u64 {
    seed::derive_str(seed, &config.label())
}

/// Seed of the subset draw. It is shared by every row of a run, so
/// smaller fractions select prefixes of larger ones: the 5% subset is
/// nested in the 10% subset, and so on.
pub fn selection_seed(seed: u64) -> u64 {
    seed::derive_str(seed, "select")
}

/// The feature matrix and forest parameters a training row uses.
pub fn training_set(
    config: &TrainConfig,
    corpus: &BenchCorpus,
    params: &ForestParams,
    selection_seed: u64,
    row_seed: u64,
) -> Result<(Vec<FeatureVector>, Vec<SeverityLabel>, ForestParams)> {
    let crops = corpus.train_variant(config.variant());
    let idx = select_training(config, crops, selection_seed)?;
    let features = idx.iter().map(|&i| crops[i].features.clone()).collect();
    let labels = idx.iter().map(|&i| crops[i].label).collect();
    let params = ForestParams {
        seed: seed::derive(row_seed, 1),
        ..params.clone()
    };
    Ok((features, labels, params))
}

pub fn train_row(config: &TrainConfig, corpus: &BenchCorpus, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let (x, y, p) = training_set(config, corpus, params, selection_seed(seed), row_seed(seed, config))?;
    forest::train(&x, &y, &p)
}

/// Scores a trained model on one test variant.
pub fn evaluate(
    model: &ForestModel,
    train: TrainConfig,
    test: TestConfig,
    corpus: &BenchCorpus,
    seed: u64,
) -> ExperimentCell {
    let crops = corpus.test_variant(test.variant());
    let correct = crops.iter().filter(|c| model.predict(&c.features) == c.label).count();
    ExperimentCell {
        train,
        test,
        accuracy: correct as f64 / crops.len() as f64,
        sample_count: crops.len(),
        seed,
    }
}

pub fn run_cell(
    train: TrainConfig,
    test: TestConfig,
    corpus: &BenchCorpus,
    params: &ForestParams,
    seed: u64,
) -> Result<ExperimentCell> {
    let model = train_row(&train, corpus, params, seed)?;
    Ok(evaluate(&model, train, test, corpus, seed))
}

/// Runs all 40 cells serially, training each row once.
pub fn run_matrix(corpus: &BenchCorpus, params: &ForestParams, seed: u64) -> Result<Vec<ExperimentCell>> {
    let mut cells = Vec::with_capacity(40);
    for train in TrainConfig::CANONICAL {
        let model = train_row(&train, corpus, params, seed)?;
        for test in TestConfig::CANONICAL {
            cells.push(evaluate(&model, train, test, corpus, seed));
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub train: TrainConfig,
    pub test: TestConfig,
    pub accuracy: f64,
    pub sample_count: usize,
    pub seed: u64,
}

/// Predicted labels keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub model_name: String,
    pub entries: BTreeMap<String, SeverityLabel>,
}

impl PredictionSet {
    pub fn new(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Fails on a duplicate sample id.
    pub fn insert(&mut self, sample_id: impl Into<String>, label: SeverityLabel) -> Result<()> {
        let id = sample_id.into();
        if self.entries.contains_key(&id) {
            return Err(Error::InvalidInput(format!("duplicate prediction for `{id}`")));
        }
        self.entries.insert(id, label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Share of truth samples whose prediction matches. Every truth sample
/// must have a prediction; extra predictions are ignored.
pub fn accuracy<'a>(
    predictions: &PredictionSet,
    truth: impl IntoIterator<Item = (&'a str, SeverityLabel)>,
) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    let mut missing = Vec::new();
    for (id, label) in truth {
        total += 1;
        match predictions.entries.get(id) {
            Some(p) => correct += usize::from(*p == label),
            None => missing.push(String::from(id)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }
    if total == 0 {
        return Err(Error::InvalidInput(
            "accuracy of an empty truth set is undefined".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Best and second-best training rows of one test column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRanking {
    pub test: TestConfig,
    pub best: Vec<TrainConfig>,
    pub second: Vec<TrainConfig>,
}

/// Ranks each test column present in `cells`, in canonical column order.
/// A tie for best marks every tied row best and leaves second-best empty.
pub fn rank_columns(cells: &[ExperimentCell]) -> Vec<ColumnRanking> {
    let mut out = Vec::new();
    for test in TestConfig::CANONICAL {
        let column: Vec<&ExperimentCell> = cells.iter().filter(|c| c.test == test).collect();
        if column.is_empty() {
            continue;
        }
        let top = column.iter().map(|c| c.accuracy).fold(f64::NEG_INFINITY, f64::max);
        let best: Vec<TrainConfig> = column.iter().filter(|c| c.accuracy == top).map(|c| c.train).collect();
        let second = if best.len() > 1 {
            Vec::new()
        } else {
            let runner_up = column
                .iter()
                .map(|c| c.accuracy)
                .filter(|&a| a < top)
                .fold(f64::NEG_INFINITY, f64::max);
            column
                .iter()
                .filter(|c| c.accuracy == runner_up)
                .map(|c| c.train)
                .collect()
        };
        out.push(ColumnRanking { test, best, second });
    }
    out
}
