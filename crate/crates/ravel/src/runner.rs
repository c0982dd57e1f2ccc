//! Data-parallel versions of the core pipelines. Every function here
//! returns exactly what its serial counterpart in `ravel_core` returns,
//! whatever the thread count.

use rayon::prelude::*;

use ravel_core::bench::{
    self, featurize, plan_variant, variant_policy, BenchCorpus, ExperimentCell, FeaturizedCrop, Split, TestConfig,
    TrainConfig,
};
use ravel_core::forest::{grow_tree, TrainingData};
use ravel_core::{features, seed, FeatureVector, ForestModel, ForestParams, LabeledSample, SeverityLabel};

use crate::manifest::ManifestEntry;
use crate::{Error, Result};

/// Share of each class held out when a benchmark has no separate test set.
pub const TEST_SHARE: f64 = 0.2;

/// A rayon pool with `jobs` workers (all cores when `None`).
pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

pub fn load_all(entries: &[ManifestEntry]) -> Result<Vec<LabeledSample>> {
    entries.par_iter().map(ManifestEntry::load).collect()
}

pub fn extract_all(samples: &[LabeledSample]) -> Result<Vec<FeatureVector>> {
    samples
        .par_iter()
        .map(|s| {
            features::extract(&s.image).map_err(|e| Error::Load {
                sample_id: s.meta.sample_id.clone(),
                source: Box::new(e.into()),
            })
        })
        .collect()
}

/// Parallel equivalent of `ravel_core::forest::train`.
pub fn train_forest(
    features: &[FeatureVector],
    labels: &[SeverityLabel],
    params: &ForestParams,
) -> Result<ForestModel> {
    params.validate()?;
    let data = TrainingData::new(features, labels)?;
    let trees = (0..params.tree_count)
        .into_par_iter()
        .map(|t| grow_tree(&data, params, t))
        .collect();
    Ok(ForestModel::new(params.clone(), data.normalizer().clone(), trees)?)
}

/// Parallel equivalent of `BenchCorpus::prepare`.
pub fn prepare_corpus(train: &[LabeledSample], test: &[LabeledSample], seed: u64) -> Result<BenchCorpus> {
    let build = |samples: &[LabeledSample], split: Split| -> Result<[Vec<FeaturizedCrop>; 4]> {
        let mut out: [Vec<FeaturizedCrop>; 4] = Default::default();
        for (v, slot) in out.iter_mut().enumerate() {
            let policy = variant_policy(seed, split, v & 1 == 1, v & 2 == 2);
            *slot = plan_variant(samples, &policy)?
                .par_iter()
                .map(|p| featurize(p.source, &samples[p.source], p))
                .collect::<ravel_core::Result<_>>()?;
        }
        Ok(out)
    };
    Ok(BenchCorpus::from_parts(
        build(train, Split::Train)?,
        build(test, Split::Test)?,
    )?)
}

fn train_row(config: &TrainConfig, corpus: &BenchCorpus, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let (x, y, p) = bench::training_set(
        config,
        corpus,
        params,
        bench::selection_seed(seed),
        bench::row_seed(seed, config),
    )?;
    train_forest(&x, &y, &p)
}

/// Parallel equivalent of `ravel_core::bench::run_matrix`: rows train
/// concurrently, cells come back in table order.
pub fn run_matrix(corpus: &BenchCorpus, params: &ForestParams, seed: u64) -> Result<Vec<ExperimentCell>> {
    let rows: Vec<Vec<ExperimentCell>> = TrainConfig::CANONICAL
        .par_iter()
        .map(|train| {
            let model = train_row(train, corpus, params, seed)?;
            Ok(TestConfig::CANONICAL
                .iter()
                .map(|&test| bench::evaluate(&model, *train, test, corpus, seed))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Deterministic stratified hold-out: per class, `round(TEST_SHARE * n)`
/// items drawn by a seeded shuffle go to the test side. Both sides keep
/// input order. Returns `(train, test)` index lists.
pub fn split_indices(labels: &[SeverityLabel], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut is_test = vec![false; labels.len()];
    for label in SeverityLabel::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        let take = (TEST_SHARE * members.len() as f64).round() as usize;
        let mut rng = seed::rng(seed::derive(seed::derive_str(seed, "split"), label.index() as u64));
        for k in 0..take {
            let j = rand::Rng::random_range(&mut rng, k..members.len());
            members.swap(k, j);
            is_test[members[k]] = true;
        }
    }
    (0..labels.len()).partition(|&i| !is_test[i])
}

/// Loads, splits (unless `test` is given), prepares and runs the full
/// matrix.
pub fn bench_samples(
    samples: Vec<LabeledSample>,
    test: Option<Vec<LabeledSample>>,
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<ExperimentCell>> {
    let (train, test) = match test {
        Some(t) => (samples, t),
        None => {
            let labels: Vec<SeverityLabel> = samples.iter().map(|s| s.label).collect();
            let (tr, te) = split_indices(&labels, seed);
            (
                tr.iter().map(|&i| samples[i].clone()).collect(),
                te.iter().map(|&i| samples[i].clone()).collect(),
            )
        }
    };
    let corpus = prepare_corpus(&train, &test, seed)?;
    run_matrix(&corpus, params, seed)
}
