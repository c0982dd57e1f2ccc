//! Random forest classifier over [`FeatureVector`]s.
//!
//! Each tree grows on a bootstrap resample with Gini-impurity splits over a
//! random subset of dimensions per node. Tree `t` draws from a stream keyed
//! by `(seed, t)`, so trees can be grown in any order or in parallel and
//! the assembled model is the same.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, Normalizer, FEATURE_DIM};
use crate::image::SeverityLabel;
use crate::seed;
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "ravelforest/v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            tree_count: 20,
            max_depth: 16,
            min_samples_leaf: 2,
            // floor(sqrt(606))
            features_per_split: 24,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tree_count == 0 {
            return Err(Error::InvalidInput("tree_count must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidInput("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidInput("min_samples_leaf must be at least 1".into()));
        }
        if !(1..=FEATURE_DIM).contains(&self.features_per_split) {
            return Err(Error::InvalidInput(format!(
                "features_per_split must lie in [1, {FEATURE_DIM}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecisionNode {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<DecisionNode>,
        right: Box<DecisionNode>,
    },
    Leaf {
        class_counts: [u32; 4],
    },
}

impl DecisionNode {
    pub fn leaf(label: SeverityLabel) -> Self {
        let mut class_counts = [0; 4];
        class_counts[label.index()] = 1;
        Self::Leaf { class_counts }
    }

    pub fn split(feature: usize, threshold: f64, left: DecisionNode, right: DecisionNode) -> Self {
        Self::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Class of the leaf reached by `x`; count ties go to the lower level.
    pub fn classify(&self, x: &[f64]) -> SeverityLabel {
        let mut node = self;
        loop {
            match node {
                Self::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
                Self::Leaf { class_counts } => return argmax_lowest(class_counts),
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            Self::Leaf { .. } => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= FEATURE_DIM {
                    return Err(Error::InvalidInput(format!("split on feature {feature} out of range")));
                }
                if !threshold.is_finite() {
                    return Err(Error::InvalidInput("non-finite split threshold".into()));
                }
                left.validate()?;
                right.validate()
            }
            Self::Leaf { class_counts } => {
                if class_counts.iter().all(|&c| c == 0) {
                    return Err(Error::InvalidInput("leaf with no class counts".into()));
                }
                Ok(())
            }
        }
    }
}

fn argmax_lowest<T: PartialOrd + Copy>(counts: &[T; 4]) -> SeverityLabel {
    let mut best = 0;
    for i in 1..4 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    SeverityLabel::ALL[best]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: String,
    pub params: ForestParams,
    pub normalizer: Normalizer,
    pub trees: Vec<DecisionNode>,
}

impl ForestModel {
    pub fn new(params: ForestParams, normalizer: Normalizer, trees: Vec<DecisionNode>) -> Result<Self> {
        let model = Self {
            format_version: FORMAT_VERSION.to_string(),
            params,
            normalizer,
            trees,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.normalizer.validate()?;
        if self.trees.len() != self.params.tree_count {
            return Err(Error::InvalidInput(format!(
                "model has {} trees but params say {}",
                self.trees.len(),
                self.params.tree_count
            )));
        }
        self.trees.iter().try_for_each(DecisionNode::validate)
    }

    /// Per-class vote counts for a raw (unnormalized) vector.
    pub fn votes(&self, vector: &FeatureVector) -> [usize; 4] {
        let x = self.normalizer.apply(vector);
        let mut votes = [0usize; 4];
        for tree in &self.trees {
            votes[tree.classify(x.as_slice()).index()] += 1;
        }
        votes
    }

    /// Majority vote of the trees; ties go to the lower severity level.
    pub fn predict(&self, vector: &FeatureVector) -> SeverityLabel {
        argmax_lowest(&self.votes(vector))
    }

    pub fn predict_slice(&self, values: &[f64]) -> Result<SeverityLabel> {
        let v = FeatureVector::new(values.to_vec())?;
        Ok(self.predict(&v))
    }
}

/// Normalized, column-major training matrix shared by all trees.
#[derive(Debug, Clone)]
pub struct TrainingData {
    columns: Vec<Vec<f64>>,
    labels: Vec<SeverityLabel>,
    normalizer: Normalizer,
}

impl TrainingData {
    pub fn new(features: &[FeatureVector], labels: &[SeverityLabel]) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.len() < 2 {
            return Err(Error::DegenerateTraining(format!(
                "need at least 2 samples, got {}",
                features.len()
            )));
        }
        if labels.iter().all(|&l| l == labels[0]) {
            return Err(Error::DegenerateTraining(format!(
                "all {} samples are {}",
                labels.len(),
                labels[0]
            )));
        }
        let normalizer = Normalizer::fit(features)?;
        let mut columns = alloc::vec![Vec::with_capacity(features.len()); FEATURE_DIM];
        for v in features {
            for (col, x) in columns.iter_mut().zip(normalizer.apply(v).as_slice()) {
                col.push(*x);
            }
        }
        Ok(Self {
            columns,
            labels: labels.to_vec(),
            normalizer,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }
}

/// Trains a forest serially. See [`grow_tree`] for parallel use.
pub fn train(features: &[FeatureVector], labels: &[SeverityLabel], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let data = TrainingData::new(features, labels)?;
    let trees = (0..params.tree_count).map(|t| grow_tree(&data, params, t)).collect();
    ForestModel::new(params.clone(), data.normalizer, trees)
}

/// Grows tree `index` of the forest described by `params`.
pub fn grow_tree(data: &TrainingData, params: &ForestParams, index: usize) -> DecisionNode {
    let mut rng = seed::rng(seed::derive(params.seed, index as u64));
    let n = data.len();
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut grower = Grower {
        data,
        params,
        rng,
        order: (0..FEATURE_DIM).collect(),
        pairs: Vec::with_capacity(n),
    };
    grower.grow(sample, 0)
}

struct Grower<'a> {
    data: &'a TrainingData,
    params: &'a ForestParams,
    rng: seed::Rng,
    order: Vec<usize>,
    pairs: Vec<(f64, u8)>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn grow(&mut self, sample: Vec<usize>, depth: usize) -> DecisionNode {
        let mut counts = [0u32; 4];
        for &i in &sample {
            counts[self.data.labels[i].index()] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || sample.len() < 2 * self.params.min_samples_leaf {
            return DecisionNode::Leaf { class_counts: counts };
        }
        let Some(best) = self.best_split(&sample) else {
            return DecisionNode::Leaf { class_counts: counts };
        };
        let column = &self.data.columns[best.feature];
        let (left, right): (Vec<usize>, Vec<usize>) = sample.into_iter().partition(|&i| column[i] <= best.threshold);
        let left = self.grow(left, depth + 1);
        let right = self.grow(right, depth + 1);
        DecisionNode::split(best.feature, best.threshold, left, right)
    }

    /// Examines features in a fresh random order until `features_per_split`
    /// non-constant ones have been scored (or all are exhausted).
    fn best_split(&mut self, sample: &[usize]) -> Option<Candidate> {
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        let mut scored = 0;
        for k in 0..FEATURE_DIM {
            let j = self.rng.random_range(k..FEATURE_DIM);
            self.order.swap(k, j);
            let feature = self.order[k];
            let column = &self.data.columns[feature];

            self.pairs.clear();
            self.pairs
                .extend(sample.iter().map(|&i| (column[i], self.data.labels[i].index() as u8)));
            self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let n = self.pairs.len();
            if self.pairs[0].0 == self.pairs[n - 1].0 {
                continue;
            }
            scored += 1;

            let mut right = [0f64; 4];
            for p in &self.pairs {
                right[p.1 as usize] += 1.0;
            }
            let mut left = [0f64; 4];
            for i in 0..n - 1 {
                let c = self.pairs[i].1 as usize;
                left[c] += 1.0;
                right[c] -= 1.0;
                let (a, b) = (self.pairs[i].0, self.pairs[i + 1].0);
                let n_left = i + 1;
                let n_right = n - n_left;
                if a == b || n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                // maximizing sum(l^2)/n_l + sum(r^2)/n_r minimizes weighted Gini
                let score = left.iter().map(|x| x * x).sum::<f64>() / n_left as f64
                    + right.iter().map(|x| x * x).sum::<f64>() / n_right as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Candidate {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
            if scored >= self.params.features_per_split {
                break;
            }
        }
        best
    }
}
