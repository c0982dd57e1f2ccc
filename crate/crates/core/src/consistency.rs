//! Year-over-year consistency of severity predictions at fixed locations.
//!
//! Without maintenance a location's raveling can only stay the same or get
//! worse, so a predicted severity that drops from one survey year to the
//! next is a model error even when no ground truth exists.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::{quantize, ImageStats, LabeledSample, RangeImage, SeverityLabel};
use crate::seed;
use crate::{Error, Result};

/// One observation of a location in one year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRecord {
    pub year: i32,
    pub location_key: String,
    pub sample_id: String,
    pub label: SeverityLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub year: i32,
    pub label: SeverityLabel,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearSeries {
    pub location_key: String,
    /// Strictly increasing years.
    pub entries: Vec<SeriesEntry>,
}

/// Groups records by location. Locations seen in fewer than two years are
/// dropped; output is sorted by location key, entries by year.
pub fn align_series(records: impl IntoIterator<Item = YearRecord>) -> Result<Vec<YearSeries>> {
    let mut by_key: BTreeMap<String, BTreeMap<i32, SeriesEntry>> = BTreeMap::new();
    for r in records {
        let years = by_key.entry(r.location_key.clone()).or_default();
        if years.contains_key(&r.year) {
            return Err(Error::Ambiguous {
                location_key: r.location_key,
                year: r.year,
                sample_id: r.sample_id,
            });
        }
        years.insert(
            r.year,
            SeriesEntry {
                year: r.year,
                label: r.label,
                sample_id: r.sample_id,
            },
        );
    }
    Ok(by_key
        .into_iter()
        .filter(|(_, years)| years.len() >= 2)
        .map(|(location_key, years)| YearSeries {
            location_key,
            entries: years.into_values().collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub location_key: String,
    pub year_from: i32,
    pub year_to: i32,
    pub label_from: SeverityLabel,
    pub label_to: SeverityLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub total_pairs: usize,
    pub violations: Vec<Violation>,
    pub violation_rate: f64,
}

/// Flags every consecutive pair whose later severity is lower.
pub fn violations(series: &[YearSeries]) -> ViolationReport {
    let mut total_pairs = 0;
    let mut found = Vec::new();
    for s in series {
        for pair in s.entries.windows(2) {
            total_pairs += 1;
            if pair[1].label < pair[0].label {
                found.push(Violation {
                    location_key: s.location_key.clone(),
                    year_from: pair[0].year,
                    year_to: pair[1].year,
                    label_from: pair[0].label,
                    label_to: pair[1].label,
                });
            }
        }
    }
    let violation_rate = if total_pairs == 0 {
        0.0
    } else {
        found.len() as f64 / total_pairs as f64
    };
    ViolationReport {
        total_pairs,
        violations: found,
        violation_rate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearDrift {
    pub year: i32,
    pub sample_count: usize,
    /// Pooled over every pixel of the year's images.
    pub mean: f64,
    pub variance: f64,
    /// Counts of L0..L3.
    pub severity_histogram: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub per_year: Vec<YearDrift>,
}

/// Accumulates pooled intensity histograms per year, one image at a time.
#[derive(Debug, Clone, Default)]
pub struct DriftAccumulator {
    years: BTreeMap<i32, ([u64; 256], [usize; 4])>,
}

impl DriftAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, year: i32, image: &RangeImage, label: SeverityLabel) {
        let (hist, labels) = self.years.entry(year).or_insert(([0; 256], [0; 4]));
        for (h, c) in hist.iter_mut().zip(image.histogram()) {
            *h += c;
        }
        labels[label.index()] += 1;
    }

    pub fn finish(self) -> DriftReport {
        DriftReport {
            per_year: self
                .years
                .into_iter()
                .map(|(year, (hist, severity_histogram))| {
                    let ImageStats { mean, variance } = ImageStats::from_histogram(&hist);
                    YearDrift {
                        year,
                        sample_count: severity_histogram.iter().sum(),
                        mean,
                        variance,
                        severity_histogram,
                    }
                })
                .collect(),
        }
    }
}

/// Per-year pooled pixel moments and severity counts for in-memory samples
/// (year taken from each sample's metadata).
pub fn drift_report<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>) -> DriftReport {
    let mut acc = DriftAccumulator::new();
    for s in samples {
        acc.add(s.meta.year, &s.image, s.label);
    }
    acc.finish()
}

/// Random perturbation of an image's mean and variance, in units of the
/// image's own min-max normalized intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRelightPolicy {
    pub mean_jitter: f64,
    pub variance_jitter: f64,
    pub seed: u64,
}

impl Default for MomentRelightPolicy {
    fn default() -> Self {
        Self {
            mean_jitter: 0.03,
            variance_jitter: 0.01,
            seed: 0,
        }
    }
}

/// Bounds on the variance ratio `(var + u) / var` before the square root.
pub const VARIANCE_RATIO_BOUNDS: (f64, f64) = (0.5, 1.5);

impl MomentRelightPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mean", self.mean_jitter), ("variance", self.variance_jitter)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} jitter must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Shifts the mean by `t ~ U(-mean_jitter, mean_jitter)` and rescales the
/// spread about the mean so the variance moves by `u ~ U(-variance_jitter,
/// variance_jitter)` (ratio clamped to [`VARIANCE_RATIO_BOUNDS`]). A
/// zero-variance image only shifts. Draws are keyed by `(seed, sample_id)`.
pub fn moment_relight(image: &RangeImage, policy: &MomentRelightPolicy, sample_id: &str) -> Result<RangeImage> {
    policy.validate()?;
    let mut rng = seed::rng(seed::derive_str(policy.seed, sample_id));
    let t = (rng.random::<f64>() * 2.0 - 1.0) * policy.mean_jitter;
    let u = (rng.random::<f64>() * 2.0 - 1.0) * policy.variance_jitter;

    let (lo, hi) = image
        .pixels()
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    // min-max normalization; a flat image falls back to the full 8-bit span
    let (offset, span) = if hi > lo {
        (f64::from(lo), f64::from(hi - lo))
    } else {
        (0.0, 255.0)
    };
    let stats = image.stats();
    let m = (stats.mean - offset) / span;
    let var = stats.variance / (span * span);
    let s = if var > 0.0 {
        libm::sqrt(((var + u) / var).clamp(VARIANCE_RATIO_BOUNDS.0, VARIANCE_RATIO_BOUNDS.1))
    } else {
        1.0
    };
    let pixels = image
        .pixels()
        .iter()
        .map(|&p| {
            let v = (f64::from(p) - offset) / span;
            quantize(((v - m) * s + m + t) * span + offset)
        })
        .collect();
    RangeImage::new(image.width(), image.height(), pixels)
}

/// Appends `copies` moment-relit versions of every sample (ids suffixed
/// `__mr<k>`) after the originals.
pub fn augment_with_moment_relight(
    samples: &[LabeledSample],
    policy: &MomentRelightPolicy,
    copies: usize,
) -> Result<Vec<LabeledSample>> {
    let mut out = samples.to_vec();
    for k in 0..copies {
        for s in samples {
            let id = format!("{}__mr{k}", s.meta.sample_id);
            let image = moment_relight(&s.image, policy, &id)?;
            let mut meta = s.meta.clone();
            meta.sample_id = id;
            out.push(LabeledSample {
                image,
                label: s.label,
                meta,
            });
        }
    }
    Ok(out)
}
