//! The 606-dimensional macrotexture descriptor and z-score normalization.
//!
//! Layout:
//!
//! | indices   | block                                                     |
//! |-----------|-----------------------------------------------------------|
//! | 0..256    | normalized intensity histogram                            |
//! | 256..512  | normalized gradient-magnitude histogram (clamped to 255)  |
//! | 512..536  | co-occurrence statistics, 4 offsets x 6 statistics        |
//! | 536..600  | mean texture depth of an 8x8 block grid                   |
//! | 600..606  | mean, std, skewness, excess kurtosis, mean-min, max-mean  |
//!
//! Every block except the intensity histogram and the global mean is
//! computed from intensity differences only, so an unclamped relight leaves
//! it bit-for-bit unchanged.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::image::RangeImage;
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 606;
pub const MIN_SIDE: usize = 16;

pub const INTENSITY_HIST: Range<usize> = 0..256;
pub const GRADIENT_HIST: Range<usize> = 256..512;
pub const COOCCURRENCE: Range<usize> = 512..536;
pub const BLOCK_DEPTH: Range<usize> = 536..600;
pub const GLOBAL: Range<usize> = 600..606;

pub const GLOBAL_MEAN: usize = 600;
pub const GLOBAL_STD: usize = 601;
pub const GLOBAL_SKEW: usize = 602;
pub const GLOBAL_KURTOSIS: usize = 603;
pub const GLOBAL_BELOW_MEAN: usize = 604;
pub const GLOBAL_ABOVE_MEAN: usize = 605;

pub const GLCM_LEVELS: usize = 16;
/// (dx, dy) pixel offsets.
pub const GLCM_OFFSETS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];
/// Per offset, in this order.
pub const GLCM_STATS: [&str; 6] = [
    "contrast",
    "correlation",
    "energy",
    "homogeneity",
    "entropy",
    "dissimilarity",
];
pub const BLOCK_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::InvalidInput(format!(
                "feature vector has {} values, expected {FEATURE_DIM}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("feature {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl core::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn extract(image: &RangeImage) -> Result<FeatureVector> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::InvalidInput(format!(
            "feature extraction needs at least {MIN_SIDE}x{MIN_SIDE} pixels, got {w}x{h}"
        )));
    }
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let hist = image.histogram();
    let n = (w * h) as f64;
    out.extend(hist.iter().map(|&c| c as f64 / n));
    out.extend(gradient_histogram(image));
    out.extend(cooccurrence_features(image, &hist));
    out.extend(block_texture_depth(image));
    out.extend(global_moments(&hist));
    debug_assert_eq!(out.len(), FEATURE_DIM);
    FeatureVector::new(out)
}

fn gradient_histogram(image: &RangeImage) -> [f64; 256] {
    let (w, h) = (image.width(), image.height());
    let px = |x: usize, y: usize| i32::from(image.get(x, y));
    let mut hist = [0u64; 256];
    for y in 0..h {
        let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
            // twice the central differences; halved in the magnitude
            let gx = px(right, y) - px(left, y);
            let gy = px(x, down) - px(x, up);
            let mag = libm::sqrt(f64::from(gx * gx + gy * gy)) / 2.0;
            hist[(mag as usize).min(255)] += 1;
        }
    }
    let n = (w * h) as f64;
    hist.map(|c| c as f64 / n)
}

/// Gray level of each pixel on a 16-level scale spanning the image's own
/// intensity range.
fn quantize_levels(image: &RangeImage, hist: &[u64; 256]) -> Vec<u8> {
    let lo = hist.iter().position(|&c| c > 0).unwrap_or(0);
    let hi = hist.iter().rposition(|&c| c > 0).unwrap_or(0);
    let span = hi - lo + 1;
    image
        .pixels()
        .iter()
        .map(|&p| ((p as usize - lo) * GLCM_LEVELS / span) as u8)
        .collect()
}

fn cooccurrence_features(image: &RangeImage, hist: &[u64; 256]) -> Vec<f64> {
    let (w, h) = (image.width() as isize, image.height() as isize);
    let levels = quantize_levels(image, hist);
    let mut out = Vec::with_capacity(GLCM_OFFSETS.len() * GLCM_STATS.len());
    for (dx, dy) in GLCM_OFFSETS {
        let mut counts = [[0u64; GLCM_LEVELS]; GLCM_LEVELS];
        for y in 0..h {
            let y2 = y + dy;
            if y2 < 0 || y2 >= h {
                continue;
            }
            for x in 0..w {
                let x2 = x + dx;
                if x2 < 0 || x2 >= w {
                    continue;
                }
                let a = levels[(y * w + x) as usize] as usize;
                let b = levels[(y2 * w + x2) as usize] as usize;
                counts[a][b] += 1;
                counts[b][a] += 1;
            }
        }
        out.extend(glcm_statistics(&counts));
    }
    out
}

/// Contrast, correlation, energy, homogeneity, entropy and dissimilarity of
/// a co-occurrence count matrix. Correlation of a zero-variance
/// distribution is 0.
pub fn glcm_statistics(counts: &[[u64; GLCM_LEVELS]; GLCM_LEVELS]) -> [f64; 6] {
    let total: u64 = counts.iter().flatten().sum();
    if total == 0 {
        return [0.0; 6];
    }
    let t = total as f64;
    let p = |i: usize, j: usize| counts[i][j] as f64 / t;

    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..GLCM_LEVELS {
        for j in 0..GLCM_LEVELS {
            let v = p(i, j);
            mu_i += i as f64 * v;
            mu_j += j as f64 * v;
        }
    }
    let (mut contrast, mut energy, mut homogeneity, mut entropy, mut dissimilarity) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..GLCM_LEVELS {
        for j in 0..GLCM_LEVELS {
            let v = p(i, j);
            if v == 0.0 {
                continue;
            }
            let d = i as f64 - j as f64;
            contrast += d * d * v;
            dissimilarity += libm::fabs(d) * v;
            energy += v * v;
            homogeneity += v / (1.0 + d * d);
            entropy -= v * libm::log(v);
            let (di, dj) = (i as f64 - mu_i, j as f64 - mu_j);
            var_i += di * di * v;
            var_j += dj * dj * v;
            cov += di * dj * v;
        }
    }
    let correlation = if var_i > 0.0 && var_j > 0.0 {
        cov / libm::sqrt(var_i * var_j)
    } else {
        0.0
    };
    [contrast, correlation, energy, homogeneity, entropy, dissimilarity]
}

/// Bounds of block `k` of `BLOCK_GRID` along a side of length `n`; the last
/// block absorbs the remainder.
fn block_span(k: usize, n: usize) -> Range<usize> {
    let size = n / BLOCK_GRID;
    let start = k * size;
    let end = if k + 1 == BLOCK_GRID { n } else { start + size };
    start..end
}

/// Mean absolute deviation from the block mean, per block, row-major.
fn block_texture_depth(image: &RangeImage) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::with_capacity(BLOCK_GRID * BLOCK_GRID);
    for by in 0..BLOCK_GRID {
        let rows = block_span(by, h);
        for bx in 0..BLOCK_GRID {
            let cols = block_span(bx, w);
            let n = (rows.len() * cols.len()) as i64;
            let mut sum = 0i64;
            for y in rows.clone() {
                sum += image.row(y)[cols.clone()].iter().map(|&p| i64::from(p)).sum::<i64>();
            }
            // sum |n*v - S| / n^2 is exact in integers and shift invariant
            let mut dev = 0i64;
            for y in rows.clone() {
                dev += image.row(y)[cols.clone()]
                    .iter()
                    .map(|&p| (n * i64::from(p) - sum).abs())
                    .sum::<i64>();
            }
            out.push(dev as f64 / (n * n) as f64);
        }
    }
    out
}

fn global_moments(hist: &[u64; 256]) -> [f64; 6] {
    let n: u64 = hist.iter().sum();
    let sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    let nf = n as f64;
    let mean = sum as f64 / nf;
    let lo = hist.iter().position(|&c| c > 0).unwrap_or(0) as u64;
    let hi = hist.iter().rposition(|&c| c > 0).unwrap_or(0) as u64;

    // central moments from the exact integer deviations n*v - sum
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for (v, &c) in hist.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let d = (n as i128 * v as i128 - sum as i128) as f64 / nf;
        let cf = c as f64;
        m2 += cf * d * d;
        m3 += cf * d * d * d;
        m4 += cf * d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (std, skew, kurt) = if m2 > 0.0 {
        let s = libm::sqrt(m2);
        (s, m3 / (m2 * s), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0, 0.0)
    };
    [
        mean,
        std,
        skew,
        kurt,
        (sum - n * lo) as f64 / nf,
        (n * hi - sum) as f64 / nf,
    ]
}

/// Per-dimension z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for dimensions with zero variance.
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; FEATURE_DIM],
            scale: vec![1.0; FEATURE_DIM],
        }
    }

    pub fn fit(vectors: &[FeatureVector]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidInput("cannot fit a normalizer to zero vectors".into()));
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v.as_slice()) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; FEATURE_DIM];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(v.as_slice()).zip(&mean) {
                let d = x - m;
                *s += d * d;
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = libm::sqrt(s / n);
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != FEATURE_DIM || self.scale.len() != FEATURE_DIM {
            return Err(Error::InvalidInput(format!(
                "normalizer must have {FEATURE_DIM} dimensions"
            )));
        }
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput(
                "normalizer scales must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, v: &FeatureVector) -> FeatureVector {
        FeatureVector(
            v.as_slice()
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((x, m), s)| (x - m) / s)
                .collect(),
        )
    }
}
