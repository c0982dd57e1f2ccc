//! Range images, height grids, image statistics and the synthetic
//! labeled-image generator.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// An 8-bit grayscale image whose intensities encode relative surface depth.
///
/// Pixels are stored row-major; `u8` storage makes the [0, 255] range an
/// invariant of the type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RangeImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// 256-bin intensity histogram.
    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        hist
    }

    pub fn stats(&self) -> ImageStats {
        ImageStats::from_histogram(&self.histogram())
    }
}

/// Population mean and variance of pixel intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub mean: f64,
    pub variance: f64,
}

impl ImageStats {
    /// Moments of a (possibly pooled) intensity histogram. Summation runs
    /// over bins, so the result does not depend on pixel order.
    pub fn from_histogram(hist: &[u64; 256]) -> Self {
        let n: u64 = hist.iter().sum();
        if n == 0 {
            return Self {
                mean: 0.0,
                variance: 0.0,
            };
        }
        let sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
        let mean = sum as f64 / n as f64;
        let mut ss = 0.0;
        for (v, &c) in hist.iter().enumerate() {
            if c > 0 {
                let d = v as f64 - mean;
                ss += c as f64 * d * d;
            }
        }
        Self {
            mean,
            variance: ss / n as f64,
        }
    }
}

/// Raveling severity, ordered from no raveling to high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityLabel {
    L0,
    L1,
    L2,
    L3,
}

impl SeverityLabel {
    pub const ALL: [SeverityLabel; 4] = [Self::L0, Self::L1, Self::L2, Self::L3];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::L0 => "L0",
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::L3 => "L3",
        }
    }
}

impl fmt::Display for SeverityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeverityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L0" => Ok(Self::L0),
            "L1" => Ok(Self::L1),
            "L2" => Ok(Self::L2),
            "L3" => Ok(Self::L3),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Provenance of a sample. `location_key` ties images of the same physical
/// pavement location together across survey years.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub year: i32,
    pub route: String,
    pub location_key: String,
    pub run_id: String,
}

impl SampleMeta {
    pub fn new(sample_id: impl Into<String>) -> Self {
        let sample_id = sample_id.into();
        Self {
            location_key: sample_id.clone(),
            sample_id,
            year: 0,
            route: String::new(),
            run_id: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: RangeImage,
    pub label: SeverityLabel,
    pub meta: SampleMeta,
}

/// Real-valued surface heights in millimeters, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl HeightGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "height grid must be at least 1x1, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} heights supplied for a {width}x{height} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite height at ({}, {})",
                i % width,
                i / width
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub const DEFAULT_HIGHPASS_SIGMA: f64 = 20.0;

/// Separable Gaussian blur with clamp-to-edge boundaries. The kernel is
/// truncated at three standard deviations (and at twice the longer grid
/// side) and renormalized.
pub fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    debug_assert_eq!(values.len(), width * height);
    let cap = 2.0 * width.max(height) as f64;
    let radius = libm::ceil(3.0 * sigma).min(cap) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| {
            let k = k as f64;
            libm::exp(-(k * k) / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= total;
    }

    let clamp = |i: isize, n: usize| -> usize { i.clamp(0, n as isize - 1) as usize };

    let mut horizontal = vec![0.0; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                acc += w * row[clamp(x as isize + j as isize - radius, width)];
            }
            horizontal[y * width + x] = acc;
        }
    }

    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for (j, w) in kernel.iter().enumerate() {
            let src = clamp(y as isize + j as isize - radius, height);
            let src_row = &horizontal[src * width..(src + 1) * width];
            let dst_row = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += w * s;
            }
        }
    }
    out
}

/// Rounds half-to-even and clamps into the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    libm::rint(v).clamp(0.0, 255.0) as u8
}

/// Rectifies a height grid (subtracting its Gaussian low-pass) and
/// compresses the residual affinely into [0, 255].
///
/// A residual with zero dynamic range maps to all-128.
pub fn from_height_grid(grid: &HeightGrid, highpass_sigma: f64) -> Result<RangeImage> {
    if !(highpass_sigma > 0.0 && highpass_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "high-pass sigma must be positive, got {highpass_sigma}"
        )));
    }
    let (w, h) = (grid.width, grid.height);
    let low = gaussian_blur(&grid.values, w, h, highpass_sigma);
    let residual: Vec<f64> = grid.values.iter().zip(&low).map(|(v, l)| v - l).collect();

    let (lo, hi) = residual
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let first = grid.values[0];
    let constant = grid.values.iter().all(|&v| v == first);
    if constant || hi - lo <= 0.0 {
        return RangeImage::filled(w, h, 128);
    }
    let scale = 255.0 / (hi - lo);
    let pixels = residual.iter().map(|&v| quantize((v - lo) * scale)).collect();
    RangeImage::new(w, h, pixels)
}

/// Parameters of the synthetic raveling generator.
///
/// Raveling is modeled as circular pits pressed into a fractal-noise base
/// texture; the pit density is what separates the severity classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub width: usize,
    pub height: usize,
    /// Peak deviation of the base texture around mid-gray, in intensity units.
    pub base_texture_amplitude: f64,
    /// Pits per 1000 px² for L0..L3.
    pub pit_density_per_level: [f64; 4],
    /// Intensity drop at a pit center, drawn uniformly from this interval.
    pub pit_depth_range: (f64, f64),
    /// Probability of a bright lane-marking stripe (label independent).
    pub marking_probability: f64,
    /// Share of pits centered in the wheel-path band along the right edge
    /// (the rest land uniformly), so crop position changes pit counts.
    pub wheel_path_share: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            base_texture_amplitude: 24.0,
            pit_density_per_level: [0.0, 0.5, 2.0, 6.0],
            pit_depth_range: (8.0, 30.0),
            marking_probability: 0.1,
            wheel_path_share: 0.7,
        }
    }
}

const BASE_LEVEL: f64 = 128.0;
const PIT_RADIUS: (f64, f64) = (2.0, 10.0);
const MARKING_BOOST: f64 = 40.0;
/// Horizontal extent of the wheel-path band, as fractions of the width.
const WHEEL_PATH: (f64, f64) = (0.7, 1.0);

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(format!(
                "synthetic image dimensions must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        let d = &self.pit_density_per_level;
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) || d.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidInput(
                "pit densities must be finite, non-negative and strictly increasing L0 to L3".into(),
            ));
        }
        let (lo, hi) = self.pit_depth_range;
        if !(0.0..=255.0).contains(&lo) || !(0.0..=255.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidInput(format!(
                "pit depth range [{lo}, {hi}] must lie within [0, 255]"
            )));
        }
        if !(0.0..=1.0).contains(&self.marking_probability) {
            return Err(Error::InvalidInput("marking probability must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.wheel_path_share) {
            return Err(Error::InvalidInput("wheel-path share must lie in [0, 1]".into()));
        }
        if !(self.base_texture_amplitude.is_finite() && self.base_texture_amplitude >= 0.0) {
            return Err(Error::InvalidInput("texture amplitude must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generates one labeled synthetic range image. Pure in `(params, label, seed)`.
///
/// The base texture and marking draw from a stream that ignores the label,
/// so two labels with the same seed differ only by their pits.
pub fn synthesize(params: &SynthesisParams, label: SeverityLabel, seed: u64) -> Result<LabeledSample> {
    params.validate()?;
    let (w, h) = (params.width, params.height);

    let mut texture_rng = seed::rng(seed::derive(seed, 1));
    let marking = if texture_rng.random::<f64>() < params.marking_probability {
        let stripe = (w / 12).max(2).min(w);
        let x0 = texture_rng.random_range(0..=w - stripe);
        Some((x0, x0 + stripe))
    } else {
        None
    };
    let mut field = fractal_noise(w, h, &mut texture_rng);
    for (i, v) in field.iter_mut().enumerate() {
        *v = BASE_LEVEL + params.base_texture_amplitude * *v;
        if let Some((x0, x1)) = marking {
            let x = i % w;
            if x >= x0 && x < x1 {
                *v += MARKING_BOOST;
            }
        }
    }

    let mut pit_rng = seed::rng(seed::derive(seed, 2));
    let density = params.pit_density_per_level[label.index()];
    let expected = density * (w * h) as f64 / 1000.0;
    let count = if expected > 0.0 {
        // Poisson::new only fails for non-positive or non-finite rates
        Poisson::new(expected)
            .map(|p| p.sample(&mut pit_rng) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    let mut depth = vec![0.0f64; w * h];
    let (dmin, dmax) = params.pit_depth_range;
    for _ in 0..count {
        let in_band = pit_rng.random::<f64>() < params.wheel_path_share;
        let (x0, x1) = if in_band { WHEEL_PATH } else { (0.0, 1.0) };
        let cx = (x0 + pit_rng.random::<f64>() * (x1 - x0)) * w as f64;
        let cy = pit_rng.random::<f64>() * h as f64;
        let r = PIT_RADIUS.0 + pit_rng.random::<f64>() * (PIT_RADIUS.1 - PIT_RADIUS.0);
        let d = dmin + pit_rng.random::<f64>() * (dmax - dmin);
        let x_lo = libm::floor(cx - r).max(0.0) as usize;
        let x_hi = (libm::ceil(cx + r) as usize).min(w - 1);
        let y_lo = libm::floor(cy - r).max(0.0) as usize;
        let y_hi = (libm::ceil(cy + r) as usize).min(h - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let t = (dx * dx + dy * dy) / (r * r);
                if t < 1.0 {
                    let cell = &mut depth[y * w + x];
                    *cell = cell.max(d * (1.0 - t));
                }
            }
        }
    }

    let pixels = field.iter().zip(&depth).map(|(v, d)| quantize(v - d)).collect();
    let image = RangeImage::new(w, h, pixels)?;
    let mut meta = SampleMeta::new(format!("synth-{label}-{seed:016x}"));
    meta.route = "synthetic".to_string();
    meta.run_id = "synth".to_string();
    Ok(LabeledSample { image, label, meta })
}

/// Value noise summed over octaves, normalized to [-1, 1].
fn fractal_noise(w: usize, h: usize, rng: &mut seed::Rng) -> Vec<f64> {
    const SPACINGS: [usize; 5] = [32, 16, 8, 4, 2];
    let mut out = vec![0.0; w * h];
    let mut amplitude = 1.0;
    let mut total = 0.0;
    for spacing in SPACINGS {
        let gw = w / spacing + 2;
        let gh = h / spacing + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for y in 0..h {
            let fy = y as f64 / spacing as f64;
            let iy = fy as usize;
            let ty = smoothstep(fy - iy as f64);
            for x in 0..w {
                let fx = x as f64 / spacing as f64;
                let ix = fx as usize;
                let tx = smoothstep(fx - ix as f64);
                let a = lattice[iy * gw + ix];
                let b = lattice[iy * gw + ix + 1];
                let c = lattice[(iy + 1) * gw + ix];
                let d = lattice[(iy + 1) * gw + ix + 1];
                let top = a + (b - a) * tx;
                let bottom = c + (d - c) * tx;
                out[y * w + x] += amplitude * (top + (bottom - top) * ty);
            }
        }
        total += amplitude;
        amplitude *= 0.5;
    }
    for v in &mut out {
        *v /= total;
    }
    out
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
