//! Crop, flip and relight operators, their fixed-order composition, and
//! label-preserving dataset expansion over a set of crop regions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::{LabeledSample, RangeImage};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionTag {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
    Custom,
}

impl RegionTag {
    /// Corners plus center, in the order used for expansion.
    pub const FIVE: [RegionTag; 5] = [
        Self::TopLeft,
        Self::TopRight,
        Self::BottomLeft,
        Self::BottomRight,
        Self::Center,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TopLeft => "tl",
            Self::TopRight => "tr",
            Self::BottomLeft => "bl",
            Self::BottomRight => "br",
            Self::Center => "ct",
            Self::Custom => "custom",
        }
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tl" => Self::TopLeft,
            "tr" => Self::TopRight,
            "bl" => Self::BottomLeft,
            "br" => Self::BottomRight,
            "ct" => Self::Center,
            "custom" => Self::Custom,
            other => return Err(Error::InvalidInput(format!("unknown region tag `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRegion {
    pub origin_x: usize,
    pub origin_y: usize,
    pub crop_width: usize,
    pub crop_height: usize,
    pub tag: RegionTag,
}

/// Crop size for a per-dimension fraction: each side is
/// `round(fraction * side)` (half-to-even), never below 1.
pub fn crop_dims(width: usize, height: usize, fraction: f64) -> (usize, usize) {
    let side = |n: usize| (libm::rint(fraction * n as f64) as usize).clamp(1, n);
    (side(width), side(height))
}

impl CropRegion {
    pub fn new(origin_x: usize, origin_y: usize, crop_width: usize, crop_height: usize) -> Self {
        Self {
            origin_x,
            origin_y,
            crop_width,
            crop_height,
            tag: RegionTag::Custom,
        }
    }

    /// Places a `crop_width x crop_height` window at a named position in a
    /// `width x height` image. `Custom` resolves to the top-left origin.
    pub fn at(tag: RegionTag, width: usize, height: usize, crop_width: usize, crop_height: usize) -> Self {
        let dx = width.saturating_sub(crop_width);
        let dy = height.saturating_sub(crop_height);
        let (origin_x, origin_y) = match tag {
            RegionTag::TopLeft | RegionTag::Custom => (0, 0),
            RegionTag::TopRight => (dx, 0),
            RegionTag::BottomLeft => (0, dy),
            RegionTag::BottomRight => (dx, dy),
            RegionTag::Center => (dx / 2, dy / 2),
        };
        Self {
            origin_x,
            origin_y,
            crop_width,
            crop_height,
            tag,
        }
    }

    pub fn fraction(tag: RegionTag, width: usize, height: usize, fraction: f64) -> Self {
        let (cw, ch) = crop_dims(width, height, fraction);
        Self::at(tag, width, height, cw, ch)
    }

    fn check(&self, image: &RangeImage) -> Result<()> {
        let fits = self.crop_width >= 1
            && self.crop_height >= 1
            && self.origin_x + self.crop_width <= image.width()
            && self.origin_y + self.crop_height <= image.height();
        if fits {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                x: self.origin_x,
                y: self.origin_y,
                width: self.crop_width,
                height: self.crop_height,
                image_width: image.width(),
                image_height: image.height(),
                sample: None,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlipAxes {
    /// Mirror rows (top becomes bottom).
    pub vertical: bool,
    /// Mirror columns (left becomes right).
    pub horizontal: bool,
}

impl FlipAxes {
    pub const VERTICAL: Self = Self {
        vertical: true,
        horizontal: false,
    };
    pub const HORIZONTAL: Self = Self {
        vertical: false,
        horizontal: true,
    };
    pub const BOTH: Self = Self {
        vertical: true,
        horizontal: true,
    };

    pub fn is_identity(self) -> bool {
        !self.vertical && !self.horizontal
    }
}

/// Additive intensity shift, bounded so that labels stay valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelightDelta(i16);

impl RelightDelta {
    pub const MAX_ABS: i32 = 32;

    pub fn new(delta: i32) -> Result<Self> {
        if delta.abs() > Self::MAX_ABS {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Self(delta as i16))
    }

    pub fn get(self) -> i32 {
        i32::from(self.0)
    }
}

/// Which operators to apply. An absent component is skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub crop: Option<CropRegion>,
    pub flip: Option<FlipAxes>,
    pub relight: Option<RelightDelta>,
}

impl AugmentationSpec {
    /// File-name suffix `__<region>[__f<axes>][__r<delta>]`.
    pub fn suffix(&self) -> String {
        let mut s = String::new();
        if let Some(c) = &self.crop {
            s.push_str("__");
            s.push_str(c.tag.as_str());
        }
        if let Some(f) = self.flip.filter(|f| !f.is_identity()) {
            s.push_str("__f");
            if f.vertical {
                s.push('v');
            }
            if f.horizontal {
                s.push('h');
            }
        }
        if let Some(r) = self.relight {
            s.push_str(&format!("__r{}", r.get()));
        }
        s
    }
}

pub fn crop(image: &RangeImage, region: &CropRegion) -> Result<RangeImage> {
    region.check(image)?;
    let mut pixels = Vec::with_capacity(region.crop_width * region.crop_height);
    for y in region.origin_y..region.origin_y + region.crop_height {
        let row = image.row(y);
        pixels.extend_from_slice(&row[region.origin_x..region.origin_x + region.crop_width]);
    }
    RangeImage::new(region.crop_width, region.crop_height, pixels)
}

pub fn flip(image: &RangeImage, axes: FlipAxes) -> RangeImage {
    let (w, h) = (image.width(), image.height());
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let src = image.row(if axes.vertical { h - 1 - y } else { y });
        if axes.horizontal {
            pixels.extend(src.iter().rev());
        } else {
            pixels.extend_from_slice(src);
        }
    }
    RangeImage::new(w, h, pixels).expect("flip preserves dimensions")
}

/// Adds `delta` to every pixel, clamping to [0, 255].
pub fn relight(image: &RangeImage, delta: RelightDelta) -> RangeImage {
    let d = delta.get();
    let pixels = image
        .pixels()
        .iter()
        .map(|&p| (i32::from(p) + d).clamp(0, 255) as u8)
        .collect();
    RangeImage::new(image.width(), image.height(), pixels).expect("relight preserves dimensions")
}

/// Applies relight, then crop, then flip; absent stages are skipped.
pub fn compound(image: &RangeImage, spec: &AugmentationSpec) -> Result<RangeImage> {
    let mut out = match spec.relight {
        Some(d) => relight(image, d),
        None => image.clone(),
    };
    if let Some(region) = &spec.crop {
        out = crop(&out, region)?;
    }
    if let Some(axes) = spec.flip {
        out = flip(&out, axes);
    }
    Ok(out)
}

/// How a dataset is multiplied into shifted, optionally flipped and
/// relit crops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPolicy {
    /// Per-dimension crop fraction.
    pub crop_fraction: f64,
    pub regions: Vec<RegionTag>,
    pub flip_probability: f64,
    pub relight_enabled: bool,
    pub relight_magnitude: i32,
    pub relight_probability: f64,
    pub seed: u64,
}

impl Default for ExpansionPolicy {
    fn default() -> Self {
        Self {
            crop_fraction: 0.85,
            regions: RegionTag::FIVE.to_vec(),
            flip_probability: 0.5,
            relight_enabled: false,
            relight_magnitude: 5,
            relight_probability: 0.5,
            seed: 0,
        }
    }
}

impl ExpansionPolicy {
    /// Five-region cropping with no flips or relighting.
    pub fn crop_only(seed: u64) -> Self {
        Self {
            flip_probability: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "crop fraction {} must lie in (0, 1]",
                self.crop_fraction
            )));
        }
        if self.regions.is_empty() {
            return Err(Error::InvalidInput("expansion needs at least one region".into()));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if self.regions[..i].contains(r) {
                return Err(Error::InvalidInput(format!("region `{r}` listed twice")));
            }
        }
        for p in [self.flip_probability, self.relight_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.relight_enabled {
            RelightDelta::new(self.relight_magnitude)?;
        }
        Ok(())
    }

    /// Draws the augmentation for one (sample, region) pair.
    ///
    /// Four uniforms are always consumed in a fixed order (flip?, axis,
    /// relight?, sign), so toggling one operator never reshuffles the
    /// decisions of the other.
    pub fn draw(&self, sample_id: &str, region: CropRegion) -> AugmentationSpec {
        let key = seed::derive_str(seed::derive_str(self.seed, sample_id), region.tag.as_str());
        let mut rng = seed::rng(key);
        let flip_u: f64 = rng.random();
        let axis_u: f64 = rng.random();
        let relight_u: f64 = rng.random();
        let sign_u: f64 = rng.random();

        let flip = (flip_u < self.flip_probability).then_some(if axis_u < 0.5 {
            FlipAxes::VERTICAL
        } else {
            FlipAxes::HORIZONTAL
        });
        let relight = (self.relight_enabled && relight_u < self.relight_probability).then(|| {
            let m = self.relight_magnitude;
            RelightDelta::new(if sign_u < 0.5 { m } else { -m }).expect("validated magnitude")
        });
        AugmentationSpec {
            crop: Some(region),
            flip,
            relight,
        }
    }
}

/// One output of an expansion: which source it came from and what to do to it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedAugmentation {
    pub source: usize,
    pub sample_id: String,
    pub spec: AugmentationSpec,
}

impl PlannedAugmentation {
    pub fn region(&self) -> RegionTag {
        self.spec.crop.map_or(RegionTag::Custom, |c| c.tag)
    }
}

/// Plans an expansion without touching pixels: one entry per (source,
/// region), sources in input order and regions in policy order.
///
/// `dims` gives each source's `(sample_id, width, height)`.
pub fn plan_expansion<'a>(
    dims: impl IntoIterator<Item = (&'a str, usize, usize)>,
    policy: &ExpansionPolicy,
) -> Result<Vec<PlannedAugmentation>> {
    policy.validate()?;
    let mut plan = Vec::new();
    for (source, (id, w, h)) in dims.into_iter().enumerate() {
        let (cw, ch) = crop_dims(w, h, policy.crop_fraction);
        for &tag in &policy.regions {
            let region = CropRegion::at(tag, w, h, cw, ch);
            plan.push(PlannedAugmentation {
                source,
                sample_id: format!("{id}__{tag}"),
                spec: policy.draw(id, region),
            });
        }
    }
    Ok(plan)
}

/// Applies one planned augmentation. The output inherits the source's label
/// and metadata, with the sample id replaced by the planned one.
pub fn apply_planned(source: &LabeledSample, planned: &PlannedAugmentation) -> Result<LabeledSample> {
    let image = compound(&source.image, &planned.spec).map_err(|e| match e {
        Error::OutOfBounds {
            x,
            y,
            width,
            height,
            image_width,
            image_height,
            ..
        } => Error::OutOfBounds {
            x,
            y,
            width,
            height,
            image_width,
            image_height,
            sample: Some(source.meta.sample_id.clone()),
        },
        other => other,
    })?;
    let mut meta = source.meta.clone();
    meta.sample_id = planned.sample_id.clone();
    Ok(LabeledSample {
        image,
        label: source.label,
        meta,
    })
}

/// Expands `samples` into `|regions| x N` labeled crops.
pub fn expand_dataset(samples: &[LabeledSample], policy: &ExpansionPolicy) -> Result<Vec<LabeledSample>> {
    let plan = plan_expansion(
        samples
            .iter()
            .map(|s| (s.meta.sample_id.as_str(), s.image.width(), s.image.height())),
        policy,
    )?;
    plan.iter().map(|p| apply_planned(&samples[p.source], p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{SampleMeta, SeverityLabel};
    use alloc::vec;

    fn img(w: usize, h: usize, px: &[u8]) -> RangeImage {
        RangeImage::new(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn flip_index_formulas() {
        let i = img(2, 2, &[1, 2, 3, 4]);
        assert_eq!(flip(&i, FlipAxes::HORIZONTAL).pixels(), &[2, 1, 4, 3]);
        assert_eq!(flip(&i, FlipAxes::VERTICAL).pixels(), &[3, 4, 1, 2]);
        assert_eq!(flip(&i, FlipAxes::BOTH).pixels(), &[4, 3, 2, 1]);
    }

    #[test]
    fn relight_clamps() {
        let i = img(3, 1, &[253, 100, 2]);
        assert_eq!(relight(&i, RelightDelta::new(5).unwrap()).pixels(), &[255, 105, 7]);
        assert_eq!(relight(&i, RelightDelta::new(-5).unwrap()).pixels(), &[248, 95, 0]);
        assert_eq!(relight(&i, RelightDelta::new(0).unwrap()), i);
    }

    #[test]
    fn relight_guard() {
        assert!(RelightDelta::new(32).is_ok());
        assert!(RelightDelta::new(-32).is_ok());
        assert_eq!(RelightDelta::new(33), Err(Error::InvalidDelta(33)));
    }

    #[test]
    fn survey_scale_crop_dims() {
        assert_eq!(crop_dims(1019, 1524, 0.85), (866, 1295));
        let r = CropRegion::fraction(RegionTag::TopLeft, 1019, 1524, 0.85);
        assert_eq!((r.origin_x, r.origin_y, r.crop_width, r.crop_height), (0, 0, 866, 1295));
    }

    #[test]
    fn region_origins() {
        let at = |t| {
            let r = CropRegion::at(t, 10, 8, 7, 5);
            (r.origin_x, r.origin_y)
        };
        assert_eq!(at(RegionTag::TopLeft), (0, 0));
        assert_eq!(at(RegionTag::TopRight), (3, 0));
        assert_eq!(at(RegionTag::BottomLeft), (0, 3));
        assert_eq!(at(RegionTag::BottomRight), (3, 3));
        assert_eq!(at(RegionTag::Center), (1, 1));
    }

    #[test]
    fn center_crop_of_4x4() {
        let px: Vec<u8> = (0..16).collect();
        let i = img(4, 4, &px);
        let r = CropRegion::fraction(RegionTag::Center, 4, 4, 0.5);
        let c = crop(&i, &r).unwrap();
        assert_eq!((c.width(), c.height()), (2, 2));
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(c.get(x, y), i.get(x + 1, y + 1));
            }
        }
    }

    #[test]
    fn out_of_bounds_crop_reports_coordinates() {
        let i = img(4, 4, &[0; 16]);
        let err = crop(&i, &CropRegion::new(2, 1, 3, 2)).unwrap_err();
        assert!(matches!(
            err,
            Error::OutOfBounds {
                x: 2,
                y: 1,
                width: 3,
                height: 2,
                ..
            }
        ));
    }

    #[test]
    fn compound_constant_image() {
        let i = RangeImage::filled(20, 10, 100).unwrap();
        let spec = AugmentationSpec {
            crop: Some(CropRegion::new(3, 2, 11, 6)),
            flip: Some(FlipAxes::BOTH),
            relight: Some(RelightDelta::new(5).unwrap()),
        };
        let out = compound(&i, &spec).unwrap();
        assert_eq!((out.width(), out.height()), (11, 6));
        assert!(out.pixels().iter().all(|&p| p == 105));
        assert_eq!(compound(&i, &AugmentationSpec::default()).unwrap(), i);
    }

    #[test]
    fn suffix_format() {
        let spec = AugmentationSpec {
            crop: Some(CropRegion::at(RegionTag::BottomRight, 10, 10, 8, 8)),
            flip: Some(FlipAxes::VERTICAL),
            relight: Some(RelightDelta::new(-5).unwrap()),
        };
        assert_eq!(spec.suffix(), "__br__fv__r-5");
    }

    #[test]
    fn policy_validation() {
        let mut p = ExpansionPolicy {
            regions: vec![RegionTag::TopLeft, RegionTag::TopLeft],
            ..ExpansionPolicy::default()
        };
        assert!(p.validate().is_err());
        p.regions.clear();
        assert!(p.validate().is_err());
        let p = ExpansionPolicy {
            crop_fraction: 0.0,
            ..ExpansionPolicy::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn expansion_errors_name_the_sample() {
        let s = LabeledSample {
            image: RangeImage::filled(4, 4, 0).unwrap(),
            label: SeverityLabel::L1,
            meta: SampleMeta::new("tiny"),
        };
        let plan = PlannedAugmentation {
            source: 0,
            sample_id: "tiny__custom".into(),
            spec: AugmentationSpec {
                crop: Some(CropRegion::new(0, 0, 5, 5)),
                ..Default::default()
            },
        };
        let err = apply_planned(&s, &plan).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { sample: Some(ref id), .. } if id == "tiny"));
    }

    #[test]
    fn expansion_inherits_labels_and_suffixes_ids() {
        let s = LabeledSample {
            image: RangeImage::filled(20, 20, 7).unwrap(),
            label: SeverityLabel::L2,
            meta: SampleMeta::new("a"),
        };
        let out = expand_dataset(&[s], &ExpansionPolicy::crop_only(1)).unwrap();
        assert_eq!(out.len(), 5);
        let ids: Vec<_> = out.iter().map(|o| o.meta.sample_id.as_str()).collect();
        assert_eq!(ids, ["a__tl", "a__tr", "a__bl", "a__br", "a__ct"]);
        assert!(out
            .iter()
            .all(|o| o.label == SeverityLabel::L2 && o.image.width() == 17));
    }
}
