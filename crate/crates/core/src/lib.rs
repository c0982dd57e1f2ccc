//! Algorithmic core for benchmarking raveling-severity classifiers on
//! pavement range images.
//!
//! Everything here is pure computation over in-memory data and builds
//! without `std`. File formats, manifests, parallel execution and the
//! command-line front end live in the companion `ravel` crate.

#![no_std]

extern crate alloc;

pub mod augment;
pub mod bench;
pub mod consistency;
mod error;
pub mod features;
pub mod forest;
pub mod image;
pub mod seed;

pub use error::{Error, Result};
pub use features::{FeatureVector, Normalizer, FEATURE_DIM};
pub use forest::{ForestModel, ForestParams};
pub use image::{HeightGrid, ImageStats, LabeledSample, RangeImage, SampleMeta, SeverityLabel};
