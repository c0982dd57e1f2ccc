use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("crop region ({x}, {y}) {width}x{height} exceeds {image_width}x{image_height} image{}", sample_suffix(.sample))]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        image_width: usize,
        image_height: usize,
        sample: Option<String>,
    },

    #[error("relight delta {0} exceeds the +/-{max} guard", max = crate::augment::RelightDelta::MAX_ABS)]
    InvalidDelta(i32),

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("missing predictions for {} sample(s): {}", .0.len(), .0.join(", "))]
    Coverage(alloc::vec::Vec<String>),

    #[error("sample `{sample_id}` appears twice for location `{location_key}` in {year}")]
    Ambiguous {
        location_key: String,
        year: i32,
        sample_id: String,
    },

    #[error("unknown severity label `{0}`")]
    UnknownLabel(String),
}

fn sample_suffix(sample: &Option<String>) -> String {
    match sample {
        Some(id) => alloc::format!(" (sample `{id}`)"),
        None => String::new(),
    }
}
