//! Optional TOML run configuration. Every key mirrors a command-line flag;
//! a flag given on the command line wins over the file, and the file wins
//! over built-in defaults.
//!
//! ```toml
//! seed = 42
//! jobs = 4
//! out = "results"
//! corpus = "data/manifest.jsonl"
//!
//! [synth]
//! count = 500
//!
//! [forest]
//! trees = 20
//!
//! [bench]
//! test = "data/test.jsonl"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    /// One manifest, or several (for `consistency`).
    pub corpus: Option<Corpus>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub consistency: ConsistencySection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Corpus {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl Corpus {
    pub fn into_vec(self) -> Vec<PathBuf> {
        match self {
            Self::One(p) => vec![p],
            Self::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub count: Option<usize>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub format: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub crop_fraction: Option<f64>,
    pub flip_probability: Option<f64>,
    pub relight: Option<bool>,
    pub relight_magnitude: Option<i32>,
    pub relight_probability: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSection {
    pub trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub features_per_split: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    pub truth: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencySection {
    pub pred: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub results: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::parse(origin, line, e.message())
        })?;
        // relative paths in the file are relative to the file
        let base = origin.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.out);
        fix(&mut cfg.bench.test);
        fix(&mut cfg.score.truth);
        fix(&mut cfg.score.pred);
        fix(&mut cfg.score.model);
        fix(&mut cfg.consistency.pred);
        fix(&mut cfg.consistency.model);
        fix(&mut cfg.report.results);
        cfg.corpus = cfg
            .corpus
            .map(|c| Corpus::Many(c.into_vec().into_iter().map(|p| base.join(p)).collect()));
        Ok(cfg)
    }
}

/// Flag, else config value, else default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Flag, else config value, else a configuration error naming the flag.
pub fn require<T>(flag: Option<T>, config: Option<T>, name: &str) -> Result<T> {
    flag.or(config)
        .ok_or_else(|| Error::Config(format!("missing required option --{name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_resolves_paths() {
        let text = "seed = 9\ncorpus = \"m.jsonl\"\nout = \"res\"\n[forest]\ntrees = 5\n[bench]\ntest = \"t.jsonl\"\n";
        let cfg = FileConfig::parse(text, Path::new("cfg/run.toml")).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.forest.trees, Some(5));
        assert_eq!(cfg.out, Some(PathBuf::from("cfg/res")));
        assert_eq!(cfg.bench.test, Some(PathBuf::from("cfg/t.jsonl")));
        assert_eq!(cfg.corpus.unwrap().into_vec(), vec![PathBuf::from("cfg/m.jsonl")]);
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let err = FileConfig::parse("seed = 1\n\nsede = 2\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
        assert!(require::<u8>(None, None, "out")
            .unwrap_err()
            .to_string()
            .contains("--out"));
    }
}
