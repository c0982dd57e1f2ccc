//! JSON Lines sample manifests.
//!
//! Each line is one object with `sample_id`, `path` and `label` (`L0`..`L3`),
//! plus optional `year`, `route`, `location_key` and `run_id`. Relative
//! image paths resolve against the manifest's directory. Images are not
//! read until [`ManifestEntry::load`] is called.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ravel_core::{LabeledSample, SampleMeta, SeverityLabel};
use serde::{Deserialize, Serialize};

use crate::codec::load_image;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: SeverityLabel,
    pub meta: SampleMeta,
}

impl ManifestEntry {
    /// Reads the image; failures name the sample.
    pub fn load(&self) -> Result<LabeledSample> {
        let image = load_image(&self.path).map_err(|e| Error::Load {
            sample_id: self.meta.sample_id.clone(),
            source: Box::new(e),
        })?;
        Ok(LabeledSample {
            image,
            label: self.label,
            meta: self.meta.clone(),
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    sample_id: String,
    path: String,
    label: String,
    #[serde(default)]
    year: i32,
    #[serde(default)]
    route: String,
    #[serde(default)]
    location_key: String,
    #[serde(default)]
    run_id: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Parses manifest text; `origin` names the file in errors and anchors
/// relative image paths.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let base = origin.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::parse(origin, line_no, e))?;
        let label: SeverityLabel = rec
            .label
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("unknown label `{}`", rec.label)))?;
        if rec.sample_id.is_empty() {
            return Err(Error::parse(origin, line_no, "empty sample_id"));
        }
        if !seen.insert(rec.sample_id.clone()) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("duplicate sample_id `{}`", rec.sample_id),
            ));
        }
        out.push(ManifestEntry {
            path: base.join(&rec.path),
            label,
            meta: SampleMeta {
                sample_id: rec.sample_id,
                year: rec.year,
                route: rec.route,
                location_key: rec.location_key,
                run_id: rec.run_id,
            },
        });
    }
    Ok(out)
}

/// Writes entries one per line, LF-terminated. Paths inside the manifest's
/// directory are stored relative to it.
pub fn write_manifest<'a>(entries: impl IntoIterator<Item = &'a ManifestEntry>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        let rec = Record {
            sample_id: e.meta.sample_id.clone(),
            path: rel.to_string_lossy().replace('\\', "/"),
            label: e.label.as_str().to_string(),
            year: e.meta.year,
            route: e.meta.route.clone(),
            location_key: e.meta.location_key.clone(),
            run_id: e.meta.run_id.clone(),
        };
        let line = serde_json::to_string(&rec).expect("manifest record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
