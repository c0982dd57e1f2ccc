//! Report files: results table, SVG heatmap, consistency report and the
//! run metadata sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ravel_core::bench::{rank_columns, ExperimentCell, TestConfig, TrainConfig};
use ravel_core::consistency::{DriftReport, ViolationReport};
use serde::Serialize;

use crate::tables::{write_results, write_violations};
use crate::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const HEATMAP_FILE: &str = "heatmap.svg";
pub const META_FILE: &str = "run-meta.json";
pub const CONSISTENCY_FILE: &str = "consistency.json";
pub const VIOLATIONS_FILE: &str = "violations.csv";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `results.csv` and `heatmap.svg` into `out_dir`.
pub fn render_report(cells: &[ExperimentCell], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if cells.is_empty() {
        return Err(Error::Config("no experiment cells to report".into()));
    }
    let dir = out_dir.as_ref();
    ensure_dir(dir)?;
    let results = dir.join(RESULTS_FILE);
    write_results(cells, &results)?;
    let heatmap = dir.join(HEATMAP_FILE);
    fs::write(&heatmap, heatmap_svg(cells)).map_err(|e| Error::io(&heatmap, e))?;
    Ok(vec![results, heatmap])
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// White (lowest accuracy) to steel blue (highest).
fn cell_color(t: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(255.0, 49.0),
        lerp(255.0, 110.0),
        lerp(255.0, 180.0)
    )
}

const ROW_HEADER_W: usize = 190;
const CELL_W: usize = 120;
const CELL_H: usize = 28;
const TOP: usize = 40;

/// Accuracy grid with training rows and test columns. Rows and columns
/// appear in canonical order when present. The best cell in each column
/// is bold, the runner-up underlined.
pub fn heatmap_svg(cells: &[ExperimentCell]) -> String {
    let rows: Vec<TrainConfig> = TrainConfig::CANONICAL
        .into_iter()
        .filter(|r| cells.iter().any(|c| c.train == *r))
        .collect();
    let cols: Vec<TestConfig> = TestConfig::CANONICAL
        .into_iter()
        .filter(|t| cells.iter().any(|c| c.test == *t))
        .collect();
    let rankings = rank_columns(cells);
    let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
        (lo.min(c.accuracy), hi.max(c.accuracy))
    });

    let width = ROW_HEADER_W + CELL_W * cols.len() + 10;
    let height = TOP + CELL_H * rows.len() + 10;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="16" font-weight="bold">Train \ Test</text>"#, 8);
    for (j, col) in cols.iter().enumerate() {
        let x = ROW_HEADER_W + CELL_W * j + CELL_W / 2;
        let _ = writeln!(
            svg,
            r#"<text class="col-label" x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            TOP - 10,
            xml_escape(&col.label())
        );
    }
    for (i, row) in rows.iter().enumerate() {
        let y = TOP + CELL_H * i;
        let _ = writeln!(
            svg,
            r#"<text class="row-label" x="8" y="{}">{}</text>"#,
            y + CELL_H / 2 + 5,
            xml_escape(&row.label())
        );
        for (j, col) in cols.iter().enumerate() {
            let Some(cell) = cells.iter().find(|c| c.train == *row && c.test == *col) else {
                continue;
            };
            let t = if hi > lo { (cell.accuracy - lo) / (hi - lo) } else { 1.0 };
            let x = ROW_HEADER_W + CELL_W * j;
            let rank = rankings.iter().find(|r| r.test == *col);
            let best = rank.is_some_and(|r| r.best.contains(row));
            let second = rank.is_some_and(|r| r.second.contains(row));
            let style = match (best, second) {
                (true, _) => r#" font-weight="bold" class="best""#,
                (_, true) => r#" text-decoration="underline" class="second""#,
                _ => "",
            };
            let fg = if t > 0.6 { "white" } else { "black" };
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}" stroke="#999"/>"##,
                cell_color(t)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{fg}"{style}>{:.3}</text>"#,
                x + CELL_W / 2,
                y + CELL_H / 2 + 5,
                cell.accuracy
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Serialize)]
struct ConsistencyDoc<'a> {
    per_year: &'a [ravel_core::consistency::YearDrift],
    total_pairs: usize,
    violations: &'a [ravel_core::consistency::Violation],
    violation_rate: f64,
}

/// Writes `consistency.json` and `violations.csv`.
pub fn write_consistency(
    drift: &DriftReport,
    report: &ViolationReport,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    ensure_dir(dir)?;
    let doc = ConsistencyDoc {
        per_year: &drift.per_year,
        total_pairs: report.total_pairs,
        violations: &report.violations,
        violation_rate: report.violation_rate,
    };
    let json = dir.join(CONSISTENCY_FILE);
    let text = serde_json::to_string_pretty(&doc).expect("report serializes") + "\n";
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    let csv = dir.join(VIOLATIONS_FILE);
    write_violations(&report.violations, &csv)?;
    Ok(vec![json, csv])
}

/// Host and timing details, kept apart from the deterministic outputs.
#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub elapsed_ms: u128,
    pub os: &'static str,
    pub arch: &'static str,
    pub version: &'static str,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

impl RunMeta {
    pub fn new(command: &str, args: Vec<String>, seed: u64, threads: usize, started_unix_ms: u128) -> Self {
        let finished = unix_ms();
        Self {
            command: command.to_string(),
            args,
            seed,
            threads,
            started_unix_ms,
            finished_unix_ms: finished,
            elapsed_ms: finished.saturating_sub(started_unix_ms),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = out_dir.as_ref().join(META_FILE);
        let text = serde_json::to_string_pretty(self).expect("metadata serializes") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
