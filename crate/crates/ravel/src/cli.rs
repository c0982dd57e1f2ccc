//! The `ravel` command line.
//!
//! Exit status is 0 on success, 1 for usage, validation and format errors,
//! 2 for I/O failures. Every random choice derives from `--seed`, and
//! outputs do not depend on `--jobs`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ravel_core::augment::{apply_planned, plan_expansion, ExpansionPolicy};
use ravel_core::bench::{self, PredictionSet};
use ravel_core::consistency::{align_series, drift_report, violations, YearRecord};
use ravel_core::image::{synthesize, SynthesisParams};
use ravel_core::{seed as seeds, ForestParams, LabeledSample, SeverityLabel};

use crate::codec::{save_image, ImageFormat};
use crate::config::{pick, require, FileConfig, ForestSection};
use crate::manifest::{read_manifest, write_manifest, ManifestEntry};
use crate::model_io::{load_model, save_model};
use crate::report::{ensure_dir, render_report, unix_ms, write_consistency, RunMeta};
use crate::runner;
use crate::tables::{read_features, read_predictions, read_results, write_features, write_predictions, FeatureRow};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGES_DIR: &str = "images";
pub const FEATURES_FILE: &str = "features.csv";
pub const MODEL_FILE: &str = "model.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Parser)]
#[command(name = "ravel", version, about = "Raveling-severity robustness benchmark toolkit")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic corpus with balanced classes.
    Synth(SynthArgs),
    /// Expand a corpus into five-region crops with optional flips and relighting.
    Augment(AugmentArgs),
    /// Write the feature matrix of a corpus.
    Extract(ExtractArgs),
    /// Train a random forest.
    Train(TrainArgs),
    /// Run the 10x4 train/test variation matrix.
    Bench(BenchArgs),
    /// Accuracy of predictions or of a model against a labeled manifest.
    Score(ScoreArgs),
    /// Year-over-year consistency and intensity drift of a multi-year corpus.
    Consistency(ConsistencyArgs),
    /// Re-render the heatmap from a results table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Png,
    Pgm,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub crop_fraction: Option<f64>,
    #[arg(long)]
    pub flip_probability: Option<f64>,
    /// Enable +/- relighting.
    #[arg(long)]
    pub relight: bool,
    #[arg(long)]
    pub relight_magnitude: Option<i32>,
    #[arg(long)]
    pub relight_probability: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ForestArgs {
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long)]
    pub features_per_split: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled manifest to featurize and train on.
    #[arg(long, conflicts_with = "features")]
    pub corpus: Option<PathBuf>,
    /// Precomputed feature matrix instead of a manifest.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Training manifest; split 80/20 per class when --test is absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub forest: ForestArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Predictions CSV (`sample_id,label`).
    #[arg(long, conflicts_with = "model")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Where to write the model's predictions.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// One manifest per survey year, or one covering all years.
    #[arg(long, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, conflicts_with = "model")]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit status. Human-readable output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let text = e.render().to_string();
            return if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                let _ = write!(out, "{text}");
                0
            } else {
                let _ = write!(err, "{text}");
                1
            };
        }
    };
    match execute(cli, args, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Resolved global options.
struct Ctx {
    seed: u64,
    threads: usize,
    started: u128,
    args: Vec<String>,
    file: FileConfig,
}

impl Ctx {
    fn out_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        let dir = require(flag, self.file.out.clone(), "out")?;
        ensure_dir(&dir)?;
        Ok(dir)
    }

    fn corpus(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        let from_file = self.file.corpus.clone().and_then(|c| c.into_vec().into_iter().next());
        require(flag, from_file, "corpus")
    }

    fn meta(&self, command: &str, dir: &Path) -> Result<()> {
        RunMeta::new(command, self.args.clone(), self.seed, self.threads, self.started).write(dir)?;
        Ok(())
    }
}

/// Runs a parsed command line; `args` is recorded in the metadata sidecar.
pub fn execute(cli: Cli, args: Vec<String>, out: &mut dyn Write) -> Result<()> {
    let started = unix_ms();
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = pick(cli.seed, file.seed, 0);
    let pool = runner::thread_pool(cli.jobs.or(file.jobs))?;
    let ctx = Ctx {
        seed,
        threads: pool.current_num_threads(),
        started,
        args,
        file,
    };
    // buffered so the closure stays Send
    let mut buf = Vec::new();
    let w = &mut buf;
    let result = pool.install(move || match cli.command {
        Command::Synth(a) => synth(&ctx, a, w),
        Command::Augment(a) => augment(&ctx, a, w),
        Command::Extract(a) => extract(&ctx, a, w),
        Command::Train(a) => train(&ctx, a, w),
        Command::Bench(a) => bench_cmd(&ctx, a, w),
        Command::Score(a) => score(&ctx, a, w),
        Command::Consistency(a) => consistency(&ctx, a, w),
        Command::Report(a) => report(&ctx, a, w),
    });
    let _ = out.write_all(&buf);
    result
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments) {
    let _ = writeln!(out, "{msg}");
}

fn forest_params(a: &ForestArgs, c: &ForestSection, seed: u64) -> ForestParams {
    let d = ForestParams::default();
    ForestParams {
        tree_count: pick(a.trees, c.trees, d.tree_count),
        max_depth: pick(a.max_depth, c.max_depth, d.max_depth),
        min_samples_leaf: pick(a.min_samples_leaf, c.min_samples_leaf, d.min_samples_leaf),
        features_per_split: pick(a.features_per_split, c.features_per_split, d.features_per_split),
        seed,
    }
}

fn synth(ctx: &Ctx, a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let c = &ctx.file.synth;
    let d = SynthesisParams::default();
    let params = SynthesisParams {
        width: pick(a.width, c.width, d.width),
        height: pick(a.height, c.height, d.height),
        ..d
    };
    let count = pick(a.count, c.count, 100);
    let format = match (a.format, c.format.as_deref()) {
        (Some(FormatArg::Png), _) | (None, None | Some("png")) => ImageFormat::Png,
        (Some(FormatArg::Pgm), _) | (None, Some("pgm")) => ImageFormat::Pgm,
        (None, Some(other)) => return Err(Error::Config(format!("unknown image format `{other}`"))),
    };
    let dir = ctx.out_dir(a.out)?;
    let images = dir.join(IMAGES_DIR);
    ensure_dir(&images)?;
    let entries: Vec<ManifestEntry> = (0..count)
        .into_par_iter()
        .map(|i| {
            let label = SeverityLabel::ALL[i % 4];
            let sample = synthesize(&params, label, seeds::derive(ctx.seed, i as u64))?;
            let id = format!("synth-{i:05}");
            let path = images.join(format!("{id}.{}", format.extension()));
            save_image(&sample.image, &path)?;
            let mut meta = sample.meta;
            meta.location_key = id.clone();
            meta.sample_id = id;
            Ok(ManifestEntry { path, label, meta })
        })
        .collect::<Result<_>>()?;
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&entries, &manifest)?;
    ctx.meta("synth", &dir)?;
    say(out, format_args!("wrote {count} samples to {}", manifest.display()));
    Ok(())
}

fn augment(ctx: &Ctx, a: AugmentArgs, out: &mut dyn Write) -> Result<()> {
    let c = &ctx.file.augment;
    let d = ExpansionPolicy::default();
    let policy = ExpansionPolicy {
        crop_fraction: pick(a.crop_fraction, c.crop_fraction, d.crop_fraction),
        flip_probability: pick(a.flip_probability, c.flip_probability, d.flip_probability),
        relight_enabled: a.relight || c.relight.unwrap_or(d.relight_enabled),
        relight_magnitude: pick(a.relight_magnitude, c.relight_magnitude, d.relight_magnitude),
        relight_probability: pick(a.relight_probability, c.relight_probability, d.relight_probability),
        seed: ctx.seed,
        ..d
    };
    policy.validate()?;
    let entries = read_manifest(ctx.corpus(a.corpus)?)?;
    let dir = ctx.out_dir(a.out)?;
    let images = dir.join(IMAGES_DIR);
    ensure_dir(&images)?;
    // draws are keyed by (sample, region), so planning one source at a time
    // matches planning the whole corpus
    let expanded: Vec<Vec<ManifestEntry>> = entries
        .par_iter()
        .map(|e| {
            let src = e.load()?;
            let plan = plan_expansion(
                [(src.meta.sample_id.as_str(), src.image.width(), src.image.height())],
                &policy,
            )?;
            plan.iter()
                .map(|p| {
                    let s = apply_planned(&src, p)?;
                    let ext = ImageFormat::from_path(&e.path).unwrap_or(ImageFormat::Png).extension();
                    let path = images.join(format!("{}{}.{ext}", e.meta.sample_id, p.spec.suffix()));
                    save_image(&s.image, &path)?;
                    Ok(ManifestEntry {
                        path,
                        label: s.label,
                        meta: s.meta,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let expanded: Vec<ManifestEntry> = expanded.into_iter().flatten().collect();
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&expanded, &manifest)?;
    ctx.meta("augment", &dir)?;
    say(
        out,
        format_args!(
            "expanded {} samples into {} at {}",
            entries.len(),
            expanded.len(),
            manifest.display()
        ),
    );
    Ok(())
}

fn featurize_entries(entries: &[ManifestEntry]) -> Result<Vec<FeatureRow>> {
    entries
        .par_iter()
        .map(|e| {
            let s = e.load()?;
            let features = ravel_core::features::extract(&s.image).map_err(|err| Error::Load {
                sample_id: e.meta.sample_id.clone(),
                source: Box::new(err.into()),
            })?;
            Ok(FeatureRow {
                sample_id: e.meta.sample_id.clone(),
                label: e.label,
                features,
            })
        })
        .collect()
}

fn extract(ctx: &Ctx, a: ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let dir = ctx.out_dir(a.out)?;
    let entries = read_manifest(ctx.corpus(a.corpus)?)?;
    let rows = featurize_entries(&entries)?;
    let path = dir.join(FEATURES_FILE);
    write_features(&rows, &path)?;
    ctx.meta("extract", &dir)?;
    say(
        out,
        format_args!("wrote {} feature rows to {}", rows.len(), path.display()),
    );
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let rows = match a.features {
        Some(f) => read_features(f)?,
        None => featurize_entries(&read_manifest(ctx.corpus(a.corpus)?)?)?,
    };
    let dir = ctx.out_dir(a.out)?;
    let params = forest_params(&a.forest, &ctx.file.forest, ctx.seed);
    let x: Vec<_> = rows.iter().map(|r| r.features.clone()).collect();
    let y: Vec<_> = rows.iter().map(|r| r.label).collect();
    let model = runner::train_forest(&x, &y, &params)?;
    let path = dir.join(MODEL_FILE);
    save_model(&model, &path)?;
    ctx.meta("train", &dir)?;
    say(
        out,
        format_args!(
            "trained {} trees on {} samples; model at {}",
            params.tree_count,
            rows.len(),
            path.display()
        ),
    );
    Ok(())
}

fn bench_cmd(ctx: &Ctx, a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let train = runner::load_all(&read_manifest(ctx.corpus(a.corpus)?)?)?;
    let test = match a.test.or(ctx.file.bench.test.clone()) {
        Some(t) => Some(runner::load_all(&read_manifest(t)?)?),
        None => None,
    };
    let dir = ctx.out_dir(a.out)?;
    let params = forest_params(&a.forest, &ctx.file.forest, ctx.seed);
    let cells = runner::bench_samples(train, test, &params, ctx.seed)?;
    render_report(&cells, &dir)?;
    ctx.meta("bench", &dir)?;
    for r in bench::rank_columns(&cells) {
        let names = |v: &[bench::TrainConfig]| v.iter().map(|c| c.label()).collect::<Vec<_>>().join(", ");
        say(
            out,
            format_args!(
                "{}: best [{}], second [{}]",
                r.test.label(),
                names(&r.best),
                names(&r.second)
            ),
        );
    }
    say(out, format_args!("wrote {} cells to {}", cells.len(), dir.display()));
    Ok(())
}

fn predict_entries(model: &ravel_core::ForestModel, entries: &[ManifestEntry], name: &str) -> Result<PredictionSet> {
    let labels: Vec<SeverityLabel> = featurize_entries(entries)?
        .iter()
        .map(|r| model.predict(&r.features))
        .collect();
    let mut set = PredictionSet::new(name);
    for (e, l) in entries.iter().zip(labels) {
        set.insert(e.meta.sample_id.clone(), l)?;
    }
    Ok(set)
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn score(ctx: &Ctx, a: ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let c = &ctx.file.score;
    let truth = read_manifest(require(a.truth, c.truth.clone(), "truth")?)?;
    let predictions = match (a.pred.or(c.pred.clone()), a.model.or(c.model.clone())) {
        (Some(p), _) => read_predictions(&p, &model_name(&p))?,
        (None, Some(m)) => {
            let model = load_model(&m)?;
            let set = predict_entries(&model, &truth, &model_name(&m))?;
            if let Some(dir) = a.out.or(ctx.file.out.clone()) {
                ensure_dir(&dir)?;
                write_predictions(&set, dir.join(PREDICTIONS_FILE))?;
                ctx.meta("score", &dir)?;
            }
            set
        }
        (None, None) => return Err(Error::Config("score needs --pred or --model".into())),
    };
    let acc = bench::accuracy(&predictions, truth.iter().map(|e| (e.meta.sample_id.as_str(), e.label)))?;
    say(out, format_args!("accuracy {acc:.6} over {} samples", truth.len()));
    Ok(())
}

fn consistency(ctx: &Ctx, a: ConsistencyArgs, out: &mut dyn Write) -> Result<()> {
    let c = &ctx.file.consistency;
    let corpora = if a.corpus.is_empty() {
        ctx.file.corpus.clone().map(|c| c.into_vec()).unwrap_or_default()
    } else {
        a.corpus
    };
    if corpora.is_empty() {
        return Err(Error::Config("missing required option --corpus".into()));
    }
    let mut entries = Vec::new();
    for m in &corpora {
        entries.extend(read_manifest(m)?);
    }
    let dir = ctx.out_dir(a.out)?;

    let labels: BTreeMap<String, SeverityLabel> = match (a.pred.or(c.pred.clone()), a.model.or(c.model.clone())) {
        (Some(p), _) => read_predictions(&p, &model_name(&p))?.entries,
        (None, Some(m)) => predict_entries(&load_model(&m)?, &entries, &model_name(&m))?.entries,
        (None, None) => entries.iter().map(|e| (e.meta.sample_id.clone(), e.label)).collect(),
    };
    let missing: Vec<String> = entries
        .iter()
        .filter(|e| !labels.contains_key(&e.meta.sample_id))
        .map(|e| e.meta.sample_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ravel_core::Error::Coverage(missing).into());
    }

    let samples: Vec<LabeledSample> = entries
        .par_iter()
        .map(|e| {
            let mut s = e.load()?;
            s.label = labels[&e.meta.sample_id];
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let drift = drift_report(&samples);
    let records = samples
        .iter()
        .filter(|s| !s.meta.location_key.is_empty())
        .map(|s| YearRecord {
            year: s.meta.year,
            location_key: s.meta.location_key.clone(),
            sample_id: s.meta.sample_id.clone(),
            label: s.label,
        });
    let series = align_series(records)?;
    let report = violations(&series);
    write_consistency(&drift, &report, &dir)?;
    ctx.meta("consistency", &dir)?;
    for y in &drift.per_year {
        say(
            out,
            format_args!(
                "{}: {} images, mean {:.2}, variance {:.2}, severity {:?}",
                y.year, y.sample_count, y.mean, y.variance, y.severity_histogram
            ),
        );
    }
    say(
        out,
        format_args!(
            "{} locations, {} violations over {} pairs (rate {:.4})",
            series.len(),
            report.violations.len(),
            report.total_pairs,
            report.violation_rate
        ),
    );
    Ok(())
}

fn report(ctx: &Ctx, a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let results = require(a.results, ctx.file.report.results.clone(), "results")?;
    let cells = read_results(&results)?;
    let dir = ctx.out_dir(a.out)?;
    render_report(&cells, &dir)?;
    say(
        out,
        format_args!("rendered {} cells into {}", cells.len(), dir.display()),
    );
    Ok(())
}
