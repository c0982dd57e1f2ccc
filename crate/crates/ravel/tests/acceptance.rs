//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use ravel::model_io::{model_to_json, save_model};
use ravel::runner::{extract_all, prepare_corpus, run_matrix, train_forest};
use ravel_core::augment::{
    compound, crop, crop_dims, expand_dataset, flip, relight, AugmentationSpec, CropRegion, ExpansionPolicy, FlipAxes,
    RegionTag, RelightDelta,
};
use ravel_core::bench::{accuracy, ExperimentCell, PredictionSet, SpatialMode, TestConfig, TrainConfig};
use ravel_core::consistency::{
    align_series, augment_with_moment_relight, drift_report, violations, MomentRelightPolicy, YearRecord,
};
use ravel_core::forest::DecisionNode;
use ravel_core::image::{from_height_grid, synthesize, HeightGrid, SynthesisParams};
use ravel_core::{
    seed, FeatureVector, ForestModel, ForestParams, LabeledSample, Normalizer, RangeImage, SampleMeta, SeverityLabel,
    FEATURE_DIM,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn pooled_variance(pixels: &[u8]) -> f64 {
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
    pixels.iter().map(|&p| (f64::from(p) - mean).powi(2)).sum::<f64>() / n
}

fn synth_corpus(params: &SynthesisParams, base: u64, n: usize) -> Vec<LabeledSample> {
    (0..n)
        .map(|i| {
            let mut s = synthesize(params, SeverityLabel::ALL[i % 4], seed::derive(base, i as u64)).unwrap();
            s.meta.sample_id = format!("s{i:04}");
            s
        })
        .collect()
}

fn labels_of(samples: &[LabeledSample]) -> Vec<SeverityLabel> {
    samples.iter().map(|s| s.label).collect()
}

fn class_histogram(samples: &[LabeledSample]) -> [usize; 4] {
    let mut h = [0; 4];
    for s in samples {
        h[s.label.index()] += 1;
    }
    h
}

fn expansion_counts() -> Outcome {
    let start = Instant::now();
    let mut detail = Vec::new();
    for (split, n, want) in [("train", 1883, 9415), ("validation", 270, 1350), ("test", 539, 2695)] {
        let originals: Vec<LabeledSample> = (0..n)
            .map(|i| {
                let label = SeverityLabel::ALL[(i * 7 + i / 5) % 4];
                LabeledSample {
                    image: RangeImage::from_fn(64, 64, |x, y| ((x * 3 + y * 5 + i) % 256) as u8).unwrap(),
                    label,
                    meta: SampleMeta::new(format!("{split}-{i}")),
                }
            })
            .collect();
        let expanded = expand_dataset(&originals, &ExpansionPolicy::crop_only(1)).unwrap();
        ensure!(
            expanded.len() == want,
            "{split}: {} expanded, expected {want}",
            expanded.len()
        );
        let (before, after) = (class_histogram(&originals), class_histogram(&expanded));
        ensure!(
            after == before.map(|c| 5 * c),
            "{split}: class histogram {after:?} is not 5x {before:?}"
        );
        detail.push(format!("{n}->{}", expanded.len()));
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(60), "took {t:?}");
    Ok(format!("{} in {:.1}s", detail.join(", "), t.as_secs_f64()))
}

fn augmentation_invariants() -> Outcome {
    let mut rng = seed::rng(2);
    let images = 1000;
    let mut checks = 0usize;
    for k in 0..images {
        let (w, h) = (rng.random_range(1..=48), rng.random_range(1..=48));
        let img = RangeImage::new(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap();
        for (vertical, horizontal) in [(false, false), (true, false), (false, true), (true, true)] {
            let axes = FlipAxes { vertical, horizontal };
            ensure!(
                flip(&flip(&img, axes), axes) == img,
                "image {k}: flip {axes:?} is not an involution"
            );
            checks += 1;
        }
        let d = rng.random_range(-RelightDelta::MAX_ABS..=RelightDelta::MAX_ABS);
        let back = relight(
            &relight(&img, RelightDelta::new(d).unwrap()),
            RelightDelta::new(-d).unwrap(),
        );
        let lo = d.abs();
        for (&p, &q) in img.pixels().iter().zip(back.pixels()) {
            if (lo..=255 - lo).contains(&i32::from(p)) {
                ensure!(p == q, "image {k}: relight {d} round trip changed {p} to {q}");
            }
        }
        checks += 1;
        let (cw, ch) = crop_dims(w, h, 0.85);
        let expect = |side: usize| ((0.85 * side as f64).round_ties_even() as usize).max(1);
        ensure!((cw, ch) == (expect(w), expect(h)), "{w}x{h}: crop dims {cw}x{ch}");
        let tag = RegionTag::FIVE[k % 5];
        let cropped = crop(&img, &CropRegion::fraction(tag, w, h, 0.85)).unwrap();
        ensure!(
            (cropped.width(), cropped.height()) == (cw, ch),
            "{w}x{h}: {tag} crop is {}x{}",
            cropped.width(),
            cropped.height()
        );
        checks += 1;
        ensure!(
            compound(&img, &AugmentationSpec::default()).unwrap() == img,
            "image {k}: empty spec changed the image"
        );
        checks += 1;
    }
    Ok(format!("{images} images, {checks} checks, 0 failures"))
}

fn rectification() -> Outcome {
    let grid = HeightGrid::from_fn(1019, 1524, |x, y| 0.02 * x as f64 - 0.035 * y as f64 + 3.0).unwrap();
    let rectified = pooled_variance(from_height_grid(&grid, 20.0).unwrap().pixels());
    let v = grid.values();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let plain: Vec<u8> = v
        .iter()
        .map(|x| ((x - lo) / (hi - lo) * 255.0).round_ties_even() as u8)
        .collect();
    let ratio = rectified / pooled_variance(&plain);
    ensure!(ratio <= 0.1, "variance ratio {ratio:.4} > 0.1");
    Ok(format!("variance ratio {ratio:.5}"))
}

fn single_tree(tree: DecisionNode) -> ForestModel {
    let params = ForestParams {
        tree_count: 1,
        ..ForestParams::default()
    };
    ForestModel::new(params, Normalizer::identity(), vec![tree]).unwrap()
}

fn forest_correctness() -> Outcome {
    use SeverityLabel::*;
    let model = single_tree(DecisionNode::split(
        3,
        0.2,
        DecisionNode::split(10, -1.0, DecisionNode::leaf(L0), DecisionNode::leaf(L1)),
        DecisionNode::split(600, 1.5, DecisionNode::leaf(L2), DecisionNode::leaf(L3)),
    ));
    let mut rng = seed::rng(4);
    for i in 0..1000 {
        let v = FeatureVector::new((0..FEATURE_DIM).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let want = match (v[3] <= 0.2, v[10] <= -1.0, v[600] <= 1.5) {
            (true, true, _) => L0,
            (true, false, _) => L1,
            (false, _, true) => L2,
            (false, _, false) => L3,
        };
        ensure!(model.predict(&v) == want, "vector {i}: tree disagrees with the rule");
    }

    let start = Instant::now();
    let samples = synth_corpus(&SynthesisParams::default(), 400, 500);
    let x = extract_all(&samples).unwrap();
    let y = labels_of(&samples);
    let params = ForestParams::with_seed(400);
    let model = train_forest(&x[..400], &y[..400], &params).unwrap();
    let correct = (400..500).filter(|&i| model.predict(&x[i]) == y[i]).count();
    let acc = correct as f64 / 100.0;
    let t = start.elapsed();

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_model(&model, &a).unwrap();
    save_model(&train_forest(&x[..400], &y[..400], &params).unwrap(), &b).unwrap();
    ensure!(
        fs::read(&a).unwrap() == fs::read(&b).unwrap(),
        "retrained model file differs"
    );
    ensure!(acc >= 0.95, "400/100 accuracy {acc:.3} < 0.95");
    ensure!(t < Duration::from_secs(60), "400/100 took {t:?}");
    Ok(format!(
        "oracle 1000/1000, identical model files ({} bytes), 400/100 accuracy {acc:.3} in {:.1}s",
        model_to_json(&model).len(),
        t.as_secs_f64()
    ))
}

/// Mean accuracy per (row, column) over five seeds on a 500-image corpus
/// (400 train / 100 test sources).
fn matrix_means() -> [[f64; 4]; 10] {
    let seeds = 5;
    let mut mean = [[0.0; 4]; 10];
    for s in 0..seeds {
        let all = synth_corpus(&SynthesisParams::default(), s, 500);
        let (train, test) = all.split_at(400);
        let corpus = prepare_corpus(train, test, s).unwrap();
        let cells: Vec<ExperimentCell> = run_matrix(&corpus, &ForestParams::default(), s).unwrap();
        for c in cells {
            let row = TrainConfig::CANONICAL.iter().position(|r| *r == c.train).unwrap();
            let col = TestConfig::CANONICAL.iter().position(|t| *t == c.test).unwrap();
            mean[row][col] += c.accuracy / seeds as f64;
        }
    }
    mean
}

fn row_of(spatial: SpatialMode, fraction: f64, flip: bool, relight: bool) -> usize {
    TrainConfig::CANONICAL
        .iter()
        .position(|r| r.spatial == spatial && r.fraction == fraction && r.flip == flip && r.relight == relight)
        .unwrap()
}

fn quantity_trend(mean: &[[f64; 4]; 10]) -> Outcome {
    let rows = [
        row_of(SpatialMode::RandomRegion, 0.05, false, false),
        row_of(SpatialMode::RandomRegion, 0.10, false, false),
        row_of(SpatialMode::RandomRegion, 0.20, false, false),
        row_of(SpatialMode::AllRegions, 1.0, false, false),
    ];
    let acc: Vec<f64> = rows.iter().map(|&r| mean[r][0]).collect();
    let drops: Vec<f64> = acc.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
    let shown = acc.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(" -> ");
    ensure!(
        drops.len() <= 1 && drops.iter().all(|&d| d <= 0.01),
        "5/10/20/100%: {shown} has inversions {drops:?}"
    );
    Ok(format!("5/10/20/100%: {shown}"))
}

fn relight_direction(mean: &[[f64; 4]; 10]) -> Outcome {
    let col = TestConfig::CANONICAL.iter().position(|t| !t.flip && t.relight).unwrap();
    let plain = mean[row_of(SpatialMode::AllRegions, 1.0, false, false)][col];
    let relit = mean[row_of(SpatialMode::AllRegions, 1.0, false, true)][col];
    ensure!(relit >= plain, "all+relight {relit:.4} < all {plain:.4}");
    Ok(format!("on all+relight test: all+relight {relit:.4} >= all {plain:.4}"))
}

fn accuracy_metric() -> Outcome {
    use SeverityLabel::*;
    let mut p = PredictionSet::new("four");
    let truth = [("a", L0), ("b", L1), ("c", L2), ("d", L3)];
    for (id, l) in [("a", L0), ("b", L1), ("c", L2), ("d", L0)] {
        p.insert(id, l).unwrap();
    }
    let four = accuracy(&p, truth).unwrap();
    ensure!(four == 0.75, "3 of 4 gave {four}");

    let mut rng = seed::rng(7);
    let mut worst = 0.0f64;
    for set in 0..100 {
        let n = rng.random_range(1..500);
        let mut preds = PredictionSet::new(format!("r{set}"));
        let mut truth = Vec::new();
        let mut confusion = [[0u64; 4]; 4];
        for i in 0..n {
            let (t, q) = (rng.random_range(0..4), rng.random_range(0..4));
            preds.insert(format!("x{i}"), SeverityLabel::ALL[q]).unwrap();
            truth.push((format!("x{i}"), SeverityLabel::ALL[t]));
            confusion[t][q] += 1;
        }
        let trace: u64 = (0..4).map(|k| confusion[k][k]).sum();
        let total: u64 = confusion.iter().flatten().sum();
        let got = accuracy(&preds, truth.iter().map(|(id, l)| (id.as_str(), *l))).unwrap();
        worst = worst.max((got - trace as f64 / total as f64).abs());
    }
    ensure!(worst <= 1e-12, "max deviation from confusion matrix {worst:e}");
    Ok(format!("3/4 = 0.75 exactly; 100 sets, max deviation {worst:e}"))
}

fn record(key: &str, year: i32, label: SeverityLabel) -> YearRecord {
    YearRecord {
        year,
        location_key: key.into(),
        sample_id: format!("{key}@{year}"),
        label,
    }
}

fn consistency_analyzer() -> Outcome {
    use SeverityLabel::*;
    let mut rng = seed::rng(2016);
    let injected = [3, 17, 28, 44, 61, 79, 95];
    let mut recs = Vec::new();
    for loc in 0..100 {
        let mut levels = [0usize; 3];
        levels[0] = rng.random_range(0..3);
        for y in 1..3 {
            levels[y] = (levels[y - 1] + rng.random_range(0..2)).min(3);
        }
        if let Some(k) = injected.iter().position(|&l| l == loc) {
            levels = if k % 2 == 0 { [2, 1, 1] } else { [1, 2, 1] };
        }
        for (y, &l) in levels.iter().enumerate() {
            recs.push(record(&format!("loc{loc:03}"), 2014 + y as i32, SeverityLabel::ALL[l]));
        }
    }
    let report = violations(&align_series(recs).unwrap());
    ensure!(
        report.violations.len() == 7,
        "{} violations, expected 7",
        report.violations.len()
    );
    ensure!(report.total_pairs == 200, "{} pairs", report.total_pairs);

    let mut recs = Vec::new();
    for k in 0..10 {
        let key = format!("p{k}");
        recs.push(record(&key, 2014, L0));
        recs.push(record(&key, 2015, if k < 4 { L1 } else { L0 }));
        recs.push(record(&key, 2016, L0));
    }
    let dip = violations(&align_series(recs).unwrap());
    ensure!(
        !dip.violations.is_empty() && dip.violations.iter().all(|v| (v.year_from, v.year_to) == (2015, 2016)),
        "impossible pattern not flagged: {:?}",
        dip.violations
    );
    Ok(format!(
        "7/7 injected violations (rate {:.3}); impossible pattern flagged at {} locations",
        report.violation_rate,
        dip.violations.len()
    ))
}

/// `count` 16x16 images for `year` whose pooled mean is exactly `mean`.
fn corpus_with_mean(year: i32, mean: f64, count: usize, rng: &mut seed::Rng) -> Vec<LabeledSample> {
    let n = count * 256;
    let mut px: Vec<i32> = (0..n)
        .map(|_| (mean + rng.random_range(-30.0..30.0)).round() as i32)
        .collect();
    let mut diff = (mean * n as f64).round() as i64 - px.iter().map(|&p| i64::from(p)).sum::<i64>();
    let mut i = 0;
    while diff != 0 {
        let step = diff.signum() as i32;
        if (0..=255).contains(&(px[i % n] + step)) {
            px[i % n] += step;
            diff -= i64::from(step);
        }
        i += 1;
    }
    px.chunks(256)
        .enumerate()
        .map(|(k, c)| {
            let mut meta = SampleMeta::new(format!("{year}-{k}"));
            meta.year = year;
            LabeledSample {
                image: RangeImage::new(16, 16, c.iter().map(|&p| p as u8).collect()).unwrap(),
                label: SeverityLabel::ALL[k % 4],
                meta,
            }
        })
        .collect()
}

fn drift_fixture() -> Outcome {
    let mut rng = seed::rng(124);
    let mut samples = corpus_with_mean(2014, 124.03, 25, &mut rng);
    samples.extend(corpus_with_mean(2015, 122.21, 25, &mut rng));
    let r = drift_report(&samples);
    let (m14, m15) = (r.per_year[0].mean, r.per_year[1].mean);
    ensure!(
        (m14 - 124.03).abs() <= 1e-2 && (m15 - 122.21).abs() <= 1e-2,
        "means {m14} / {m15}"
    );

    let p = SynthesisParams {
        width: 48,
        height: 48,
        ..SynthesisParams::default()
    };
    let mut shifted = Vec::new();
    for i in 0..20 {
        let s = synthesize(&p, SeverityLabel::ALL[i % 4], i as u64).unwrap();
        ensure!(
            s.image.pixels().iter().all(|&v| v >= 2),
            "fixture image {i} would clamp"
        );
        for (year, delta) in [(2014, 0), (2015, -2)] {
            let mut meta = SampleMeta::new(format!("{year}-{i}"));
            meta.year = year;
            shifted.push(LabeledSample {
                image: relight(&s.image, RelightDelta::new(delta).unwrap()),
                label: s.label,
                meta,
            });
        }
    }
    let r = drift_report(&shifted);
    let (a, b) = (&r.per_year[0], &r.per_year[1]);
    let (dm, dv) = (a.mean - b.mean, (a.variance - b.variance).abs());
    ensure!((dm - 2.0).abs() <= 1e-9, "mean difference {dm}");
    ensure!(dv <= 1e-9, "variance difference {dv:e}");
    Ok(format!(
        "means {m14:.2} / {m15:.2}; -2 shift: mean diff {dm:.9}, variance diff {dv:e}"
    ))
}

fn violation_rate(model: &ForestModel, years: &[LabeledSample]) -> f64 {
    let x = extract_all(years).unwrap();
    let recs = years.iter().zip(&x).map(|(s, v)| YearRecord {
        year: s.meta.year,
        location_key: s.meta.location_key.clone(),
        sample_id: s.meta.sample_id.clone(),
        label: model.predict(v),
    });
    violations(&align_series(recs).unwrap()).violation_rate
}

/// 100 locations over three years. True severity never decreases; year 2
/// is globally 2 levels darker.
fn drift_years(s: u64, params: &SynthesisParams) -> Vec<LabeledSample> {
    let mut rng = seed::rng(seed::derive_str(s, "locations"));
    let surface = seed::derive_str(s, "surface");
    let mut out = Vec::new();
    for loc in 0..100usize {
        let mut level = loc % 4;
        for y in 0..3 {
            if y > 0 && rng.random::<f64>() < 0.3 {
                level = (level + 1).min(3);
            }
            let mut sample = synthesize(params, SeverityLabel::ALL[level], seed::derive(surface, loc as u64)).unwrap();
            if y == 1 {
                sample.image = relight(&sample.image, RelightDelta::new(-2).unwrap());
            }
            sample.meta.sample_id = format!("loc{loc}-{y}");
            sample.meta.location_key = format!("loc{loc}");
            sample.meta.year = 2014 + y;
            out.push(sample);
        }
    }
    out
}

fn case_study_direction() -> Outcome {
    let params = SynthesisParams::default();
    let seeds = 5;
    let (mut plain, mut moment) = (0.0, 0.0);
    for s in 0..seeds {
        let train = synth_corpus(&params, seed::derive_str(s, "train"), 200);
        let augmented = augment_with_moment_relight(
            &train,
            &MomentRelightPolicy {
                seed: s,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let fit = |samples: &[LabeledSample]| {
            train_forest(
                &extract_all(samples).unwrap(),
                &labels_of(samples),
                &ForestParams::with_seed(s),
            )
            .unwrap()
        };
        let years = drift_years(s, &params);
        plain += violation_rate(&fit(&train), &years) / seeds as f64;
        moment += violation_rate(&fit(&augmented), &years) / seeds as f64;
    }
    ensure!(moment <= plain, "moment-relight {moment:.4} > plain {plain:.4}");
    Ok(format!(
        "violation rate: moment-relight {moment:.4} <= plain {plain:.4}"
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = ravel::cli::run(std::iter::once("ravel").chain(args.iter().copied()), &mut out, &mut err);
    if code == 0 {
        Ok(())
    } else {
        Err(format!(
            "`{}` exited {code}: {}",
            args.join(" "),
            String::from_utf8_lossy(&err)
        ))
    }
}

fn end_to_end(suite_start: Instant) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let start = Instant::now();
    cli(&["synth", "--count", "500", "--seed", "11", "--out", &path("data")])?;
    let manifest = path("data/manifest.jsonl");
    for run in ["r1", "r2"] {
        cli(&["bench", "--corpus", &manifest, "--seed", "11", "--out", &path(run)])?;
    }
    let (a, b) = (
        fs::read(path("r1/results.csv")).unwrap(),
        fs::read(path("r2/results.csv")).unwrap(),
    );
    ensure!(a == b, "results.csv differs between runs");
    let rows = String::from_utf8_lossy(&a).lines().count() - 1;
    ensure!(rows == 40, "{rows} result rows");
    let total = suite_start.elapsed();
    ensure!(total < Duration::from_secs(600), "acceptance run took {total:?}");
    Ok(format!(
        "two bench runs byte-identical ({rows} rows) in {:.1}s; whole suite {:.1}s",
        start.elapsed().as_secs_f64(),
        total.as_secs_f64()
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    let suite_start = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("FAIL {n:>2} {name}: {why}");
        }
    };
    report(1, "five-region expansion counts", guarded(expansion_counts));
    report(2, "augmentation invariants", guarded(augmentation_invariants));
    report(3, "ramp rectification", guarded(rectification));
    report(4, "random forest correctness", guarded(forest_correctness));
    let mean = panic::catch_unwind(matrix_means).map_err(|_| "benchmark matrix panicked".to_string());
    report(5, "data-quantity trend", mean.clone().and_then(|m| quantity_trend(&m)));
    report(
        6,
        "relight robustness direction",
        mean.and_then(|m| relight_direction(&m)),
    );
    report(7, "accuracy metric", guarded(accuracy_metric));
    report(8, "consistency analyzer", guarded(consistency_analyzer));
    report(9, "intensity drift report", guarded(drift_fixture));
    report(10, "moment-relight case study", guarded(case_study_direction));
    report(11, "end-to-end determinism", guarded(|| end_to_end(suite_start)));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
