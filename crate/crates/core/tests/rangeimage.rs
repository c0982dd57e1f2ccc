use proptest::prelude::*;
use ravel_core::image::{from_height_grid, synthesize, HeightGrid, RangeImage, SeverityLabel, SynthesisParams};

fn two_pass(pixels: &[u8]) -> (f64, f64) {
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
    let var = pixels.iter().map(|&p| (f64::from(p) - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn ramp(w: usize, h: usize, a: f64, b: f64, c: f64) -> HeightGrid {
    HeightGrid::from_fn(w, h, |x, y| a * x as f64 + b * y as f64 + c).unwrap()
}

/// Variance of the plain min-max rescale of a grid, rounded like the codec.
fn rescaled_variance(grid: &HeightGrid) -> f64 {
    let v = grid.values();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let px: Vec<u8> = v
        .iter()
        .map(|x| ((x - lo) / (hi - lo) * 255.0).round_ties_even() as u8)
        .collect();
    two_pass(&px).1
}

#[test]
fn closed_form_stats() {
    let zero = RangeImage::filled(7, 3, 0).unwrap().stats();
    assert_eq!((zero.mean, zero.variance), (0.0, 0.0));
    let pair = RangeImage::new(2, 1, vec![0, 255]).unwrap().stats();
    assert_eq!(pair.mean, 127.5);
    assert_eq!(pair.variance, 16256.25);
}

#[test]
fn synthetic_stats_match_two_pass() {
    let params = SynthesisParams::default();
    for seed in 0..8 {
        for label in SeverityLabel::ALL {
            let img = synthesize(&params, label, seed).unwrap().image;
            let s = img.stats();
            let (m, v) = two_pass(img.pixels());
            assert!(rel_close(s.mean, m, 1e-9), "{} vs {m}", s.mean);
            assert!(rel_close(s.variance, v, 1e-9), "{} vs {v}", s.variance);
        }
    }
}

#[test]
fn constant_grid_is_mid_gray() {
    let grid = HeightGrid::from_fn(9, 4, |_, _| 5.0).unwrap();
    let img = from_height_grid(&grid, 20.0).unwrap();
    assert!(img.pixels().iter().all(|&p| p == 128));
}

#[test]
fn non_finite_heights_rejected() {
    assert!(HeightGrid::new(2, 1, vec![1.0, f64::NAN]).is_err());
    assert!(HeightGrid::new(2, 1, vec![f64::INFINITY, 0.0]).is_err());
    assert!(HeightGrid::new(0, 1, vec![]).is_err());
}

#[test]
fn ramp_rectification_survey_size() {
    let grid = ramp(1019, 1524, 0.02, -0.035, 3.0);
    let img = from_height_grid(&grid, 20.0).unwrap();
    let after = two_pass(img.pixels()).1;
    let before = rescaled_variance(&grid);
    assert!(after <= 0.1 * before, "ratio {}", after / before);
}

#[test]
fn pit_survives_rectification() {
    let (w, h) = (256, 256);
    let (px, py) = (97.0, 141.0);
    let grid = HeightGrid::from_fn(w, h, |x, y| {
        let r2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
        let pit = if r2 <= 9.0 { 2.0 * (1.0 - r2 / 9.0) } else { 0.0 };
        0.004 * x as f64 + 0.002 * y as f64 - pit
    })
    .unwrap();
    let img = from_height_grid(&grid, 20.0).unwrap();
    let (mut at, mut lo) = ((0, 0), u8::MAX);
    for y in 0..h {
        for x in 0..w {
            if img.get(x, y) < lo {
                lo = img.get(x, y);
                at = (x, y);
            }
        }
    }
    assert_eq!(at, (97, 141));
    assert_eq!(lo, 0);
}

#[test]
fn synthesis_examples() {
    let p = SynthesisParams::default();
    let a = synthesize(&p, SeverityLabel::L0, 7).unwrap();
    let b = synthesize(&p, SeverityLabel::L0, 7).unwrap();
    assert_eq!(a, b);
    let l3 = synthesize(&p, SeverityLabel::L3, 7).unwrap();
    assert!(l3.image.stats().mean < a.image.stats().mean);

    let big = SynthesisParams {
        width: 1019,
        height: 1524,
        ..SynthesisParams::default()
    };
    let img = synthesize(&big, SeverityLabel::L2, 1).unwrap().image;
    assert_eq!((img.width(), img.height()), (1019, 1524));
}

#[test]
fn synthesis_rejects_degenerate_params() {
    let mut p = SynthesisParams {
        width: 0,
        ..SynthesisParams::default()
    };
    assert!(synthesize(&p, SeverityLabel::L0, 0).is_err());
    p.width = 32;
    p.pit_density_per_level = [0.0, 1.0, 1.0, 2.0];
    assert!(synthesize(&p, SeverityLabel::L0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stats_match_brute_force(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
        let mut state = seed;
        let img = RangeImage::from_fn(w, h, |_, _| {
            state = ravel_core::seed::mix(state);
            (state >> 56) as u8
        }).unwrap();
        let s = img.stats();
        let (m, v) = two_pass(img.pixels());
        prop_assert!(rel_close(s.mean, m, 1e-9));
        prop_assert!(rel_close(s.variance, v, 1e-9));
        prop_assert!(s.variance >= 0.0 && (0.0..=255.0).contains(&s.mean));
    }

    #[test]
    fn height_grid_spans_full_range(
        w in 2usize..24,
        h in 2usize..24,
        values in prop::collection::vec(-50.0f64..50.0, 576),
        sigma in 0.5f64..30.0,
    ) {
        let grid = HeightGrid::new(w, h, values[..w * h].to_vec()).unwrap();
        let img = from_height_grid(&grid, sigma).unwrap();
        let lo = *img.pixels().iter().min().unwrap();
        let hi = *img.pixels().iter().max().unwrap();
        prop_assert!((lo == 0 && hi == 255) || img.pixels().iter().all(|&p| p == 128));
    }

    #[test]
    fn synthesize_is_pure(label in 0usize..4, seed in any::<u64>()) {
        let p = SynthesisParams { width: 40, height: 32, ..SynthesisParams::default() };
        let label = SeverityLabel::from_index(label).unwrap();
        prop_assert_eq!(synthesize(&p, label, seed).unwrap(), synthesize(&p, label, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn any_ramp_is_flattened(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -100.0f64..100.0) {
        prop_assume!(a.abs() + b.abs() > 1e-3);
        let grid = ramp(512, 512, a, b, c);
        let img = from_height_grid(&grid, 20.0).unwrap();
        let ratio = two_pass(img.pixels()).1 / rescaled_variance(&grid);
        prop_assert!(ratio <= 0.1, "ratio {}", ratio);
    }
}
