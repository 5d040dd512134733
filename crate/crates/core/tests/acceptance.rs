//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test -p markerloc --test acceptance -- --nocapture` to see
//! the lines.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use markerloc::calibrate::{build_calibration, calibration_to_json, fit_inverse_k, CalibrationFit};
use markerloc::estimate::{
    heading_from_coefficients, vertical_range_cm, Calibration, Envelopes,
    CALIBRATION_SCHEMA_VERSION,
};
use markerloc::harness::{evaluate, evaluate_with, simulate, ErrorReport, SimConfig};
use markerloc::raster::{encode_ppm, median_filter, Image};
use markerloc::segment::{compute_moments, extract_features_with, FeatureConfig, Mask};
use markerloc::synthcam::{
    marker_in_view, render_with, CameraSpec, MarkerSpec, NoiseSpec, ScenePose,
};
use markerloc::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RANGE_BOUND_PCT: f64 = 1.0;
const BEARING_BOUND_PCT: f64 = 5.0;
const HEADING_BOUND_PCT: f64 = 5.0;

fn report(id: u32, name: &str, ok: bool, detail: String, elapsed: Duration) {
    println!(
        "criterion {id:>2} {:<4} {name}: {detail} ({:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

fn training_poses() -> Vec<ScenePose> {
    let cam = CameraSpec::default();
    let spec = MarkerSpec::default();
    let mut poses = Vec::new();
    for dv in (13..=48).step_by(5) {
        for psi in (45..=315).step_by(45) {
            poses.push(ScenePose::new(dv as f64, 0.0, psi as f64));
        }
    }
    for dv in (13..=48).step_by(5) {
        for dh in [-20.0, -14.0, -8.0, 8.0, 14.0, 20.0] {
            let pose = ScenePose::new(dv as f64, dh, 180.0);
            if marker_in_view(&pose, &cam, &spec, 2.0) {
                poses.push(pose);
            }
        }
    }
    poses
}

fn noiseless() -> SimConfig {
    SimConfig::default()
}

fn noisy(seed: u64) -> SimConfig {
    SimConfig {
        noise: Some(NoiseSpec {
            sigma: 8.0,
            salt_pepper: 0.01,
            seed,
        }),
        ..SimConfig::default()
    }
}

fn calibrate(sim: &SimConfig) -> CalibrationFit {
    let samples = simulate(&training_poses(), sim).expect("render training sweep");
    build_calibration(&samples, &Envelopes::default()).expect("calibrate")
}

fn trained() -> &'static CalibrationFit {
    static FIT: OnceLock<CalibrationFit> = OnceLock::new();
    FIT.get_or_init(|| calibrate(&noiseless()))
}

fn range_poses() -> Vec<ScenePose> {
    [15.0, 25.0, 35.0, 45.0]
        .into_iter()
        .map(|dv| ScenePose::new(dv, 0.0, 180.0))
        .collect()
}

fn bearing_poses() -> Vec<ScenePose> {
    let cam = CameraSpec::default();
    let spec = MarkerSpec::default();
    let mut poses = Vec::new();
    for dv in [15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0] {
        for dh in [-22.0, -17.0, -11.0, -6.0, 6.0, 11.0, 17.0, 22.0] {
            let pose = ScenePose::new(dv, dh, 120.0);
            if marker_in_view(&pose, &cam, &spec, 2.0) {
                poses.push(pose);
            }
        }
    }
    poses
}

fn heading_poses() -> Vec<ScenePose> {
    let mut poses = Vec::new();
    for dv in [15.0, 20.0, 25.0, 30.0, 35.0] {
        for psi in (60..=300).step_by(60) {
            poses.push(ScenePose::new(dv, 0.0, psi as f64));
        }
    }
    poses
}

fn dead_zone_poses() -> Vec<ScenePose> {
    let mut poses = Vec::new();
    for dv in [15.0, 25.0, 35.0] {
        for psi in [0.0, 15.0, 30.0, 44.0] {
            poses.push(ScenePose::new(dv, 0.0, psi));
        }
    }
    poses
}

fn held_out(calib: &Calibration, poses: &[ScenePose], sim: &SimConfig) -> ErrorReport {
    let samples = simulate(poses, sim).expect("render held-out poses");
    evaluate(calib, &samples).expect("non-empty")
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3}%"))
}

#[test]
fn c01_reference_range_constant() {
    let t = Instant::now();
    let calib = Calibration {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        k_range: 3193.7,
        fx_px: 500.0,
        k1_slope: 0.1,
        k1_intercept: 1.0,
        k2_a: 90.0,
        k2_b: 0.0,
        envelopes: Envelopes::default(),
    };
    let a = vertical_range_cm(63.874, &calib).unwrap();
    let b = vertical_range_cm(319.37, &calib).unwrap();
    let ok = ((a - 50.0) / 50.0).abs() <= 1e-9 && ((b - 10.0) / 10.0).abs() <= 1e-9;
    report(
        1,
        "reference range constant",
        ok,
        format!("{a} cm, {b} cm"),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn c02_reference_heading_endpoints() {
    let t = Instant::now();
    let near = heading_from_coefficients(70.0, 2.0951, 97.179);
    let far = heading_from_coefficients(40.0, 6.2095, 94.421);
    // 2.0951 * 70 - 97.179 is 49.478 exactly
    let ok = (near - 49.478).abs() <= 1e-6 && (far - 153.959).abs() <= 1e-6;
    report(
        2,
        "reference heading endpoints",
        ok,
        format!("{near:.6} deg, {far:.6} deg"),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn c03_closed_loop_range() {
    let t = Instant::now();
    let calib = &trained().calibration;
    let r = held_out(calib, &range_poses(), &noiseless());
    let mean = r.range.mean_pct_error;
    let ok = r.range.n_valid == 4 && mean.is_some_and(|m| m <= RANGE_BOUND_PCT);
    report(
        3,
        "closed-loop range",
        ok,
        format!(
            "mean {} (bound {RANGE_BOUND_PCT}%), k = {:.3}",
            pct(mean),
            calib.k_range
        ),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn c04_closed_loop_bearing() {
    let t = Instant::now();
    let calib = &trained().calibration;
    let poses = bearing_poses();
    let r = held_out(calib, &poses, &noiseless());
    let mean = r.bearing.mean_pct_error;
    let ok = r.bearing.n_valid == poses.len() && mean.is_some_and(|m| m <= BEARING_BOUND_PCT);
    report(
        4,
        "closed-loop bearing",
        ok,
        format!(
            "mean {} of 90 deg over {} poses (bound {BEARING_BOUND_PCT}%), fx = {:.2}",
            pct(mean),
            r.bearing.n_valid,
            calib.fx_px
        ),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn c05_closed_loop_heading() {
    let t = Instant::now();
    let calib = &trained().calibration;
    let poses = heading_poses();
    let r = held_out(calib, &poses, &noiseless());
    let dz = held_out(calib, &dead_zone_poses(), &noiseless());
    let mean = r.heading.mean_pct_error;
    let ok = r.heading.n_valid == poses.len()
        && mean.is_some_and(|m| m <= HEADING_BOUND_PCT)
        && dz.heading.n_valid == 0
        && dz.heading.n_invalid == dz.n_samples;
    report(
        5,
        "closed-loop heading",
        ok,
        format!(
            "mean {} of 360 deg over {} poses (bound {HEADING_BOUND_PCT}%), dead zone {}/{} invalid",
            pct(mean),
            r.heading.n_valid,
            dz.heading.n_invalid,
            dz.n_samples
        ),
        t.elapsed(),
    );
    assert!(ok);
}

fn brute_moments(mask: &Mask) -> [f64; 6] {
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                m00 += 1.0;
                m10 += x as f64;
                m01 += y as f64;
            }
        }
    }
    let (cx, cy) = (m10 / m00, m01 / m00);
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                mu20 += dx * dx;
                mu02 += dy * dy;
                mu11 += dx * dy;
            }
        }
    }
    [m00, m10, m01, mu20, mu02, mu11]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn c06_moments_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..80), rng.random_range(1..80));
        let density: f64 = rng.random_range(0.01..0.9);
        let mut bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        if !bits.iter().any(|&b| b) {
            bits[rng.random_range(0..w * h)] = true;
        }
        let mask = Mask::new(w, h, bits);
        let m = compute_moments(&mask).unwrap();
        let want = brute_moments(&mask);
        let got = [m.m00, m.m10, m.m01, m.mu20, m.mu02, m.mu11];
        let (mut x0, mut x1, mut y0, mut y1) = (w, 0, h, 0);
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) {
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
            }
        }
        let in_box =
            m.cx >= x0 as f64 && m.cx <= x1 as f64 && m.cy >= y0 as f64 && m.cy <= y1 as f64;
        if !got.iter().zip(want).all(|(&g, w)| close(g, w)) || !in_box {
            failures += 1;
        }
    }
    let ok = failures == 0;
    report(
        6,
        "moments oracle",
        ok,
        format!("{failures}/100 masks disagree"),
        t.elapsed(),
    );
    assert!(ok);
}

fn naive_median(img: &Image, window: usize) -> Image {
    let r = (window / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for (c, slot) in px.iter_mut().enumerate() {
                let mut vals = Vec::with_capacity(window * window);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w - 1) as usize;
                        let sy = (y + dy).clamp(0, h - 1) as usize;
                        vals.push(img.get(sx, sy)[c]);
                    }
                }
                vals.sort_unstable();
                *slot = vals[vals.len() / 2];
            }
            out.set(x as usize, y as usize, px);
        }
    }
    out
}

#[test]
fn c07_median_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    let mut cases = 0;
    for _ in 0..50 {
        let pixels: Vec<[u8; 3]> = (0..32 * 32).map(|_| rng.random()).collect();
        let img = Image::new(32, 32, pixels).unwrap();
        for window in [3, 5, 15] {
            cases += 1;
            if median_filter(&img, window).unwrap() != naive_median(&img, window) {
                failures += 1;
            }
        }
    }
    let ok = failures == 0;
    report(
        7,
        "median filter oracle",
        ok,
        format!("{failures}/{cases} cases differ"),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn c08_inverse_law_fit() {
    let t = Instant::now();
    let exact: Vec<(f64, f64)> = (0..40)
        .map(|i| {
            let p = 60.0 + 7.5 * i as f64;
            (p, 3193.7 / p)
        })
        .collect();
    let (k, _) = fit_inverse_k(&exact).unwrap();
    let k_ok = ((k - 3193.7) / 3193.7).abs() <= 1e-6;

    let poses: Vec<ScenePose> = (13..=50)
        .map(|dv| ScenePose::new(dv as f64, 0.0, 180.0))
        .collect();
    let samples = simulate(&poses, &noiseless()).unwrap();
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter_map(|s| s.features.ring_gap_px.map(|g| (g, s.truth.d_v_cm)))
        .collect();
    let (_, fit) = fit_inverse_k(&pts).unwrap();
    let ok = k_ok && pts.len() == poses.len() && fit.r_squared >= 0.999;
    report(
        8,
        "inverse-law fit",
        ok,
        format!(
            "exact k = {k:.9}, rendered r2 = {:.6} over {} frames",
            fit.r_squared,
            pts.len()
        ),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn c09_monotonicity() {
    let t = Instant::now();
    let poses: Vec<ScenePose> = (13..=50)
        .map(|dv| ScenePose::new(dv as f64, 0.0, 180.0))
        .collect();
    let gaps: Vec<f64> = simulate(&poses, &noiseless())
        .unwrap()
        .iter()
        .map(|s| s.features.ring_gap_px.expect("rings visible"))
        .collect();
    let gap_ok = gaps.windows(2).all(|w| w[1] < w[0]);

    let poses: Vec<ScenePose> = (45..=315)
        .step_by(5)
        .map(|psi| ScenePose::new(25.0, 0.0, psi as f64))
        .collect();
    let ys: Vec<f64> = simulate(&poses, &noiseless())
        .unwrap()
        .iter()
        .map(|s| s.features.yellow_centroid.expect("helix visible").y)
        .collect();
    let yellow_ok = ys.windows(2).all(|w| w[1] < w[0]) || ys.windows(2).all(|w| w[1] > w[0]);

    let per = &trained().per_distance;
    let k1_ok = per.windows(2).all(|w| w[1].k1 > w[0].k1);
    let k2_ok = per.windows(2).all(|w| w[1].k2 < w[0].k2);
    let k1s: Vec<String> = per.iter().map(|h| format!("{:.3}", h.k1)).collect();
    let k2s: Vec<String> = per.iter().map(|h| format!("{:.3}", h.k2)).collect();
    let ok = gap_ok && yellow_ok && k1_ok && k2_ok;
    report(
        9,
        "monotonicity",
        ok,
        format!(
            "ring gap {gap_ok}, yellow height {yellow_ok}, k1 increasing {k1_ok} [{}], k2 decreasing {k2_ok} [{}]",
            k1s.join(" "),
            k2s.join(" ")
        ),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn c10_noise_robustness() {
    let t = Instant::now();
    let fit = calibrate(&noisy(1000));
    let calib = &fit.calibration;
    let range = held_out(calib, &range_poses(), &noisy(1));
    let bearing = held_out(calib, &bearing_poses(), &noisy(2));
    let heading = held_out(calib, &heading_poses(), &noisy(3));
    let r = range.range.mean_pct_error;
    let b = bearing.bearing.mean_pct_error;
    let h = heading.heading.mean_pct_error;
    let ok = r.is_some_and(|v| v <= 2.0 * RANGE_BOUND_PCT)
        && b.is_some_and(|v| v <= 2.0 * BEARING_BOUND_PCT)
        && h.is_some_and(|v| v <= 2.0 * HEADING_BOUND_PCT);
    let elapsed = t.elapsed();
    let ok = ok && elapsed <= Duration::from_secs(300);
    report(
        10,
        "noise robustness",
        ok,
        format!(
            "range {}, bearing {}, heading {} (bounds 2x)",
            pct(r),
            pct(b),
            pct(h)
        ),
        elapsed,
    );
    assert!(ok);
}

struct Run {
    frames: Vec<Vec<u8>>,
    calibration: String,
    report: String,
}

fn full_run(exec: Execution) -> Run {
    let sim = SimConfig {
        noise: Some(NoiseSpec {
            sigma: 8.0,
            salt_pepper: 0.01,
            seed: 42,
        }),
        execution: exec,
        features: FeatureConfig {
            execution: exec,
            ..FeatureConfig::default()
        },
        ..SimConfig::default()
    };
    let poses = training_poses();
    let frames = poses
        .iter()
        .take(6)
        .map(|p| encode_ppm(&render_with(p, &sim.camera, &sim.marker, exec).unwrap()))
        .collect();
    let samples = simulate(&poses, &sim).unwrap();
    let fit = build_calibration(&samples, &Envelopes::default()).unwrap();
    let report = evaluate_with(&fit.calibration, &samples, exec).unwrap();
    Run {
        frames,
        calibration: calibration_to_json(&fit.calibration),
        report: serde_json::to_string(&report).unwrap(),
    }
}

#[test]
fn c11_determinism() {
    let t = Instant::now();
    let a = full_run(Execution::default());
    let b = full_run(Execution::default());
    let s = full_run(Execution::Sequential);
    let frames = a.frames == b.frames && a.frames == s.frames;
    let calib = a.calibration == b.calibration && a.calibration == s.calibration;
    let reports = a.report == b.report && a.report == s.report;
    let ok = frames && calib && reports;
    report(
        11,
        "determinism",
        ok,
        format!("frames {frames}, calibration {calib}, reports {reports} (repeat and sequential)"),
        t.elapsed(),
    );
    assert!(ok);
}

#[test]
fn dead_zone_frames_still_yield_range() {
    let calib = &trained().calibration;
    let img = render_with(
        &ScenePose::new(25.0, 0.0, 10.0),
        &CameraSpec::default(),
        &MarkerSpec::default(),
        Execution::default(),
    )
    .unwrap();
    let f = extract_features_with(&img, &FeatureConfig::default());
    let est = markerloc::estimate_pose(&f, calib).unwrap();
    assert!(est.range_valid);
    assert!((est.d_v_cm - 25.0).abs() < 0.5);
}
