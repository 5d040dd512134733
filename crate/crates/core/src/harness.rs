//! Closed-loop evaluation: simulate sweeps, score calibrations, export fit
//! curves as CSV and SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{per_distance_heading_fits, CalibrationError, SweepSample};
use crate::estimate::{estimate_pose, Calibration, Envelopes, PoseEstimate};
use crate::segment::{extract_features_with, FeatureConfig};
use crate::synthcam::{
    add_noise, frame_seed, render_with, CameraSpec, MarkerSpec, NoiseSpec, RenderError, ScenePose,
};
use crate::Execution;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("empty manifest: nothing to evaluate")]
    EmptyManifest,
    #[error("unknown curve kind {0:?} (expected range_law, k1k2 or lateral_k)")]
    UnknownCurve(String),
    #[error("not enough data for the {0} curve")]
    NoCurveData(&'static str),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Everything needed to turn poses into measured samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimConfig {
    pub camera: CameraSpec,
    pub marker: MarkerSpec,
    pub features: FeatureConfig,
    pub noise: Option<NoiseSpec>,
    pub execution: Execution,
}

/// Renders each pose, optionally adds noise, and runs feature extraction.
/// Frames are distributed across threads; each frame is processed serially.
pub fn simulate(poses: &[ScenePose], sim: &SimConfig) -> Result<Vec<SweepSample>, RenderError> {
    let indexed: Vec<(usize, ScenePose)> = poses.iter().copied().enumerate().collect();
    let features = FeatureConfig {
        execution: Execution::Sequential,
        ..sim.features
    };
    sim.execution
        .map_slice(&indexed, |(i, pose)| {
            let mut img = render_with(pose, &sim.camera, &sim.marker, Execution::Sequential)?;
            if let Some(n) = sim.noise {
                img = add_noise(&img, n.sigma, n.salt_pepper, frame_seed(n.seed, *i));
            }
            Ok(SweepSample {
                truth: *pose,
                features: extract_features_with(&img, &features),
            })
        })
        .into_iter()
        .collect()
}

/// Absolute difference of two angles after wrapping, in `[0, 180]`.
pub fn angular_error_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Full-scale bases for angular percentage errors.
pub const BEARING_FULL_SCALE_DEG: f64 = 90.0;
pub const HEADING_FULL_SCALE_DEG: f64 = 360.0;

/// Error statistics of one estimated quantity over the samples counted valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VariableStats {
    pub mean_pct_error: Option<f64>,
    pub std_pct_error: Option<f64>,
    pub max_pct_error: Option<f64>,
    /// cm for range, degrees for the angles
    pub mean_abs_error: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub n_valid: usize,
    pub n_invalid: usize,
}

impl VariableStats {
    /// `errors` holds `(percent, absolute)` pairs of the valid samples.
    fn from_errors(mut errors: Vec<(f64, f64)>, n_invalid: usize) -> Self {
        let n = errors.len();
        if n == 0 {
            return Self {
                n_invalid,
                ..Self::default()
            };
        }
        // fixed order keeps the sums independent of input order
        errors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let nf = n as f64;
        let mean = errors.iter().map(|e| e.0).sum::<f64>() / nf;
        let var = errors.iter().map(|e| (e.0 - mean).powi(2)).sum::<f64>() / nf;
        Self {
            mean_pct_error: Some(mean),
            std_pct_error: Some(var.sqrt()),
            max_pct_error: errors.iter().map(|e| e.0).reduce(f64::max),
            mean_abs_error: Some(errors.iter().map(|e| e.1).sum::<f64>() / nf),
            max_abs_error: errors.iter().map(|e| e.1).reduce(f64::max),
            n_valid: n,
            n_invalid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub range: VariableStats,
    pub bearing: VariableStats,
    pub heading: VariableStats,
    pub envelopes: Envelopes,
    pub n_samples: usize,
}

impl ErrorReport {
    /// Aligned text table, one row per quantity.
    pub fn to_table(&self) -> String {
        let env = &self.envelopes;
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>12} {:>12} {:>8} {:>8} {:>9} {:>9} {:>9} {:>10}",
            "variable",
            "d_v (cm)",
            "d_h (cm)",
            "valid",
            "invalid",
            "mean %",
            "std %",
            "max %",
            "mean abs"
        );
        let rows = [
            (
                "range",
                env.range_dv_cm.to_string(),
                "-".to_string(),
                &self.range,
            ),
            (
                "bearing",
                env.range_dv_cm.to_string(),
                env.bearing_dh_cm.to_string(),
                &self.bearing,
            ),
            (
                "heading",
                env.heading_dv_cm.to_string(),
                "-".to_string(),
                &self.heading,
            ),
        ];
        for (name, dv, dh, s) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>12} {:>12} {:>8} {:>8} {:>9} {:>9} {:>9} {:>10}",
                name,
                dv,
                dh,
                s.n_valid,
                s.n_invalid,
                fmt(s.mean_pct_error),
                fmt(s.std_pct_error),
                fmt(s.max_pct_error),
                fmt(s.mean_abs_error)
            );
        }
        out
    }
}

struct Outcome {
    range: Option<(f64, f64)>,
    bearing: Option<(f64, f64)>,
    heading: Option<(f64, f64)>,
}

/// Scores one sample. A quantity counts as valid only when the estimator
/// flags it valid and the true pose lies inside the same envelope.
fn score(sample: &SweepSample, est: Option<PoseEstimate>, env: &Envelopes) -> Outcome {
    let Some(est) = est else {
        return Outcome {
            range: None,
            bearing: None,
            heading: None,
        };
    };
    let t = &sample.truth;
    let range_in = env.range_dv_cm.contains(t.d_v_cm);
    let range = (est.range_valid && range_in).then(|| {
        let truth = t.range_cm();
        let abs = (est.range_cm - truth).abs();
        (100.0 * abs / truth, abs)
    });
    let bearing = (est.bearing_valid && range_in && env.bearing_dh_cm.contains(t.d_h_cm.abs()))
        .then(|| {
            let abs = angular_error_deg(est.bearing_deg, t.bearing_deg());
            (100.0 * abs / BEARING_FULL_SCALE_DEG, abs)
        });
    let psi = t.psi_deg.rem_euclid(360.0);
    let heading_in =
        env.heading_dv_cm.contains(t.d_v_cm) && !env.heading_dead_zone_deg.contains_half_open(psi);
    let heading = match est.heading_deg {
        Some(h) if est.heading_valid && heading_in => {
            let abs = angular_error_deg(h, psi);
            Some((100.0 * abs / HEADING_FULL_SCALE_DEG, abs))
        }
        _ => None,
    };
    Outcome {
        range,
        bearing,
        heading,
    }
}

/// Runs the estimator on every sample and aggregates the errors. Samples
/// with no detectable marker count as invalid for all three quantities.
pub fn evaluate(calib: &Calibration, samples: &[SweepSample]) -> Result<ErrorReport, HarnessError> {
    evaluate_with(calib, samples, Execution::default())
}

pub fn evaluate_with(
    calib: &Calibration,
    samples: &[SweepSample],
    exec: Execution,
) -> Result<ErrorReport, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyManifest);
    }
    let env = calib.envelopes;
    let outcomes = exec.map_slice(samples, |s| {
        score(s, estimate_pose(&s.features, calib).ok(), &env)
    });
    let collect = |pick: fn(&Outcome) -> Option<(f64, f64)>| {
        let valid: Vec<(f64, f64)> = outcomes.iter().filter_map(pick).collect();
        let invalid = outcomes.len() - valid.len();
        VariableStats::from_errors(valid, invalid)
    };
    Ok(ErrorReport {
        range: collect(|o| o.range),
        bearing: collect(|o| o.bearing),
        heading: collect(|o| o.heading),
        envelopes: env,
        n_samples: samples.len(),
    })
}

/// Which fitted relation to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    /// forward distance against ring gap with `k / p`
    RangeLaw,
    /// per-distance heading coefficients with their models
    K1K2,
    /// implied lateral scale against forward distance with `d_v / fx`
    LateralK,
}

impl FromStr for CurveKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "range_law" => Ok(CurveKind::RangeLaw),
            "k1k2" => Ok(CurveKind::K1K2),
            "lateral_k" => Ok(CurveKind::LateralK),
            other => Err(HarnessError::UnknownCurve(other.to_string())),
        }
    }
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::RangeLaw => "range_law",
            CurveKind::K1K2 => "k1k2",
            CurveKind::LateralK => "lateral_k",
        }
    }
}

/// One plot: scattered observations and a fitted polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    pub curve: Vec<(f64, f64)>,
}

const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 380.0;
const MARGIN: f64 = 60.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Standalone SVG with the panels stacked vertically.
pub fn svg_document(panels: &[Panel]) -> String {
    let total_h = PANEL_H * panels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{total_h}" viewBox="0 0 {PANEL_W} {total_h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        let all = p.points.iter().chain(p.curve.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let pw = PANEL_W - 2.0 * MARGIN;
        let ph = PANEL_H - 2.0 * MARGIN;
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN + ph - (y - y0) / (y1 - y0) * ph;
        let _ = writeln!(s, r#"<g transform="translate(0 {})">"#, PANEL_H * i as f64);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
            PANEL_W / 2.0,
            xml_escape(&p.title)
        );
        let (ax, ay) = (MARGIN, MARGIN + ph);
        let _ = writeln!(
            s,
            r#"<line x1="{ax}" y1="{ay}" x2="{}" y2="{ay}" stroke="black"/>"#,
            MARGIN + pw
        );
        let _ = writeln!(
            s,
            r#"<line x1="{ax}" y1="{MARGIN}" x2="{ax}" y2="{ay}" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            MARGIN + pw / 2.0,
            PANEL_H - 15.0,
            xml_escape(&p.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
            MARGIN + ph / 2.0,
            MARGIN + ph / 2.0,
            xml_escape(&p.y_label)
        );
        for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-size="10">{v:.4}</text>"#,
                ay + 14.0
            );
        }
        for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y:.2}" text-anchor="end" font-size="10">{v:.4}</text>"#,
                ax - 4.0
            );
        }
        for &(x, y) in &p.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
                sx(x),
                sy(y)
            );
        }
        let pts: Vec<String> = p
            .curve
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="crimson" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn min_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)))
}

/// Table rows plus the panels of one exported curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    pub panels: Vec<Panel>,
}

pub fn curve_data(
    samples: &[SweepSample],
    calib: &Calibration,
    kind: CurveKind,
) -> Result<CurveData, HarnessError> {
    match kind {
        CurveKind::RangeLaw => {
            let mut pts: Vec<(f64, f64)> = samples
                .iter()
                .filter_map(|s| {
                    s.features
                        .ring_gap_px
                        .filter(|&g| g > 0.0)
                        .map(|g| (g, s.truth.d_v_cm))
                })
                .collect();
            if pts.is_empty() {
                return Err(HarnessError::NoCurveData("range_law"));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let k = calib.k_range;
            let rows = pts
                .iter()
                .map(|&(p, d)| vec![p, d, k / p, 100.0 * (d - k / p).abs() / d])
                .collect();
            let (lo, hi) = min_max(pts.iter().map(|p| p.0));
            Ok(CurveData {
                header: vec!["gap_px", "dv_cm", "fitted_dv_cm", "rel_err_pct"],
                rows,
                panels: vec![Panel {
                    title: format!("forward distance vs ring gap, d = {k:.2} / p"),
                    x_label: "ring gap (px)".into(),
                    y_label: "d_v (cm)".into(),
                    points: pts.clone(),
                    curve: linspace(lo, hi, 100).map(|p| (p, k / p)).collect(),
                }],
            })
        }
        CurveKind::K1K2 => {
            let fits = per_distance_heading_fits(samples, &calib.envelopes)?;
            if fits.is_empty() {
                return Err(HarnessError::NoCurveData("k1k2"));
            }
            let rows = fits
                .iter()
                .map(|h| vec![h.d_v_cm, h.k1, h.k2, calib.k1(h.d_v_cm), calib.k2(h.d_v_cm)])
                .collect();
            let (lo, hi) = min_max(fits.iter().map(|h| h.d_v_cm));
            let grid: Vec<f64> = linspace(lo, hi, 100).collect();
            Ok(CurveData {
                header: vec!["dv_cm", "k1", "k2", "k1_model", "k2_model"],
                rows,
                panels: vec![
                    Panel {
                        title: "heading slope k1 vs forward distance".into(),
                        x_label: "d_v (cm)".into(),
                        y_label: "k1 (deg/px)".into(),
                        points: fits.iter().map(|h| (h.d_v_cm, h.k1)).collect(),
                        curve: grid.iter().map(|&v| (v, calib.k1(v))).collect(),
                    },
                    Panel {
                        title: "heading offset k2 vs forward distance".into(),
                        x_label: "d_v (cm)".into(),
                        y_label: "k2 (deg)".into(),
                        points: fits.iter().map(|h| (h.d_v_cm, h.k2)).collect(),
                        curve: grid.iter().map(|&v| (v, calib.k2(v))).collect(),
                    },
                ],
            })
        }
        CurveKind::LateralK => {
            let mut pts: Vec<(f64, f64, f64)> = samples
                .iter()
                .filter(|s| s.truth.d_h_cm != 0.0)
                .filter_map(|s| {
                    s.features
                        .lateral_offset_px
                        .filter(|p| *p != 0.0)
                        .map(|p| (s.truth.d_v_cm, s.truth.d_h_cm, p))
                })
                .collect();
            if pts.is_empty() {
                return Err(HarnessError::NoCurveData("lateral_k"));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let rows = pts
                .iter()
                .map(|&(v, h, p)| vec![v, h, p, h / p, calib.lateral_scale(v)])
                .collect();
            let (lo, hi) = min_max(pts.iter().map(|p| p.0));
            Ok(CurveData {
                header: vec!["dv_cm", "dh_cm", "offset_px", "k_implied", "k_model"],
                rows,
                panels: vec![Panel {
                    title: format!(
                        "lateral scale vs forward distance, k = d_v / {:.2}",
                        calib.fx_px
                    ),
                    x_label: "d_v (cm)".into(),
                    y_label: "k (cm/px)".into(),
                    points: pts.iter().map(|&(v, h, p)| (v, h / p)).collect(),
                    curve: linspace(lo, hi, 100)
                        .map(|v| (v, calib.lateral_scale(v)))
                        .collect(),
                }],
            })
        }
    }
}

/// Writes the curve's CSV table and SVG plot.
pub fn curve_export(
    samples: &[SweepSample],
    calib: &Calibration,
    kind: CurveKind,
    out_csv: &Path,
    out_svg: &Path,
) -> Result<(), HarnessError> {
    let data = curve_data(samples, calib, kind)?;
    let mut w = csv::Writer::from_path(out_csv)?;
    w.write_record(&data.header)?;
    for row in &data.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: out_csv.display().to_string(),
        source,
    })?;
    fs::write(out_svg, svg_document(&data.panels)).map_err(|source| HarnessError::Io {
        path: out_svg.display().to_string(),
        source,
    })
}
