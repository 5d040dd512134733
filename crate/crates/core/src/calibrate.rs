//! Least-squares fits that regenerate the estimator constants from sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::estimate::{Calibration, Envelopes, Interval, CALIBRATION_SCHEMA_VERSION};
use crate::raster::{load_ppm, PpmError};
use crate::segment::{extract_features_with, FeatureConfig, MarkerFeatures};
use crate::synthcam::{read_manifest, RenderError, ScenePose, MANIFEST_FILE};
use crate::Execution;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("all abscissae are identical")]
    RankDeficient,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("all lateral offsets are zero")]
    ZeroOffsets,
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("{stage} fit failed: {source}")]
    Fit {
        stage: &'static str,
        #[source]
        source: FitError,
    },
    #[error("insufficient coverage: {0}")]
    InsufficientCoverage(String),
    #[error("invalid calibration: {0}")]
    Invalid(String),
    #[error("calibration document: {0}")]
    Json(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] RenderError),
    #[error(transparent)]
    Frame(#[from] PpmError),
}

/// Quality summary of one fit. `residual_rms` is in the units of the fitted
/// quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub parameters: Vec<f64>,
    pub residual_rms: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl FitReport {
    fn from_residuals(parameters: Vec<f64>, observed: &[f64], predicted: &[f64]) -> Self {
        let n = observed.len();
        let mean = observed.iter().sum::<f64>() / n as f64;
        let ss_res: f64 = observed
            .iter()
            .zip(predicted)
            .map(|(o, p)| (o - p).powi(2))
            .sum();
        let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
        let r_squared = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res <= f64::EPSILON * mean.abs().max(1.0) {
            1.0
        } else {
            0.0
        };
        Self {
            parameters,
            residual_rms: (ss_res / n as f64).sqrt(),
            r_squared: r_squared.clamp(0.0, 1.0),
            n,
        }
    }
}

fn need(n: usize, needed: usize) -> Result<(), FitError> {
    if n < needed {
        Err(FitError::InsufficientSamples { needed, got: n })
    } else {
        Ok(())
    }
}

/// Fits `d = k / p` over `(p, d)` pairs: `k = Σ(d/p) / Σ(1/p²)`.
pub fn fit_inverse_k(samples: &[(f64, f64)]) -> Result<(f64, FitReport), FitError> {
    need(samples.len(), 2)?;
    if samples.iter().any(|&(p, _)| !(p > 0.0)) {
        return Err(FitError::NonPositive("pixel gap"));
    }
    let num: f64 = samples.iter().map(|&(p, d)| d / p).sum();
    let den: f64 = samples.iter().map(|&(p, _)| 1.0 / (p * p)).sum();
    let k = num / den;
    let observed: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let predicted: Vec<f64> = samples.iter().map(|&(p, _)| k / p).collect();
    Ok((k, FitReport::from_residuals(vec![k], &observed, &predicted)))
}

/// Ordinary least squares line; returns `(slope, intercept, report)`.
pub fn fit_linear(samples: &[(f64, f64)]) -> Result<(f64, f64, FitReport), FitError> {
    need(samples.len(), 2)?;
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::RankDeficient);
    }
    let sxy: f64 = samples.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let observed: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let predicted: Vec<f64> = samples
        .iter()
        .map(|&(x, _)| slope * x + intercept)
        .collect();
    let report = FitReport::from_residuals(vec![slope, intercept], &observed, &predicted);
    Ok((slope, intercept, report))
}

/// Fits `y = a·exp(b·x)` by a line through `(x, ln y)`; returns `(a, b,
/// report)` with residuals measured on `y`.
pub fn fit_exponential(samples: &[(f64, f64)]) -> Result<(f64, f64, FitReport), FitError> {
    if samples.iter().any(|&(_, y)| !(y > 0.0)) {
        return Err(FitError::NonPositive("exponential ordinate"));
    }
    let logs: Vec<(f64, f64)> = samples.iter().map(|&(x, y)| (x, y.ln())).collect();
    let (b, ln_a, _) = fit_linear(&logs)?;
    let a = ln_a.exp();
    let observed: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let predicted: Vec<f64> = samples.iter().map(|&(x, _)| a * (b * x).exp()).collect();
    Ok((
        a,
        b,
        FitReport::from_residuals(vec![a, b], &observed, &predicted),
    ))
}

/// Fits `fx` in `d_h = p · d_v / fx` over `(p, d_h, d_v)` triples, linear in
/// the reciprocal `1 / fx`.
pub fn fit_fx(samples: &[(f64, f64, f64)]) -> Result<(f64, FitReport), FitError> {
    need(samples.len(), 1)?;
    let den: f64 = samples.iter().map(|&(p, _, v)| (p * v).powi(2)).sum();
    if den == 0.0 {
        return Err(FitError::ZeroOffsets);
    }
    let num: f64 = samples.iter().map(|&(p, h, v)| p * v * h).sum();
    let inv = num / den;
    if !(inv > 0.0) {
        return Err(FitError::NonPositive("focal scale"));
    }
    let fx = 1.0 / inv;
    let observed: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let predicted: Vec<f64> = samples.iter().map(|&(p, _, v)| p * v * inv).collect();
    Ok((
        fx,
        FitReport::from_residuals(vec![fx], &observed, &predicted),
    ))
}

/// One frame of a sweep: ground truth and what the detector measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub truth: ScenePose,
    pub features: MarkerFeatures,
}

/// Heading coefficients fitted at a single forward distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingFit {
    pub d_v_cm: f64,
    pub k1: f64,
    pub k2: f64,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub calibration: Calibration,
    pub range: FitReport,
    pub lateral: FitReport,
    pub k1: FitReport,
    pub k2: FitReport,
    pub per_distance: Vec<HeadingFit>,
}

impl CalibrationFit {
    /// Aligned text summary of every fit.
    pub fn table(&self) -> String {
        let c = &self.calibration;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>28} {:>12} {:>10} {:>5}",
            "fit", "parameters", "rms", "r2", "n"
        );
        let row = |out: &mut String, name: &str, params: String, r: &FitReport| {
            let _ = writeln!(
                out,
                "{:<10} {:>28} {:>12.5} {:>10.6} {:>5}",
                name, params, r.residual_rms, r.r_squared, r.n
            );
        };
        row(
            &mut out,
            "range",
            format!("k={:.4}", c.k_range),
            &self.range,
        );
        row(
            &mut out,
            "lateral",
            format!("fx={:.3}", c.fx_px),
            &self.lateral,
        );
        row(
            &mut out,
            "k1",
            format!("{:.6}*dv{:+.6}", c.k1_slope, c.k1_intercept),
            &self.k1,
        );
        row(
            &mut out,
            "k2",
            format!("{:.4}*exp({:.6}*dv)", c.k2_a, c.k2_b),
            &self.k2,
        );
        for h in &self.per_distance {
            row(
                &mut out,
                &format!("psi@{:.1}", h.d_v_cm),
                format!("k1={:.4} k2={:.3}", h.k1, h.k2),
                &h.report,
            );
        }
        out
    }
}

fn distance_key(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

fn sorted_samples(dataset: &[SweepSample]) -> Vec<SweepSample> {
    let mut v = dataset.to_vec();
    let key = |s: &SweepSample| {
        [
            s.truth.d_v_cm,
            s.truth.d_h_cm,
            s.truth.psi_deg,
            s.features.ring_gap_px.unwrap_or(f64::NAN),
            s.features.spiral_gap_px.unwrap_or(f64::NAN),
            s.features.lateral_offset_px.unwrap_or(f64::NAN),
        ]
    };
    v.sort_by(|a, b| {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    v
}

/// Minimum distinct headings a distance needs to contribute a heading fit.
pub const MIN_HEADINGS_PER_DISTANCE: usize = 5;
/// Minimum distinct forward distances in the range sweep.
pub const MIN_RANGE_DISTANCES: usize = 5;

/// Per-distance line fits of heading against spiral gap, `psi = k1·gap − k2`.
///
/// Uses samples inside the heading distance envelope whose true heading is
/// outside the dead zone and whose lateral offset is below the bearing
/// envelope, i.e. with the marker straight ahead. Distances with fewer than
/// [`MIN_HEADINGS_PER_DISTANCE`] distinct headings are skipped.
pub fn per_distance_heading_fits(
    dataset: &[SweepSample],
    envelopes: &Envelopes,
) -> Result<Vec<HeadingFit>, CalibrationError> {
    let samples = sorted_samples(dataset);
    let mut groups: BTreeMap<i64, (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for s in &samples {
        let psi = s.truth.psi_deg.rem_euclid(360.0);
        let Some(gap) = s.features.spiral_gap_px else {
            continue;
        };
        if !envelopes.heading_dv_cm.contains(s.truth.d_v_cm)
            || envelopes.heading_dead_zone_deg.contains_half_open(psi)
            || s.truth.d_h_cm.abs() >= envelopes.bearing_dh_cm.lo
        {
            continue;
        }
        groups
            .entry(distance_key(s.truth.d_v_cm))
            .or_insert_with(|| (s.truth.d_v_cm, Vec::new()))
            .1
            .push((gap, psi));
    }
    let mut fits = Vec::new();
    for (_, (d_v, pts)) in groups {
        let mut headings: Vec<i64> = pts.iter().map(|p| distance_key(p.1)).collect();
        headings.sort_unstable();
        headings.dedup();
        if headings.len() < MIN_HEADINGS_PER_DISTANCE {
            continue;
        }
        let (k1, intercept, report) = fit_linear(&pts).map_err(|source| CalibrationError::Fit {
            stage: "heading",
            source,
        })?;
        fits.push(HeadingFit {
            d_v_cm: d_v,
            k1,
            k2: -intercept,
            report,
        });
    }
    Ok(fits)
}

/// Fits every constant of a [`Calibration`] from a sweep dataset. The result
/// does not depend on the order of `dataset`.
pub fn build_calibration(
    dataset: &[SweepSample],
    envelopes: &Envelopes,
) -> Result<CalibrationFit, CalibrationError> {
    envelopes.validate().map_err(CalibrationError::Invalid)?;
    let samples = sorted_samples(dataset);

    let range_pts: Vec<(f64, f64)> = samples
        .iter()
        .filter_map(|s| {
            s.features
                .ring_gap_px
                .filter(|&g| g > 0.0)
                .map(|g| (g, s.truth.d_v_cm))
        })
        .collect();
    let mut distances: Vec<i64> = range_pts.iter().map(|p| distance_key(p.1)).collect();
    distances.sort_unstable();
    distances.dedup();
    if distances.len() < MIN_RANGE_DISTANCES {
        return Err(CalibrationError::InsufficientCoverage(format!(
            "range sweep needs at least {MIN_RANGE_DISTANCES} distinct d_v values with both rings detected, found {}",
            distances.len()
        )));
    }
    let (k_range, range) = fit_inverse_k(&range_pts).map_err(|source| CalibrationError::Fit {
        stage: "range",
        source,
    })?;

    let lateral_pts: Vec<(f64, f64, f64)> = samples
        .iter()
        .filter(|s| s.truth.d_h_cm != 0.0)
        .filter_map(|s| {
            s.features
                .lateral_offset_px
                .map(|p| (p, s.truth.d_h_cm, s.truth.d_v_cm))
        })
        .collect();
    if lateral_pts.is_empty() {
        return Err(CalibrationError::InsufficientCoverage(
            "lateral fit needs samples with non-zero d_h and both rings detected".into(),
        ));
    }
    let (fx_px, lateral) = fit_fx(&lateral_pts).map_err(|source| CalibrationError::Fit {
        stage: "lateral",
        source,
    })?;

    let per_distance = per_distance_heading_fits(&samples, envelopes)?;
    if per_distance.len() < 2 {
        return Err(CalibrationError::InsufficientCoverage(format!(
            "heading fit needs at least 2 distances inside {} cm with {MIN_HEADINGS_PER_DISTANCE} or more distinct headings, found {}",
            envelopes.heading_dv_cm,
            per_distance.len()
        )));
    }
    let k1_pts: Vec<(f64, f64)> = per_distance.iter().map(|h| (h.d_v_cm, h.k1)).collect();
    let k2_pts: Vec<(f64, f64)> = per_distance.iter().map(|h| (h.d_v_cm, h.k2)).collect();
    let (k1_slope, k1_intercept, k1) =
        fit_linear(&k1_pts).map_err(|source| CalibrationError::Fit {
            stage: "k1",
            source,
        })?;
    let (k2_a, k2_b, k2) = fit_exponential(&k2_pts).map_err(|source| CalibrationError::Fit {
        stage: "k2",
        source,
    })?;

    let calibration = Calibration {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        k_range,
        fx_px,
        k1_slope,
        k1_intercept,
        k2_a,
        k2_b,
        envelopes: *envelopes,
    };
    calibration.validate().map_err(CalibrationError::Invalid)?;
    Ok(CalibrationFit {
        calibration,
        range,
        lateral,
        k1,
        k2,
        per_distance,
    })
}

pub fn calibration_to_json(calib: &Calibration) -> String {
    serde_json::to_string_pretty(calib).expect("calibration serializes")
}

pub fn calibration_from_json(text: &str) -> Result<Calibration, CalibrationError> {
    let calib: Calibration =
        serde_json::from_str(text).map_err(|e| CalibrationError::Json(e.to_string()))?;
    calib.validate().map_err(CalibrationError::Invalid)?;
    Ok(calib)
}

pub fn save_calibration(
    calib: &Calibration,
    path: impl AsRef<Path>,
) -> Result<(), CalibrationError> {
    let path = path.as_ref();
    fs::write(path, calibration_to_json(calib) + "\n").map_err(|source| CalibrationError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<Calibration, CalibrationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CalibrationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    calibration_from_json(&text)
}

/// Reads `manifest.csv` in `dir` and measures every listed frame.
pub fn load_dataset(
    dir: impl AsRef<Path>,
    cfg: &FeatureConfig,
) -> Result<Vec<SweepSample>, CalibrationError> {
    let dir = dir.as_ref();
    let rows = read_manifest(&dir.join(MANIFEST_FILE))?;
    let measured =
        Execution::default().map_slice(&rows, |row| -> Result<SweepSample, CalibrationError> {
            let image = load_ppm(dir.join(&row.image))?;
            let cfg = FeatureConfig {
                execution: Execution::Sequential,
                ..*cfg
            };
            Ok(SweepSample {
                truth: row.pose(),
                features: extract_features_with(&image, &cfg),
            })
        });
    measured.into_iter().collect()
}
