//! Pixel features to metric range, bearing and heading.
//!
//! * forward distance: `d_v = k_range / ring_gap_px`
//! * lateral offset: `d_h = lateral_offset_px * d_v / fx_px`
//! * bearing: `atan(d_h / d_v)`, range: `d_v / cos(bearing)`
//! * heading: `psi = k1(d_v) * spiral_gap_px - k2(d_v)` with
//!   `k1(d_v) = k1_slope * d_v + k1_intercept` and
//!   `k2(d_v) = k2_a * exp(k2_b * d_v)`

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::MarkerFeatures;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),
    #[error("{what} = {value} lies outside [{lo}, {hi}]")]
    OutOfEnvelope {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("bearing {0} deg makes the range singular")]
    SingularGeometry(f64),
    #[error("marker not found: {0} centroid missing")]
    MarkerNotFound(&'static str),
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Membership in `[lo, hi)`.
    pub fn contains_half_open(&self, v: f64) -> bool {
        v >= self.lo && v < self.hi
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl std::str::FromStr for Interval {
    type Err = String;

    /// Parses `lo:hi`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
        let iv = Interval::new(parse(lo)?, parse(hi)?);
        if !iv.is_valid() {
            return Err(format!("empty interval {s:?}"));
        }
        Ok(iv)
    }
}

/// Validity envelopes. Defaults: range 13–50 cm, lateral 5.1–23 cm,
/// heading 12–37 cm with a dead zone of `[0°, 45°)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    pub range_dv_cm: Interval,
    pub bearing_dh_cm: Interval,
    pub heading_dv_cm: Interval,
    /// Half-open `[lo, hi)`.
    pub heading_dead_zone_deg: Interval,
}

impl Default for Envelopes {
    fn default() -> Self {
        Self {
            range_dv_cm: Interval::new(13.0, 50.0),
            bearing_dh_cm: Interval::new(5.1, 23.0),
            heading_dv_cm: Interval::new(12.0, 37.0),
            heading_dead_zone_deg: Interval::new(0.0, 45.0),
        }
    }
}

impl Envelopes {
    pub fn validate(&self) -> Result<(), String> {
        for (name, iv) in [
            ("range_dv_cm", self.range_dv_cm),
            ("bearing_dh_cm", self.bearing_dh_cm),
            ("heading_dv_cm", self.heading_dv_cm),
            ("heading_dead_zone_deg", self.heading_dead_zone_deg),
        ] {
            if !iv.is_valid() {
                return Err(format!("envelope {name} must satisfy lo < hi"));
            }
        }
        Ok(())
    }
}

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    CALIBRATION_SCHEMA_VERSION
}

/// Fitted constants mapping pixel features to metric pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// cm·px
    pub k_range: f64,
    pub fx_px: f64,
    pub k1_slope: f64,
    pub k1_intercept: f64,
    pub k2_a: f64,
    /// per cm
    pub k2_b: f64,
    #[serde(default)]
    pub envelopes: Envelopes,
}

impl Calibration {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != CALIBRATION_SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {}",
                self.schema_version
            ));
        }
        let positive = [
            ("k_range", self.k_range),
            ("fx_px", self.fx_px),
            ("k1_slope", self.k1_slope),
            ("k2_a", self.k2_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.k1_intercept.is_finite() || !self.k2_b.is_finite() {
            return Err("k1_intercept and k2_b must be finite".into());
        }
        self.envelopes.validate()
    }

    pub fn k1(&self, d_v_cm: f64) -> f64 {
        self.k1_slope * d_v_cm + self.k1_intercept
    }

    pub fn k2(&self, d_v_cm: f64) -> f64 {
        self.k2_a * (self.k2_b * d_v_cm).exp()
    }

    /// Lateral scale in cm per pixel at forward distance `d_v_cm`.
    pub fn lateral_scale(&self, d_v_cm: f64) -> f64 {
        d_v_cm / self.fx_px
    }
}

pub fn vertical_range_cm(ring_gap_px: f64, calib: &Calibration) -> Result<f64, EstimateError> {
    if !(ring_gap_px > 0.0) {
        return Err(EstimateError::DegenerateFeature(format!(
            "ring gap must be positive, got {ring_gap_px}"
        )));
    }
    Ok(calib.k_range / ring_gap_px)
}

pub fn lateral_offset_cm(
    lateral_offset_px: f64,
    d_v_cm: f64,
    calib: &Calibration,
) -> Result<f64, EstimateError> {
    if !(d_v_cm > 0.0) {
        return Err(EstimateError::DegenerateFeature(format!(
            "forward distance must be positive, got {d_v_cm}"
        )));
    }
    Ok(lateral_offset_px * calib.lateral_scale(d_v_cm))
}

/// Signed bearing in degrees, negative to the left.
pub fn bearing_deg(d_h_cm: f64, d_v_cm: f64) -> Result<f64, EstimateError> {
    if !(d_v_cm > 0.0) {
        return Err(EstimateError::DegenerateFeature(format!(
            "forward distance must be positive, got {d_v_cm}"
        )));
    }
    Ok((d_h_cm / d_v_cm).atan().to_degrees())
}

pub fn relative_range_cm(d_v_cm: f64, bearing_deg: f64) -> Result<f64, EstimateError> {
    if !(bearing_deg.abs() < 90.0) {
        return Err(EstimateError::SingularGeometry(bearing_deg));
    }
    Ok(d_v_cm / bearing_deg.to_radians().cos())
}

/// `k1 * gap - k2`, wrapped into `[0, 360)`.
pub fn heading_from_coefficients(spiral_gap_px: f64, k1: f64, k2: f64) -> f64 {
    let psi = (k1 * spiral_gap_px - k2).rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if psi >= 360.0 {
        0.0
    } else {
        psi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingReading {
    pub heading_deg: f64,
    pub in_dead_zone: bool,
}

pub fn heading_deg(
    spiral_gap_px: f64,
    d_v_cm: f64,
    calib: &Calibration,
) -> Result<HeadingReading, EstimateError> {
    let env = calib.envelopes.heading_dv_cm;
    if !env.contains(d_v_cm) {
        return Err(EstimateError::OutOfEnvelope {
            what: "d_v",
            value: d_v_cm,
            lo: env.lo,
            hi: env.hi,
        });
    }
    let psi = heading_from_coefficients(spiral_gap_px, calib.k1(d_v_cm), calib.k2(d_v_cm));
    Ok(HeadingReading {
        heading_deg: psi,
        in_dead_zone: calib
            .envelopes
            .heading_dead_zone_deg
            .contains_half_open(psi),
    })
}

/// Relative pose with per-quantity validity flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub d_v_cm: f64,
    pub d_h_cm: f64,
    pub range_cm: f64,
    pub bearing_deg: f64,
    /// Present whenever the yellow helix was measured, even when invalid.
    pub heading_deg: Option<f64>,
    pub range_valid: bool,
    pub bearing_valid: bool,
    pub heading_valid: bool,
}

pub fn estimate_pose(
    features: &MarkerFeatures,
    calib: &Calibration,
) -> Result<PoseEstimate, EstimateError> {
    if features.red_centroid.is_none() {
        return Err(EstimateError::MarkerNotFound("red"));
    }
    if features.blue_centroid.is_none() {
        return Err(EstimateError::MarkerNotFound("blue"));
    }
    let gap = features
        .ring_gap_px
        .ok_or_else(|| EstimateError::DegenerateFeature("ring gap missing".into()))?;
    let offset = features
        .lateral_offset_px
        .ok_or_else(|| EstimateError::DegenerateFeature("lateral offset missing".into()))?;

    let env = &calib.envelopes;
    let d_v = vertical_range_cm(gap, calib)?;
    let d_h = lateral_offset_cm(offset, d_v, calib)?;
    let bearing = bearing_deg(d_h, d_v)?;
    let range = relative_range_cm(d_v, bearing)?;

    let range_valid = env.range_dv_cm.contains(d_v);
    let bearing_valid = range_valid && env.bearing_dh_cm.contains(d_h.abs());

    let heading = features
        .spiral_gap_px
        .map(|g| heading_from_coefficients(g, calib.k1(d_v), calib.k2(d_v)));
    let heading_valid = match (features.spiral_gap_px, heading) {
        (Some(g), Some(_)) => matches!(heading_deg(g, d_v, calib), Ok(r) if !r.in_dead_zone),
        _ => false,
    };

    Ok(PoseEstimate {
        d_v_cm: d_v,
        d_h_cm: d_h,
        range_cm: range,
        bearing_deg: bearing,
        heading_deg: heading,
        range_valid,
        bearing_valid,
        heading_valid,
    })
}
