//! Color segmentation and moment features of the marker regions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{median_filter_with, rgb_to_hsv, Hsv, HsvImage, Image, DEFAULT_MEDIAN_WINDOW};
use crate::Execution;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("empty region: centroid undefined")]
    EmptyRegion,
    #[error("invalid color range {name}: {reason}")]
    InvalidRange { name: MarkerColor, reason: String },
    #[error("threshold set is missing a {0} range")]
    MissingColor(MarkerColor),
    #[error("threshold set lists {0} twice")]
    DuplicateColor(MarkerColor),
    #[error("threshold document: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerColor {
    Red,
    Blue,
    Yellow,
}

impl std::fmt::Display for MarkerColor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MarkerColor::Red => "red",
            MarkerColor::Blue => "blue",
            MarkerColor::Yellow => "yellow",
        })
    }
}

/// HSV acceptance region. `hue_lo > hue_hi` denotes an interval that wraps
/// through 0°. Both hue bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorRange {
    pub name: MarkerColor,
    pub hue_lo: f64,
    pub hue_hi: f64,
    pub sat_min: f64,
    pub val_min: f64,
}

impl ColorRange {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let bad = |reason: &str| {
            Err(SegmentError::InvalidRange {
                name: self.name,
                reason: reason.to_string(),
            })
        };
        let hue_ok = |h: f64| (0.0..360.0).contains(&h);
        if !hue_ok(self.hue_lo) || !hue_ok(self.hue_hi) {
            return bad("hue bounds must lie in [0, 360)");
        }
        if !(0.0..=1.0).contains(&self.sat_min) || !(0.0..=1.0).contains(&self.val_min) {
            return bad("saturation and value minima must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn contains(&self, p: Hsv) -> bool {
        let hue_in = if self.hue_lo <= self.hue_hi {
            p.h >= self.hue_lo && p.h <= self.hue_hi
        } else {
            p.h >= self.hue_lo || p.h <= self.hue_hi
        };
        hue_in && p.s >= self.sat_min && p.v >= self.val_min
    }
}

/// The three ranges the feature extractor needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorRanges {
    pub red: ColorRange,
    pub blue: ColorRange,
    pub yellow: ColorRange,
}

impl Default for ColorRanges {
    fn default() -> Self {
        let range = |name, hue_lo, hue_hi| ColorRange {
            name,
            hue_lo,
            hue_hi,
            sat_min: 0.5,
            val_min: 0.3,
        };
        Self {
            red: range(MarkerColor::Red, 340.0, 20.0),
            blue: range(MarkerColor::Blue, 200.0, 260.0),
            yellow: range(MarkerColor::Yellow, 45.0, 75.0),
        }
    }
}

impl ColorRanges {
    /// Builds the set from a list holding exactly one range per color.
    pub fn from_list(list: &[ColorRange]) -> Result<Self, SegmentError> {
        let mut slots: [Option<ColorRange>; 3] = [None; 3];
        for r in list {
            r.validate()?;
            let i = match r.name {
                MarkerColor::Red => 0,
                MarkerColor::Blue => 1,
                MarkerColor::Yellow => 2,
            };
            if slots[i].replace(*r).is_some() {
                return Err(SegmentError::DuplicateColor(r.name));
            }
        }
        Ok(Self {
            red: slots[0].ok_or(SegmentError::MissingColor(MarkerColor::Red))?,
            blue: slots[1].ok_or(SegmentError::MissingColor(MarkerColor::Blue))?,
            yellow: slots[2].ok_or(SegmentError::MissingColor(MarkerColor::Yellow))?,
        })
    }

    /// Parses a JSON array of `{name, hue_lo, hue_hi, sat_min, val_min}`.
    pub fn from_json(text: &str) -> Result<Self, SegmentError> {
        let list: Vec<ColorRange> =
            serde_json::from_str(text).map_err(|e| SegmentError::Json(e.to_string()))?;
        Self::from_list(&list)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&[self.red, self.blue, self.yellow])
            .expect("color ranges serialize")
    }
}

/// Binary region, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    /// Panics when `bits.len() != width * height`.
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn set_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % self.width) as f64, (i / self.width) as f64))
    }
}

pub fn color_mask(image: &HsvImage, range: &ColorRange) -> Mask {
    Mask::new(
        image.width(),
        image.height(),
        image.pixels().iter().map(|&p| range.contains(p)).collect(),
    )
}

/// Raw moments up to first order, central moments of second order, and the
/// centroid of a binary region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m00: f64,
    pub m10: f64,
    pub m01: f64,
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pixel `(x, y)` sits at integer coordinates, so a single set bit at column
/// 5, row 7 has its centroid at exactly `(5, 7)`.
pub fn compute_moments(mask: &Mask) -> Result<Moments, SegmentError> {
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for (x, y) in mask.set_points() {
        m00 += 1.0;
        m10 += x;
        m01 += y;
    }
    if m00 == 0.0 {
        return Err(SegmentError::EmptyRegion);
    }
    let cx = m10 / m00;
    let cy = m01 / m00;
    // second pass about the centroid avoids cancellation in m20 - cx*m10
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for (x, y) in mask.set_points() {
        let (dx, dy) = (x - cx, y - cy);
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
    }
    Ok(Moments {
        m00,
        m10,
        m01,
        mu20,
        mu02,
        mu11,
        cx,
        cy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// How the red–blue and yellow–blue centroid separations are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMetric {
    /// Absolute difference of the row coordinates.
    #[default]
    Vertical,
    Euclidean,
}

impl GapMetric {
    fn between(self, a: Point, b: Point) -> f64 {
        match self {
            GapMetric::Vertical => (a.y - b.y).abs(),
            GapMetric::Euclidean => (a.x - b.x).hypot(a.y - b.y),
        }
    }
}

/// Pixel-space measurements of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkerFeatures {
    pub red_centroid: Option<Point>,
    pub blue_centroid: Option<Point>,
    pub yellow_centroid: Option<Point>,
    pub red_area: u64,
    pub blue_area: u64,
    pub yellow_area: u64,
    /// Red to blue ring centroid separation.
    pub ring_gap_px: Option<f64>,
    /// Yellow helix to blue ring centroid separation.
    pub spiral_gap_px: Option<f64>,
    /// Signed column offset of the red/blue midpoint from the image center
    /// line, positive to the right.
    pub lateral_offset_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub ranges: ColorRanges,
    /// Regions smaller than this are treated as absent.
    pub min_area: u64,
    pub median_window: usize,
    pub gap_metric: GapMetric,
    /// Schedule for the median filter rows.
    pub execution: Execution,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            ranges: ColorRanges::default(),
            min_area: 20,
            median_window: DEFAULT_MEDIAN_WINDOW,
            gap_metric: GapMetric::Vertical,
            execution: Execution::default(),
        }
    }
}

/// Filter, convert, threshold and measure with the default window and gap
/// metric.
pub fn extract_features(image: &Image, ranges: &ColorRanges, min_area: u64) -> MarkerFeatures {
    extract_features_with(
        image,
        &FeatureConfig {
            ranges: *ranges,
            min_area,
            ..FeatureConfig::default()
        },
    )
}

pub fn extract_features_with(image: &Image, cfg: &FeatureConfig) -> MarkerFeatures {
    // frames smaller than the window are measured unfiltered
    let window = cfg
        .median_window
        .min(image.width().min(image.height()))
        .max(1);
    let window = if window.is_multiple_of(2) {
        window - 1
    } else {
        window
    };
    let filtered =
        median_filter_with(image, window, cfg.execution).expect("window clamped to a valid size");
    let hsv = rgb_to_hsv(&filtered);

    let measure = |range: &ColorRange| -> (u64, Option<Point>) {
        let mask = color_mask(&hsv, range);
        match compute_moments(&mask) {
            Ok(m) if m.m00 as u64 >= cfg.min_area => {
                (m.m00 as u64, Some(Point { x: m.cx, y: m.cy }))
            }
            Ok(m) => (m.m00 as u64, None),
            Err(_) => (0, None),
        }
    };
    let (red_area, red) = measure(&cfg.ranges.red);
    let (blue_area, blue) = measure(&cfg.ranges.blue);
    let (yellow_area, yellow) = measure(&cfg.ranges.yellow);

    let center_x = (image.width() as f64 - 1.0) / 2.0;
    let (ring_gap_px, lateral_offset_px) = match (red, blue) {
        (Some(r), Some(b)) => (
            Some(cfg.gap_metric.between(r, b)),
            Some((r.x + b.x) / 2.0 - center_x),
        ),
        _ => (None, None),
    };
    let spiral_gap_px = match (yellow, blue) {
        (Some(y), Some(b)) => Some(cfg.gap_metric.between(y, b)),
        _ => None,
    };

    MarkerFeatures {
        red_centroid: red,
        blue_centroid: blue,
        yellow_centroid: yellow,
        red_area,
        blue_area,
        yellow_area,
        ring_gap_px,
        spiral_gap_px,
        lateral_offset_px,
    }
}
