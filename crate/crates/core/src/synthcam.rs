//! Ray-cast renderer for the cylindrical marker under a pinhole camera.
//!
//! Camera frame: `x` to the right, `y` up, `z` forward, optical center at
//! `height_cm` above the ground. The marker axis is vertical at lateral
//! offset `d_h` and forward depth `d_v + radius`, so `d_v` is the forward
//! distance from the lens to the marker's nearest surface line.
//!
//! Texture: a red ring on top, a blue ring at the bottom, and a yellow
//! single-turn helical stripe on the white band between them. The stripe's
//! height within the band encodes the surface azimuth. Azimuth is measured
//! counter-clockwise seen from above, and the azimuth facing the camera
//! equals the marker heading `psi`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{save_ppm, Image, PpmError, Rgb};
use crate::Execution;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid marker: {0}")]
    Marker(String),
    #[error("invalid pose: {0}")]
    Pose(String),
    #[error("sweep grid: {0}")]
    Grid(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ppm(#[from] PpmError),
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerColors {
    pub red: Rgb,
    pub blue: Rgb,
    pub yellow: Rgb,
    pub white: Rgb,
    /// Color of rays that miss the marker.
    pub background: Rgb,
}

impl Default for MarkerColors {
    fn default() -> Self {
        Self {
            red: [255, 0, 0],
            blue: [0, 0, 255],
            yellow: [255, 255, 0],
            white: [255, 255, 255],
            background: [255, 255, 255],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkerSpec {
    pub diameter_cm: f64,
    pub height_cm: f64,
    pub top_ring_frac: f64,
    pub bottom_ring_frac: f64,
    /// Stripe height as a fraction of the inner band.
    pub spiral_width_frac: f64,
    /// Azimuth arc `[start, end]` that carries the stripe. The arc around the
    /// seam is left white so the seam never pulls the stripe centroid.
    pub helix_start_deg: f64,
    pub helix_end_deg: f64,
    pub colors: MarkerColors,
}

impl Default for MarkerSpec {
    fn default() -> Self {
        Self {
            diameter_cm: 4.0,
            height_cm: 6.0,
            top_ring_frac: 1.0 / 6.0,
            bottom_ring_frac: 1.0 / 6.0,
            spiral_width_frac: 0.25,
            helix_start_deg: 45.0,
            helix_end_deg: 315.0,
            colors: MarkerColors::default(),
        }
    }
}

impl MarkerSpec {
    pub fn radius_cm(&self) -> f64 {
        self.diameter_cm / 2.0
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !(self.diameter_cm > 0.0 && self.height_cm > 0.0) {
            return Err(RenderError::Marker("dimensions must be positive".into()));
        }
        if !frac(self.top_ring_frac)
            || !frac(self.bottom_ring_frac)
            || !frac(self.spiral_width_frac)
        {
            return Err(RenderError::Marker("fractions must lie in (0, 1)".into()));
        }
        if self.top_ring_frac + self.bottom_ring_frac >= 1.0 {
            return Err(RenderError::Marker("rings leave no inner band".into()));
        }
        if !(0.0..=360.0).contains(&self.helix_start_deg)
            || !(0.0..=360.0).contains(&self.helix_end_deg)
            || self.helix_start_deg >= self.helix_end_deg
        {
            return Err(RenderError::Marker(
                "helix arc must satisfy 0 <= start < end <= 360".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub fx_px: f64,
    pub fy_px: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    /// Optical center above the ground.
    pub height_cm: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width_px: 640,
            height_px: 460,
            fx_px: 500.0,
            fy_px: 500.0,
            cx_px: 320.0,
            cy_px: 230.0,
            height_cm: 8.5,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(RenderError::Camera("empty frame".into()));
        }
        if !(self.fx_px > 0.0 && self.fy_px > 0.0) {
            return Err(RenderError::Camera("focal scales must be positive".into()));
        }
        if !(0.0..=self.width_px as f64).contains(&self.cx_px)
            || !(0.0..=self.height_px as f64).contains(&self.cy_px)
        {
            return Err(RenderError::Camera(
                "principal point outside the frame".into(),
            ));
        }
        Ok(())
    }

    /// Continuous image coordinates of a camera-frame point (pixel centers
    /// sit at `i + 0.5`).
    pub fn project(&self, x: f64, y_above_ground: f64, z: f64) -> (f64, f64) {
        (
            self.cx_px + self.fx_px * x / z,
            self.cy_px - self.fy_px * (y_above_ground - self.height_cm) / z,
        )
    }
}

/// Ground-truth relative pose of the marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePose {
    /// Forward distance from the lens to the marker's nearest surface.
    pub d_v_cm: f64,
    /// Lateral offset of the marker axis, positive to the right.
    pub d_h_cm: f64,
    pub psi_deg: f64,
    /// Base of the marker above the ground; `None` centers the marker on the
    /// optical axis height.
    #[serde(default)]
    pub marker_base_height_cm: Option<f64>,
}

impl ScenePose {
    pub fn new(d_v_cm: f64, d_h_cm: f64, psi_deg: f64) -> Self {
        Self {
            d_v_cm,
            d_h_cm,
            psi_deg,
            marker_base_height_cm: None,
        }
    }

    pub fn bearing_deg(&self) -> f64 {
        self.d_h_cm.atan2(self.d_v_cm).to_degrees()
    }

    pub fn range_cm(&self) -> f64 {
        self.d_v_cm / self.bearing_deg().to_radians().cos()
    }

    fn base_height(&self, cam: &CameraSpec, spec: &MarkerSpec) -> f64 {
        self.marker_base_height_cm
            .unwrap_or(cam.height_cm - spec.height_cm / 2.0)
    }
}

/// Color of the marker surface at `azimuth_deg` and `height_frac` (0 at the
/// base, 1 at the top).
pub fn marker_texture(azimuth_deg: f64, height_frac: f64, spec: &MarkerSpec) -> Rgb {
    let c = &spec.colors;
    if height_frac >= 1.0 - spec.top_ring_frac {
        return c.red;
    }
    if height_frac < spec.bottom_ring_frac {
        return c.blue;
    }
    let band = 1.0 - spec.top_ring_frac - spec.bottom_ring_frac;
    let inner = (height_frac - spec.bottom_ring_frac) / band;
    let on_arc = azimuth_deg >= spec.helix_start_deg && azimuth_deg <= spec.helix_end_deg;
    if on_arc && (inner - azimuth_deg / 360.0).abs() <= spec.spiral_width_frac / 2.0 {
        c.yellow
    } else {
        c.white
    }
}

struct Scene {
    cam: CameraSpec,
    spec: MarkerSpec,
    axis_x: f64,
    axis_z: f64,
    radius: f64,
    base: f64,
    top: f64,
    psi: f64,
    facing: f64,
}

impl Scene {
    fn new(pose: &ScenePose, cam: &CameraSpec, spec: &MarkerSpec) -> Result<Self, RenderError> {
        cam.validate()?;
        spec.validate()?;
        if !(pose.d_v_cm > 0.0) || !pose.d_h_cm.is_finite() || !pose.psi_deg.is_finite() {
            return Err(RenderError::Pose(
                "d_v must be positive and all fields finite".into(),
            ));
        }
        let radius = spec.radius_cm();
        let axis_x = pose.d_h_cm;
        let axis_z = pose.d_v_cm + radius;
        let base = pose.base_height(cam, spec);
        Ok(Self {
            cam: *cam,
            spec: *spec,
            axis_x,
            axis_z,
            radius,
            base,
            top: base + spec.height_cm,
            psi: pose.psi_deg.rem_euclid(360.0),
            facing: (-axis_x).atan2(-axis_z),
        })
    }

    /// Texture azimuth of a surface point at `(x, z)` in the camera frame.
    fn azimuth(&self, x: f64, z: f64) -> f64 {
        let point = (x - self.axis_x).atan2(z - self.axis_z);
        let delta = (self.facing - point).to_degrees();
        (self.psi + delta).rem_euclid(360.0)
    }

    fn shade(&self, px: f64, py: f64) -> Rgb {
        let cam = &self.cam;
        let dx = (px - cam.cx_px) / cam.fx_px;
        let dy = -(py - cam.cy_px) / cam.fy_px;
        let y_at = |t: f64| cam.height_cm + t * dy;

        let mut best: Option<(f64, f64)> = None; // (t, height_frac)
        let mut consider = |t: f64, frac: f64| {
            if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, frac));
            }
        };

        // side: (t*dx - ax)^2 + (t - az)^2 = r^2
        let a = dx * dx + 1.0;
        let b = -2.0 * (dx * self.axis_x + self.axis_z);
        let c = self.axis_x * self.axis_x + self.axis_z * self.axis_z - self.radius * self.radius;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let y = y_at(t);
            if y >= self.base && y <= self.top {
                consider(t, (y - self.base) / self.spec.height_cm);
            }
        }
        // caps
        if dy != 0.0 {
            for (plane, frac) in [(self.base, 0.0), (self.top, 1.0)] {
                let t = (plane - cam.height_cm) / dy;
                let (x, z) = (t * dx, t);
                if (x - self.axis_x).powi(2) + (z - self.axis_z).powi(2)
                    <= self.radius * self.radius
                {
                    consider(t, frac);
                }
            }
        }

        match best {
            None => self.spec.colors.background,
            Some((t, frac)) => marker_texture(self.azimuth(t * dx, t), frac, &self.spec),
        }
    }
}

/// One ray per pixel center; misses render as the white background.
pub fn render(pose: &ScenePose, cam: &CameraSpec, spec: &MarkerSpec) -> Result<Image, RenderError> {
    render_with(pose, cam, spec, Execution::default())
}

pub fn render_with(
    pose: &ScenePose,
    cam: &CameraSpec,
    spec: &MarkerSpec,
    exec: Execution,
) -> Result<Image, RenderError> {
    let scene = Scene::new(pose, cam, spec)?;
    let (w, h) = (cam.width_px, cam.height_px);
    let mut pixels = vec![[0u8; 3]; w * h];
    exec.for_each_chunk_mut(&mut pixels, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = scene.shade(x as f64 + 0.5, y as f64 + 0.5);
        }
    });
    Ok(Image::new(w, h, pixels).expect("camera validated"))
}

/// True when the whole marker silhouette projects inside the frame with
/// `margin_px` to spare on every side.
pub fn marker_in_view(
    pose: &ScenePose,
    cam: &CameraSpec,
    spec: &MarkerSpec,
    margin_px: f64,
) -> bool {
    let Ok(scene) = Scene::new(pose, cam, spec) else {
        return false;
    };
    let near = scene.axis_z - scene.radius;
    if near <= 0.0 {
        return false;
    }
    let (x0, x1) = (scene.axis_x - scene.radius, scene.axis_x + scene.radius);
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for &x in &[x0, x1] {
        for &z in &[near, scene.axis_z + scene.radius] {
            for &y in &[scene.base, scene.top] {
                let (u, v) = cam.project(x, y, z);
                us.push(u);
                vs.push(v);
            }
        }
    }
    let inside = |vals: &[f64], limit: f64| {
        vals.iter()
            .all(|&p| p >= margin_px && p <= limit - margin_px)
    };
    inside(&us, cam.width_px as f64) && inside(&vs, cam.height_px as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub salt_pepper: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Additive rounded Gaussian noise, clamped, then salt-and-pepper on an exact
/// `salt_pepper_frac` share of the pixels. Deterministic per seed.
pub fn add_noise(image: &Image, gaussian_sigma: f64, salt_pepper_frac: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = image.pixels().to_vec();
    if gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0, gaussian_sigma).expect("sigma is finite and positive");
        for px in pixels.iter_mut() {
            for c in px.iter_mut() {
                let v = *c as f64 + normal.sample(&mut rng).round();
                *c = v.clamp(0.0, 255.0) as u8;
            }
        }
    }
    let frac = salt_pepper_frac.clamp(0.0, 1.0);
    let count = (frac * pixels.len() as f64).round() as usize;
    if count > 0 {
        for i in sample(&mut rng, pixels.len(), count) {
            pixels[i] = if rng.random_bool(0.5) {
                [255; 3]
            } else {
                [0; 3]
            };
        }
    }
    Image::new(image.width(), image.height(), pixels).expect("same dimensions")
}

/// Cartesian sweep of poses, as read from a grid JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub dv: Vec<f64>,
    pub dh: Vec<f64>,
    pub psi: Vec<f64>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

impl SweepGrid {
    pub fn poses(&self) -> Vec<ScenePose> {
        let mut out = Vec::with_capacity(self.dv.len() * self.dh.len() * self.psi.len());
        for &dv in &self.dv {
            for &dh in &self.dh {
                for &psi in &self.psi {
                    out.push(ScenePose::new(dv, dh, psi));
                }
            }
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self, RenderError> {
        let grid: Self =
            serde_json::from_str(text).map_err(|e| RenderError::Grid(e.to_string()))?;
        if grid.dv.is_empty() || grid.dh.is_empty() || grid.psi.is_empty() {
            return Err(RenderError::Grid("dv, dh and psi must be non-empty".into()));
        }
        Ok(grid)
    }
}

/// Per-frame seed so frames of one sweep carry independent noise.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One row of `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub d_cm: f64,
    pub theta_deg: f64,
    pub psi_deg: f64,
    pub dv_cm: f64,
    pub dh_cm: f64,
}

impl ManifestRow {
    pub fn for_pose(image: String, pose: &ScenePose) -> Self {
        Self {
            image,
            d_cm: pose.range_cm(),
            theta_deg: pose.bearing_deg(),
            psi_deg: pose.psi_deg,
            dv_cm: pose.d_v_cm,
            dh_cm: pose.d_h_cm,
        }
    }

    pub fn pose(&self) -> ScenePose {
        ScenePose::new(self.dv_cm, self.dh_cm, self.psi_deg)
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn frame_name(pose: &ScenePose) -> String {
    format!(
        "frame_dv{:.3}_dh{:.3}_psi{:.3}.ppm",
        pose.d_v_cm, pose.d_h_cm, pose.psi_deg
    )
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), RenderError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| RenderError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, RenderError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
    Ok(rows)
}

/// Renders the grid into `out_dir` (created if needed) and writes the
/// manifest. Returns the manifest rows in grid order.
pub fn render_sweep(
    grid: &SweepGrid,
    cam: &CameraSpec,
    spec: &MarkerSpec,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>, RenderError> {
    let poses = grid.poses();
    if poses.is_empty() {
        return Err(RenderError::Grid("empty grid".into()));
    }
    fs::create_dir_all(out_dir).map_err(|source| RenderError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let indexed: Vec<(usize, ScenePose)> = poses.into_iter().enumerate().collect();
    let written =
        Execution::default().map_slice(&indexed, |(i, pose)| -> Result<ManifestRow, RenderError> {
            let mut img = render_with(pose, cam, spec, Execution::Sequential)?;
            if let Some(n) = grid.noise {
                img = add_noise(&img, n.sigma, n.salt_pepper, frame_seed(n.seed, *i));
            }
            let name = frame_name(pose);
            save_ppm(&img, out_dir.join(&name))?;
            Ok(ManifestRow::for_pose(name, pose))
        });
    let rows = written.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}
