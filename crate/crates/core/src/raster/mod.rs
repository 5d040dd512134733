//! Raster containers, PPM I/O, median filtering and HSV conversion.

mod hsv;
mod median;
mod ppm;

pub use hsv::{rgb_to_hsv, rgb_to_hsv_pixel, Hsv, HsvImage};
pub use median::{median_filter, median_filter_with, DEFAULT_MEDIAN_WINDOW};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm, PpmError};

use thiserror::Error;

/// 8-bit RGB triple.
pub type Rgb = [u8; 3];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("pixel buffer holds {actual} pixels, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("median window must be odd and positive, got {0}")]
    EvenWindow(usize),
    #[error("median window {window} exceeds the smaller image side {side}")]
    WindowTooLarge { window: usize, side: usize },
}

/// Row-major RGB image with at least one pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage { width, height });
        }
        let expected = width
            .checked_mul(height)
            .ok_or(RasterError::EmptyImage { width, height })?;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self, RasterError> {
        Self::new(width, height, vec![color; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    /// Pixel at column `x`, row `y`. Panics when out of bounds.
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x},{y}) out of bounds"
        );
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, color: Rgb) {
        assert!(
            x < self.width && y < self.height,
            "pixel ({x},{y}) out of bounds"
        );
        self.pixels[y * self.width + x] = color;
    }
}
