use super::{Image, Rgb};

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    width: usize,
    height: usize,
    pixels: Vec<Hsv>,
}

impl HsvImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Hsv] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Hsv {
        self.pixels[y * self.width + x]
    }
}

/// Hexcone conversion. Achromatic pixels get `h = 0, s = 0`.
pub fn rgb_to_hsv_pixel(rgb: Rgb) -> Hsv {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return Hsv {
            h: 0.0,
            s: 0.0,
            v: max,
        };
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv {
        h,
        s: delta / max,
        v: max,
    }
}

pub fn rgb_to_hsv(image: &Image) -> HsvImage {
    HsvImage {
        width: image.width(),
        height: image.height(),
        pixels: image
            .pixels()
            .iter()
            .map(|&p| rgb_to_hsv_pixel(p))
            .collect(),
    }
}
