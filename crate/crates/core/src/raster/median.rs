use super::{Image, RasterError, Rgb};
use crate::Execution;

/// Window size used by the detection pipeline.
pub const DEFAULT_MEDIAN_WINDOW: usize = 15;

/// Per-channel median over a `window`×`window` neighborhood with replicate
/// padding at the borders.
pub fn median_filter(image: &Image, window: usize) -> Result<Image, RasterError> {
    median_filter_with(image, window, Execution::default())
}

pub fn median_filter_with(
    image: &Image,
    window: usize,
    exec: Execution,
) -> Result<Image, RasterError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(RasterError::EvenWindow(window));
    }
    let side = image.width().min(image.height());
    if window > side {
        return Err(RasterError::WindowTooLarge { window, side });
    }
    let (w, h) = (image.width(), image.height());
    let mut out = vec![[0u8; 3]; w * h];
    exec.for_each_chunk_mut(&mut out, w, |y, row| filter_row(image, window, y, row));
    Image::new(w, h, out)
}

/// Running median over a 256-bin histogram (Huang's sliding window).
struct RunningMedian {
    hist: [u32; 256],
    /// current median candidate
    med: usize,
    /// number of samples strictly below `med`
    below: u32,
    /// rank of the median, (n - 1) / 2
    half: u32,
}

impl RunningMedian {
    fn new(n: usize) -> Self {
        Self {
            hist: [0; 256],
            med: 0,
            below: 0,
            half: ((n - 1) / 2) as u32,
        }
    }

    fn add(&mut self, v: u8) {
        self.hist[v as usize] += 1;
        if (v as usize) < self.med {
            self.below += 1;
        }
    }

    fn remove(&mut self, v: u8) {
        self.hist[v as usize] -= 1;
        if (v as usize) < self.med {
            self.below -= 1;
        }
    }

    /// Smallest value whose cumulative count exceeds `half`.
    fn median(&mut self) -> u8 {
        while self.below > self.half {
            self.med -= 1;
            self.below -= self.hist[self.med];
        }
        while self.below + self.hist[self.med] <= self.half {
            self.below += self.hist[self.med];
            self.med += 1;
        }
        self.med as u8
    }
}

fn filter_row(image: &Image, window: usize, y: usize, row: &mut [Rgb]) {
    let (w, h) = (image.width() as isize, image.height() as isize);
    let r = (window / 2) as isize;
    let px = image.pixels();
    let clamp_x = |x: isize| x.clamp(0, w - 1) as usize;
    let rows: Vec<usize> = (-r..=r)
        .map(|dy| (y as isize + dy).clamp(0, h - 1) as usize * w as usize)
        .collect();

    let mut meds: [RunningMedian; 3] = std::array::from_fn(|_| RunningMedian::new(window * window));
    for dx in -r..=r {
        let x = clamp_x(dx);
        for &base in &rows {
            let p = px[base + x];
            for c in 0..3 {
                meds[c].add(p[c]);
            }
        }
    }
    for x in 0..w {
        if x > 0 {
            let leaving = clamp_x(x - r - 1);
            let entering = clamp_x(x + r);
            for &base in &rows {
                let old = px[base + leaving];
                let new = px[base + entering];
                for c in 0..3 {
                    meds[c].remove(old[c]);
                    meds[c].add(new[c]);
                }
            }
        }
        let out = &mut row[x as usize];
        for c in 0..3 {
            out[c] = meds[c].median();
        }
    }
}
