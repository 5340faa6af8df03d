//! Image buffers, pixel statistics and the visual filters.

mod loader;
mod stage;

pub use loader::{decode_pnm, encode_pnm, ImageLoader, LoadError, PnmLoader, ProcessImageLoader};
pub use stage::{run_image_stage, ImageStage, ImageStep};

use crate::error::{Error, Result};
use crate::record::ReasonCode;
use crate::verdict::{FilterVerdict, ImageVerdict};

/// Row-major 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!("image dimensions {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::Argument(format!(
                "{width}x{height}x{channels} image needs {expected} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::gray(width, height, data).expect("from_fn dimensions are consistent")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)` with halves rounded up,
/// computed in integer arithmetic. Gray input is returned as is.
pub fn to_grayscale(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let y = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
            ((y + 500) / 1000).min(255) as u8
        })
        .collect();
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

fn gray_samples(img: &ImageBuffer) -> std::borrow::Cow<'_, [u8]> {
    if img.channels == 1 {
        std::borrow::Cow::Borrowed(&img.data)
    } else {
        std::borrow::Cow::Owned(to_grayscale(img).data)
    }
}

/// Aspect-ratio and minimum-edge thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Minimum edge must be strictly greater than this.
    pub min_edge: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            min_ratio: 1.0 / 3.0,
            max_ratio: 3.0,
            min_edge: 100,
        }
    }
}

/// Keep iff `min_ratio <= w/h <= max_ratio` and `min(w, h) > min_edge`.
pub fn check_geometry(width: u32, height: u32, g: Geometry) -> ImageVerdict {
    let ratio = width as f64 / height as f64;
    let edge = width.min(height);
    let verdict = if ratio < g.min_ratio || ratio > g.max_ratio {
        FilterVerdict::reject(ReasonCode::AspectRatio)
    } else if edge <= g.min_edge {
        FilterVerdict::reject(ReasonCode::MinEdge)
    } else {
        FilterVerdict::keep()
    };
    verdict
        .with("aspect_ratio", ratio)
        .with("min_edge", edge as f64)
}

/// 256-bin histogram of gray samples.
pub fn histogram(img: &ImageBuffer) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in gray_samples(img).iter() {
        h[v as usize] += 1;
    }
    h
}

/// Population standard deviation of the gray samples.
pub fn pixel_std(img: &ImageBuffer) -> f64 {
    let h = histogram(img);
    let n: u128 = h.iter().map(|&c| c as u128).sum();
    let (mut s1, mut s2) = (0u128, 0u128);
    for (v, &c) in h.iter().enumerate() {
        let (v, c) = (v as u128, c as u128);
        s1 += v * c;
        s2 += v * v * c;
    }
    // n^2 var = n s2 - s1^2, exact in integers
    let num = n * s2 - s1 * s1;
    ((num as f64) / (n as f64 * n as f64)).sqrt()
}

/// Variance of the 4-neighbour Laplacian response `[[0,1,0],[1,-4,1],[0,1,0]]`
/// with replicated borders. Needs at least a 3x3 image.
pub fn laplacian_variance(img: &ImageBuffer) -> Result<f64> {
    let (w, h) = (img.width as usize, img.height as usize);
    if w < 3 || h < 3 {
        return Err(Error::Degenerate(format!("{w}x{h} image is smaller than 3x3")));
    }
    let px = gray_samples(img);
    let (mut s1, mut s2) = (0i64, 0i64);
    let mut acc = |r: i64| {
        s1 += r;
        s2 += r * r;
    };
    for y in 0..h {
        let up = y.saturating_sub(1) * w;
        let row = y * w;
        let down = (y + 1).min(h - 1) * w;
        // left border
        let c = px[row] as i64;
        acc(px[up] as i64 + px[down] as i64 + c + px[row + 1] as i64 - 4 * c);
        for x in 1..w - 1 {
            let c = px[row + x] as i64;
            acc(px[up + x] as i64
                + px[down + x] as i64
                + px[row + x - 1] as i64
                + px[row + x + 1] as i64
                - 4 * c);
        }
        let c = px[row + w - 1] as i64;
        acc(px[up + w - 1] as i64 + px[down + w - 1] as i64 + px[row + w - 2] as i64 + c - 4 * c);
    }
    let n = (w * h) as i128;
    let num = n * s2 as i128 - (s1 as i128) * (s1 as i128);
    Ok(num as f64 / (n as f64 * n as f64))
}

/// Shannon entropy (bits) of the 256-bin gray histogram.
pub fn image_entropy(img: &ImageBuffer) -> f64 {
    let h = histogram(img);
    let n: u64 = h.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    h.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Image quality thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualThresholds {
    pub geometry: Geometry,
    /// Reject when the pixel standard deviation is below this.
    pub min_std: f64,
    /// Keep when the Laplacian variance is at least this.
    pub min_laplacian: f64,
    /// Reject when entropy is below this.
    pub min_entropy: f64,
}

impl Default for VisualThresholds {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            min_std: 2.0,
            min_laplacian: 1000.0,
            min_entropy: 3.0,
        }
    }
}

pub fn check_flat(img: &ImageBuffer, min_std: f64) -> ImageVerdict {
    let s = pixel_std(img);
    FilterVerdict::unless(s < min_std, ReasonCode::Flat).with("pixel_std", s)
}

pub fn check_sharpness(img: &ImageBuffer, min_laplacian: f64) -> ImageVerdict {
    match laplacian_variance(img) {
        Ok(v) => FilterVerdict::unless(v < min_laplacian, ReasonCode::Blurry).with("laplacian_var", v),
        Err(_) => FilterVerdict::reject(ReasonCode::TooSmall),
    }
}

pub fn check_entropy(img: &ImageBuffer, min_entropy: f64) -> ImageVerdict {
    let e = image_entropy(img);
    FilterVerdict::unless(e < min_entropy, ReasonCode::LowImageEntropy).with("entropy_bits", e)
}

pub fn score_image_safety(
    id: &str,
    image_ref: &str,
    img: &ImageBuffer,
    scorer: &dyn crate::ports::ImageScorer,
    ceiling: f64,
    strict: bool,
) -> Result<(Option<f64>, ImageVerdict), crate::error::PortFailure> {
    crate::text::apply_ceiling(
        scorer.score(id, image_ref, img),
        ceiling,
        strict,
        ReasonCode::ImageUnsafe,
    )
}
