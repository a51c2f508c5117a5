//! 8-bit RGB images: PPM I/O, the blur/downscale/noise degradation
//! pipeline, and Y-channel fidelity metrics.

mod degrade;
mod metrics;
mod ppm;

pub use degrade::{bicubic_resize, degrade, gaussian_kernel, reflect_index, upscale_bicubic, DegradationSpec};
pub use metrics::{luma, psnr_y, ssim_y};
pub use ppm::{read_ppm, read_ppm_file, write_ppm, write_ppm_file};

use crate::error::{invalid, Result};
use crate::tensor::FeatureMap;

/// Interleaved RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("image dims must be positive, got {width}x{height}")));
        }
        if pixels.len() != 3 * width * height {
            return Err(invalid(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self::new(width, height, pixels).expect("positive dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar float copy, one plane per channel, values in `0..=255`.
    pub(crate) fn to_planes(&self) -> [Vec<f64>; 3] {
        let n = self.width * self.height;
        let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (p, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c][p] = px[c] as f64;
            }
        }
        planes
    }

    /// Clamps to `[0, 255]` and rounds half away from zero.
    pub(crate) fn from_planes(width: usize, height: usize, planes: &[Vec<f64>; 3]) -> Self {
        let mut pixels = vec![0u8; 3 * width * height];
        for (p, px) in pixels.chunks_exact_mut(3).enumerate() {
            for c in 0..3 {
                px[c] = quantize(planes[c][p]);
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// `3 × height × width` map with values scaled to `[0, 1]`.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap::from_fn(3, self.height, self.width, |c, y, x| {
            self.pixels[3 * (y * self.width + x) + c] as f64 / 255.0
        })
    }

    /// Inverse of [`ImageBuffer::to_feature_map`]: scales by 255, clamps and
    /// rounds.
    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 3 {
            return Err(invalid(format!(
                "RGB image needs 3 channels, got {}",
                map.channels()
            )));
        }
        let (w, h) = (map.width(), map.height());
        let mut pixels = vec![0u8; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    pixels[3 * (y * w + x) + c] = quantize(map.get(c, y, x) * 255.0);
                }
            }
        }
        Self::new(w, h, pixels)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}
