//! Blur → bicubic downscale → additive Gaussian noise.
//!
//! All three stages run on float planes in 0–255 units; the result is
//! clamped and rounded to 8 bits once, after the noise is added.

use super::ImageBuffer;
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

const CUBIC_A: f64 = -0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub scale: usize,
    /// Gaussian blur standard deviation in HR pixels; 0 disables the blur.
    pub blur_sigma: f64,
    /// Noise standard deviation in 0–255 units; 0 disables the noise.
    pub noise_level: f64,
    pub rng_seed: u64,
}

impl DegradationSpec {
    pub fn bicubic(scale: usize) -> Self {
        Self {
            scale,
            blur_sigma: 0.0,
            noise_level: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(invalid("degradation scale must be at least 1"));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(invalid(format!("blur sigma must be finite and >= 0, got {}", self.blur_sigma)));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(invalid(format!("noise level must be finite and >= 0, got {}", self.noise_level)));
        }
        Ok(())
    }
}

/// Mirror index without repeating the edge sample: `-1 → 1`, `n → n-2`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Normalised Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Tap list for one output sample: `(source index, weight)`.
type Taps = Vec<(usize, f64)>;

/// Per-output-sample taps for resampling an axis of length `len_in` to
/// `len_out`. Pixel centres are aligned (`u = (o + 0.5)·in/out − 0.5`); when
/// shrinking, the kernel is stretched by the reduction factor so it acts as
/// an anti-aliasing filter. Weights are renormalised to sum to 1.
fn resample_taps(len_in: usize, len_out: usize) -> Vec<Taps> {
    let ratio = len_in as f64 / len_out as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    (0..len_out)
        .map(|o| {
            let u = (o as f64 + 0.5) * ratio - 0.5;
            let lo = (u - support).floor() as isize;
            let hi = (u + support).ceil() as isize;
            let mut taps: Taps = (lo..=hi)
                .filter_map(|j| {
                    let w = cubic((u - j as f64) / stretch);
                    (w != 0.0).then(|| (reflect_index(j, len_in), w))
                })
                .collect();
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= sum);
            taps
        })
        .collect()
}

fn resample_plane(src: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    let xt = resample_taps(w, nw);
    let yt = resample_taps(h, nh);
    let mut tmp = vec![0.0; nw * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, taps) in xt.iter().enumerate() {
            tmp[y * nw + x] = taps.iter().map(|&(j, wt)| wt * row[j]).sum();
        }
    }
    let mut out = vec![0.0; nw * nh];
    for (y, taps) in yt.iter().enumerate() {
        for x in 0..nw {
            out[y * nw + x] = taps.iter().map(|&(j, wt)| wt * tmp[j * nw + x]).sum();
        }
    }
    out
}

fn blur_plane(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * src[y * w + reflect_index(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * tmp[reflect_index(y as isize + t as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Bicubic resampling (`a = -0.5`, reflect boundary, anti-aliased when
/// shrinking) to an arbitrary target size.
pub fn bicubic_resize(img: &ImageBuffer, new_w: usize, new_h: usize) -> Result<ImageBuffer> {
    if new_w == 0 || new_h == 0 {
        return Err(invalid("resize target must be positive"));
    }
    let planes = img.to_planes();
    let out = planes
        .each_ref()
        .map(|p| resample_plane(p, img.width(), img.height(), new_w, new_h));
    Ok(ImageBuffer::from_planes(new_w, new_h, &out))
}

pub fn upscale_bicubic(img: &ImageBuffer, scale: usize) -> Result<ImageBuffer> {
    bicubic_resize(img, img.width() * scale, img.height() * scale)
}

pub fn degrade(hr: &ImageBuffer, spec: &DegradationSpec) -> Result<ImageBuffer> {
    spec.validate()?;
    let s = spec.scale;
    if hr.width() % s != 0 || hr.height() % s != 0 {
        return Err(invalid(format!(
            "scale {s} does not divide image size {}x{}",
            hr.width(),
            hr.height()
        )));
    }
    let (w, h) = (hr.width(), hr.height());
    let (lw, lh) = (w / s, h / s);
    let mut planes = hr.to_planes();
    if spec.blur_sigma > 0.0 {
        let k = gaussian_kernel(spec.blur_sigma);
        planes = planes.each_ref().map(|p| blur_plane(p, w, h, &k));
    }
    if s > 1 {
        planes = planes.each_ref().map(|p| resample_plane(p, w, h, lw, lh));
    }
    if spec.noise_level > 0.0 {
        let mut rng = SeededRng::new(spec.rng_seed);
        for p in 0..lw * lh {
            for plane in planes.iter_mut() {
                plane[p] += spec.noise_level * rng.normal();
            }
        }
    }
    Ok(ImageBuffer::from_planes(lw, lh, &planes))
}
