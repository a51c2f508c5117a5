//! PSNR and SSIM on the BT.601 luma channel.

use super::ImageBuffer;
use crate::error::{invalid, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// `Y = 0.299 R + 0.587 G + 0.114 B`, unrounded, in 0–255 units.
pub fn luma(img: &ImageBuffer) -> Vec<f64> {
    img.pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(invalid(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB. Identical inputs yield `f64::INFINITY`.
pub fn psnr_y(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let (ya, yb) = (luma(a), luma(b));
    let mse = ya
        .iter()
        .zip(&yb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / ya.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Mean single-scale SSIM over every valid 11×11 Gaussian window position.
pub fn ssim_y(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let (ya, yb) = (luma(a), luma(b));
    let win = ssim_window();
    let w = a.width();
    let (nx, ny) = (w - SSIM_WINDOW + 1, a.height() - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..ny {
        for ox in 0..nx {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                let base = (oy + ky) * w + ox;
                for kx in 0..SSIM_WINDOW {
                    let g = win[ky * SSIM_WINDOW + kx];
                    let (x, y) = (ya[base + kx], yb[base + kx]);
                    mx += g * x;
                    my += g * y;
                    sxx += g * x * x;
                    syy += g * y * y;
                    sxy += g * x * y;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2))
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
    }
    Ok(total / (nx * ny) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_image(rng: &mut SeededRng, w: usize, h: usize) -> ImageBuffer {
        let px = (0..3 * w * h).map(|_| rng.below(256) as u8).collect();
        ImageBuffer::new(w, h, px).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let mut rng = SeededRng::new(1);
        let a = random_image(&mut rng, 8, 8);
        assert_eq!(psnr_y(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_one_level_offset() {
        let mut a = ImageBuffer::filled(16, 16, [0, 0, 0]);
        for (i, p) in a.pixels_mut().chunks_exact_mut(3).enumerate() {
            let v = (i * 7 % 250) as u8;
            p.copy_from_slice(&[v, v, v]);
        }
        let mut b = a.clone();
        b.pixels_mut().iter_mut().for_each(|p| *p += 1);
        let v = psnr_y(&a, &b).unwrap();
        assert!((v - 48.1308).abs() < 1e-3, "{v}");
    }

    #[test]
    fn psnr_symmetric() {
        let mut rng = SeededRng::new(3);
        for _ in 0..10 {
            let a = random_image(&mut rng, 12, 9);
            let b = random_image(&mut rng, 12, 9);
            assert_eq!(psnr_y(&a, &b).unwrap(), psnr_y(&b, &a).unwrap());
        }
    }

    #[test]
    fn psnr_dim_mismatch() {
        let a = ImageBuffer::filled(4, 4, [0, 0, 0]);
        let b = ImageBuffer::filled(4, 5, [0, 0, 0]);
        assert!(psnr_y(&a, &b).is_err());
        assert!(ssim_y(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = SeededRng::new(5);
        let a = random_image(&mut rng, 20, 17);
        assert!((ssim_y(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_bounded() {
        let mut rng = SeededRng::new(6);
        for _ in 0..5 {
            let a = random_image(&mut rng, 14, 14);
            let b = random_image(&mut rng, 14, 14);
            let s = ssim_y(&a, &b).unwrap();
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn ssim_constant_offset_single_window() {
        // Both images flat: variances vanish, leaving only the luminance term.
        let a = ImageBuffer::filled(11, 11, [100, 100, 100]);
        let b = ImageBuffer::filled(11, 11, [110, 110, 110]);
        let (mx, my) = (100.0, 110.0);
        let c1 = (0.01f64 * 255.0).powi(2);
        let want = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let got = ssim_y(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn ssim_too_small() {
        let a = ImageBuffer::filled(10, 20, [0, 0, 0]);
        assert!(ssim_y(&a, &a).is_err());
    }
}
