//! Periodic synthetic textures for toy super-resolution.
//!
//! Each HR image tiles one random `period × period` motif, so any damaged
//! region can be recovered from an intact repeat elsewhere in the image.

use crate::error::{invalid, Result};
use crate::imaging::{degrade, DegradationSpec, ImageBuffer};
use crate::rng::{derive_seed, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TextureFamily {
    /// Two-colour checkerboard with squares of half a period.
    Checker,
    /// Bands of random colours across the tile.
    Stripe,
    /// Random discs on a random background, wrapped at the tile border.
    BlobMosaic,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 3] = [Self::Checker, Self::Stripe, Self::BlobMosaic];
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub hr_size: usize,
    pub period: usize,
    pub family: TextureFamily,
    /// Fraction of the LR area flattened to its mean colour, in `[0, 0.5]`.
    pub corruption: f64,
    /// Degradation applied to every HR image; its seed is re-derived per
    /// image.
    pub degradation: DegradationSpec,
    pub count: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hr_size == 0 || self.period == 0 || self.count == 0 {
            return Err(invalid("hr_size, period and count must be positive"));
        }
        if self.hr_size % self.period != 0 {
            return Err(invalid(format!(
                "period {} does not divide hr_size {}",
                self.period, self.hr_size
            )));
        }
        if !(0.0..=0.5).contains(&self.corruption) {
            return Err(invalid(format!(
                "corruption fraction {} outside [0, 0.5]",
                self.corruption
            )));
        }
        self.degradation.validate()?;
        if self.hr_size % self.degradation.scale != 0 {
            return Err(invalid("degradation scale must divide hr_size"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPair {
    pub lr: ImageBuffer,
    pub hr: ImageBuffer,
}

fn random_color(rng: &mut SeededRng) -> [u8; 3] {
    [0, 0, 0].map(|_: u8| (32 + rng.below(192)) as u8)
}

fn motif(family: TextureFamily, p: usize, rng: &mut SeededRng) -> Vec<[u8; 3]> {
    match family {
        TextureFamily::Checker => {
            let (a, b) = (random_color(rng), random_color(rng));
            let half = (p / 2).max(1);
            (0..p * p)
                .map(|i| if ((i / p) / half + (i % p) / half) % 2 == 0 { a } else { b })
                .collect()
        }
        TextureFamily::Stripe => {
            let bands = 2 + rng.below(3);
            let colors: Vec<[u8; 3]> = (0..bands).map(|_| random_color(rng)).collect();
            let vertical = rng.below(2) == 0;
            (0..p * p)
                .map(|i| {
                    let t = if vertical { i % p } else { i / p };
                    colors[t * bands / p]
                })
                .collect()
        }
        TextureFamily::BlobMosaic => {
            let mut tile = vec![random_color(rng); p * p];
            for _ in 0..1 + rng.below(3) {
                let (cx, cy) = (rng.uniform() * p as f64, rng.uniform() * p as f64);
                let r = (0.15 + 0.2 * rng.uniform()) * p as f64;
                let col = random_color(rng);
                for y in 0..p {
                    for x in 0..p {
                        // toroidal distance so the tile repeats seamlessly
                        let dx = (x as f64 + 0.5 - cx).abs();
                        let dy = (y as f64 + 0.5 - cy).abs();
                        let dx = dx.min(p as f64 - dx);
                        let dy = dy.min(p as f64 - dy);
                        if dx * dx + dy * dy <= r * r {
                            tile[y * p + x] = col;
                        }
                    }
                }
            }
            tile
        }
    }
}

/// One periodic HR image.
pub fn periodic_texture(family: TextureFamily, size: usize, period: usize, seed: u64) -> ImageBuffer {
    let mut rng = SeededRng::new(seed);
    let tile = motif(family, period, &mut rng);
    let mut img = ImageBuffer::filled(size, size, [0, 0, 0]);
    for y in 0..size {
        for x in 0..size {
            img.set(x, y, tile[(y % period) * period + x % period]);
        }
    }
    img
}

fn corrupt(lr: &mut ImageBuffer, fraction: f64, rng: &mut SeededRng) {
    if fraction == 0.0 {
        return;
    }
    let (w, h) = (lr.width(), lr.height());
    let rw = ((fraction.sqrt() * w as f64).round() as usize).clamp(1, w);
    let rh = ((fraction * (w * h) as f64 / rw as f64).round() as usize).clamp(1, h);
    let x0 = rng.below(w - rw + 1);
    let y0 = rng.below(h - rh + 1);
    let mut mean = [0.0; 3];
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            for (m, v) in mean.iter_mut().zip(lr.get(x, y)) {
                *m += v as f64;
            }
        }
    }
    let n = (rw * rh) as f64;
    let fill = mean.map(|m| (m / n).round() as u8);
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            lr.set(x, y, fill);
        }
    }
}

/// `spec.count` (LR, HR) pairs; LR is the degraded HR with a flattened
/// rectangle of relative area `spec.corruption`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<SynthPair>> {
    spec.validate()?;
    (0..spec.count as u64)
        .map(|i| {
            let hr = periodic_texture(
                spec.family,
                spec.hr_size,
                spec.period,
                derive_seed(spec.seed, &[1, i]),
            );
            let deg = DegradationSpec {
                rng_seed: derive_seed(spec.seed, &[2, i]),
                ..spec.degradation
            };
            let mut lr = degrade(&hr, &deg)?;
            corrupt(&mut lr, spec.corruption, &mut SeededRng::new(derive_seed(spec.seed, &[3, i])));
            Ok(SynthPair { lr, hr })
        })
        .collect()
}
