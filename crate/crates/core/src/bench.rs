//! Empirical scaling of dense attention against GLA.
//!
//! Two tiers: exact multiply-accumulate counts from the instrumented kernels,
//! and median wall time. Only the latter depends on the machine.

use std::io::Write;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};
use crate::gla::{gla_forward_traced, gla_plan, GlaOptions, GlaParams};
use crate::rng::{derive_seed, SeededRng};
use crate::sblsh::round_bases;
use crate::tensor::{conv2d_3x3, FeatureMap, Matrix};

/// Exact non-local attention `y_i = Σ_j softmax_j(q_iᵀq_j) v_j` over all
/// `n` columns of `q` and `v` (both `c × n`), one query at a time so memory
/// stays `O(n)`. Adds `2·n²·c` to `macs`.
pub fn dense_attention(q: &Matrix, v: &Matrix, macs: &mut u64) -> Result<Matrix> {
    if q.cols() != v.cols() {
        return Err(invalid("query and value feature counts differ"));
    }
    let (c, n) = (q.rows(), q.cols());
    let cv = v.rows();
    let qt = q.transpose();
    let vt = v.transpose();
    let mut out = Matrix::zeros(n, cv);
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let qi = qt.row(i);
        let mut max = f64::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            *s = qi.iter().zip(qt.row(j)).map(|(a, b)| a * b).sum();
            max = max.max(*s);
        }
        let mut denom = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        let row = &mut out.data_mut()[i * cv..(i + 1) * cv];
        for (j, s) in scores.iter().enumerate() {
            let p = s / denom;
            for (o, x) in row.iter_mut().zip(vt.row(j)) {
                *o += p * x;
            }
        }
    }
    *macs += (n * n * (c + cv)) as u64;
    Ok(out.transpose())
}

/// Dense attention applied to the query/key and value transforms of `x`.
pub fn dense_forward(x: &FeatureMap, params: &GlaParams, macs: &mut u64) -> Result<FeatureMap> {
    let q = conv2d_3x3(x, &params.qk_conv)?.to_matrix();
    let v = conv2d_3x3(x, &params.v_conv)?.to_matrix();
    FeatureMap::from_matrix(dense_attention(&q, &v, macs)?, x.height(), x.width())
}

/// Multiply-accumulates of [`dense_attention`] on `n` features.
pub fn dense_macs(n: usize, channels: usize) -> u64 {
    2 * (n * n * channels) as u64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub halfwidth: f64,
}

/// Ordinary least squares on `(ln x, ln y)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(invalid("slope fit needs at least 3 points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(invalid("slope fit needs positive coordinates"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("slope fit needs at least two distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let df = n - 2.0;
    let se = (rss / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        halfwidth: t * se,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingRow {
    pub hw: usize,
    pub dense_s: f64,
    pub gla_s: f64,
    pub dense_macs: u64,
    pub gla_macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub dense_fit: SlopeFit,
    pub gla_fit: SlopeFit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    pub bucket_size: usize,
    pub channels: usize,
    pub rounds: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Run GLA chunks on the rayon pool.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            bucket_size: 32,
            channels: 8,
            rounds: 1,
            repetitions: 3,
            seed: 0,
            parallel: false,
        }
    }
}

/// Height and width with `height · width = n` and the height as close to
/// `√n` as possible from below.
pub fn grid_for(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && n % h != 0 {
        h -= 1;
    }
    (h.max(1), n / h.max(1))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn validate_sizes(sizes: &[usize], reps: usize) -> Result<()> {
    if sizes.len() < 4 {
        return Err(invalid("need at least 4 sizes"));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] == 0 {
        return Err(invalid("sizes must be positive and strictly increasing"));
    }
    if sizes[sizes.len() - 1] < 8 * sizes[0] {
        return Err(invalid("sizes must span at least an 8x range"));
    }
    if reps < 3 {
        return Err(invalid("need at least 3 repetitions"));
    }
    Ok(())
}

/// MAC counts only; no timing.
pub fn count_macs(sizes: &[usize], opts: &BenchOptions) -> Result<Vec<(usize, u64, u64)>> {
    let mut rng = SeededRng::new(opts.seed);
    let params = GlaParams::init(opts.channels, opts.bucket_size, &mut rng);
    sizes
        .iter()
        .map(|&n| {
            let (h, w) = grid_for(n);
            let x = FeatureMap::new(opts.channels, h, w, rng.normal_vec(opts.channels * n, 1.0))?;
            let bases = round_bases(opts.channels.min(8), opts.channels, opts.seed, 0, opts.rounds)?;
            let plans = gla_plan(&x, &params, &bases)?;
            let t = gla_forward_traced(&x, &params, &plans, GlaOptions::default())?;
            Ok((n, dense_macs(n, opts.channels), t.macs))
        })
        .collect()
}

/// Times dense attention and GLA (hashing included) on random `c × hw` maps.
pub fn measure_scaling(sizes: &[usize], opts: &BenchOptions) -> Result<ScalingReport> {
    validate_sizes(sizes, opts.repetitions)?;
    let mut rng = SeededRng::new(opts.seed);
    let params = GlaParams::init(opts.channels, opts.bucket_size, &mut rng);
    let gla_opts = GlaOptions {
        parallel: opts.parallel,
    };
    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &n) in sizes.iter().enumerate() {
        let (h, w) = grid_for(n);
        let mut xr = SeededRng::new(derive_seed(opts.seed, &[si as u64]));
        let x = FeatureMap::new(opts.channels, h, w, xr.normal_vec(opts.channels * n, 1.0))?;
        let bases = round_bases(opts.channels.min(8), opts.channels, opts.seed, 0, opts.rounds)?;
        let mut dense_t = Vec::new();
        let mut gla_t = Vec::new();
        let mut dmacs = 0;
        let mut gmacs = 0;
        for _ in 0..opts.repetitions {
            let t0 = Instant::now();
            let mut m = 0;
            std::hint::black_box(dense_forward(&x, &params, &mut m)?);
            dense_t.push(t0.elapsed().as_secs_f64());
            dmacs = m;

            let t0 = Instant::now();
            let plans = gla_plan(&x, &params, &bases)?;
            let tr = gla_forward_traced(&x, &params, &plans, gla_opts)?;
            std::hint::black_box(&tr.output);
            gla_t.push(t0.elapsed().as_secs_f64());
            gmacs = tr.macs;
        }
        rows.push(ScalingRow {
            hw: n,
            dense_s: median(dense_t),
            gla_s: median(gla_t),
            dense_macs: dmacs,
            gla_macs: gmacs,
        });
    }
    let dense_fit = fit_slope(&rows.iter().map(|r| (r.hw as f64, r.dense_s)).collect::<Vec<_>>())?;
    let gla_fit = fit_slope(&rows.iter().map(|r| (r.hw as f64, r.gla_s)).collect::<Vec<_>>())?;
    Ok(ScalingReport {
        rows,
        dense_fit,
        gla_fit,
    })
}

impl ScalingReport {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "hw,dense_s,gla_s,dense_macs,gla_macs")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{},{}",
                r.hw, r.dense_s, r.gla_s, r.dense_macs, r.gla_macs
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{{dense_slope: {:.4}, gla_slope: {:.4}}}",
            self.dense_fit.slope, self.gla_fit.slope
        )
    }
}
