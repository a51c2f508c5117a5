//! Synthetic-texture toy training of the micro DLSN with Adam on an L1 loss.

mod adam;
mod lss_fit;
mod synth;

pub use adam::{adam_step, AdamState};
pub use lss_fit::{fit_lss_target, query_attention, LssFit};
pub use synth::{periodic_texture, synth_dataset, SynthPair, SynthSpec, TextureFamily};

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::gla::LSS_TENSORS;
use crate::imaging::{psnr_y, upscale_bicubic};
use crate::network::{backward, dlsn_forward, forward_float, init_params, DlsnParams, NetworkConfig};
use crate::params::Parameters;
use crate::rng::derive_seed;
use crate::tensor::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub eval_every: usize,
    pub lr: f64,
    /// Keep `w1, b1, w2, b2` of every GLA block at zero.
    pub freeze_lss: bool,
    /// Number of held-out pairs scored at each evaluation.
    pub eval_count: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            eval_every: 50,
            lr: 1e-4,
            freeze_lss: false,
            eval_count: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean absolute error on `[0, 1]` intensities over the training set.
    pub loss: f64,
    /// Mean Y-channel PSNR on the held-out pairs.
    pub psnr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    /// Mean held-out PSNR of bicubic upscaling of the LR inputs.
    pub baseline_psnr: f64,
    /// Gradient norm of the LSS tensors at step 0.
    pub initial_lss_grad_norm: f64,
    pub params: DlsnParams,
}

impl TrainReport {
    pub fn loss_at(&self, step: usize) -> Option<f64> {
        self.log.iter().find(|r| r.step == step).map(|r| r.loss)
    }

    pub fn final_row(&self) -> &LogRow {
        self.log.last().expect("log always has a step-0 row")
    }
}

/// Mean absolute error and its gradient with respect to `out`.
pub fn l1_loss(out: &FeatureMap, target: &FeatureMap) -> Result<(f64, FeatureMap)> {
    if out.shape() != target.shape() {
        return Err(invalid("loss operands differ in shape"));
    }
    let n = out.data().len() as f64;
    let mut grad = FeatureMap::zeros(out.channels(), out.height(), out.width());
    let mut sum = 0.0;
    for ((g, o), t) in grad.data_mut().iter_mut().zip(out.data()).zip(target.data()) {
        let d = o - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

fn lss_mask(params: &DlsnParams) -> Vec<bool> {
    params
        .tensors()
        .iter()
        .map(|(name, _)| {
            name.contains(".gla.") && LSS_TENSORS.iter().any(|t| name.ends_with(&format!(".{t}")))
        })
        .collect()
}

fn zero_masked(p: &mut DlsnParams, mask: &[bool]) {
    for ((_, t), &m) in p.tensors_mut().into_iter().zip(mask) {
        if m {
            t.fill(0.0);
        }
    }
}

/// Mean training loss and its averaged parameter gradient.
pub fn loss_and_grad(params: &DlsnParams, data: &[SynthPair]) -> Result<(f64, DlsnParams)> {
    let mut total = DlsnParams::zeros(params.config)?;
    let mut loss = 0.0;
    let scale = 1.0 / data.len() as f64;
    for pair in data {
        let cache = forward_float(&pair.lr.to_feature_map(), params, None)?;
        let (l, g) = l1_loss(&cache.output, &pair.hr.to_feature_map())?;
        loss += l * scale;
        let (grads, _) = backward(params, &cache, &g.scale(scale))?;
        for ((_, dst), (_, src)) in total.tensors_mut().into_iter().zip(grads.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    Ok((loss, total))
}

/// Mean held-out PSNR of the network output.
pub fn eval_psnr(params: &DlsnParams, data: &[SynthPair]) -> Result<f64> {
    let mut sum = 0.0;
    for pair in data {
        sum += psnr_y(&dlsn_forward(&pair.lr, params, &params.config)?, &pair.hr)?;
    }
    Ok(sum / data.len() as f64)
}

pub fn bicubic_baseline_psnr(data: &[SynthPair], scale: usize) -> Result<f64> {
    let mut sum = 0.0;
    for pair in data {
        sum += psnr_y(&upscale_bicubic(&pair.lr, scale)?, &pair.hr)?;
    }
    Ok(sum / data.len() as f64)
}

/// Held-out pairs: same spec under a derived seed.
pub fn held_out(spec: &SynthSpec, count: usize) -> Result<Vec<SynthPair>> {
    synth_dataset(&SynthSpec {
        count,
        seed: derive_seed(spec.seed, &[0xe7a1]),
        ..spec.clone()
    })
}

/// Trains freshly initialised parameters for `opts.steps` full-batch Adam
/// steps. A row is logged at step 0, every `opts.eval_every` steps and at the
/// last step; row `t` reports the model after `t` updates.
pub fn train_toy(config: &NetworkConfig, spec: &SynthSpec, opts: &TrainOptions) -> Result<TrainReport> {
    train_from(init_params(config)?, spec, opts)
}

/// [`train_toy`] starting from the given parameters.
pub fn train_from(mut params: DlsnParams, spec: &SynthSpec, opts: &TrainOptions) -> Result<TrainReport> {
    params.validate()?;
    let config = params.config;
    if opts.steps == 0 || opts.eval_every == 0 || opts.eval_count == 0 {
        return Err(invalid("steps, eval_every and eval_count must be positive"));
    }
    if spec.degradation.scale != config.scale {
        return Err(invalid("dataset scale differs from network scale"));
    }
    let train = synth_dataset(spec)?;
    let eval = held_out(spec, opts.eval_count)?;
    let baseline_psnr = bicubic_baseline_psnr(&eval, config.scale)?;
    let mask = lss_mask(&params);
    if opts.freeze_lss {
        zero_masked(&mut params, &mask);
    }
    let mut adam = AdamState::new(&params).with_lr(opts.lr);
    let mut log = Vec::new();
    let mut last_good = 0;
    let mut initial_lss_grad_norm = 0.0;
    for step in 0..=opts.steps {
        let (loss, mut grads) = loss_and_grad(&params, &train)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged {
                step,
                last_good_step: last_good,
            });
        }
        last_good = step;
        if step == 0 {
            initial_lss_grad_norm = grads
                .tensors()
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .flat_map(|((_, t), _)| t.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
        }
        if step % opts.eval_every == 0 || step == opts.steps {
            log.push(LogRow {
                step,
                loss,
                psnr: eval_psnr(&params, &eval)?,
            });
        }
        if step < opts.steps {
            if opts.freeze_lss {
                zero_masked(&mut grads, &mask);
            }
            adam_step(&mut params, &grads, &mut adam)?;
        }
    }
    Ok(TrainReport {
        log,
        baseline_psnr,
        initial_lss_grad_norm,
        params,
    })
}

/// Writes `step,loss,psnr` rows.
pub fn write_log_csv(log: &[LogRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "step,loss,psnr")?;
    for r in log {
        writeln!(out, "{},{:.8},{:.6}", r.step, r.loss, r.psnr)?;
    }
    Ok(())
}

/// The reference toy task: ×2 periodic blob mosaics on 48×48 HR images,
/// downscaled with noise σ = 25 and a tenth of each LR image flattened.
pub fn reference_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        hr_size: 48,
        period: 16,
        family: TextureFamily::BlobMosaic,
        corruption: 0.1,
        degradation: crate::imaging::DegradationSpec {
            noise_level: 25.0,
            ..crate::imaging::DegradationSpec::bicubic(2)
        },
        count: 16,
        seed,
    }
}
