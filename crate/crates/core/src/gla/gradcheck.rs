//! Central-difference verification of analytic gradients.

use std::fmt;

use super::{backward_with_weights, forward_impl, GlaOptions, GlaParams};
use crate::error::{invalid, Result};
use crate::params::{Parameters, TensorList};
use crate::rng::SeededRng;
use crate::sblsh::HashPlan;
use crate::tensor::FeatureMap;

const DENOM_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOM_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tensor,entries,max_rel_error,status")?;
        for t in &self.tensors {
            writeln!(
                f,
                "{},{},{:.3e},{}",
                t.name,
                t.entries_checked,
                t.max_rel_error,
                if t.passed { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Seed of the probe mask and of entry sampling.
    pub seed: u64,
    /// Check at most this many entries per tensor (chosen at random).
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            max_entries: None,
        }
    }
}

/// Probe mask with entries drawn uniformly from `[-1, 1]`.
pub(crate) fn probe_mask(shape: (usize, usize, usize), seed: u64) -> FeatureMap {
    let mut rng = SeededRng::new(seed);
    let len = shape.0 * shape.1 * shape.2;
    let data = (0..len).map(|_| rng.range(-1.0, 1.0)).collect();
    FeatureMap::new(shape.0, shape.1, shape.2, data).expect("shape")
}

pub(crate) fn probe(out: &FeatureMap, mask: &FeatureMap) -> f64 {
    out.data().iter().zip(mask.data()).map(|(a, b)| a * b).sum()
}

fn sample_indices(len: usize, max: Option<usize>, rng: &mut SeededRng) -> Vec<usize> {
    match max {
        Some(k) if k < len => {
            let mut idx: Vec<usize> = (0..len).collect();
            for i in 0..k {
                let j = i + rng.below(len - i);
                idx.swap(i, j);
            }
            idx.truncate(k);
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` against central differences of `loss` evaluated at
/// perturbations of `point`. Both must list tensors in the same order.
pub fn check_parameters<P, F>(
    point: &P,
    analytic: &dyn Parameters,
    mut loss: F,
    opts: &GradCheckOptions,
) -> Result<Vec<TensorCheck>>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    if opts.step <= 0.0 || !opts.step.is_finite() {
        return Err(invalid("finite-difference step must be positive"));
    }
    let grads = analytic.tensors();
    let names: Vec<(String, usize)> = point
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.len()))
        .collect();
    if grads.len() != names.len()
        || grads.iter().zip(&names).any(|((gn, g), (n, len))| gn != n || g.len() != *len)
    {
        return Err(invalid("analytic gradient layout does not match parameters"));
    }
    let mut rng = SeededRng::new(opts.seed ^ 0x5eed_cafe);
    let mut out = Vec::with_capacity(names.len());
    let mut work = point.clone();
    for (ti, (name, len)) in names.iter().enumerate() {
        let idx = sample_indices(*len, opts.max_entries, &mut rng);
        let mut worst: f64 = 0.0;
        for &e in &idx {
            let orig = work.tensors()[ti].1[e];
            work.tensors_mut()[ti].1[e] = orig + opts.step;
            let plus = loss(&work)?;
            work.tensors_mut()[ti].1[e] = orig - opts.step;
            let minus = loss(&work)?;
            work.tensors_mut()[ti].1[e] = orig;
            let fd = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(grads[ti].1[e], fd));
        }
        out.push(TensorCheck {
            name: name.clone(),
            entries_checked: idx.len(),
            max_rel_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    Ok(out)
}

/// Checks every GLA parameter tensor and the input gradient, with the hash
/// plan and the round-merge weights of the unperturbed point held fixed.
pub fn grad_check(
    x: &FeatureMap,
    params: &GlaParams,
    plans: &HashPlan,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_with(
        x,
        params,
        plans,
        &GradCheckOptions {
            step,
            tolerance,
            ..GradCheckOptions::default()
        },
    )
}

pub fn grad_check_with(
    x: &FeatureMap,
    params: &GlaParams,
    plans: &HashPlan,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = forward_impl(x, params, plans, None, GlaOptions::default())?;
    let weights = base.weights;
    let mask = probe_mask(x.shape(), opts.seed);
    let grads = backward_with_weights(x, params, plans, &weights, &mask)?;

    let eval = |xx: &FeatureMap, p: &GlaParams| -> Result<f64> {
        let y = forward_impl(xx, p, plans, Some(&weights), GlaOptions::default())?.output;
        Ok(probe(&y, &mask))
    };
    let mut tensors = check_parameters(params, &grads.params, |p| eval(x, p), opts)?;

    let xs = TensorList(vec![("input".into(), x.data().to_vec())]);
    let gx = TensorList(vec![("input".into(), grads.input.data().to_vec())]);
    let (c, h, w) = x.shape();
    tensors.extend(check_parameters(
        &xs,
        &gx,
        |t| {
            let xx = FeatureMap::new(c, h, w, t.0[0].1.clone())?;
            eval(&xx, params)
        },
        opts,
    )?);
    Ok(GradCheckReport {
        step: opts.step,
        tolerance: opts.tolerance,
        tensors,
    })
}
