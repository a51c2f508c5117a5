//! Fitting the learned scorer alone to redirect one query's attention.

use super::adam::{adam_step, AdamState};
use crate::error::{invalid, Result};
use crate::gla::{score_fixed, score_learnable, score_learnable_backward, GlaParams};
use crate::tensor::{softmax_in_place, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct LssFit {
    pub params: GlaParams,
    pub steps: usize,
    /// `KL(target ‖ attention)` after the last step.
    pub kl: f64,
    pub probs_before: Vec<f64>,
    pub probs_after: Vec<f64>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl LssFit {
    pub fn argmax_before(&self) -> usize {
        argmax(&self.probs_before)
    }

    pub fn argmax_after(&self) -> usize {
        argmax(&self.probs_after)
    }
}

/// Attention distribution of bucket member `query` over the whole bucket.
pub fn query_attention(q_bucket: &Matrix, l_bucket: &Matrix, params: &GlaParams, query: usize) -> Result<Vec<f64>> {
    let sf = score_fixed(q_bucket);
    let sl = score_learnable(l_bucket, params)?;
    let mut col: Vec<f64> = (0..sf.rows()).map(|j| sf.get(j, query) + sl.get(j, query)).collect();
    softmax_in_place(&mut col);
    Ok(col)
}

fn kl(target: &[f64], p: &[f64]) -> f64 {
    target
        .iter()
        .zip(p)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, q)| t * (t / q).ln())
        .sum()
}

/// Adam on `w1, b1, w2, b2` only, minimising `KL(target ‖ attention of
/// query)`. Stops after `max_steps` or once the divergence drops below
/// `tolerance`.
pub fn fit_lss_target(
    q_bucket: &Matrix,
    l_bucket: &Matrix,
    params: &GlaParams,
    query: usize,
    target: &[f64],
    max_steps: usize,
    lr: f64,
    tolerance: f64,
) -> Result<LssFit> {
    let l = params.bucket_size();
    if query >= l || target.len() != l {
        return Err(invalid("query index or target length inconsistent with bucket size"));
    }
    if target.iter().any(|t| *t < 0.0) || (target.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("target must be a probability distribution"));
    }
    let mut p = params.clone();
    let mut adam = AdamState::new(&p).with_lr(lr);
    let probs_before = query_attention(q_bucket, l_bucket, &p, query)?;
    let mut probs = probs_before.clone();
    let mut steps = 0;
    while steps < max_steps && kl(target, &probs) >= tolerance {
        let mut grad_scores = Matrix::zeros(l, l);
        for j in 0..l {
            grad_scores.set(j, query, probs[j] - target[j]);
        }
        let (_, mut grads) = score_learnable_backward(l_bucket, &p, &grad_scores)?;
        for k in [&mut grads.qk_conv, &mut grads.v_conv, &mut grads.l_conv] {
            k.weight.fill(0.0);
            k.bias.fill(0.0);
        }
        adam_step(&mut p, &grads, &mut adam)?;
        probs = query_attention(q_bucket, l_bucket, &p, query)?;
        steps += 1;
    }
    Ok(LssFit {
        kl: kl(target, &probs),
        params: p,
        steps,
        probs_before,
        probs_after: probs,
    })
}
