//! Global learnable attention (GLA).
//!
//! The similarity between query `i` and key `j` is the sum of a fixed dot
//! product of shared query/key transforms and a learned score produced by a
//! one-hidden-layer network applied to the query alone:
//!
//! ```text
//! s(i, j) = q_iᵀ q_j + [W2 · relu(W1 · l_i + b1) + b2]_pos(j)
//! ```
//!
//! Attention is restricted to the `3l` window around each query's hash
//! chunk. Several independent hashing rounds are merged with weights
//! proportional to each round's raw score sum.
//!
//! Score matrices are laid out keys × queries: column `i` holds the scores of
//! query `i`, and the softmax normalises each column.

mod gradcheck;
mod kernel;

pub use gradcheck::{
    check_parameters, grad_check, grad_check_with, relative_error, GradCheckOptions, GradCheckReport,
    TensorCheck,
};
pub(crate) use gradcheck::probe_mask;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::params::{push_conv, push_conv_mut, Parameters};
use crate::rng::SeededRng;
use crate::sblsh::{HashPlan, RoundPlan};
use crate::tensor::{conv2d_3x3, conv2d_3x3_backward, matmul, ConvKernel, FeatureMap, Matrix};
use kernel::{attend_query, attend_query_backward, Features};

const WEIGHT_FALLBACK_EPS: f64 = 1e-12;

/// Trainable tensors of one GLA block operating on `c` channels with bucket
/// size `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlaParams {
    /// Shared query/key transform.
    pub qk_conv: ConvKernel,
    pub v_conv: ConvKernel,
    /// Input transform of the learned scorer.
    pub l_conv: ConvKernel,
    /// `l × c`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `l × l`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl GlaParams {
    pub fn zeros(channels: usize, bucket_size: usize) -> Self {
        Self {
            qk_conv: ConvKernel::zeros(channels, channels),
            v_conv: ConvKernel::zeros(channels, channels),
            l_conv: ConvKernel::zeros(channels, channels),
            w1: Matrix::zeros(bucket_size, channels),
            b1: vec![0.0; bucket_size],
            w2: Matrix::zeros(bucket_size, bucket_size),
            b2: vec![0.0; bucket_size],
        }
    }

    /// Kaiming normal weights (`std = gain / sqrt(fan_in)`, `gain² = 2` for
    /// `w1`, which feeds a ReLU, and 1 elsewhere) and zero biases.
    pub fn init(channels: usize, bucket_size: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(channels, bucket_size);
        let conv_std = (1.0 / (9 * channels) as f64).sqrt();
        for k in [&mut p.qk_conv, &mut p.v_conv, &mut p.l_conv] {
            k.weight = rng.normal_vec(k.weight.len(), conv_std);
        }
        p.w1 = Matrix::new(
            bucket_size,
            channels,
            rng.normal_vec(bucket_size * channels, (2.0 / channels as f64).sqrt()),
        )
        .expect("shape");
        p.w2 = Matrix::new(
            bucket_size,
            bucket_size,
            rng.normal_vec(bucket_size * bucket_size, (1.0 / bucket_size as f64).sqrt()),
        )
        .expect("shape");
        p
    }

    pub fn channels(&self) -> usize {
        self.qk_conv.in_ch
    }

    pub fn bucket_size(&self) -> usize {
        self.w1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, l) = (self.channels(), self.bucket_size());
        for (name, k) in [("qk_conv", &self.qk_conv), ("v_conv", &self.v_conv), ("l_conv", &self.l_conv)] {
            if k.in_ch != c || k.out_ch != c {
                return Err(invalid(format!(
                    "{name} must map {c} -> {c} channels, got {} -> {}",
                    k.in_ch, k.out_ch
                )));
            }
        }
        if self.w1.cols() != c
            || self.w2.rows() != l
            || self.w2.cols() != l
            || self.b1.len() != l
            || self.b2.len() != l
        {
            return Err(invalid(format!(
                "learned scorer shapes inconsistent with l={l}, c={c}"
            )));
        }
        if !self.is_finite() {
            return Err(invalid("GLA parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Zeroes `w1, b1, w2, b2`, leaving only the fixed dot-product score.
    pub fn zero_learned_scoring(&mut self) {
        self.w1.data_mut().fill(0.0);
        self.w2.data_mut().fill(0.0);
        self.b1.fill(0.0);
        self.b2.fill(0.0);
    }
}

pub const LSS_TENSORS: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl Parameters for GlaParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(10);
        push_conv(&mut out, "qk_conv", &self.qk_conv);
        push_conv(&mut out, "v_conv", &self.v_conv);
        push_conv(&mut out, "l_conv", &self.l_conv);
        out.push(("w1".into(), self.w1.data()));
        out.push(("b1".into(), &self.b1));
        out.push(("w2".into(), self.w2.data()));
        out.push(("b2".into(), &self.b2));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(10);
        push_conv_mut(&mut out, "qk_conv", &mut self.qk_conv);
        push_conv_mut(&mut out, "v_conv", &mut self.v_conv);
        push_conv_mut(&mut out, "l_conv", &mut self.l_conv);
        out.push(("w1".into(), self.w1.data_mut()));
        out.push(("b1".into(), &mut self.b1));
        out.push(("w2".into(), self.w2.data_mut()));
        out.push(("b2".into(), &mut self.b2));
        out
    }
}

/// `S_f = QᵀQ` for the `c × l` query/key bucket.
pub fn score_fixed(q_bucket: &Matrix) -> Matrix {
    matmul(&q_bucket.transpose(), q_bucket).expect("Gram shapes always agree")
}

/// `S_l`: column `j` is the learned score vector of bucket member `j`.
pub fn score_learnable(l_bucket: &Matrix, params: &GlaParams) -> Result<Matrix> {
    let l = params.bucket_size();
    if l_bucket.cols() != l || l_bucket.rows() != params.channels() {
        return Err(invalid(format!(
            "learned scoring expects a {}x{l} bucket, got {}x{}",
            params.channels(),
            l_bucket.rows(),
            l_bucket.cols()
        )));
    }
    let mut out = Matrix::zeros(l, l);
    for j in 0..l {
        let act = kernel::lss_forward(params, &l_bucket.column(j));
        for (t, s) in act.scores.iter().enumerate() {
            out.set(t, j, *s);
        }
    }
    Ok(out)
}

/// Gradients of the learned scorer for upstream gradient `grad_scores`
/// (same `l × l` keys × queries layout as [`score_learnable`]).
pub fn score_learnable_backward(
    l_bucket: &Matrix,
    params: &GlaParams,
    grad_scores: &Matrix,
) -> Result<(Matrix, GlaParams)> {
    let l = params.bucket_size();
    if grad_scores.rows() != l || grad_scores.cols() != l {
        return Err(invalid("score gradient must be l x l"));
    }
    score_learnable(l_bucket, params)?;
    let mut grads = GlaParams::zeros(params.channels(), l);
    let mut grad_input = Matrix::zeros(l_bucket.rows(), l);
    for j in 0..l {
        let x = l_bucket.column(j);
        let act = kernel::lss_forward(params, &x);
        let gx = kernel::lss_backward(params, &x, &act, &grad_scores.column(j), &mut grads);
        for (k, g) in gx.iter().enumerate() {
            grad_input.set(k, j, *g);
        }
    }
    Ok((grad_input, grads))
}

/// Result of attention inside one bucket.
#[derive(Clone, Debug)]
pub struct BucketAttention {
    /// `c × l`; padded query columns are zero.
    pub values: Matrix,
    /// Raw score sum over real keys, per query (0 for padded queries).
    pub score_sums: Vec<f64>,
    /// Softmax weights, keys × queries; padded rows and columns are zero.
    pub attention: Matrix,
}

/// Attention of every bucket member over the bucket's real members.
pub fn attend_bucket(
    q_bucket: &Matrix,
    l_bucket: &Matrix,
    v_bucket: &Matrix,
    pad_mask: &[bool],
    params: &GlaParams,
) -> Result<BucketAttention> {
    let l = params.bucket_size();
    let c = params.channels();
    for (name, m) in [("query", q_bucket), ("scorer input", l_bucket), ("value", v_bucket)] {
        if m.rows() != c || m.cols() != l {
            return Err(invalid(format!(
                "{name} bucket must be {c}x{l}, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
    }
    if pad_mask.len() != l {
        return Err(invalid(format!("pad mask must have length {l}")));
    }
    if pad_mask.iter().all(|&p| p) {
        return Err(invalid("bucket contains only padding"));
    }
    let feats = Features {
        q: q_bucket.transpose(),
        l: l_bucket.transpose(),
        v: v_bucket.transpose(),
    };
    let window: Vec<Option<usize>> = (0..l).map(|j| (!pad_mask[j]).then_some(j)).collect();
    let mut values = Matrix::zeros(c, l);
    let mut attention = Matrix::zeros(l, l);
    let mut score_sums = vec![0.0; l];
    let mut macs = 0;
    for i in (0..l).filter(|&i| !pad_mask[i]) {
        let r = attend_query(&feats, params, i, &window, &mut macs);
        for (k, v) in r.value.iter().enumerate() {
            values.set(k, i, *v);
        }
        for (t, p) in r.probs.iter().enumerate() {
            attention.set(t, i, *p);
        }
        score_sums[i] = r.score_sum;
    }
    Ok(BucketAttention {
        values,
        score_sums,
        attention,
    })
}

/// Per-query merge weights `ω_r[i] = sums_r[i] / Σ_ρ sums_ρ[i]`, falling back
/// to `1/h` when the denominator is within `1e-12` of zero.
pub fn round_weights(score_sums: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let h = score_sums.len();
    if h == 0 {
        return Err(invalid("need at least one hashing round"));
    }
    let n = score_sums[0].len();
    if score_sums.iter().any(|s| s.len() != n) {
        return Err(invalid("score sums must have equal length for every round"));
    }
    let mut weights = vec![vec![0.0; n]; h];
    for i in 0..n {
        let denom: f64 = score_sums.iter().map(|s| s[i]).sum();
        for r in 0..h {
            weights[r][i] = if denom.abs() < WEIGHT_FALLBACK_EPS {
                1.0 / h as f64
            } else {
                score_sums[r][i] / denom
            };
        }
    }
    Ok(weights)
}

/// One hashing round's attention result in original index order.
#[derive(Clone, Debug)]
pub struct RoundOutput {
    /// `c × n`
    pub values: Matrix,
    pub score_sums: Vec<f64>,
}

/// Everything computed by a forward pass.
#[derive(Clone, Debug)]
pub struct GlaTrace {
    pub output: FeatureMap,
    pub rounds: Vec<RoundOutput>,
    /// `rounds × n`
    pub weights: Vec<Vec<f64>>,
    /// Multiply-accumulates spent in scoring and aggregation.
    pub macs: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GlaOptions {
    /// Process chunks on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

/// Closed-form MAC count of [`gla_forward`] for `n` features when `l`
/// divides `n` (so every window holds `3l` real keys).
pub fn gla_macs(n: usize, channels: usize, bucket_size: usize, rounds: usize) -> u64 {
    (rounds * n) as u64 * kernel::query_macs(3 * bucket_size, channels, bucket_size)
}

fn check_inputs(x: &FeatureMap, params: &GlaParams, plans: &HashPlan) -> Result<()> {
    params.validate()?;
    if x.channels() != params.channels() {
        return Err(invalid(format!(
            "GLA expects {} channels, got {}",
            params.channels(),
            x.channels()
        )));
    }
    if plans.feature_count() != x.plane_len() {
        return Err(invalid(format!(
            "hash plan covers {} features, input has {}",
            plans.feature_count(),
            x.plane_len()
        )));
    }
    if plans.bucket_size() != params.bucket_size() {
        return Err(invalid(format!(
            "hash plan bucket size {} != parameter bucket size {}",
            plans.bucket_size(),
            params.bucket_size()
        )));
    }
    Ok(())
}

fn transform(x: &FeatureMap, params: &GlaParams) -> Result<Features> {
    let q = conv2d_3x3(x, &params.qk_conv)?.to_matrix().transpose();
    let l = conv2d_3x3(x, &params.l_conv)?.to_matrix().transpose();
    let v = conv2d_3x3(x, &params.v_conv)?.to_matrix().transpose();
    Ok(Features { q, l, v })
}

/// Maps a chunk's context window to key slots.
fn window_slots(plan: &RoundPlan, k: usize) -> Vec<Option<usize>> {
    plan.context_window(k)
        .into_iter()
        .map(|j| (!plan.is_pad(j)).then_some(j))
        .collect()
}

struct ChunkResult {
    queries: Vec<(usize, Vec<f64>, f64)>,
    macs: u64,
}

fn run_chunk(f: &Features, params: &GlaParams, plan: &RoundPlan, k: usize) -> ChunkResult {
    let window = window_slots(plan, k);
    let mut macs = 0;
    let queries = plan.chunks()[k]
        .iter()
        .filter(|&&i| !plan.is_pad(i))
        .map(|&i| {
            let r = attend_query(f, params, i, &window, &mut macs);
            (i, r.value, r.score_sum)
        })
        .collect();
    ChunkResult { queries, macs }
}

fn run_round(f: &Features, params: &GlaParams, plan: &RoundPlan, opts: GlaOptions) -> (Matrix, Vec<f64>, u64) {
    let n = plan.len();
    let c = params.channels();
    let chunks: Vec<ChunkResult> = if opts.parallel {
        (0..plan.chunks().len())
            .into_par_iter()
            .map(|k| run_chunk(f, params, plan, k))
            .collect()
    } else {
        (0..plan.chunks().len())
            .map(|k| run_chunk(f, params, plan, k))
            .collect()
    };
    let mut values = Matrix::zeros(n, c);
    let mut sums = vec![0.0; n];
    let mut macs = 0;
    for chunk in chunks {
        macs += chunk.macs;
        for (i, v, s) in chunk.queries {
            values.data_mut()[i * c..(i + 1) * c].copy_from_slice(&v);
            sums[i] = s;
        }
    }
    (values, sums, macs)
}

fn forward_impl(
    x: &FeatureMap,
    params: &GlaParams,
    plans: &HashPlan,
    frozen_weights: Option<&[Vec<f64>]>,
    opts: GlaOptions,
) -> Result<GlaTrace> {
    check_inputs(x, params, plans)?;
    let feats = transform(x, params)?;
    let n = x.plane_len();
    let c = params.channels();
    let mut rounds = Vec::with_capacity(plans.round_count());
    let mut macs = 0;
    for plan in plans.rounds() {
        let (values, sums, m) = run_round(&feats, params, plan, opts);
        macs += m;
        rounds.push((values, sums));
    }
    let weights = match frozen_weights {
        Some(w) => {
            if w.len() != rounds.len() || w.iter().any(|r| r.len() != n) {
                return Err(invalid("frozen round weights do not match the hash plan"));
            }
            w.to_vec()
        }
        None => round_weights(&rounds.iter().map(|r| r.1.clone()).collect::<Vec<_>>())?,
    };
    let mut merged = Matrix::zeros(n, c);
    for (r, (values, _)) in rounds.iter().enumerate() {
        for i in 0..n {
            let w = weights[r][i];
            let dst = &mut merged.data_mut()[i * c..(i + 1) * c];
            for (d, v) in dst.iter_mut().zip(values.row(i)) {
                *d += w * v;
            }
        }
    }
    let output = FeatureMap::from_matrix(merged.transpose(), x.height(), x.width())?;
    let rounds = rounds
        .into_iter()
        .map(|(values, score_sums)| RoundOutput {
            values: values.transpose(),
            score_sums,
        })
        .collect();
    Ok(GlaTrace {
        output,
        rounds,
        weights,
        macs,
    })
}

/// Hashed multi-round attention over the `c × h × w` map `x`.
///
/// `plans` must have been built for the query transform of `x` (see
/// [`gla_query_features`]) and fixes the bucket layout; the output has the
/// same shape as `x`.
pub fn gla_forward(x: &FeatureMap, params: &GlaParams, plans: &HashPlan) -> Result<FeatureMap> {
    Ok(forward_impl(x, params, plans, None, GlaOptions::default())?.output)
}

pub fn gla_forward_traced(
    x: &FeatureMap,
    params: &GlaParams,
    plans: &HashPlan,
    opts: GlaOptions,
) -> Result<GlaTrace> {
    forward_impl(x, params, plans, None, opts)
}

/// Forward pass with the round-merge weights supplied instead of computed.
pub fn gla_forward_with_weights(
    x: &FeatureMap,
    params: &GlaParams,
    plans: &HashPlan,
    weights: &[Vec<f64>],
) -> Result<FeatureMap> {
    Ok(forward_impl(x, params, plans, Some(weights), GlaOptions::default())?.output)
}

/// The `c × n` query/key features that hash plans are built from.
pub fn gla_query_features(x: &FeatureMap, params: &GlaParams) -> Result<Matrix> {
    Ok(conv2d_3x3(x, &params.qk_conv)?.to_matrix())
}

/// Hash plan for `x` given one orthonormal basis per round.
pub fn gla_plan(
    x: &FeatureMap,
    params: &GlaParams,
    bases: &[crate::sblsh::OrthoBasis],
) -> Result<HashPlan> {
    HashPlan::build(&gla_query_features(x, params)?, bases, params.bucket_size())
}

#[derive(Clone, Debug)]
pub struct GlaGrads {
    pub input: FeatureMap,
    pub params: GlaParams,
}

/// Gradients of `⟨upstream, gla_forward(x)⟩` with the round-merge weights
/// held constant.
pub fn gla_backward(
    x: &FeatureMap,
    params: &GlaParams,
    plans: &HashPlan,
    upstream: &FeatureMap,
) -> Result<GlaGrads> {
    let trace = forward_impl(x, params, plans, None, GlaOptions::default())?;
    backward_with_weights(x, params, plans, &trace.weights, upstream)
}

pub(crate) fn backward_with_weights(
    x: &FeatureMap,
    params: &GlaParams,
    plans: &HashPlan,
    weights: &[Vec<f64>],
    upstream: &FeatureMap,
) -> Result<GlaGrads> {
    check_inputs(x, params, plans)?;
    if upstream.shape() != x.shape() {
        return Err(invalid(format!(
            "upstream gradient shape {:?} != input shape {:?}",
            upstream.shape(),
            x.shape()
        )));
    }
    let feats = transform(x, params)?;
    let n = x.plane_len();
    let c = params.channels();
    let g = upstream.to_matrix().transpose();
    let mut grads = GlaParams::zeros(c, params.bucket_size());
    let mut gfeats = Features::zeros(n, c);
    let mut macs = 0;
    for (r, plan) in plans.rounds().iter().enumerate() {
        for k in 0..plan.chunks().len() {
            let window = window_slots(plan, k);
            for &i in plan.chunks()[k].iter().filter(|&&i| !plan.is_pad(i)) {
                let w = weights[r][i];
                if w == 0.0 {
                    continue;
                }
                let gv: Vec<f64> = g.row(i).iter().map(|v| v * w).collect();
                let res = attend_query(&feats, params, i, &window, &mut macs);
                attend_query_backward(&feats, params, i, &window, &res, &gv, &mut grads, &mut gfeats);
            }
        }
    }
    let (h, wd) = (x.height(), x.width());
    let mut input = FeatureMap::zeros(c, h, wd);
    for (mat, kernel, slot) in [
        (&gfeats.q, &params.qk_conv, 0),
        (&gfeats.l, &params.l_conv, 1),
        (&gfeats.v, &params.v_conv, 2),
    ] {
        let gmap = FeatureMap::from_matrix(mat.transpose(), h, wd)?;
        let cg = conv2d_3x3_backward(x, kernel, &gmap)?;
        input.add_assign(&cg.input)?;
        let dst = match slot {
            0 => &mut grads.qk_conv,
            1 => &mut grads.l_conv,
            _ => &mut grads.v_conv,
        };
        dst.weight = cg.weight;
        dst.bias = cg.bias;
    }
    Ok(GlaGrads {
        input,
        params: grads,
    })
}
