//! Per-query attention over a key window, and its adjoint.
//!
//! Features are held feature-major (`n × c`) so each query, key and value is
//! a contiguous row. A window is a list of key slots; `None` marks padding.
//! The learned score vector has one entry per position inside a chunk, so a
//! key in window slot `t` receives learned score `s_l[t mod l]`.

use super::GlaParams;
use crate::tensor::Matrix;

/// Transformed features, one row per spatial position.
#[derive(Clone, Debug)]
pub(crate) struct Features {
    pub q: Matrix,
    pub l: Matrix,
    pub v: Matrix,
}

impl Features {
    pub fn zeros(n: usize, c: usize) -> Self {
        Self {
            q: Matrix::zeros(n, c),
            l: Matrix::zeros(n, c),
            v: Matrix::zeros(n, c),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Lss {
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub scores: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W2·relu(W1·x + b1) + b2`.
pub(crate) fn lss_forward(p: &GlaParams, x: &[f64]) -> Lss {
    let l = p.bucket_size();
    let pre: Vec<f64> = (0..l).map(|r| dot(p.w1.row(r), x) + p.b1[r]).collect();
    let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let scores = (0..l).map(|r| dot(p.w2.row(r), &hidden) + p.b2[r]).collect();
    Lss {
        pre,
        hidden,
        scores,
    }
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the input feature.
pub(crate) fn lss_backward(
    p: &GlaParams,
    x: &[f64],
    act: &Lss,
    grad_scores: &[f64],
    grads: &mut GlaParams,
) -> Vec<f64> {
    let l = p.bucket_size();
    let c = x.len();
    let mut grad_hidden = vec![0.0; l];
    for (r, &g) in grad_scores.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grads.b2[r] += g;
        let gw2 = &mut grads.w2.data_mut()[r * l..(r + 1) * l];
        for (gw, h) in gw2.iter_mut().zip(&act.hidden) {
            *gw += g * h;
        }
        for (gh, w) in grad_hidden.iter_mut().zip(p.w2.row(r)) {
            *gh += g * w;
        }
    }
    let mut grad_x = vec![0.0; c];
    for r in 0..l {
        if act.pre[r] <= 0.0 || grad_hidden[r] == 0.0 {
            continue;
        }
        let g = grad_hidden[r];
        grads.b1[r] += g;
        let gw1 = &mut grads.w1.data_mut()[r * c..(r + 1) * c];
        for (gw, xv) in gw1.iter_mut().zip(x) {
            *gw += g * xv;
        }
        for (gx, w) in grad_x.iter_mut().zip(p.w1.row(r)) {
            *gx += g * w;
        }
    }
    grad_x
}

#[derive(Clone, Debug)]
pub(crate) struct QueryResult {
    /// Softmax over window slots; exactly 0 at padding.
    pub probs: Vec<f64>,
    pub value: Vec<f64>,
    pub score_sum: f64,
    pub lss: Lss,
}

/// Multiply-accumulates spent on one query: fixed and learned scoring plus
/// value aggregation.
pub(crate) fn query_macs(real_keys: usize, c: usize, l: usize) -> u64 {
    (2 * real_keys * c + l * c + l * l) as u64
}

pub(crate) fn attend_query(
    f: &Features,
    p: &GlaParams,
    query: usize,
    window: &[Option<usize>],
    macs: &mut u64,
) -> QueryResult {
    let l = p.bucket_size();
    let c = f.q.cols();
    let qi = f.q.row(query);
    let lss = lss_forward(p, f.l.row(query));
    let mut scores = vec![f64::NEG_INFINITY; window.len()];
    let mut score_sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut real = 0;
    for (t, slot) in window.iter().enumerate() {
        if let Some(j) = *slot {
            let s = dot(qi, f.q.row(j)) + lss.scores[t % l];
            scores[t] = s;
            score_sum += s;
            max = max.max(s);
            real += 1;
        }
    }
    let mut probs = vec![0.0; window.len()];
    let mut denom = 0.0;
    for (t, slot) in window.iter().enumerate() {
        if slot.is_some() {
            probs[t] = (scores[t] - max).exp();
            denom += probs[t];
        }
    }
    let mut value = vec![0.0; c];
    for (t, slot) in window.iter().enumerate() {
        if let Some(j) = *slot {
            probs[t] /= denom;
            let pt = probs[t];
            for (o, vv) in value.iter_mut().zip(f.v.row(j)) {
                *o += pt * vv;
            }
        }
    }
    *macs += query_macs(real, c, l);
    QueryResult {
        probs,
        value,
        score_sum,
        lss,
    }
}

/// Adjoint of [`attend_query`] for upstream gradient `grad_value` on its
/// output vector; the score sum is treated as a constant.
pub(crate) fn attend_query_backward(
    f: &Features,
    p: &GlaParams,
    query: usize,
    window: &[Option<usize>],
    res: &QueryResult,
    grad_value: &[f64],
    grads: &mut GlaParams,
    gf: &mut Features,
) {
    let l = p.bucket_size();
    let c = f.q.cols();
    let qi = f.q.row(query);
    let mut grad_probs = vec![0.0; window.len()];
    let mut weighted = 0.0;
    for (t, slot) in window.iter().enumerate() {
        if let Some(j) = *slot {
            grad_probs[t] = dot(grad_value, f.v.row(j));
            weighted += res.probs[t] * grad_probs[t];
            let pt = res.probs[t];
            let gv = &mut gf.v.data_mut()[j * c..(j + 1) * c];
            for (g, u) in gv.iter_mut().zip(grad_value) {
                *g += pt * u;
            }
        }
    }
    let mut grad_lss = vec![0.0; l];
    let mut grad_qi = vec![0.0; c];
    for (t, slot) in window.iter().enumerate() {
        if let Some(j) = *slot {
            let gs = res.probs[t] * (grad_probs[t] - weighted);
            if gs == 0.0 {
                continue;
            }
            grad_lss[t % l] += gs;
            for (g, k) in grad_qi.iter_mut().zip(f.q.row(j)) {
                *g += gs * k;
            }
            let gk = &mut gf.q.data_mut()[j * c..(j + 1) * c];
            for (g, qv) in gk.iter_mut().zip(qi) {
                *g += gs * qv;
            }
        }
    }
    let gq = &mut gf.q.data_mut()[query * c..(query + 1) * c];
    for (g, v) in gq.iter_mut().zip(&grad_qi) {
        *g += v;
    }
    let grad_li = lss_backward(p, f.l.row(query), &res.lss, &grad_lss, grads);
    let gl = &mut gf.l.data_mut()[query * c..(query + 1) * c];
    for (g, v) in gl.iter_mut().zip(&grad_li) {
        *g += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn appended_padding_is_bitwise_inert() {
        let mut rng = SeededRng::new(12);
        let (n, c, l) = (7, 3, 4);
        let p = GlaParams::init(c, l, &mut rng);
        let f = Features {
            q: Matrix::new(n, c, rng.normal_vec(n * c, 1.0)).unwrap(),
            l: Matrix::new(n, c, rng.normal_vec(n * c, 1.0)).unwrap(),
            v: Matrix::new(n, c, rng.normal_vec(n * c, 1.0)).unwrap(),
        };
        let base: Vec<Option<usize>> = vec![Some(0), Some(3), Some(5), Some(6), Some(1)];
        let mut padded = base.clone();
        padded.extend([None, None, None]);
        let mut macs = 0;
        for q in 0..n {
            let a = attend_query(&f, &p, q, &base, &mut macs);
            let b = attend_query(&f, &p, q, &padded, &mut macs);
            assert_eq!(a.value, b.value);
            assert_eq!(a.score_sum, b.score_sum);
            assert_eq!(&a.probs[..], &b.probs[..base.len()]);
            assert!(b.probs[base.len()..].iter().all(|&v| v == 0.0));
        }
    }
}
