//! Naive loop implementations shared by the integration tests.

#![allow(dead_code)]

use dlsn_core::gla::GlaParams;
use dlsn_core::sblsh::OrthoBasis;
use dlsn_core::tensor::{ConvKernel, FeatureMap};

// Naive zero-padded cross-correlation; returns n × c (feature-major).
pub fn conv(x: &FeatureMap, k: &ConvKernel) -> Vec<Vec<f64>> {
    let (_, h, w) = x.shape();
    let mut out = vec![vec![0.0; k.out_ch]; h * w];
    for y in 0..h {
        for xx in 0..w {
            for o in 0..k.out_ch {
                let mut acc = k.bias[o];
                for i in 0..k.in_ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += k.w(o, i, ky, kx) * x.get(i, sy as usize, sx as usize);
                        }
                    }
                }
                out[y * w + xx][o] = acc;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn lss(p: &GlaParams, x: &[f64]) -> Vec<f64> {
    let l = p.bucket_size();
    let hidden: Vec<f64> = (0..l)
        .map(|r| (dot(p.w1.row(r), x) + p.b1[r]).max(0.0))
        .collect();
    (0..l).map(|r| dot(p.w2.row(r), &hidden) + p.b2[r]).collect()
}

pub fn bucket_of(q: &[f64], basis: &OrthoBasis) -> usize {
    let m = basis.matrix();
    let proj: Vec<f64> = (0..m.rows()).map(|r| dot(m.row(r), q)).collect();
    let mut best = 0;
    for r in 1..proj.len() {
        if proj[r] > proj[best] {
            best = r;
        }
    }
    best
}

/// Independent forward: hash, stable sort, pad, clamp-window attention,
/// score-sum weighted merge.
pub fn gla(x: &FeatureMap, p: &GlaParams, bases: &[OrthoBasis]) -> Vec<Vec<f64>> {
    let q = conv(x, &p.qk_conv);
    let lf = conv(x, &p.l_conv);
    let v = conv(x, &p.v_conv);
    let n = q.len();
    let c = p.channels();
    let l = p.bucket_size();
    let mut per_round = Vec::new();
    for basis in bases {
        let ids: Vec<usize> = q.iter().map(|qi| bucket_of(qi, basis)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| ids[i]);
        let padded = n.div_ceil(l) * l;
        let slots: Vec<Option<usize>> = (0..padded).map(|s| order.get(s).copied()).collect();
        let chunks = padded / l;
        let mut values = vec![vec![0.0; c]; n];
        let mut sums = vec![0.0; n];
        for k in 0..chunks {
            let ctx = [k.saturating_sub(1), k, (k + 1).min(chunks - 1)];
            let window: Vec<Option<usize>> = ctx
                .iter()
                .flat_map(|&cc| slots[cc * l..(cc + 1) * l].iter().copied())
                .collect();
            for qi in slots[k * l..(k + 1) * l].iter().flatten() {
                let sl = lss(p, &lf[*qi]);
                let scores: Vec<(usize, f64)> = window
                    .iter()
                    .enumerate()
                    .filter_map(|(t, s)| s.map(|j| (j, dot(&q[*qi], &q[j]) + sl[t % l])))
                    .collect();
                let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s.1 - max).exp()).sum();
                for &(j, s) in &scores {
                    let a = (s - max).exp() / z;
                    for ch in 0..c {
                        values[*qi][ch] += a * v[j][ch];
                    }
                }
                sums[*qi] = scores.iter().map(|s| s.1).sum();
            }
        }
        per_round.push((values, sums));
    }
    let h = bases.len() as f64;
    (0..n)
        .map(|i| {
            let total: f64 = per_round.iter().map(|r| r.1[i]).sum();
            let mut out = vec![0.0; c];
            for (vals, sums) in &per_round {
                let w = if total.abs() < 1e-12 { 1.0 / h } else { sums[i] / total };
                for ch in 0..c {
                    out[ch] += w * vals[i][ch];
                }
            }
            out
        })
        .collect()
}
