//! Dense `f64` arrays and the handful of kernels the network is built from.
//!
//! [`FeatureMap`] stores `channels × height × width` values channel-major,
//! then row-major. Because of that layout a feature map is also, without any
//! copy, a `channels × (height·width)` [`Matrix`] whose column `i` is the
//! feature vector at flattened pixel `i`.

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(invalid(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "feature map dims must be positive");
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut m = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    m.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        m
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Views the map as a `channels × (height·width)` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.channels,
            cols: self.plane_len(),
            data: self.data.clone(),
        }
    }

    pub fn from_matrix(m: Matrix, height: usize, width: usize) -> Result<Self> {
        if m.cols != height * width {
            return Err(invalid(format!(
                "matrix with {} columns cannot be reshaped to {height}x{width}",
                m.cols
            )));
        }
        Self::new(m.rows, height, width, m.data)
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &FeatureMap) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(invalid(format!(
                "shape mismatch in add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> FeatureMap {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("matrix dims must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(invalid(format!(
            "matmul dimension mismatch: {}x{} · {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let dst = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            for (d, bv) in dst.iter_mut().zip(b.row(k)) {
                *d += aik * bv;
            }
        }
    }
    Ok(out)
}

/// A bank of 3×3 kernels, `out_ch × in_ch × 3 × 3`, with one bias per output
/// channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub out_ch: usize,
    pub in_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(out_ch: usize, in_ch: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != out_ch * in_ch * 9 || bias.len() != out_ch {
            return Err(invalid(format!(
                "kernel bank {out_ch}x{in_ch}x3x3 needs {} weights and {out_ch} biases, got {} and {}",
                out_ch * in_ch * 9,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            out_ch,
            in_ch,
            weight,
            bias,
        })
    }

    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    /// Centre tap 1 on the channel diagonal: passes the input through.
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels);
        for c in 0..channels {
            k.weight[(c * channels + c) * 9 + 4] = 1.0;
        }
        k
    }

    pub fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_ch + i) * 3 + ky) * 3 + kx]
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: FeatureMap,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Rows/cols `[lo, hi)` of the output for which `pos + d` stays in bounds.
fn valid_span(d: isize, len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Cross-correlation with zero padding 1 and stride 1; output keeps the
/// input's height and width.
pub fn conv2d_3x3(x: &FeatureMap, k: &ConvKernel) -> Result<FeatureMap> {
    if k.in_ch != x.channels {
        return Err(invalid(format!(
            "conv expects {} input channels, got {}",
            k.in_ch, x.channels
        )));
    }
    let (h, w) = (x.height, x.width);
    let mut out = FeatureMap::zeros(k.out_ch, h, w);
    for o in 0..k.out_ch {
        let dst = &mut out.data[o * h * w..(o + 1) * h * w];
        dst.iter_mut().for_each(|v| *v = k.bias[o]);
        for i in 0..k.in_ch {
            let src = x.plane(i);
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_span(dy, h);
                for kx in 0..3 {
                    let wt = k.w(o, i, ky, kx);
                    if wt == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_span(dx, w);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w..(sy + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (d, s) in drow[x0..x1].iter_mut().zip(&srow[sx0..]) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d_3x3`] with respect to input, weights and biases.
pub fn conv2d_3x3_backward(
    x: &FeatureMap,
    k: &ConvKernel,
    grad_out: &FeatureMap,
) -> Result<ConvGrads> {
    if k.in_ch != x.channels
        || grad_out.channels != k.out_ch
        || grad_out.height != x.height
        || grad_out.width != x.width
    {
        return Err(invalid(format!(
            "conv backward shape mismatch: x {:?}, kernel {}x{}, grad {:?}",
            x.shape(),
            k.out_ch,
            k.in_ch,
            grad_out.shape()
        )));
    }
    let (h, w) = (x.height, x.width);
    let mut gin = FeatureMap::zeros(x.channels, h, w);
    let mut gw = vec![0.0; k.weight.len()];
    let mut gb = vec![0.0; k.out_ch];
    for o in 0..k.out_ch {
        let g = grad_out.plane(o);
        gb[o] = g.iter().sum();
        for i in 0..k.in_ch {
            let src = x.plane(i);
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_span(dy, h);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_span(dx, w);
                    let widx = ((o * k.in_ch + i) * 3 + ky) * 3 + kx;
                    let wt = k.weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + sx0..];
                        for (gv, sv) in grow.iter().zip(srow) {
                            acc += gv * sv;
                        }
                        if wt != 0.0 {
                            let dst = &mut gin.data[i * h * w + sy * w + sx0..];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += wt * gv;
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    })
}

/// Softmax along each row, stabilised by subtracting the row maximum.
pub fn softmax_rows(s: &Matrix) -> Matrix {
    let mut out = s.clone();
    for r in 0..s.rows {
        let row = &mut out.data[r * s.cols..(r + 1) * s.cols];
        softmax_in_place(row);
    }
    out
}

/// In-place stabilised softmax of one slice.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Rearranges `s²` channel groups into an `s×` larger grid:
/// `out[c][s·i + a][s·j + b] = x[c·s² + a·s + b][i][j]`.
pub fn pixel_shuffle(x: &FeatureMap, s: usize) -> Result<FeatureMap> {
    if s == 0 || x.channels % (s * s) != 0 {
        return Err(invalid(format!(
            "pixel shuffle needs channels divisible by {}, got {}",
            s * s,
            x.channels
        )));
    }
    let oc = x.channels / (s * s);
    let (h, w) = (x.height, x.width);
    let mut out = FeatureMap::zeros(oc, h * s, w * s);
    for c in 0..oc {
        for a in 0..s {
            for b in 0..s {
                let src = x.plane(c * s * s + a * s + b);
                for i in 0..h {
                    for j in 0..w {
                        out.set(c, s * i + a, s * j + b, src[i * w + j]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_shuffle`]; also its adjoint, since the shuffle is
/// a permutation.
pub fn pixel_unshuffle(x: &FeatureMap, s: usize) -> Result<FeatureMap> {
    if s == 0 || x.height % s != 0 || x.width % s != 0 {
        return Err(invalid(format!(
            "pixel unshuffle needs spatial dims divisible by {s}, got {}x{}",
            x.height, x.width
        )));
    }
    let (h, w) = (x.height / s, x.width / s);
    let mut out = FeatureMap::zeros(x.channels * s * s, h, w);
    for c in 0..x.channels {
        for a in 0..s {
            for b in 0..s {
                for i in 0..h {
                    for j in 0..w {
                        out.set(c * s * s + a * s + b, i, j, x.get(c, s * i + a, s * j + b));
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes `grad` where the pre-activation was strictly positive.
pub fn relu_backward(pre: &FeatureMap, grad: &FeatureMap) -> FeatureMap {
    let mut out = grad.clone();
    for (g, p) in out.data.iter_mut().zip(&pre.data) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
    out
}
