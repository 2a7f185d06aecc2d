//! Layer kernels with explicit forward and backward passes.
//!
//! Activations are NCHW `Array4<f64>` in standard layout; fully connected
//! activations are `(batch, features)` matrices. Backward passes accumulate
//! into `Param::grad` and return the gradient with respect to the layer input.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rayon::prelude::*;

use super::kernel::accumulate_partials;
use super::param::{prefixed, Param};

/// Unfolds one `c×h×w` image into a `(c·k·k) × (oh·ow)` patch matrix for a
/// stride-1 convolution with zero padding `pad`.
pub(crate) fn im2col(src: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, cols: &mut [f64]) {
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let out_row = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                // ox is valid where 0 <= ox + kj - pad < w
                let ox_lo = pad.saturating_sub(kj).min(ow);
                let ox_hi = (w + pad).saturating_sub(kj).min(ow).max(ox_lo);
                for oy in 0..oh {
                    let dst = &mut out_row[oy * ow..(oy + 1) * ow];
                    let iy = oy + ki;
                    if iy < pad || iy - pad >= h {
                        dst.fill(0.0);
                        continue;
                    }
                    let iy = iy - pad;
                    dst[..ox_lo].fill(0.0);
                    dst[ox_hi..].fill(0.0);
                    if ox_hi > ox_lo {
                        let ix_lo = ox_lo + kj - pad;
                        let n = ox_hi - ox_lo;
                        dst[ox_lo..ox_hi].copy_from_slice(&plane[iy * w + ix_lo..iy * w + ix_lo + n]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto a `c×h×w` image,
/// adding into `dst`.
pub(crate) fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, pad: usize, dst: &mut [f64]) {
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let in_row = &cols[row * oh * ow..(row + 1) * oh * ow];
                let ox_lo = pad.saturating_sub(kj).min(ow);
                let ox_hi = (w + pad).saturating_sub(kj).min(ow).max(ox_lo);
                if ox_hi <= ox_lo {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy + ki;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    let ix_lo = ox_lo + kj - pad;
                    let n = ox_hi - ox_lo;
                    let src = &in_row[oy * ow + ox_lo..oy * ow + ox_hi];
                    for (d, s) in plane[iy * w + ix_lo..iy * w + ix_lo + n].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn sample_len(x: &Array4<f64>) -> usize {
    let (_, c, h, w) = x.dim();
    c * h * w
}

/// Stride-1 2-D convolution. Weight layout `(out, in, k, k)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    pad: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, pad: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        Conv2d {
            weight: Param::uniform(&[out_ch, in_ch, kernel, kernel], bound, rng),
            bias: Param::uniform(&[out_ch], bound, rng),
            in_ch,
            out_ch,
            kernel,
            pad,
        }
    }

    pub fn out_side(&self, side: usize) -> usize {
        side + 2 * self.pad + 1 - self.kernel
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "conv input channels");
        let (oh, ow) = (self.out_side(h), self.out_side(w));
        let (k, pad, out_ch) = (self.kernel, self.pad, self.out_ch);
        let mut y = Array4::<f64>::zeros((n, out_ch, oh, ow));
        let wmat = ArrayView2::from_shape((out_ch, c * k * k), &self.weight.value).unwrap();
        let bias = &self.bias.value;
        let in_len = sample_len(x);
        y.as_slice_mut()
            .unwrap()
            .par_chunks_mut(out_ch * oh * ow)
            .zip(x.as_slice().unwrap().par_chunks(in_len))
            .for_each(|(ys, xs)| {
                let mut cols = vec![0.0; c * k * k * oh * ow];
                im2col(xs, c, h, w, k, pad, &mut cols);
                let cols = ArrayView2::from_shape((c * k * k, oh * ow), &cols).unwrap();
                let mut out = ArrayViewMut2::from_shape((out_ch, oh * ow), ys).unwrap();
                general_mat_mul(1.0, &wmat, &cols, 0.0, &mut out);
                for (mut row, b) in out.outer_iter_mut().zip(bias) {
                    row += *b;
                }
            });
        y
    }

    pub fn backward(&mut self, x: &Array4<f64>, gy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (_, out_ch, oh, ow) = gy.dim();
        let (k, pad) = (self.kernel, self.pad);
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        let wmat = ArrayView2::from_shape((out_ch, c * k * k), &self.weight.value).unwrap();
        let wlen = self.weight.len();
        let in_len = c * h * w;
        let partials = gx
            .as_slice_mut()
            .unwrap()
            .par_chunks_mut(in_len)
            .zip(x.as_slice().unwrap().par_chunks(in_len))
            .zip(gy.as_slice().unwrap().par_chunks(out_ch * oh * ow))
            .map(|((gxs, xs), gys)| {
                let mut cols = vec![0.0; c * k * k * oh * ow];
                im2col(xs, c, h, w, k, pad, &mut cols);
                let cols = ArrayView2::from_shape((c * k * k, oh * ow), &cols).unwrap();
                let g = ArrayView2::from_shape((out_ch, oh * ow), gys).unwrap();
                let mut part = vec![0.0; wlen + out_ch];
                {
                    let mut dw = ArrayViewMut2::from_shape((out_ch, c * k * k), &mut part[..wlen]).unwrap();
                    general_mat_mul(1.0, &g, &cols.t(), 0.0, &mut dw);
                }
                for (o, row) in g.outer_iter().enumerate() {
                    part[wlen + o] = row.sum();
                }
                let mut dcols = Array2::<f64>::zeros((c * k * k, oh * ow));
                general_mat_mul(1.0, &wmat.t(), &g, 0.0, &mut dcols);
                col2im(dcols.as_slice().unwrap(), c, h, w, k, pad, gxs);
                part
            });
        let mut acc = vec![0.0; wlen + out_ch];
        accumulate_partials(partials, &mut acc);
        add_into(&mut self.weight.grad, &acc[..wlen]);
        add_into(&mut self.bias.grad, &acc[wlen..]);
        gx
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((prefixed(prefix, "weight"), &self.weight));
        out.push((prefixed(prefix, "bias"), &self.bias));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((prefixed(prefix, "weight"), &mut self.weight));
        out.push((prefixed(prefix, "bias"), &mut self.bias));
    }
}

/// Stride-1 transposed convolution. Weight layout `(in, out, k, k)`; output
/// side is `side + k - 1 - 2·pad`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    pad: usize,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, pad: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        ConvTranspose2d {
            weight: Param::uniform(&[in_ch, out_ch, kernel, kernel], bound, rng),
            bias: Param::uniform(&[out_ch], bound, rng),
            in_ch,
            out_ch,
            kernel,
            pad,
        }
    }

    pub fn out_side(&self, side: usize) -> usize {
        side + self.kernel - 1 - 2 * self.pad
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_ch, "transposed conv input channels");
        let (oh, ow) = (self.out_side(h), self.out_side(w));
        let (k, pad, out_ch) = (self.kernel, self.pad, self.out_ch);
        let mut y = Array4::<f64>::zeros((n, out_ch, oh, ow));
        let wmat = ArrayView2::from_shape((c, out_ch * k * k), &self.weight.value).unwrap();
        let bias = &self.bias.value;
        y.as_slice_mut()
            .unwrap()
            .par_chunks_mut(out_ch * oh * ow)
            .zip(x.as_slice().unwrap().par_chunks(c * h * w))
            .for_each(|(ys, xs)| {
                let xv = ArrayView2::from_shape((c, h * w), xs).unwrap();
                let mut cols = Array2::<f64>::zeros((out_ch * k * k, h * w));
                general_mat_mul(1.0, &wmat.t(), &xv, 0.0, &mut cols);
                col2im(cols.as_slice().unwrap(), out_ch, oh, ow, k, pad, ys);
                for (plane, b) in ys.chunks_mut(oh * ow).zip(bias) {
                    plane.iter_mut().for_each(|v| *v += b);
                }
            });
        y
    }

    pub fn backward(&mut self, x: &Array4<f64>, gy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let (_, out_ch, oh, ow) = gy.dim();
        let (k, pad) = (self.kernel, self.pad);
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        let wmat = ArrayView2::from_shape((c, out_ch * k * k), &self.weight.value).unwrap();
        let wlen = self.weight.len();
        let partials = gx
            .as_slice_mut()
            .unwrap()
            .par_chunks_mut(c * h * w)
            .zip(x.as_slice().unwrap().par_chunks(c * h * w))
            .zip(gy.as_slice().unwrap().par_chunks(out_ch * oh * ow))
            .map(|((gxs, xs), gys)| {
                let mut gcols = vec![0.0; out_ch * k * k * h * w];
                im2col(gys, out_ch, oh, ow, k, pad, &mut gcols);
                let gcols = ArrayView2::from_shape((out_ch * k * k, h * w), &gcols).unwrap();
                let xv = ArrayView2::from_shape((c, h * w), xs).unwrap();
                let mut gxv = ArrayViewMut2::from_shape((c, h * w), gxs).unwrap();
                general_mat_mul(1.0, &wmat, &gcols, 0.0, &mut gxv);
                let mut part = vec![0.0; wlen + out_ch];
                {
                    let mut dw = ArrayViewMut2::from_shape((c, out_ch * k * k), &mut part[..wlen]).unwrap();
                    general_mat_mul(1.0, &xv, &gcols.t(), 0.0, &mut dw);
                }
                for (o, plane) in gys.chunks(oh * ow).enumerate() {
                    part[wlen + o] = plane.iter().sum();
                }
                part
            });
        let mut acc = vec![0.0; wlen + out_ch];
        accumulate_partials(partials, &mut acc);
        add_into(&mut self.weight.grad, &acc[..wlen]);
        add_into(&mut self.bias.grad, &acc[wlen..]);
        gx
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((prefixed(prefix, "weight"), &self.weight));
        out.push((prefixed(prefix, "bias"), &self.bias));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((prefixed(prefix, "weight"), &mut self.weight));
        out.push((prefixed(prefix, "bias"), &mut self.bias));
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization with running statistics for inference.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub struct BatchNormCache {
    xhat: Array4<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(ch: usize) -> Self {
        BatchNorm2d {
            gamma: Param::filled(&[ch], 1.0),
            beta: Param::filled(&[ch], 0.0),
            running_mean: vec![0.0; ch],
            running_var: vec![1.0; ch],
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics and updates the running estimates
    /// (unbiased variance, momentum 0.1).
    pub fn forward_train(&mut self, x: &Array4<f64>) -> (Array4<f64>, BatchNormCache) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let hw = h * w;
        let m = (n * hw) as f64;
        let xs = x.as_slice().unwrap();
        let mut xhat = Array4::<f64>::zeros((n, c, h, w));
        let mut y = Array4::<f64>::zeros((n, c, h, w));
        let mut inv_std = vec![0.0; c];
        {
            let xh = xhat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for (ch, inv) in inv_std.iter_mut().enumerate() {
                let planes = (0..n).map(|b| (b * c + ch) * hw);
                let mean = planes.clone().map(|o| xs[o..o + hw].iter().sum::<f64>()).sum::<f64>() / m;
                let var = planes
                    .clone()
                    .map(|o| xs[o..o + hw].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                    .sum::<f64>()
                    / m;
                let is = 1.0 / (var + BN_EPS).sqrt();
                *inv = is;
                let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                for o in planes {
                    for i in o..o + hw {
                        let v = (xs[i] - mean) * is;
                        xh[i] = v;
                        ys[i] = g * v + bt;
                    }
                }
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                self.running_mean[ch] = (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * mean;
                self.running_var[ch] = (1.0 - BN_MOMENTUM) * self.running_var[ch] + BN_MOMENTUM * unbiased;
            }
        }
        (y, BatchNormCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let hw = h * w;
        let mut y = x.clone();
        let ys = y.as_slice_mut().unwrap();
        for b in 0..n {
            for ch in 0..c {
                let is = 1.0 / (self.running_var[ch] + BN_EPS).sqrt();
                let (mu, g, bt) = (self.running_mean[ch], self.gamma.value[ch], self.beta.value[ch]);
                let o = (b * c + ch) * hw;
                ys[o..o + hw].iter_mut().for_each(|v| *v = g * (*v - mu) * is + bt);
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BatchNormCache, gy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = gy.dim();
        let hw = h * w;
        let m = (n * hw) as f64;
        let gys = gy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let mut gx = Array4::<f64>::zeros((n, c, h, w));
        let gxs = gx.as_slice_mut().unwrap();
        for ch in 0..c {
            let planes = (0..n).map(|b| (b * c + ch) * hw);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for o in planes.clone() {
                for i in o..o + hw {
                    sum_g += gys[i];
                    sum_gx += gys[i] * xh[i];
                }
            }
            self.beta.grad[ch] += sum_g;
            self.gamma.grad[ch] += sum_gx;
            let g = self.gamma.value[ch];
            let k = g * cache.inv_std[ch] / m;
            for o in planes {
                for i in o..o + hw {
                    gxs[i] = k * (m * gys[i] - sum_g - xh[i] * sum_gx);
                }
            }
        }
        gx
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((prefixed(prefix, "weight"), &self.gamma));
        out.push((prefixed(prefix, "bias"), &self.beta));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((prefixed(prefix, "weight"), &mut self.gamma));
        out.push((prefixed(prefix, "bias"), &mut self.beta));
    }

    pub(crate) fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Vec<f64>)>) {
        out.push((prefixed(prefix, "running_mean"), &self.running_mean));
        out.push((prefixed(prefix, "running_var"), &self.running_var));
    }

    pub(crate) fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Vec<f64>)>) {
        out.push((prefixed(prefix, "running_mean"), &mut self.running_mean));
        out.push((prefixed(prefix, "running_var"), &mut self.running_var));
    }
}

/// Fully connected layer, weight layout `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_features: usize,
    out_features: usize,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Linear {
            weight: Param::uniform(&[out_features, in_features], bound, rng),
            bias: Param::uniform(&[out_features], bound, rng),
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.in_features, "linear input features");
        let w = ArrayView2::from_shape((self.out_features, self.in_features), &self.weight.value).unwrap();
        let mut y = Array2::<f64>::zeros((x.nrows(), self.out_features));
        general_mat_mul(1.0, x, &w.t(), 0.0, &mut y);
        let b = Array1::from(self.bias.value.clone());
        y += &b;
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
        let w = ArrayView2::from_shape((self.out_features, self.in_features), &self.weight.value).unwrap();
        {
            let mut dw =
                ArrayViewMut2::from_shape((self.out_features, self.in_features), &mut self.weight.grad).unwrap();
            general_mat_mul(1.0, &gy.t(), x, 1.0, &mut dw);
        }
        for row in gy.outer_iter() {
            for (g, v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut gx = Array2::<f64>::zeros((gy.nrows(), self.in_features));
        general_mat_mul(1.0, gy, &w, 0.0, &mut gx);
        gx
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((prefixed(prefix, "weight"), &self.weight));
        out.push((prefixed(prefix, "bias"), &self.bias));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((prefixed(prefix, "weight"), &mut self.weight));
        out.push((prefixed(prefix, "bias"), &mut self.bias));
    }
}

/// Non-overlapping `p×p` max pooling; remembers the winning input index
/// (first maximum in scan order) for each output.
pub fn max_pool_forward(x: &Array4<f64>, p: usize) -> (Array4<f64>, Vec<u32>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / p, w / p);
    let xs = x.as_slice().unwrap();
    let mut y = Array4::<f64>::zeros((n, c, oh, ow));
    let mut idx = vec![0u32; n * c * oh * ow];
    let ys = y.as_slice_mut().unwrap();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * p * w + ox * p;
                for dy in 0..p {
                    for dx in 0..p {
                        let i = base + (oy * p + dy) * w + ox * p + dx;
                        if xs[i] > xs[best] {
                            best = i;
                        }
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                ys[o] = xs[best];
                idx[o] = best as u32;
            }
        }
    }
    (y, idx)
}

pub fn max_pool_backward(gy: &Array4<f64>, idx: &[u32], in_dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let mut gx = Array4::<f64>::zeros(in_dim);
    let gxs = gx.as_slice_mut().unwrap();
    for (g, &i) in gy.as_slice().unwrap().iter().zip(idx) {
        gxs[i as usize] += g;
    }
    gx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_forward(x: &Array4<f64>, f: usize) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h * f, w * f);
    let xs = x.as_slice().unwrap();
    let mut y = Array4::<f64>::zeros((n, c, oh, ow));
    let ys = y.as_slice_mut().unwrap();
    for plane in 0..n * c {
        for oy in 0..oh {
            let src = &xs[plane * h * w + (oy / f) * w..plane * h * w + (oy / f) * w + w];
            let dst = &mut ys[plane * oh * ow + oy * ow..plane * oh * ow + (oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / f];
            }
        }
    }
    y
}

pub fn upsample_backward(gy: &Array4<f64>, f: usize) -> Array4<f64> {
    let (n, c, oh, ow) = gy.dim();
    let (h, w) = (oh / f, ow / f);
    let gys = gy.as_slice().unwrap();
    let mut gx = Array4::<f64>::zeros((n, c, h, w));
    let gxs = gx.as_slice_mut().unwrap();
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                gxs[plane * h * w + (oy / f) * w + ox / f] += gys[plane * oh * ow + oy * ow + ox];
            }
        }
    }
    gx
}

/// Leaky rectifier; `slope = 0` gives the plain ReLU.
pub fn leaky_relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>, slope: f64) -> ndarray::Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

/// Gradient through a leaky rectifier given its pre-activation input.
pub fn leaky_relu_backward<D: ndarray::Dimension>(
    pre: &ndarray::Array<f64, D>,
    gy: &ndarray::Array<f64, D>,
    slope: f64,
) -> ndarray::Array<f64, D> {
    let mut g = gy.clone();
    g.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g *= slope
        }
    });
    g
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^v)` without overflow.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution used as an oracle.
    fn naive_conv(x: &Array4<f64>, conv: &Conv2d, k: usize, pad: usize) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let co = conv.bias.len();
        let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
        let mut y = Array4::zeros((n, co, oh, ow));
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = conv.bias.value[o];
                        for ci in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = oy as isize + ki as isize - pad as isize;
                                    let ix = ox as isize + kj as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wi = ((o * c + ci) * k + ki) * k + kj;
                                    s += conv.weight.value[wi] * x[[b, ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                        y[[b, o, oy, ox]] = s;
                    }
                }
            }
        }
        y
    }

    fn naive_conv_transpose(x: &Array4<f64>, t: &ConvTranspose2d, k: usize, pad: usize) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let co = t.bias.len();
        let (oh, ow) = (h + k - 1 - 2 * pad, w + k - 1 - 2 * pad);
        let mut y = Array4::zeros((n, co, oh, ow));
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        y[[b, o, oy, ox]] = t.bias.value[o];
                    }
                }
            }
            for ci in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        for o in 0..co {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let oy = iy as isize + ki as isize - pad as isize;
                                    let ox = ix as isize + kj as isize - pad as isize;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    let wi = ((ci * co + o) * k + ki) * k + kj;
                                    y[[b, o, oy as usize, ox as usize]] += t.weight.value[wi] * x[[b, ci, iy, ix]];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn random_input(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, pad) in [(3, 1), (7, 3), (7, 2), (3, 0)] {
            let conv = Conv2d::new(2, 3, k, pad, &mut rng);
            let x = random_input(&mut rng, (2, 2, 9, 9));
            let fast = conv.forward(&x);
            let slow = naive_conv(&x, &conv, k, pad);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, pad) in [(3, 1), (7, 3), (7, 2), (3, 0)] {
            let t = ConvTranspose2d::new(3, 2, k, pad, &mut rng);
            let x = random_input(&mut rng, (2, 3, 8, 8));
            let fast = t.forward(&x);
            let slow = naive_conv_transpose(&x, &t, k, pad);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, w, k, pad) = (2, 6, 5, 3, 1);
        let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..c * k * k * oh * ow).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, k, pad, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, k, pad, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| (i * 4 + j) as f64);
        let (y, idx) = max_pool_forward(&x, 2);
        assert_eq!(y.as_slice().unwrap(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(idx, vec![5, 7, 13, 15]);
        let up = upsample_forward(&y, 2);
        assert_eq!(up.dim(), (1, 1, 4, 4));
        assert_eq!(up[[0, 0, 1, 1]], 5.0);
        assert_eq!(up[[0, 0, 3, 2]], 15.0);
        let g = upsample_backward(&Array4::ones((1, 1, 4, 4)), 2);
        assert!(g.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn batchnorm_eval_uses_running_statistics() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean = vec![0.5];
        bn.running_var = vec![4.0 - BN_EPS];
        let x = Array4::from_elem((1, 1, 2, 2), 2.5);
        let y = bn.forward_eval(&x);
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut bn = BatchNorm2d::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_input(&mut rng, (3, 2, 4, 4)) * 3.0 + 1.0;
        let (y, _) = bn.forward_train(&x);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y.slice(ndarray::s![b, ch, .., ..]).iter().copied().collect::<Vec<_>>())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn stable_scalar_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
    }
}
