//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Activations are `channels × steps` matrices. Every `backward` accumulates
//! into the parameter gradients and returns the gradient of its input.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// A trainable tensor and its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Self {
        Self::new(Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound)))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// `z = 1` where `l > 0`, else `0` (so `H(0) = 0`).
pub fn heaviside_forward(l: &Array2<f64>) -> Array2<f64> {
    l.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Surrogate derivative of the step function.
#[inline]
pub fn surrogate_derivative(l: f64) -> f64 {
    (1.0 - l.abs()).max(0.0)
}

/// `upstream ⊙ max(0, 1 − |l|)`.
pub fn heaviside_backward(l: &Array2<f64>, upstream: &Array2<f64>) -> Result<Array2<f64>> {
    if l.dim() != upstream.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs upstream {:?}",
            l.dim(),
            upstream.dim()
        )));
    }
    let mut out = upstream.clone();
    out.zip_mut_with(l, |g, &v| *g *= surrogate_derivative(v));
    Ok(out)
}

pub fn tanh_forward(x: &mut Array2<f64>) {
    x.mapv_inplace(f64::tanh);
}

/// `dy ⊙ (1 − y²)` with `y` the tanh output.
pub fn tanh_backward(y: &Array2<f64>, dy: &mut Array2<f64>) {
    dy.zip_mut_with(y, |g, &v| *g *= 1.0 - v * v);
}

/// Same-padded 1-D convolution over time, stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `out × (kernel · in)`; column `tap · in + c`.
    pub weight: Param,
    /// `out × 1`.
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
}

impl Conv1d {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = (in_channels * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        Self {
            weight: Param::uniform(rng, out_channels, in_channels * kernel, bound),
            bias: Param::uniform(rng, out_channels, 1, bound),
            in_channels,
            out_channels,
            kernel,
        }
    }

    fn im2col(&self, x: &Array2<f64>) -> Array2<f64> {
        let (c_in, t) = x.dim();
        if self.kernel == 1 {
            return x.to_owned();
        }
        let pad = (self.kernel / 2) as isize;
        let mut cols = Array2::zeros((c_in * self.kernel, t));
        for tap in 0..self.kernel {
            let shift = tap as isize - pad;
            // output step s reads input step s + shift
            let (dst_lo, src_lo) = if shift < 0 { ((-shift) as usize, 0) } else { (0, shift as usize) };
            if dst_lo >= t || src_lo >= t {
                continue;
            }
            let len = t - dst_lo.max(src_lo);
            for c in 0..c_in {
                let src = x.row(c);
                let mut dst = cols.row_mut(tap * c_in + c);
                dst.slice_mut(ndarray::s![dst_lo..dst_lo + len])
                    .assign(&src.slice(ndarray::s![src_lo..src_lo + len]));
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, ConvCache) {
        debug_assert_eq!(x.nrows(), self.in_channels);
        let cols = self.im2col(x);
        let mut y = self.weight.value.dot(&cols);
        y += &self.bias.value;
        (y, ConvCache { cols })
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Array2<f64>) -> Array2<f64> {
        general_mat_mul(1.0, dy, &cache.cols.t(), 1.0, &mut self.weight.grad);
        self.bias.grad += &dy.sum_axis(Axis(1)).insert_axis(Axis(1));
        let dcols = self.weight.value.t().dot(dy);
        if self.kernel == 1 {
            return dcols;
        }
        let t = dy.ncols();
        let c_in = self.in_channels;
        let pad = (self.kernel / 2) as isize;
        let mut dx = Array2::zeros((c_in, t));
        for tap in 0..self.kernel {
            let shift = tap as isize - pad;
            let (dst_lo, src_lo) = if shift < 0 { ((-shift) as usize, 0) } else { (0, shift as usize) };
            if dst_lo >= t || src_lo >= t {
                continue;
            }
            let len = t - dst_lo.max(src_lo);
            for c in 0..c_in {
                let g = dcols.row(tap * c_in + c);
                let mut d = dx.row_mut(c);
                let mut d = d.slice_mut(ndarray::s![src_lo..src_lo + len]);
                d += &g.slice(ndarray::s![dst_lo..dst_lo + len]);
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bidirectional linear recurrence with a residual tanh readout:
///
/// `f_t = a ⊙ f_{t−1} + (1 − a) ⊙ x_t`, `b_t = a ⊙ b_{t+1} + (1 − a) ⊙ x_t`,
/// `y_t = x_t + tanh(W_f f_t + W_b b_t + c)`, with per-channel `a = σ(θ)`.
///
/// Every output step depends on every input step of the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct BiRecurrentMixer {
    pub decay_logit: Param,
    pub w_forward: Param,
    pub w_backward: Param,
    pub bias: Param,
}

pub struct MixCache {
    x: Array2<f64>,
    fwd: Array2<f64>,
    bwd: Array2<f64>,
    act: Array2<f64>,
}

impl BiRecurrentMixer {
    /// Decay time constants are log-spaced from 2 to 64 steps across channels.
    pub fn new<R: Rng>(rng: &mut R, channels: usize) -> Self {
        let decay_logit = Array2::from_shape_fn((channels, 1), |(h, _)| {
            let frac = if channels > 1 { h as f64 / (channels - 1) as f64 } else { 0.5 };
            let tau = 2.0 * 32f64.powf(frac);
            let a: f64 = (-1.0 / tau).exp();
            (a / (1.0 - a)).ln()
        });
        let bound = 1.0 / (2.0 * channels as f64).sqrt();
        Self {
            decay_logit: Param::new(decay_logit),
            w_forward: Param::uniform(rng, channels, channels, bound),
            w_backward: Param::uniform(rng, channels, channels, bound),
            bias: Param::zeros(channels, 1),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MixCache) {
        let (h, t) = x.dim();
        let mut fwd = Array2::zeros((h, t));
        let mut bwd = Array2::zeros((h, t));
        for c in 0..h {
            let a = sigmoid(self.decay_logit.value[[c, 0]]);
            let xs = x.row(c);
            let mut state = 0.0;
            let mut f = fwd.row_mut(c);
            for s in 0..t {
                state = a * state + (1.0 - a) * xs[s];
                f[s] = state;
            }
            let mut state = 0.0;
            let mut b = bwd.row_mut(c);
            for s in (0..t).rev() {
                state = a * state + (1.0 - a) * xs[s];
                b[s] = state;
            }
        }
        let mut act = self.w_forward.value.dot(&fwd);
        general_mat_mul(1.0, &self.w_backward.value, &bwd, 1.0, &mut act);
        act += &self.bias.value;
        tanh_forward(&mut act);
        let y = x + &act;
        (
            y,
            MixCache {
                x: x.to_owned(),
                fwd,
                bwd,
                act,
            },
        )
    }

    pub fn backward(&mut self, cache: &MixCache, dy: &Array2<f64>) -> Array2<f64> {
        let (h, t) = dy.dim();
        let mut du = dy.clone();
        tanh_backward(&cache.act, &mut du);
        general_mat_mul(1.0, &du, &cache.fwd.t(), 1.0, &mut self.w_forward.grad);
        general_mat_mul(1.0, &du, &cache.bwd.t(), 1.0, &mut self.w_backward.grad);
        self.bias.grad += &du.sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_fwd = self.w_forward.value.t().dot(&du);
        let d_bwd = self.w_backward.value.t().dot(&du);
        let mut dx = dy.clone();
        for c in 0..h {
            let a = sigmoid(self.decay_logit.value[[c, 0]]);
            let xs = cache.x.row(c);
            let fs = cache.fwd.row(c);
            let bs = cache.bwd.row(c);
            let dfs = d_fwd.row(c);
            let dbs = d_bwd.row(c);
            let mut dxs = dx.row_mut(c);
            let mut da = 0.0;
            // forward recurrence, gradients flow from late to early steps
            let mut g = 0.0;
            for s in (0..t).rev() {
                g = dfs[s] + a * g;
                dxs[s] += (1.0 - a) * g;
                let prev = if s > 0 { fs[s - 1] } else { 0.0 };
                da += g * (prev - xs[s]);
            }
            let mut g = 0.0;
            for s in 0..t {
                g = dbs[s] + a * g;
                dxs[s] += (1.0 - a) * g;
                let next = if s + 1 < t { bs[s + 1] } else { 0.0 };
                da += g * (next - xs[s]);
            }
            self.decay_logit.grad[[c, 0]] += da * a * (1.0 - a);
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.decay_logit, &mut self.w_forward, &mut self.w_backward, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 4] {
        [&self.decay_logit, &self.w_forward, &self.w_backward, &self.bias]
    }
}

/// Per-unit normalization over (batch × time) with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Param,
    pub shift: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache {
    xhat: Vec<Array2<f64>>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(units: usize) -> Self {
        Self {
            scale: Param::new(Array2::ones((units, 1))),
            shift: Param::zeros(units, 1),
            running_mean: vec![0.0; units],
            running_var: vec![1.0; units],
            momentum: 0.99,
            eps: 1e-5,
        }
    }

    pub fn units(&self) -> usize {
        self.running_mean.len()
    }

    /// Normalizes with batch statistics and updates the running averages.
    pub fn forward_train(&mut self, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, BnCache) {
        let (ys, cache, mean, var) = self.forward_batch_stats(xs);
        let count: usize = xs.iter().map(|x| x.ncols()).sum();
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for u in 0..self.units() {
            self.running_mean[u] = self.momentum * self.running_mean[u] + (1.0 - self.momentum) * mean[u];
            self.running_var[u] = self.momentum * self.running_var[u] + (1.0 - self.momentum) * var[u] * unbias;
        }
        (ys, cache)
    }

    /// Batch-statistics normalization without touching the running averages.
    pub fn forward_batch_stats(&self, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, BnCache, Vec<f64>, Vec<f64>) {
        let units = self.units();
        let count: usize = xs.iter().map(|x| x.ncols()).sum();
        let mut mean = vec![0.0; units];
        let mut var = vec![0.0; units];
        for x in xs {
            for u in 0..units {
                mean[u] += x.row(u).sum();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for x in xs {
            for u in 0..units {
                let m = mean[u];
                var[u] += x.row(u).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xh = x.clone();
            for (u, mut row) in xh.rows_mut().into_iter().enumerate() {
                let (m, s) = (mean[u], inv_std[u]);
                row.mapv_inplace(|v| (v - m) * s);
            }
            let mut y = xh.clone();
            for (u, mut row) in y.rows_mut().into_iter().enumerate() {
                let (g, b) = (self.scale.value[[u, 0]], self.shift.value[[u, 0]]);
                row.mapv_inplace(|v| g * v + b);
            }
            xhat.push(xh);
            ys.push(y);
        }
        (ys, BnCache { xhat, inv_std }, mean, var)
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for (u, mut row) in y.rows_mut().into_iter().enumerate() {
            let s = 1.0 / (self.running_var[u] + self.eps).sqrt();
            let (m, g, b) = (self.running_mean[u], self.scale.value[[u, 0]], self.shift.value[[u, 0]]);
            row.mapv_inplace(|v| g * (v - m) * s + b);
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache, dys: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let units = self.units();
        let count: f64 = dys.iter().map(|d| d.ncols()).sum::<usize>() as f64;
        let mut sum_dy = vec![0.0; units];
        let mut sum_dy_xhat = vec![0.0; units];
        for (dy, xh) in dys.iter().zip(&cache.xhat) {
            for u in 0..units {
                let (d, x) = (dy.row(u), xh.row(u));
                sum_dy[u] += d.sum();
                sum_dy_xhat[u] += d.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        for u in 0..units {
            self.scale.grad[[u, 0]] += sum_dy_xhat[u];
            self.shift.grad[[u, 0]] += sum_dy[u];
        }
        dys.iter()
            .zip(&cache.xhat)
            .map(|(dy, xh)| {
                let mut dx = Array2::zeros(dy.raw_dim());
                for u in 0..units {
                    let g = self.scale.value[[u, 0]];
                    let k = g * cache.inv_std[u] / count;
                    let (s_dy, s_dyx) = (sum_dy[u], sum_dy_xhat[u]);
                    let mut row = dx.row_mut(u);
                    for ((o, &d), &x) in row.iter_mut().zip(dy.row(u)).zip(xh.row(u)) {
                        *o = k * (count * d - s_dy - x * s_dyx);
                    }
                }
                dx
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.scale, &mut self.shift]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.scale, &self.shift]
    }
}

/// Learnable prompt vectors; column `μ` is added to every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `channels × count`.
    pub table: Param,
}

impl Embedding {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, count: usize) -> Self {
        Self {
            table: Param::uniform(rng, channels, count, 0.1),
        }
    }

    pub fn count(&self) -> usize {
        self.table.value.ncols()
    }

    pub fn add_to(&self, x: &mut Array2<f64>, index: usize) {
        let col = self.table.value.column(index).insert_axis(Axis(1)).to_owned();
        *x += &col;
    }

    pub fn backward(&mut self, dy: &Array2<f64>, index: usize) {
        let mut col = self.table.grad.column_mut(index);
        col += &dy.sum_axis(Axis(1));
    }
}
