use rayon::prelude::*;

use super::{Real, Tensor4, ROW_CHUNK};
use crate::error::{ensure, Error, Result};

/// Batch-norm behaviour: batch statistics (and running-stat updates) while
/// training, running statistics only at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Sums per-chunk partial vectors in chunk order.
fn ordered_sum<T: Real>(partials: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// Spatial convolution applied to each channel independently.
///
/// With `multiplier` N, input channel `m` produces output channels
/// `m*N .. m*N + N`, one per kernel. Output pixel `(y, x)` accumulates
/// `weight[k1][k2] * input[y + (K-1)/2 - k1][x + (K-1)/2 - k2]`, reading zero
/// outside the image, so spatial size is preserved.
///
/// `weights` is tap-major: `weights[(k1 * K + k2) * (M * N) + m * N + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseLayer<T> {
    pub kernel: usize,
    pub multiplier: usize,
    pub in_channels: usize,
    pub weights: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct DepthwiseTape<T> {
    input: Tensor4<T>,
}

impl<T: Real> DepthwiseLayer<T> {
    pub fn new(kernel: usize, multiplier: usize, in_channels: usize, weights: Vec<T>) -> Result<Self> {
        ensure!(kernel % 2 == 1, Validation, "depthwise kernel size must be odd, got {kernel}");
        ensure!(multiplier >= 1 && in_channels >= 1, Validation, "depthwise multiplier and channels must be >= 1");
        ensure!(
            weights.len() == kernel * kernel * in_channels * multiplier,
            Shape,
            "depthwise weights: expected {}, got {}",
            kernel * kernel * in_channels * multiplier,
            weights.len()
        );
        Ok(Self { kernel, multiplier, in_channels, weights })
    }

    /// Every kernel is a centred delta.
    pub fn identity(kernel: usize, in_channels: usize) -> Result<Self> {
        let mut weights = vec![T::zero(); kernel * kernel * in_channels];
        let centre = (kernel / 2) * kernel + kernel / 2;
        weights[centre * in_channels..(centre + 1) * in_channels].fill(T::one());
        Self::new(kernel, 1, in_channels, weights)
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels * self.multiplier
    }

    /// Weight of kernel `out_channel` at tap `(k1, k2)`.
    pub fn weight(&self, k1: usize, k2: usize, out_channel: usize) -> T {
        self.weights[(k1 * self.kernel + k2) * self.out_channels() + out_channel]
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<(Tensor4<T>, DepthwiseTape<T>)> {
        let out = self.apply(input)?;
        Ok((out, DepthwiseTape { input: input.clone() }))
    }

    pub fn apply(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (n, h, w, m) = input.dims();
        ensure!(m == self.in_channels, Shape, "depthwise expects {} channels, got {m}", self.in_channels);
        let (k, mult, co) = (self.kernel, self.multiplier, self.out_channels());
        let half = k / 2;
        let mut out = Tensor4::zeros((n, h, w, co));
        let src = input.data();
        out.data_mut().par_chunks_mut(w * co).enumerate().for_each(|(row, dst)| {
            let (b, y) = (row / h, row % h);
            for k1 in 0..k {
                let Some(sy) = (y + half).checked_sub(k1).filter(|&v| v < h) else { continue };
                for k2 in 0..k {
                    let taps = &self.weights[(k1 * k + k2) * co..(k1 * k + k2 + 1) * co];
                    // x + half - k2 must lie in [0, w)
                    let x_lo = k2.saturating_sub(half);
                    let x_hi = (w + k2).saturating_sub(half).min(w);
                    for x in x_lo..x_hi {
                        let sx = x + half - k2;
                        let s = &src[((b * h + sy) * w + sx) * m..][..m];
                        let d = &mut dst[x * co..(x + 1) * co];
                        if mult == 1 {
                            for ((dv, &tv), &sv) in d.iter_mut().zip(taps).zip(s) {
                                *dv += tv * sv;
                            }
                        } else {
                            for (ch, &sv) in s.iter().enumerate() {
                                for j in 0..mult {
                                    d[ch * mult + j] += taps[ch * mult + j] * sv;
                                }
                            }
                        }
                    }
                }
            }
        });
        Ok(out)
    }

    /// Returns `(grad_input, grad_weights)`.
    pub fn backward(&self, tape: &DepthwiseTape<T>, grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<T>)> {
        let input = &tape.input;
        let (n, h, w, m) = input.dims();
        let (k, mult, co) = (self.kernel, self.multiplier, self.out_channels());
        ensure!(
            grad_out.dims() == (n, h, w, co),
            Shape,
            "depthwise grad {:?} does not match output {:?}",
            grad_out.dims(),
            (n, h, w, co)
        );
        let half = k / 2;
        let g = grad_out.data();
        let x = input.data();

        // grad_input[sy][sx][ch] = sum over taps of w * g[sy - half + k1][sx - half + k2]
        let mut grad_in = Tensor4::zeros((n, h, w, m));
        grad_in.data_mut().par_chunks_mut(w * m).enumerate().for_each(|(row, dst)| {
            let (b, sy) = (row / h, row % h);
            for k1 in 0..k {
                let Some(y) = (sy + k1).checked_sub(half).filter(|&v| v < h) else { continue };
                for k2 in 0..k {
                    let taps = &self.weights[(k1 * k + k2) * co..(k1 * k + k2 + 1) * co];
                    let sx_lo = half.saturating_sub(k2);
                    let sx_hi = (w + half).saturating_sub(k2).min(w);
                    for sx in sx_lo..sx_hi {
                        let xo = sx + k2 - half;
                        let gs = &g[((b * h + y) * w + xo) * co..][..co];
                        let d = &mut dst[sx * m..(sx + 1) * m];
                        for (ch, dv) in d.iter_mut().enumerate() {
                            let mut acc = T::zero();
                            for j in 0..mult {
                                acc += taps[ch * mult + j] * gs[ch * mult + j];
                            }
                            *dv += acc;
                        }
                    }
                }
            }
        });

        // grad_weight[k1][k2][o] = sum over pixels of g[y][x][o] * input[y + half - k1][x + half - k2][o / N]
        let rows = n * h;
        let chunks: Vec<(usize, usize)> =
            (0..rows).step_by(ROW_CHUNK / 8).map(|s| (s, (s + ROW_CHUNK / 8).min(rows))).collect();
        let partials: Vec<Vec<T>> = chunks
            .par_iter()
            .map(|&(r0, r1)| {
                let mut gw = vec![T::zero(); k * k * co];
                for row in r0..r1 {
                    let (b, y) = (row / h, row % h);
                    for k1 in 0..k {
                        let Some(sy) = (y + half).checked_sub(k1).filter(|&v| v < h) else { continue };
                        for k2 in 0..k {
                            let acc = &mut gw[(k1 * k + k2) * co..(k1 * k + k2 + 1) * co];
                            let x_lo = k2.saturating_sub(half);
                            let x_hi = (w + k2).saturating_sub(half).min(w);
                            for xo in x_lo..x_hi {
                                let sx = xo + half - k2;
                                let s = &x[((b * h + sy) * w + sx) * m..][..m];
                                let gs = &g[((b * h + y) * w + xo) * co..][..co];
                                for (o, a) in acc.iter_mut().enumerate() {
                                    *a += gs[o] * s[o / mult];
                                }
                            }
                        }
                    }
                }
                gw
            })
            .collect();
        Ok((grad_in, ordered_sum(partials, k * k * co)))
    }
}

/// Per-pixel channel mixing: `out[l] = sum_c weights[l][c] * in[c] + bias[l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Row-major `out_channels x in_channels`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct PointwiseTape<T> {
    input: Tensor4<T>,
}

impl<T: Real> PointwiseLayer<T> {
    pub fn new(in_channels: usize, out_channels: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        ensure!(
            weights.len() == in_channels * out_channels && bias.len() == out_channels,
            Shape,
            "pointwise {in_channels}->{out_channels}: got {} weights, {} biases",
            weights.len(),
            bias.len()
        );
        Ok(Self { in_channels, out_channels, weights, bias })
    }

    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![T::zero(); channels * channels];
        for c in 0..channels {
            weights[c * channels + c] = T::one();
        }
        Self { in_channels: channels, out_channels: channels, weights, bias: vec![T::zero(); channels] }
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<(Tensor4<T>, PointwiseTape<T>)> {
        let out = self.apply(input)?;
        Ok((out, PointwiseTape { input: input.clone() }))
    }

    pub fn apply(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (n, h, w, c) = input.dims();
        ensure!(c == self.in_channels, Shape, "pointwise expects {} channels, got {c}", self.in_channels);
        let l = self.out_channels;
        let mut out = Tensor4::zeros((n, h, w, l));
        let x = input.data();
        out.data_mut().par_chunks_mut(ROW_CHUNK * l).enumerate().for_each(|(i, dst)| {
            let rows = dst.len() / l;
            for row in dst.chunks_exact_mut(l) {
                row.copy_from_slice(&self.bias);
            }
            let a = &x[i * ROW_CHUNK * c..(i * ROW_CHUNK + rows) * c];
            T::gemm(rows, c, l, a, c, 1, &self.weights, 1, c, T::one(), dst, l, 1);
        });
        Ok(out)
    }

    /// Returns `(grad_input, grad_weights, grad_bias)`.
    pub fn backward(&self, tape: &PointwiseTape<T>, grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
        let input = &tape.input;
        let (n, h, w, c) = input.dims();
        let l = self.out_channels;
        ensure!(
            grad_out.dims() == (n, h, w, l),
            Shape,
            "pointwise grad {:?} does not match output {:?}",
            grad_out.dims(),
            (n, h, w, l)
        );
        let g = grad_out.data();
        let x = input.data();

        let mut grad_in = Tensor4::zeros((n, h, w, c));
        grad_in.data_mut().par_chunks_mut(ROW_CHUNK * c).enumerate().for_each(|(i, dst)| {
            let rows = dst.len() / c;
            let a = &g[i * ROW_CHUNK * l..(i * ROW_CHUNK + rows) * l];
            T::gemm(rows, l, c, a, l, 1, &self.weights, c, 1, T::zero(), dst, c, 1);
        });

        let pixels = n * h * w;
        let chunk = 4 * ROW_CHUNK;
        let starts: Vec<usize> = (0..pixels).step_by(chunk).collect();
        let partials: Vec<(Vec<T>, Vec<T>)> = starts
            .par_iter()
            .map(|&p0| {
                let rows = chunk.min(pixels - p0);
                let gs = &g[p0 * l..(p0 + rows) * l];
                let xs = &x[p0 * c..(p0 + rows) * c];
                let mut gw = vec![T::zero(); l * c];
                T::gemm(l, rows, c, gs, 1, l, xs, c, 1, T::zero(), &mut gw, c, 1);
                let mut gb = vec![T::zero(); l];
                for row in gs.chunks_exact(l) {
                    for (b, &v) in gb.iter_mut().zip(row) {
                        *b += v;
                    }
                }
                (gw, gb)
            })
            .collect();
        let (gws, gbs): (Vec<_>, Vec<_>) = partials.into_iter().unzip();
        Ok((grad_in, ordered_sum(gws, l * c), ordered_sum(gbs, l)))
    }
}

/// Per-channel batch normalisation with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub struct BatchNormTape<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Real> BatchNormLayer<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// In training mode also folds the batch statistics into the running
    /// estimates (unbiased variance, exponential moving average).
    pub fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, BatchNormTape<T>)> {
        let c = input.channels();
        ensure!(c == self.channels(), Shape, "batchnorm expects {} channels, got {c}", self.channels());
        let count = input.pixels();
        let (mean, inv_std) = match mode {
            Mode::Train => {
                ensure!(count >= 2, Validation, "batchnorm training needs at least 2 samples per channel, got {count}");
                let (mean, var) = channel_stats(input);
                let unbias = count as f64 / (count - 1) as f64;
                for ch in 0..c {
                    let rm = self.running_mean[ch].f64();
                    let rv = self.running_var[ch].f64();
                    self.running_mean[ch] = T::of((1.0 - self.momentum) * rm + self.momentum * mean[ch]);
                    self.running_var[ch] = T::of((1.0 - self.momentum) * rv + self.momentum * var[ch] * unbias);
                }
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                (mean, inv)
            }
            Mode::Infer => (
                self.running_mean.iter().map(|v| v.f64()).collect(),
                self.running_var.iter().map(|v| 1.0 / (v.f64() + self.eps).sqrt()).collect(),
            ),
        };
        let mean: Vec<T> = mean.into_iter().map(T::of).collect();
        let inv_std: Vec<T> = inv_std.into_iter().map(T::of).collect();
        let mut normalized = input.clone();
        let mut out = input.clone();
        for (xh, o) in normalized.data_mut().chunks_exact_mut(c).zip(out.data_mut().chunks_exact_mut(c)) {
            for ch in 0..c {
                let v = (xh[ch] - mean[ch]) * inv_std[ch];
                xh[ch] = v;
                o[ch] = self.gamma[ch] * v + self.beta[ch];
            }
        }
        Ok((out, BatchNormTape { normalized, inv_std, mode }))
    }

    /// Inference-mode forward without a tape.
    pub fn apply(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let c = input.channels();
        ensure!(c == self.channels(), Shape, "batchnorm expects {} channels, got {c}", self.channels());
        let scale: Vec<T> = (0..c)
            .map(|ch| T::of(self.gamma[ch].f64() / (self.running_var[ch].f64() + self.eps).sqrt()))
            .collect();
        let mut out = input.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - self.running_mean[ch]) * scale[ch] + self.beta[ch];
            }
        }
        Ok(out)
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`.
    pub fn backward(&self, tape: &BatchNormTape<T>, grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
        let xhat = &tape.normalized;
        ensure!(
            grad_out.dims() == xhat.dims(),
            Shape,
            "batchnorm grad {:?} does not match {:?}",
            grad_out.dims(),
            xhat.dims()
        );
        let c = xhat.channels();
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (g, xh) in grad_out.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] += g[ch].f64();
                sum_gx[ch] += g[ch].f64() * xh[ch].f64();
            }
        }
        let mut grad_in = grad_out.clone();
        match tape.mode {
            Mode::Train => {
                let count = xhat.pixels() as f64;
                let scale: Vec<T> = (0..c).map(|ch| self.gamma[ch] * tape.inv_std[ch]).collect();
                let mean_g: Vec<T> = sum_g.iter().map(|s| T::of(s / count)).collect();
                let mean_gx: Vec<T> = sum_gx.iter().map(|s| T::of(s / count)).collect();
                for (gi, xh) in grad_in.data_mut().chunks_exact_mut(c).zip(xhat.data().chunks_exact(c)) {
                    for ch in 0..c {
                        gi[ch] = scale[ch] * (gi[ch] - mean_g[ch] - xh[ch] * mean_gx[ch]);
                    }
                }
            }
            Mode::Infer => {
                for gi in grad_in.data_mut().chunks_exact_mut(c) {
                    for ch in 0..c {
                        gi[ch] *= self.gamma[ch] * tape.inv_std[ch];
                    }
                }
            }
        }
        Ok((grad_in, sum_gx.into_iter().map(T::of).collect(), sum_g.into_iter().map(T::of).collect()))
    }
}

/// Per-channel mean and biased variance, accumulated in `f64`.
fn channel_stats<T: Real>(input: &Tensor4<T>) -> (Vec<f64>, Vec<f64>) {
    let c = input.channels();
    let count = input.pixels() as f64;
    let mut mean = vec![0.0f64; c];
    for row in input.data().chunks_exact(c) {
        for ch in 0..c {
            mean[ch] += row[ch].f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; c];
    for row in input.data().chunks_exact(c) {
        for ch in 0..c {
            let d = row[ch].f64() - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Which inputs were strictly positive.
#[derive(Clone, Debug)]
pub struct ReluTape {
    active: Vec<bool>,
    dims: (usize, usize, usize, usize),
}

pub fn relu_forward<T: Real>(input: &Tensor4<T>) -> (Tensor4<T>, ReluTape) {
    let active: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
    let out = input.map(|v| if v > T::zero() { v } else { T::zero() });
    (out, ReluTape { active, dims: input.dims() })
}

/// The subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Real>(tape: &ReluTape, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_out.dims() != tape.dims {
        return Err(Error::Shape(format!("relu grad {:?} does not match {:?}", grad_out.dims(), tape.dims)));
    }
    let mut g = grad_out.clone();
    for (v, &on) in g.data_mut().iter_mut().zip(&tape.active) {
        if !on {
            *v = T::zero();
        }
    }
    Ok(g)
}
