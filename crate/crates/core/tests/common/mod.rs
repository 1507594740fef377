//! Reference implementations and check harnesses shared by the integration
//! suites.

#![allow(dead_code)]

pub mod gradcheck;

use hsi_restore::degrade::SamplingMask;
use hsi_restore::nn::{DepthwiseLayer, PointwiseLayer, Tensor4};
use hsi_restore::rng::Rng;
use hsi_restore::HsiCube;

/// Straight nested loops over every output element, kernel tap and channel.
pub fn depthwise_oracle(x: &Tensor4<f64>, layer: &DepthwiseLayer<f64>) -> Tensor4<f64> {
    let (n, h, w, m) = x.dims();
    let (k, mult) = (layer.kernel, layer.multiplier);
    let c = (k as isize - 1) / 2;
    let mut out = Tensor4::zeros((n, h, w, m * mult));
    for b in 0..n {
        for i in 0..h as isize {
            for j in 0..w as isize {
                for ch in 0..m {
                    for t in 0..mult {
                        let mut acc = 0.0;
                        for k1 in 0..k as isize {
                            for k2 in 0..k as isize {
                                let (si, sj) = (i + c - k1, j + c - k2);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                let wt = layer.weights[((k1 as usize) * k + k2 as usize) * m * mult + ch * mult + t];
                                acc += wt * x.get(b, si as usize, sj as usize, ch);
                            }
                        }
                        out.set(b, i as usize, j as usize, ch * mult + t, acc);
                    }
                }
            }
        }
    }
    out
}

pub fn pointwise_oracle(x: &Tensor4<f64>, layer: &PointwiseLayer<f64>) -> Tensor4<f64> {
    let (n, h, w, c) = x.dims();
    let l = layer.out_channels;
    let mut out = Tensor4::zeros((n, h, w, l));
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for o in 0..l {
                    let mut acc = layer.bias[o];
                    for ch in 0..c {
                        acc += layer.weights[o * c + ch] * x.get(b, i, j, ch);
                    }
                    out.set(b, i, j, o, acc);
                }
            }
        }
    }
    out
}

/// `max |a - b| / max |b|`, with a unit floor on the denominator for all-zero
/// references.
pub fn max_rel_err(actual: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(actual.len(), reference.len());
    let diff = actual.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `||a - b|| / max(||a||, ||b||)`; 0 when both vanish.
pub fn norm_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to every entry of `params`.
pub fn central_diff(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + FD_STEP;
        let up = f(params);
        params[i] = orig - FD_STEP;
        let down = f(params);
        params[i] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

pub fn random_tensor(dims: (usize, usize, usize, usize), rng: &mut Rng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| rng.uniform_range(-1.0, 1.0))
}

/// Fills every unobserved voxel with the value of the closest observed pixel
/// of the same band (Euclidean distance; first in row-major order on ties).
/// Bands without any observation are left at zero.
pub fn nearest_observed_fill(cube: &HsiCube, mask: &SamplingMask) -> HsiCube {
    let (h, w, bands) = cube.dims();
    let mut out = cube.clone();
    for b in 0..bands {
        let observed: Vec<(usize, usize)> =
            (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| mask.bits[(b * h + r) * w + c]).collect();
        for r in 0..h {
            for c in 0..w {
                if mask.bits[(b * h + r) * w + c] {
                    continue;
                }
                let mut best: Option<((usize, usize), usize)> = None;
                for &(orow, ocol) in &observed {
                    let d = orow.abs_diff(r).pow(2) + ocol.abs_diff(c).pow(2);
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some(((orow, ocol), d));
                    }
                }
                let v = best.map_or(0.0, |((orow, ocol), _)| cube.get(orow, ocol, b));
                out.set(r, c, b, v);
            }
        }
    }
    out
}

/// PSNR over the voxels where `mask` is false, computed from scratch.
pub fn held_out_psnr(reference: &HsiCube, estimate: &HsiCube, mask: &SamplingMask) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((r, e), &seen) in reference.data().iter().zip(estimate.data()).zip(&mask.bits) {
        if !seen {
            sum += (f64::from(*r) - f64::from(*e)).powi(2);
            count += 1;
        }
    }
    assert!(count > 0, "no held-out voxels");
    -10.0 * (sum / count as f64).log10()
}

/// Mean over bands of `10 log10(1 / mse_band)`, computed from scratch.
pub fn band_mean_psnr(reference: &HsiCube, estimate: &HsiCube) -> f64 {
    let (h, w, bands) = reference.dims();
    let plane = h * w;
    let mut total = 0.0;
    for b in 0..bands {
        let r = &reference.data()[b * plane..(b + 1) * plane];
        let e = &estimate.data()[b * plane..(b + 1) * plane];
        let mse = r.iter().zip(e).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum::<f64>() / plane as f64;
        total += -10.0 * mse.log10();
    }
    total / bands as f64
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
