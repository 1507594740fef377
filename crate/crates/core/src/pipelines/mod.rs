//! Self-supervised training procedures and patch-blended inference.
//!
//! All three trainers share one epoch loop: the patch grid is shuffled, each
//! minibatch draws one rotate/flip per patch, then the task draws its noise.
//! Because every draw comes from the caller's [`Rng`] in that fixed order, a
//! seed and a config pin the whole run.

mod gaussian;
mod holefill;
mod mixed;

pub use gaussian::{make_noisier_target, train_gaussian, GaussianOutcome, GaussianTaskConfig, NoisierTarget};
pub use holefill::{masked_mse, train_holefill, HolefillOutcome, HolefillTaskConfig};
pub use mixed::{mixed_loss, train_mixed, MixedLoss, MixedOutcome, MixedTaskConfig};

use serde::Serialize;

use crate::cube::{patch_starts, AugmentOp, HsiCube};
use crate::error::{ensure, Error, Result};
use crate::nn::{Real, SeparableCnn, Tensor4};
use crate::optim::LrSchedule;
use crate::rng::Rng;

/// One row of the per-epoch loss log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean minibatch loss, weighted by patches per batch.
    pub loss: f64,
    pub lr: f64,
    /// Noise level in effect during the epoch, where the task has one.
    pub sigma_est: Option<f64>,
}

/// `epoch,loss,lr,sigma_est` with an empty last cell when there is no level.
pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,lr,sigma_est\n");
    for e in log {
        let sigma = e.sigma_est.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.lr, sigma));
    }
    out
}

/// Receives each epoch's log row as soon as the epoch ends.
pub type Observer<'a> = dyn FnMut(&EpochLog) + 'a;

pub(crate) fn check_batching(batch: usize, patch: usize, stride: usize) -> Result<()> {
    ensure!(batch >= 1, Config, "batch must be at least 1");
    ensure!(patch >= 1, Config, "patch must be at least 1");
    ensure!(stride >= 1, Config, "stride must be at least 1");
    Ok(())
}

/// Square patch side actually used on a cube: the configured size, shrunk to
/// fit small cubes.
pub fn effective_patch(cube: &HsiCube, patch: usize) -> usize {
    patch.min(cube.height()).min(cube.width())
}

pub(crate) fn patch_grid(cube: &HsiCube, patch: usize, stride: usize) -> Vec<(usize, usize)> {
    let rows = patch_starts(cube.height(), patch, stride);
    let cols = patch_starts(cube.width(), patch, stride);
    rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect()
}

/// Stacks augmented `p x p` patches at `origins` into an NHWC tensor.
pub(crate) fn gather_batch<T: Real>(cube: &HsiCube, origins: &[(usize, usize)], ops: &[AugmentOp], p: usize) -> Tensor4<T> {
    let bands = cube.bands();
    let mut out = Tensor4::zeros((origins.len(), p, p, bands));
    let mut planes = Vec::with_capacity(p * p * bands);
    for (i, (&(r0, c0), op)) in origins.iter().zip(ops).enumerate() {
        planes.clear();
        for k in 0..bands {
            for r in r0..r0 + p {
                let start = cube.index(r, c0, k);
                planes.extend_from_slice(&cube.data()[start..start + p]);
            }
        }
        let (data, _, _) = op.apply_planes(&planes, p, p, bands);
        let dst = &mut out.data_mut()[i * p * p * bands..(i + 1) * p * p * bands];
        for k in 0..bands {
            for px in 0..p * p {
                dst[px * bands + k] = T::of(f64::from(data[k * p * p + px]));
            }
        }
    }
    out
}

/// `x + sigma * g` with one standard normal per element in storage order.
pub(crate) fn add_noise<T: Real>(x: &Tensor4<T>, sigma: f64, rng: &mut Rng) -> Tensor4<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = T::of(v.f64() + sigma * rng.gaussian());
    }
    out
}

/// Mean squared error and its gradient with respect to `out`.
pub(crate) fn mse<T: Real>(out: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    ensure!(out.dims() == target.dims(), Shape, "loss: output {:?} vs target {:?}", out.dims(), target.dims());
    let n = out.data().len() as f64;
    let mut sum = 0.0;
    let grad = out.zip_map(target, |o, t| {
        let d = o.f64() - t.f64();
        T::of(2.0 * d / n)
    })?;
    for (o, t) in out.data().iter().zip(target.data()) {
        sum += (o.f64() - t.f64()).powi(2);
    }
    Ok((sum / n, grad))
}

pub(crate) fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss(format!("loss evaluated to {loss}")))
    }
}

/// Runs one epoch: shuffles `grid`, then for every minibatch draws the
/// augmentations and hands origins, ops and the stream to `step`, which
/// returns the batch loss. Returns the patch-weighted mean loss.
pub(crate) fn run_epoch(
    grid: &mut [(usize, usize)],
    batch: usize,
    rng: &mut Rng,
    mut step: impl FnMut(&[(usize, usize)], &[AugmentOp], &mut Rng) -> Result<f64>,
) -> Result<f64> {
    rng.shuffle(grid);
    let ops_table = AugmentOp::all();
    let mut total = 0.0;
    for chunk in grid.chunks(batch) {
        let ops: Vec<AugmentOp> = chunk.iter().map(|_| ops_table[rng.below(8)]).collect();
        total += step(chunk, &ops, rng)? * chunk.len() as f64;
    }
    Ok(total / grid.len() as f64)
}

pub(crate) fn log_epoch(
    log: &mut Vec<EpochLog>,
    observer: &mut Observer<'_>,
    epoch: usize,
    loss: f64,
    schedule: &LrSchedule,
    sigma_est: Option<f64>,
) {
    let row = EpochLog { epoch, loss, lr: schedule.lr_at(epoch), sigma_est };
    observer(&row);
    log.push(row);
}

/// `clamp_[0,1](model(y))` in inference mode, evaluated on square patches of
/// side `patch` at half-patch stride and averaged with uniform weights.
pub fn denoise<T: Real>(model: &SeparableCnn<T>, y: &HsiCube, patch: usize) -> Result<HsiCube> {
    ensure!(patch >= 1, Config, "patch must be at least 1");
    ensure!(
        model.input_bands() == y.bands() && model.output_bands() == y.bands(),
        Shape,
        "model maps {} -> {} bands but the cube has {}",
        model.input_bands(),
        model.output_bands(),
        y.bands()
    );
    let (h, w, bands) = y.dims();
    let p = effective_patch(y, patch);
    let grid = patch_grid(y, p, (p / 2).max(1));
    let mut sums = vec![0.0f64; h * w * bands];
    let mut counts = vec![0u32; h * w];
    let identity = [AugmentOp::IDENTITY; 32];
    for chunk in grid.chunks(32) {
        let x: Tensor4<T> = gather_batch(y, chunk, &identity[..chunk.len()], p);
        let out = model.infer(&x)?;
        for (i, &(r0, c0)) in chunk.iter().enumerate() {
            for r in 0..p {
                for c in 0..p {
                    counts[(r0 + r) * w + c0 + c] += 1;
                    for k in 0..bands {
                        sums[(k * h + r0 + r) * w + c0 + c] += out.get(i, r, c, k).f64();
                    }
                }
            }
        }
    }
    let plane = h * w;
    let data = sums
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let v = s / f64::from(counts[i % plane]);
            ensure!(v.is_finite(), NonFiniteLoss, "network produced a non-finite value");
            Ok(v.clamp(0.0, 1.0) as f32)
        })
        .collect::<Result<Vec<f32>>>()?;
    HsiCube::new(h, w, bands, data)
}
