use serde::{Deserialize, Serialize};

use super::{check_batching, denoise, effective_patch, finite_loss, gather_batch, log_epoch, patch_grid, run_epoch, EpochLog, Observer};
use crate::cube::HsiCube;
use crate::degrade::SamplingMask;
use crate::error::{ensure, Result};
use crate::nn::{Mode, Real, SeparableCnn, Tensor4};
use crate::optim::{LrSchedule, ModelAdam};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolefillTaskConfig {
    pub epochs: usize,
    pub batch: usize,
    pub patch: usize,
    pub stride: usize,
}

impl Default for HolefillTaskConfig {
    fn default() -> Self {
        Self { epochs: 800, batch: 32, patch: 20, stride: 20 }
    }
}

/// Mean of `(out - target)^2` over voxels where `mask` is nonzero, and its
/// gradient (zero elsewhere). An empty mask gives loss 0.
pub fn masked_mse<T: Real>(out: &Tensor4<T>, target: &Tensor4<T>, mask: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    ensure!(
        out.dims() == target.dims() && out.dims() == mask.dims(),
        Shape,
        "masked loss: {:?}, {:?}, {:?}",
        out.dims(),
        target.dims(),
        mask.dims()
    );
    let count = mask.data().iter().filter(|m| **m != T::zero()).count();
    let mut grad = Tensor4::zeros(out.dims());
    if count == 0 {
        return Ok((0.0, grad));
    }
    let n = count as f64;
    let mut sum = 0.0;
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        if mask.data()[i] != T::zero() {
            let d = out.data()[i].f64() - target.data()[i].f64();
            sum += d * d;
            *g = T::of(2.0 * d / n);
        }
    }
    Ok((sum / n, grad))
}

#[derive(Clone, Debug)]
pub struct HolefillOutcome {
    /// `clamp(model(y_masked))` over the full grid.
    pub restored: HsiCube,
    pub log: Vec<EpochLog>,
}

/// Trains `model` to reproduce the observed voxels of `y_masked` from
/// `y_masked` itself; holes never enter the loss.
#[allow(clippy::too_many_arguments)]
pub fn train_holefill<T: Real>(
    y_masked: &HsiCube,
    mask: &SamplingMask,
    cfg: &HolefillTaskConfig,
    model: &mut SeparableCnn<T>,
    opt: &mut ModelAdam<T>,
    schedule: &LrSchedule,
    rng: &mut Rng,
    observer: &mut Observer<'_>,
) -> Result<HolefillOutcome> {
    check_batching(cfg.batch, cfg.patch, cfg.stride)?;
    ensure!(mask.dims() == y_masked.dims(), Shape, "mask {:?} vs cube {:?}", mask.dims(), y_masked.dims());
    let mask_cube = mask.to_cube();
    let p = effective_patch(y_masked, cfg.patch);
    let mut grid = patch_grid(y_masked, p, cfg.stride);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let loss = run_epoch(&mut grid, cfg.batch, rng, |origins, ops, _| {
            let x: Tensor4<T> = gather_batch(y_masked, origins, ops, p);
            let m: Tensor4<T> = gather_batch(&mask_cube, origins, ops, p);
            let (out, tape) = model.forward(&x, Mode::Train)?;
            let (loss, grad) = masked_mse(&out, &x, &m)?;
            finite_loss(loss)?;
            if m.data().iter().any(|v| *v != T::zero()) {
                let (grads, _) = model.backward(&tape, &grad)?;
                opt.step(model, &grads, lr)?;
            }
            Ok(loss)
        })?;
        log_epoch(&mut log, observer, epoch, loss, schedule, None);
    }
    let restored = denoise(model, y_masked, cfg.patch)?;
    Ok(HolefillOutcome { restored, log })
}
