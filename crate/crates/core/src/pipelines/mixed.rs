use serde::{Deserialize, Serialize};

use super::{add_noise, check_batching, denoise, effective_patch, finite_loss, gather_batch, log_epoch, patch_grid, run_epoch, EpochLog, Observer};
use crate::cube::HsiCube;
use crate::error::{ensure, Result};
use crate::nn::{Mode, ParamGrads, Real, SeparableCnn, Tensor4};
use crate::optim::{LrSchedule, ModelAdam};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedTaskConfig {
    /// Weight of the sparse-residual term.
    pub lambda: f64,
    /// Each minibatch draws its extra-noise level uniformly from this range.
    pub train_sigma_range: [f64; 2],
    /// Keep the second network fixed (no gradient, no update).
    pub freeze_phi2: bool,
    pub epochs: usize,
    pub batch: usize,
    pub patch: usize,
    pub stride: usize,
}

impl Default for MixedTaskConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            train_sigma_range: [0.05, 0.25],
            freeze_phi2: false,
            epochs: 1000,
            batch: 32,
            patch: 20,
            stride: 20,
        }
    }
}

impl MixedTaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_batching(self.batch, self.patch, self.stride)?;
        ensure!(self.lambda >= 0.0 && self.lambda.is_finite(), Config, "lambda must be >= 0, got {}", self.lambda);
        let [lo, hi] = self.train_sigma_range;
        ensure!(lo >= 0.0 && lo <= hi, Config, "train_sigma_range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]");
        Ok(())
    }
}

pub struct MixedLoss<T> {
    pub loss: f64,
    pub grads1: ParamGrads<T>,
    /// `None` when the second network is frozen.
    pub grads2: Option<ParamGrads<T>>,
}

/// `mean (phi1(phi2(y) + n') - phi2(y))^2 + lambda * mean |y - phi2(y)|`
/// with gradients for both networks; the target `phi2(y)` is differentiated
/// too. A frozen `phi2` runs in inference mode and gets no gradient.
pub fn mixed_loss<T: Real>(
    phi1: &mut SeparableCnn<T>,
    phi2: &mut SeparableCnn<T>,
    y: &Tensor4<T>,
    n_prime: &Tensor4<T>,
    lambda: f64,
    train_phi2: bool,
) -> Result<MixedLoss<T>> {
    ensure!(y.dims() == n_prime.dims(), Shape, "y {:?} vs n' {:?}", y.dims(), n_prime.dims());
    let (z, tape2) = if train_phi2 {
        let (z, t) = phi2.forward(y, Mode::Train)?;
        (z, Some(t))
    } else {
        (phi2.infer(y)?, None)
    };
    ensure!(z.dims() == y.dims(), Shape, "phi2 output {:?} vs input {:?}", z.dims(), y.dims());
    let u = z.zip_map(n_prime, |a, b| a + b)?;
    let (o, tape1) = phi1.forward(&u, Mode::Train)?;
    ensure!(o.dims() == z.dims(), Shape, "phi1 output {:?} vs target {:?}", o.dims(), z.dims());

    let n = y.data().len() as f64;
    let mut squares = 0.0;
    let mut abs = 0.0;
    for ((&ov, &zv), &yv) in o.data().iter().zip(z.data()).zip(y.data()) {
        squares += (ov.f64() - zv.f64()).powi(2);
        abs += (yv.f64() - zv.f64()).abs();
    }
    let loss = finite_loss(squares / n + lambda * abs / n)?;

    let grad_o = o.zip_map(&z, |ov, zv| T::of(2.0 * (ov.f64() - zv.f64()) / n))?;
    let (grads1, grad_u) = phi1.backward(&tape1, &grad_o)?;
    let grads2 = match tape2 {
        Some(tape2) => {
            let mut grad_z = grad_u;
            for (i, g) in grad_z.data_mut().iter_mut().enumerate() {
                let r = y.data()[i].f64() - z.data()[i].f64();
                let sign = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
                *g = T::of(g.f64() - grad_o.data()[i].f64() - lambda * sign / n);
            }
            Some(phi2.backward(&tape2, &grad_z)?.0)
        }
        None => None,
    };
    Ok(MixedLoss { loss, grads1, grads2 })
}

#[derive(Clone, Debug)]
pub struct MixedOutcome {
    /// `clamp(phi1(y))`.
    pub restored: HsiCube,
    pub log: Vec<EpochLog>,
}

/// Joint training of both networks on [`mixed_loss`]; `n'` is redrawn for
/// every minibatch at a level drawn from `train_sigma_range`.
#[allow(clippy::too_many_arguments)]
pub fn train_mixed<T: Real>(
    y: &HsiCube,
    cfg: &MixedTaskConfig,
    phi1: &mut SeparableCnn<T>,
    phi2: &mut SeparableCnn<T>,
    opt1: &mut ModelAdam<T>,
    opt2: &mut ModelAdam<T>,
    schedule: &LrSchedule,
    rng: &mut Rng,
    observer: &mut Observer<'_>,
) -> Result<MixedOutcome> {
    cfg.validate()?;
    let p = effective_patch(y, cfg.patch);
    let mut grid = patch_grid(y, p, cfg.stride);
    let mut log = Vec::with_capacity(cfg.epochs);
    let [lo, hi] = cfg.train_sigma_range;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut level_sum = 0.0;
        let mut batches = 0usize;
        let loss = run_epoch(&mut grid, cfg.batch, rng, |origins, ops, rng| {
            let batch: Tensor4<T> = gather_batch(y, origins, ops, p);
            let sigma = lo + (hi - lo) * rng.uniform();
            level_sum += sigma;
            batches += 1;
            let n_prime = add_noise(&Tensor4::zeros(batch.dims()), sigma, rng);
            let step = mixed_loss(phi1, phi2, &batch, &n_prime, cfg.lambda, !cfg.freeze_phi2)?;
            opt1.step(phi1, &step.grads1, lr)?;
            if let Some(g2) = &step.grads2 {
                opt2.step(phi2, g2, lr)?;
            }
            Ok(step.loss)
        })?;
        log_epoch(&mut log, observer, epoch, loss, schedule, Some(level_sum / batches as f64));
    }
    let restored = denoise(phi1, y, cfg.patch)?;
    Ok(MixedOutcome { restored, log })
}
