use serde::{Deserialize, Serialize};

use super::{add_noise, check_batching, denoise, effective_patch, finite_loss, gather_batch, log_epoch, mse, patch_grid, run_epoch, EpochLog, Observer};
use crate::cube::HsiCube;
use crate::error::{ensure, Result};
use crate::nn::{Mode, Real, SeparableCnn, Tensor4};
use crate::noise::estimate_sigma;
use crate::optim::{LrSchedule, ModelAdam};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianTaskConfig {
    /// Jitter `alpha` on the estimated level: the extra noise has standard
    /// deviation `(1 + alpha) * sigma'`.
    pub alpha_range: [f64; 2],
    /// Epochs between input refreshes; 0 disables refreshing.
    pub refresh_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub patch: usize,
    pub stride: usize,
}

impl Default for GaussianTaskConfig {
    fn default() -> Self {
        Self { alpha_range: [-0.1, 0.1], refresh_every: 300, epochs: 600, batch: 32, patch: 20, stride: 20 }
    }
}

impl GaussianTaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_batching(self.batch, self.patch, self.stride)?;
        let [lo, hi] = self.alpha_range;
        ensure!(lo <= hi && lo > -1.0, Config, "alpha_range must satisfy -1 < lo <= hi, got [{lo}, {hi}]");
        Ok(())
    }
}

/// A noisier copy of `y`; the training target is `y` itself.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisierTarget {
    pub noisy: HsiCube,
    pub alpha: f64,
    pub sigma: f64,
}

fn draw_level(sigma_prime: f64, alpha_range: [f64; 2], rng: &mut Rng) -> (f64, f64) {
    let alpha = alpha_range[0] + (alpha_range[1] - alpha_range[0]) * rng.uniform();
    (alpha, (1.0 + alpha) * sigma_prime)
}

/// `y + n~`, `n~ ~ N(0, ((1 + alpha) sigma')^2)`, `alpha ~ U[alpha_range]`.
pub fn make_noisier_target(y: &HsiCube, sigma_prime: f64, alpha_range: [f64; 2], rng: &mut Rng) -> Result<NoisierTarget> {
    ensure!(sigma_prime > 0.0 && sigma_prime.is_finite(), Validation, "sigma' must be positive, got {sigma_prime}");
    let (alpha, sigma) = draw_level(sigma_prime, alpha_range, rng);
    let mut noisy = y.clone();
    for v in noisy.data_mut() {
        *v = (f64::from(*v) + sigma * rng.gaussian()) as f32;
    }
    Ok(NoisierTarget { noisy, alpha, sigma })
}

#[derive(Clone, Debug)]
pub struct GaussianOutcome {
    /// `clamp(model(input))` after the last epoch.
    pub restored: HsiCube,
    /// The training input after the last refresh (the original cube if none).
    pub input: HsiCube,
    pub sigma_prime: f64,
    pub log: Vec<EpochLog>,
}

/// Noisier-target training: minimises `mean (model(y + n~) - y)^2` over
/// augmented patches. Every `refresh_every` epochs the input is replaced by
/// the current restoration and `sigma'` is re-estimated from it.
#[allow(clippy::too_many_arguments)]
pub fn train_gaussian<T: Real>(
    y: &HsiCube,
    cfg: &GaussianTaskConfig,
    model: &mut SeparableCnn<T>,
    opt: &mut ModelAdam<T>,
    schedule: &LrSchedule,
    rng: &mut Rng,
    observer: &mut Observer<'_>,
) -> Result<GaussianOutcome> {
    cfg.validate()?;
    let p = effective_patch(y, cfg.patch);
    let mut input = y.clone();
    let mut sigma_prime = estimate_sigma(&input)?.sigma;
    ensure!(sigma_prime > 0.0, Validation, "estimated noise level is 0; nothing to train against");
    let mut grid = patch_grid(&input, p, cfg.stride);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.refresh_every > 0 && epoch > 0 && epoch % cfg.refresh_every == 0 {
            input = denoise(model, &input, cfg.patch)?;
            sigma_prime = estimate_sigma(&input)?.sigma;
            ensure!(sigma_prime > 0.0, Validation, "refreshed input has estimated noise level 0");
        }
        let lr = schedule.lr_at(epoch);
        let loss = run_epoch(&mut grid, cfg.batch, rng, |origins, ops, rng| {
            let clean: Tensor4<T> = gather_batch(&input, origins, ops, p);
            let (_, sigma) = draw_level(sigma_prime, cfg.alpha_range, rng);
            let noisy = add_noise(&clean, sigma, rng);
            let (out, tape) = model.forward(&noisy, Mode::Train)?;
            let (loss, grad) = mse(&out, &clean)?;
            finite_loss(loss)?;
            let (grads, _) = model.backward(&tape, &grad)?;
            opt.step(model, &grads, lr)?;
            Ok(loss)
        })?;
        log_epoch(&mut log, observer, epoch, loss, schedule, Some(sigma_prime));
    }
    let restored = denoise(model, &input, cfg.patch)?;
    Ok(GaussianOutcome { restored, input, sigma_prime, log })
}
