//! Blind Gaussian noise level estimate from the 3x3 second-difference operator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    /// Median of `per_band`.
    pub sigma: f64,
    pub per_band: Vec<f64>,
}

/// `sqrt(pi/2) * sum|D * I| / (6 (W-2)(H-2))` over the valid interior,
/// with `D = [[1,-2,1],[-2,4,-2],[1,-2,1]]`.
pub fn estimate_band_sigma(plane: &[f32], height: usize, width: usize) -> f64 {
    let px = |r: usize, c: usize| f64::from(plane[r * width + c]);
    let mut total = 0.0;
    for r in 1..height - 1 {
        for c in 1..width - 1 {
            let corners = px(r - 1, c - 1) + px(r - 1, c + 1) + px(r + 1, c - 1) + px(r + 1, c + 1);
            let edges = px(r - 1, c) + px(r + 1, c) + px(r, c - 1) + px(r, c + 1);
            total += (corners - 2.0 * edges + 4.0 * px(r, c)).abs();
        }
    }
    (std::f64::consts::FRAC_PI_2).sqrt() * total / (6.0 * (width - 2) as f64 * (height - 2) as f64)
}

pub fn estimate_sigma(cube: &HsiCube) -> Result<SigmaEstimate> {
    let (h, w, b) = cube.dims();
    ensure!(h >= 3 && w >= 3, Validation, "noise estimation needs at least 3x3 pixels, got {h}x{w}");
    let per_band: Vec<f64> = (0..b).into_par_iter().map(|k| estimate_band_sigma(cube.band(k), h, w)).collect();
    Ok(SigmaEstimate { sigma: median(&per_band), per_band })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn flat_and_affine_planes_read_zero() {
        let flat = HsiCube::filled(9, 7, 3, 0.4).unwrap();
        assert!(estimate_sigma(&flat).unwrap().sigma <= 1e-9);
        let ramp = HsiCube::from_fn(16, 12, 2, |r, c, b| (0.01 * r as f64 + 0.02 * c as f64 + 0.1 * b as f64) as f32).unwrap();
        // f32 storage of the ramp leaves rounding residue far below any real noise level
        assert!(estimate_sigma(&ramp).unwrap().sigma <= 1e-7);
    }

    #[test]
    fn recovers_simulated_noise_level() {
        let mut rng = Rng::new(5);
        let cube = HsiCube::from_fn(128, 128, 16, |_, _, _| (0.1 * rng.gaussian()) as f32).unwrap();
        let est = estimate_sigma(&cube).unwrap();
        assert!((0.09..=0.11).contains(&est.sigma), "{}", est.sigma);
        assert_eq!(est.per_band.len(), 16);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = Rng::new(6);
        let cube = HsiCube::from_fn(20, 20, 4, |_, _, _| rng.uniform() as f32).unwrap();
        let scaled = HsiCube::from_fn(20, 20, 4, |r, c, b| cube.get(r, c, b) * 4.0).unwrap();
        let (a, s) = (estimate_sigma(&cube).unwrap().sigma, estimate_sigma(&scaled).unwrap().sigma);
        assert!((s - 4.0 * a).abs() < 1e-12 * s);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rejects_tiny_planes() {
        assert!(estimate_sigma(&HsiCube::zeros(2, 5, 1).unwrap()).is_err());
    }
}
