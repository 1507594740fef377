//! PSNR, mode-k singular spectra and adjacent-difference histograms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{ensure, Error, Result};

pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPsnrReport {
    pub per_band: Vec<f64>,
    pub mean: f64,
    pub peak: f64,
}

/// Per-band `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &HsiCube, estimate: &HsiCube, peak: f64) -> Result<BandPsnrReport> {
    ensure!(
        reference.same_dims(estimate),
        Shape,
        "psnr: reference {:?} vs estimate {:?}",
        reference.dims(),
        estimate.dims()
    );
    ensure!(peak > 0.0 && peak.is_finite(), Validation, "psnr peak must be positive, got {peak}");
    let per_band: Vec<f64> = (0..reference.bands())
        .map(|b| {
            let (r, e) = (reference.band(b), estimate.band(b));
            let mse = r.iter().zip(e).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum::<f64>() / r.len() as f64;
            if mse == 0.0 { PSNR_CAP_DB } else { (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB) }
        })
        .collect();
    let mean = per_band.iter().sum::<f64>() / per_band.len() as f64;
    Ok(BandPsnrReport { per_band, mean, peak })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    pub mode: u8,
    /// Descending.
    pub values: Vec<f64>,
}

/// Singular values of the mode-`mode` unfolding (1 = rows, 2 = columns,
/// 3 = bands), computed in `f64`.
pub fn mode_singular_values(cube: &HsiCube, mode: u8) -> Result<SingularSpectrum> {
    let (h, w, b) = cube.dims();
    let at = |r: usize, c: usize, k: usize| f64::from(cube.get(r, c, k));
    let unfolding = match mode {
        1 => DMatrix::from_fn(h, w * b, |r, j| at(r, j % w, j / w)),
        2 => DMatrix::from_fn(w, h * b, |c, j| at(j % h, c, j / h)),
        3 => DMatrix::from_fn(b, h * w, |k, p| at(p / w, p % w, k)),
        _ => return Err(Error::Validation(format!("mode must be 1, 2 or 3, got {mode}"))),
    };
    let short = unfolding.nrows().min(unfolding.ncols());
    let mut values: Vec<f64> = unfolding.singular_values().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values.truncate(short);
    Ok(SingularSpectrum { mode, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Next column.
    X,
    /// Next row.
    Y,
    /// Next band.
    Z,
    /// Next row and next band.
    DiagYz,
    /// Previous row and next band.
    AntiDiagYz,
}

impl Direction {
    pub const ALL: [Direction; 5] = [Direction::X, Direction::Y, Direction::Z, Direction::DiagYz, Direction::AntiDiagYz];

    /// `(row, column, band)` step from the first voxel of a pair to the second.
    pub fn offset(self) -> (isize, isize, isize) {
        match self {
            Direction::X => (0, 1, 0),
            Direction::Y => (1, 0, 0),
            Direction::Z => (0, 0, 1),
            Direction::DiagYz => (1, 0, 1),
            Direction::AntiDiagYz => (-1, 0, 1),
        }
    }

    pub fn pair_count(self, dims: (usize, usize, usize)) -> usize {
        let (dr, dc, db) = self.offset();
        let shrink = |n: usize, d: isize| n.saturating_sub(d.unsigned_abs());
        shrink(dims.0, dr) * shrink(dims.1, dc) * shrink(dims.2, db)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::X => "x",
            Direction::Y => "y",
            Direction::Z => "z",
            Direction::DiagYz => "diag_yz",
            Direction::AntiDiagYz => "anti_diag_yz",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.to_string() == s)
            .ok_or_else(|| Error::Validation(format!("unknown direction `{s}` (expected x, y, z, diag_yz, anti_diag_yz)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffHistogram {
    pub direction: Direction,
    /// `bins + 1` uniform edges from -1 to 1.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub zero_bin_mass: f64,
}

impl DiffHistogram {
    /// Index of the half-open bin `[left, right)` containing 0. An odd bin
    /// count centres this bin on 0.
    pub fn zero_bin(&self) -> usize {
        bin_of(0.0, self.counts.len())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Differences outside `[-1, 1]` land in the end bins; 1 itself goes to the last.
fn bin_of(d: f64, bins: usize) -> usize {
    (((d + 1.0) * 0.5 * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Histogram of `cube[p + offset] - cube[p]` over every valid pair.
pub fn adjacent_diff_histogram(cube: &HsiCube, direction: Direction, bins: usize) -> Result<DiffHistogram> {
    ensure!(bins >= 1, Validation, "histogram needs at least one bin");
    let (h, w, b) = cube.dims();
    let pairs = direction.pair_count((h, w, b));
    ensure!(pairs > 0, Validation, "cube {:?} has no adjacent pairs along {direction}", cube.dims());
    let (dr, dc, db) = direction.offset();
    let rows: Vec<usize> = if dr < 0 { (1..h).collect() } else { (0..h - dr as usize).collect() };
    let mut counts = vec![0u64; bins];
    for k in 0..b - db as usize {
        for &r in &rows {
            let r2 = (r as isize + dr) as usize;
            for c in 0..w - dc as usize {
                let d = f64::from(cube.get(r2, c + dc as usize, k + db as usize)) - f64::from(cube.get(r, c, k));
                counts[bin_of(d, bins)] += 1;
            }
        }
    }
    let bin_edges = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
    let zero_bin_mass = counts[bin_of(0.0, bins)] as f64 / pairs as f64;
    Ok(DiffHistogram { direction, bin_edges, counts, zero_bin_mass })
}
