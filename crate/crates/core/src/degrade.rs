//! Seeded synthetic degradations and a low-rank cube generator.
//!
//! Every routine draws from the [`Rng`] it is handed in voxel storage order
//! (band, row, column), so a spec plus a clean cube replays bit-identically.

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{ensure, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// A full row.
    #[serde(rename = "h")]
    Horizontal,
    /// A full column.
    #[serde(rename = "v")]
    Vertical,
}

/// A zeroed row or column within one band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDeficit {
    pub band: usize,
    pub orientation: Orientation,
    pub index: usize,
}

/// Lines drawn at random: `per_band` lines in each of
/// `ceil(band_fraction * B)` bands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomLines {
    pub band_fraction: f64,
    pub per_band: usize,
}

/// Declarative description of the anomalies applied to a clean cube.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSpec {
    pub gaussian_sigma: f64,
    pub impulse_density: f64,
    pub line_deficits: Vec<LineDeficit>,
    /// Extra lines drawn after the noise, added to `line_deficits`.
    pub random_lines: Option<RandomLines>,
    pub mask_rate: Option<f64>,
    pub seed: u64,
}

impl DegradeSpec {
    /// Gaussian noise, then impulse noise, then line deficits, then the
    /// sampling mask (if any), all from one stream seeded by `self.seed`.
    pub fn apply(&self, clean: &HsiCube) -> Result<(HsiCube, Option<SamplingMask>)> {
        let mut rng = Rng::new(self.seed);
        let mut cube = add_gaussian(clean, self.gaussian_sigma, &mut rng)?;
        cube = add_impulse(&cube, self.impulse_density, &mut rng)?;
        let mut lines = self.line_deficits.clone();
        if let Some(random) = self.random_lines {
            lines.extend(random_line_deficits(cube.dims(), random.band_fraction, random.per_band, &mut rng)?);
        }
        cube = add_line_deficits(&cube, &lines)?;
        match self.mask_rate {
            Some(rate) => {
                let mask = random_mask(cube.dims(), rate, &mut rng)?;
                Ok((apply_mask(&cube, &mask)?, Some(mask)))
            }
            None => Ok((cube, None)),
        }
    }
}

/// `y = x + n` with `n ~ N(0, sigma^2)` i.i.d. per voxel; no clamping.
pub fn add_gaussian(cube: &HsiCube, sigma: f64, rng: &mut Rng) -> Result<HsiCube> {
    ensure!(sigma >= 0.0 && sigma.is_finite(), Validation, "gaussian sigma must be >= 0, got {sigma}");
    let mut out = cube.clone();
    if sigma > 0.0 {
        for v in out.data_mut() {
            *v = (f64::from(*v) + sigma * rng.gaussian()) as f32;
        }
    }
    Ok(out)
}

/// Salt-and-pepper: each voxel independently, with probability `density`,
/// becomes 0 or 1 with equal odds.
pub fn add_impulse(cube: &HsiCube, density: f64, rng: &mut Rng) -> Result<HsiCube> {
    ensure!((0.0..=1.0).contains(&density), Validation, "impulse density must lie in [0, 1], got {density}");
    let mut out = cube.clone();
    if density > 0.0 {
        for v in out.data_mut() {
            if rng.bernoulli(density) {
                *v = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(out)
}

pub fn add_line_deficits(cube: &HsiCube, lines: &[LineDeficit]) -> Result<HsiCube> {
    let (h, w, b) = cube.dims();
    let mut out = cube.clone();
    for line in lines {
        ensure!(line.band < b, Validation, "line deficit band {} out of range (bands = {b})", line.band);
        match line.orientation {
            Orientation::Horizontal => {
                ensure!(line.index < h, Validation, "row {} out of range (height = {h})", line.index);
                let start = out.index(line.index, 0, line.band);
                out.data_mut()[start..start + w].fill(0.0);
            }
            Orientation::Vertical => {
                ensure!(line.index < w, Validation, "column {} out of range (width = {w})", line.index);
                for r in 0..h {
                    out.set(r, line.index, line.band, 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Picks `ceil(band_fraction * B)` distinct bands and draws `per_band` lines in
/// each, with uniformly random orientation and position.
pub fn random_line_deficits(
    dims: (usize, usize, usize),
    band_fraction: f64,
    per_band: usize,
    rng: &mut Rng,
) -> Result<Vec<LineDeficit>> {
    ensure!((0.0..=1.0).contains(&band_fraction), Validation, "band fraction must lie in [0, 1]");
    let (h, w, b) = dims;
    let count = ((band_fraction * b as f64).ceil() as usize).min(b);
    let mut bands: Vec<usize> = (0..b).collect();
    rng.shuffle(&mut bands);
    let mut chosen = bands[..count].to_vec();
    chosen.sort_unstable();
    let mut lines = Vec::with_capacity(count * per_band);
    for band in chosen {
        for _ in 0..per_band {
            let (orientation, index) =
                if rng.bernoulli(0.5) { (Orientation::Horizontal, rng.below(h)) } else { (Orientation::Vertical, rng.below(w)) };
            lines.push(LineDeficit { band, orientation, index });
        }
    }
    Ok(lines)
}

/// Known voxel sampling pattern; `true` marks an observed voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Same band-sequential order as [`HsiCube`].
    pub bits: Vec<bool>,
}

impl SamplingMask {
    pub fn full(dims: (usize, usize, usize)) -> Self {
        let (height, width, bands) = dims;
        Self { height, width, bands, bits: vec![true; height * width * bands] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept() as f64 / self.bits.len() as f64
    }

    /// Stored as an `HSC1` cube of 0s and 1s.
    pub fn to_cube(&self) -> HsiCube {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        HsiCube::new(self.height, self.width, self.bands, data).expect("mask dims are valid")
    }

    pub fn from_cube(cube: &HsiCube) -> Result<Self> {
        let mut bits = Vec::with_capacity(cube.len());
        for &v in cube.data() {
            ensure!(v == 0.0 || v == 1.0, Validation, "mask cube holds {v}; only 0 and 1 are allowed");
            bits.push(v == 1.0);
        }
        let (height, width, bands) = cube.dims();
        Ok(Self { height, width, bands, bits })
    }
}

/// Each voxel is kept independently with probability `rate`.
pub fn random_mask(dims: (usize, usize, usize), rate: f64, rng: &mut Rng) -> Result<SamplingMask> {
    ensure!(rate > 0.0 && rate <= 1.0, Validation, "mask rate must lie in (0, 1], got {rate}");
    let (height, width, bands) = dims;
    ensure!(height > 0 && width > 0 && bands > 0, Validation, "mask dimensions must be positive");
    let bits = (0..height * width * bands).map(|_| rng.bernoulli(rate)).collect();
    Ok(SamplingMask { height, width, bands, bits })
}

/// Zeroes every voxel the mask does not keep.
pub fn apply_mask(cube: &HsiCube, mask: &SamplingMask) -> Result<HsiCube> {
    ensure!(cube.dims() == mask.dims(), Shape, "mask {:?} does not match cube {:?}", mask.dims(), cube.dims());
    let mut out = cube.clone();
    for (v, &keep) in out.data_mut().iter_mut().zip(&mask.bits) {
        if !keep {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Separable Gaussian blur of one plane with clamped borders.
fn blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, i) in taps.iter().zip(-radius..=radius) {
                acc += t * plane[r * w + clamp(c as isize + i, w)];
            }
            tmp[r * w + c] = acc / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (t, i) in taps.iter().zip(-radius..=radius) {
                acc += t * tmp[clamp(r as isize + i, h) * w + c];
            }
            out[r * w + c] = acc / norm;
        }
    }
    out
}

/// A smooth non-negative cube `sum_i a_i (x) s_i` with exactly `rank` spatial
/// abundance maps `a_i` (blurred noise, blur width `smoothness` pixels) and
/// smooth spectral signatures `s_i` (sums of Gaussian bumps). The result is
/// shifted along a spectrum inside the signature span and scaled so that its
/// minimum is 0 and its maximum 1; the mode-3 rank stays at most `rank`.
pub fn synth_lowrank_cube(
    height: usize,
    width: usize,
    bands: usize,
    rank: usize,
    smoothness: f64,
    rng: &mut Rng,
) -> Result<HsiCube> {
    ensure!(height > 0 && width > 0 && bands > 0, Validation, "cube dimensions must be positive");
    ensure!(
        rank >= 1 && rank <= (height * width).min(bands),
        Validation,
        "rank must lie in 1..={}, got {rank}",
        (height * width).min(bands)
    );
    ensure!(smoothness >= 0.0 && smoothness.is_finite(), Validation, "smoothness must be >= 0");
    let plane = height * width;

    let maps: Vec<Vec<f64>> = (0..rank)
        .map(|_| {
            let noise: Vec<f64> = (0..plane).map(|_| rng.uniform()).collect();
            let blurred = blur_plane(&noise, height, width, smoothness);
            let (lo, hi) = blurred.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            let span = if hi > lo { hi - lo } else { 1.0 };
            blurred.iter().map(|v| (v - lo) / span).collect()
        })
        .collect();

    let signatures: Vec<Vec<f64>> = (0..rank)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.uniform_range(0.3, 1.0), rng.uniform(), rng.uniform_range(0.08, 0.3)))
                .collect();
            (0..bands)
                .map(|b| {
                    let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.5 };
                    0.1 + bumps.iter().map(|&(a, c, s)| a * (-(t - c).powi(2) / (2.0 * s * s)).exp()).sum::<f64>()
                })
                .collect()
        })
        .collect();

    let mut raw = vec![0.0f64; plane * bands];
    for (map, sig) in maps.iter().zip(&signatures) {
        for (b, &s) in sig.iter().enumerate() {
            for (dst, &a) in raw[b * plane..(b + 1) * plane].iter_mut().zip(map) {
                *dst += a * s;
            }
        }
    }

    // Subtract t * mean signature, the largest multiple keeping every voxel >= 0.
    let mean_sig: Vec<f64> = (0..bands).map(|b| signatures.iter().map(|s| s[b]).sum::<f64>() / rank as f64).collect();
    let mut shift = f64::MAX;
    for b in 0..bands {
        for &v in &raw[b * plane..(b + 1) * plane] {
            shift = shift.min(v / mean_sig[b]);
        }
    }
    for b in 0..bands {
        for v in &mut raw[b * plane..(b + 1) * plane] {
            *v = (*v - shift * mean_sig[b]).max(0.0);
        }
    }
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let data = raw.into_iter().map(|v| (v * scale) as f32).collect();
    HsiCube::new(height, width, bands, data)
}
