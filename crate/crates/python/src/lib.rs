//! Python bindings: cubes, degradations, metrics, networks and the three
//! training pipelines. Cube data crosses the boundary as flat band-sequential
//! lists of floats.

use hsi_restore::degrade::{self, SamplingMask};
use hsi_restore::metrics::{self, Direction};
use hsi_restore::nn::{self, Architecture, SeparableCnn};
use hsi_restore::optim::{AdamConfig, LrSchedule, ModelAdam};
use hsi_restore::pipelines::{self, GaussianTaskConfig, HolefillTaskConfig, MixedTaskConfig};
use hsi_restore::rng::Rng;
use hsi_restore::{noise, Error, HsiCube};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for hsi_restore::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A hyperspectral cube `(height, width, bands)` of 32-bit floats.
#[pyclass(name = "Cube", module = "hsi_restore_py", from_py_object)]
#[derive(Clone)]
pub struct PyCube {
    inner: HsiCube,
}

#[pymethods]
impl PyCube {
    /// `data` is band-sequential: all of band 0 row by row, then band 1, ...
    #[new]
    fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: HsiCube::new(height, width, bands, data).py()? })
    }

    #[staticmethod]
    fn zeros(height: usize, width: usize, bands: usize) -> PyResult<Self> {
        Ok(Self { inner: HsiCube::zeros(height, width, bands).py()? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: hsi_restore::cube::load_cube(path).py()? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        hsi_restore::cube::save_cube(&self.inner, path).py()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let (h, w, b) = self.inner.dims();
        format!("Cube(height={h}, width={w}, bands={b})")
    }

    fn __eq__(&self, other: &PyCube) -> bool {
        self.inner == other.inner
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn band(&self, band: usize) -> PyResult<Vec<f32>> {
        if band >= self.inner.bands() {
            return Err(PyValueError::new_err(format!("band {band} out of range")));
        }
        Ok(self.inner.band(band).to_vec())
    }

    fn get(&self, row: usize, col: usize, band: usize) -> PyResult<f32> {
        let (h, w, b) = self.inner.dims();
        if row >= h || col >= w || band >= b {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(row, col, band))
    }

    fn min_max(&self) -> (f32, f32) {
        self.inner.min_max()
    }

    fn normalize(&self) -> Self {
        Self { inner: self.inner.normalize() }
    }

    fn clamped(&self) -> Self {
        Self { inner: self.inner.clamped() }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_hsc1_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(Self { inner: HsiCube::from_hsc1_bytes(&data).py()? })
    }
}

fn wrap(inner: HsiCube) -> PyCube {
    PyCube { inner }
}

/// A separable convolutional network.
#[pyclass(name = "Model", module = "hsi_restore_py", from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: SeparableCnn<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (bands, hidden=400, blocks=4, kernel=3, multiplier=1, seed=0))]
    fn new(bands: usize, hidden: usize, blocks: usize, kernel: usize, multiplier: usize, seed: u64) -> PyResult<Self> {
        let arch = Architecture { bands, hidden, blocks, kernel, multiplier };
        Ok(Self { inner: SeparableCnn::init(&arch, &mut Rng::new(seed)).py()? })
    }

    /// A single block that maps every input to itself.
    #[staticmethod]
    fn identity(bands: usize) -> Self {
        Self { inner: SeparableCnn::identity(bands) }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: nn::load_checkpoint(path).py()? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        nn::save_checkpoint(&self.inner, path).py()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn bands(&self) -> usize {
        self.inner.input_bands()
    }

    fn __repr__(&self) -> String {
        format!("Model(blocks={}, params={})", self.inner.blocks.len(), self.inner.param_count())
    }

    /// `clamp(model(cube))` in inference mode with patch blending.
    #[pyo3(signature = (cube, patch=20))]
    fn denoise(&self, py: Python<'_>, cube: &PyCube, patch: usize) -> PyResult<PyCube> {
        let (model, y) = (&self.inner, &cube.inner);
        py.detach(|| pipelines::denoise(model, y, patch)).py().map(wrap)
    }
}

#[pyfunction]
#[pyo3(signature = (height, width, bands, rank, smoothness=2.0, seed=0))]
fn synth_lowrank_cube(height: usize, width: usize, bands: usize, rank: usize, smoothness: f64, seed: u64) -> PyResult<PyCube> {
    degrade::synth_lowrank_cube(height, width, bands, rank, smoothness, &mut Rng::new(seed)).py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (cube, sigma, seed=0))]
fn add_gaussian(cube: &PyCube, sigma: f64, seed: u64) -> PyResult<PyCube> {
    degrade::add_gaussian(&cube.inner, sigma, &mut Rng::new(seed)).py().map(wrap)
}

#[pyfunction]
#[pyo3(signature = (cube, density, seed=0))]
fn add_impulse(cube: &PyCube, density: f64, seed: u64) -> PyResult<PyCube> {
    degrade::add_impulse(&cube.inner, density, &mut Rng::new(seed)).py().map(wrap)
}

/// Random line deficits in `ceil(band_fraction * bands)` bands.
#[pyfunction]
#[pyo3(signature = (cube, band_fraction=0.1, per_band=1, seed=0))]
fn add_random_lines(cube: &PyCube, band_fraction: f64, per_band: usize, seed: u64) -> PyResult<PyCube> {
    let lines = degrade::random_line_deficits(cube.inner.dims(), band_fraction, per_band, &mut Rng::new(seed)).py()?;
    degrade::add_line_deficits(&cube.inner, &lines).py().map(wrap)
}

/// A 0/1 cube keeping each voxel with probability `rate`.
#[pyfunction]
#[pyo3(signature = (height, width, bands, rate, seed=0))]
fn random_mask(height: usize, width: usize, bands: usize, rate: f64, seed: u64) -> PyResult<PyCube> {
    Ok(wrap(degrade::random_mask((height, width, bands), rate, &mut Rng::new(seed)).py()?.to_cube()))
}

#[pyfunction]
fn apply_mask(cube: &PyCube, mask: &PyCube) -> PyResult<PyCube> {
    let mask = SamplingMask::from_cube(&mask.inner).py()?;
    degrade::apply_mask(&cube.inner, &mask).py().map(wrap)
}

/// `(sigma, per_band)`.
#[pyfunction]
fn estimate_sigma(cube: &PyCube) -> PyResult<(f64, Vec<f64>)> {
    let est = noise::estimate_sigma(&cube.inner).py()?;
    Ok((est.sigma, est.per_band))
}

/// `(mean, per_band)` in dB.
#[pyfunction]
#[pyo3(signature = (reference, estimate, peak=1.0))]
fn psnr(reference: &PyCube, estimate: &PyCube, peak: f64) -> PyResult<(f64, Vec<f64>)> {
    let report = metrics::psnr(&reference.inner, &estimate.inner, peak).py()?;
    Ok((report.mean, report.per_band))
}

#[pyfunction]
fn mode_singular_values(cube: &PyCube, mode: u8) -> PyResult<Vec<f64>> {
    Ok(metrics::mode_singular_values(&cube.inner, mode).py()?.values)
}

/// `(bin_edges, counts, zero_bin_mass)`.
#[pyfunction]
#[pyo3(signature = (cube, direction, bins=101))]
fn diff_histogram(cube: &PyCube, direction: &str, bins: usize) -> PyResult<(Vec<f64>, Vec<u64>, f64)> {
    let direction: Direction = direction.parse().py()?;
    let h = metrics::adjacent_diff_histogram(&cube.inner, direction, bins).py()?;
    Ok((h.bin_edges, h.counts, h.zero_bin_mass))
}

fn schedule(lr: f64, halve_every: usize) -> LrSchedule {
    LrSchedule { initial_lr: lr, halve_every, ..LrSchedule::default() }
}

fn losses(log: &[pipelines::EpochLog]) -> Vec<f64> {
    log.iter().map(|e| e.loss).collect()
}

/// Noisier-target training of `model` in place; returns
/// `(restored, per-epoch losses)`.
#[pyfunction]
#[pyo3(signature = (cube, model, epochs=600, refresh_every=300, patch=20, stride=20, batch=32, lr=0.01, halve_every=50, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_gaussian(
    py: Python<'_>,
    cube: &PyCube,
    model: &mut PyModel,
    epochs: usize,
    refresh_every: usize,
    patch: usize,
    stride: usize,
    batch: usize,
    lr: f64,
    halve_every: usize,
    seed: u64,
) -> PyResult<(PyCube, Vec<f64>)> {
    let cfg = GaussianTaskConfig { epochs, refresh_every, patch, stride, batch, ..GaussianTaskConfig::default() };
    let (y, net) = (&cube.inner, &mut model.inner);
    let out = py
        .detach(|| {
            let mut opt = ModelAdam::new(net, AdamConfig::default());
            pipelines::train_gaussian(y, &cfg, net, &mut opt, &schedule(lr, halve_every), &mut Rng::new(seed), &mut |_| {})
        })
        .py()?;
    Ok((wrap(out.restored), losses(&out.log)))
}

/// Joint training of both networks in place; returns
/// `(restored, per-epoch losses)`.
#[pyfunction]
#[pyo3(signature = (cube, phi1, phi2, epochs=1000, lam=1.0, sigma_min=0.05, sigma_max=0.25, patch=20, stride=20, batch=32, lr=0.01, halve_every=50, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_mixed(
    py: Python<'_>,
    cube: &PyCube,
    phi1: &mut PyModel,
    phi2: &mut PyModel,
    epochs: usize,
    lam: f64,
    sigma_min: f64,
    sigma_max: f64,
    patch: usize,
    stride: usize,
    batch: usize,
    lr: f64,
    halve_every: usize,
    seed: u64,
) -> PyResult<(PyCube, Vec<f64>)> {
    let cfg = MixedTaskConfig {
        lambda: lam,
        train_sigma_range: [sigma_min, sigma_max],
        epochs,
        patch,
        stride,
        batch,
        ..MixedTaskConfig::default()
    };
    let (y, n1, n2) = (&cube.inner, &mut phi1.inner, &mut phi2.inner);
    let out = py
        .detach(|| {
            let mut o1 = ModelAdam::new(n1, AdamConfig::default());
            let mut o2 = ModelAdam::new(n2, AdamConfig::default());
            pipelines::train_mixed(y, &cfg, n1, n2, &mut o1, &mut o2, &schedule(lr, halve_every), &mut Rng::new(seed), &mut |_| {})
        })
        .py()?;
    Ok((wrap(out.restored), losses(&out.log)))
}

/// Masked self-reconstruction training in place; `mask` is a 0/1 cube.
/// Returns `(restored, per-epoch losses)`.
#[pyfunction]
#[pyo3(signature = (cube, mask, model, epochs=800, patch=20, stride=20, batch=32, lr=0.01, halve_every=50, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_holefill(
    py: Python<'_>,
    cube: &PyCube,
    mask: &PyCube,
    model: &mut PyModel,
    epochs: usize,
    patch: usize,
    stride: usize,
    batch: usize,
    lr: f64,
    halve_every: usize,
    seed: u64,
) -> PyResult<(PyCube, Vec<f64>)> {
    let mask = SamplingMask::from_cube(&mask.inner).py()?;
    let y = degrade::apply_mask(&cube.inner, &mask).py()?;
    let cfg = HolefillTaskConfig { epochs, patch, stride, batch };
    let net = &mut model.inner;
    let out = py
        .detach(|| {
            let mut opt = ModelAdam::new(net, AdamConfig::default());
            pipelines::train_holefill(&y, &mask, &cfg, net, &mut opt, &schedule(lr, halve_every), &mut Rng::new(seed), &mut |_| {})
        })
        .py()?;
    Ok((wrap(out.restored), losses(&out.log)))
}

#[pymodule]
fn hsi_restore_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCube>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth_lowrank_cube, m)?)?;
    m.add_function(wrap_pyfunction!(add_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(add_impulse, m)?)?;
    m.add_function(wrap_pyfunction!(add_random_lines, m)?)?;
    m.add_function(wrap_pyfunction!(random_mask, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(mode_singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(diff_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(train_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(train_mixed, m)?)?;
    m.add_function(wrap_pyfunction!(train_holefill, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
