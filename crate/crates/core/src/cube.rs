//! Hyperspectral cubes, the `HSC1` file format, patching and augmentation.
//!
//! A cube is stored band-sequentially (BSQ): `bands` planes of
//! `height x width` values, each plane row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const HSC1_MAGIC: &[u8; 4] = b"HSC1";
pub const HSC1_VERSION: u32 = 1;
pub const HSC1_HEADER_LEN: usize = 29;
const DTYPE_F32: u8 = 0;

/// An `H x W x B` volume of reflectances, band-sequential.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            height > 0 && width > 0 && bands > 0,
            Validation,
            "cube dimensions must be positive, got {height}x{width}x{bands}"
        );
        ensure!(
            data.len() == height * width * bands,
            Validation,
            "cube data has {} values, expected {}",
            data.len(),
            height * width * bands
        );
        Ok(Self { height, width, bands, data })
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f32) -> Result<Self> {
        Self::new(height, width, bands, vec![value; height * width * bands])
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        Self::filled(height, width, bands, 0.0)
    }

    /// Builds a cube from `f(row, col, band)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(h, w, b));
                }
            }
        }
        Self::new(height, width, bands, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `(height, width, bands)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.bands)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        (band * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[self.index(row, col, band)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, value: f32) {
        let i = self.index(row, col, band);
        self.data[i] = value;
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[band * plane..(band + 1) * plane]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.data[band * plane..(band + 1) * plane]
    }

    /// Returns `true` when both cubes have the same `(H, W, B)`.
    pub fn same_dims(&self, other: &HsiCube) -> bool {
        self.dims() == other.dims()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clamped(&self) -> HsiCube {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    /// Affine map of the global minimum to 0 and maximum to 1. A constant
    /// cube maps to all zeros.
    pub fn normalize(&self) -> HsiCube {
        let (lo, hi) = self.min_max();
        let mut out = self.clone();
        if hi > lo {
            let range = f64::from(hi) - f64::from(lo);
            for v in out.data.iter_mut() {
                *v = ((f64::from(*v) - f64::from(lo)) / range) as f32;
            }
        } else {
            out.data.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    pub fn to_hsc1_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HSC1_HEADER_LEN + 4 * self.data.len());
        buf.extend_from_slice(HSC1_MAGIC);
        buf.extend_from_slice(&HSC1_VERSION.to_le_bytes());
        for d in [self.height, self.width, self.bands] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.push(DTYPE_F32);
        buf.extend_from_slice(&[0u8; 8]);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_hsc1_bytes(bytes: &[u8]) -> Result<HsiCube> {
        if bytes.len() < 8 {
            return Err(Error::Format("file too short for an HSC1 header".into()));
        }
        ensure!(&bytes[0..4] == HSC1_MAGIC, Format, "bad magic {:?}, expected \"HSC1\"", &bytes[0..4]);
        let version = read_u32(bytes, 4);
        ensure!(version == HSC1_VERSION, Format, "unsupported HSC1 version {version}");
        if bytes.len() < HSC1_HEADER_LEN {
            return Err(Error::Corrupt(format!(
                "header truncated at {} of {HSC1_HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        let (h, w, b) = (
            read_u32(bytes, 8) as usize,
            read_u32(bytes, 12) as usize,
            read_u32(bytes, 16) as usize,
        );
        ensure!(bytes[20] == DTYPE_F32, Format, "unsupported dtype code {}", bytes[20]);
        ensure!(h > 0 && w > 0 && b > 0, Validation, "zero dimension in header: {h}x{w}x{b}");
        let count = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(b))
            .ok_or_else(|| Error::Corrupt("dimension product overflows".into()))?;
        let payload = &bytes[HSC1_HEADER_LEN..];
        if payload.len() != 4 * count {
            return Err(Error::Corrupt(format!(
                "payload has {} bytes, header implies {}",
                payload.len(),
                4 * count
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        HsiCube::new(h, w, b, data)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let bytes = fs::read(path)?;
    HsiCube::from_hsc1_bytes(&bytes)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    write_atomically(path.as_ref(), &cube.to_hsc1_bytes())
}

/// Writes to a sibling temp file, then renames over `path`.
pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("not a file path: {}", path.display())))?
        .to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let written = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if written.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(written?)
}

/// A spatial block of a cube that keeps every band.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Band-sequential, same layout as [`HsiCube`].
    pub data: Vec<f32>,
}

impl Patch {
    pub fn to_cube(&self) -> HsiCube {
        HsiCube {
            height: self.height,
            width: self.width,
            bands: self.bands,
            data: self.data.clone(),
        }
    }
}

/// Start offsets along one axis: a regular grid plus a final offset flush
/// against the border if the grid leaves pixels uncovered. Strides longer
/// than `size` are shortened to `size` so that no pixel is skipped.
pub fn patch_starts(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=len - size).step_by(stride.min(size)).collect();
    if *starts.last().unwrap() + size < len {
        starts.push(len - size);
    }
    starts
}

pub fn extract_patches(cube: &HsiCube, h: usize, w: usize, stride: usize) -> Result<Vec<Patch>> {
    ensure!(h >= 1 && w >= 1, Validation, "patch size must be positive");
    ensure!(stride >= 1, Validation, "stride must be at least 1");
    ensure!(
        h <= cube.height && w <= cube.width,
        Validation,
        "patch {h}x{w} larger than cube {}x{}",
        cube.height,
        cube.width
    );
    let rows = patch_starts(cube.height, h, stride);
    let cols = patch_starts(cube.width, w, stride);
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let mut data = Vec::with_capacity(h * w * cube.bands);
            for b in 0..cube.bands {
                for y in r..r + h {
                    let start = cube.index(y, c, b);
                    data.extend_from_slice(&cube.data[start..start + w]);
                }
            }
            patches.push(Patch { origin: (r, c), height: h, width: w, bands: cube.bands, data });
        }
    }
    Ok(patches)
}

/// A rotate/flip of the spatial plane; band order is never touched.
///
/// Applied as: `rotation` counter-clockwise quarter turns, then a horizontal
/// mirror (`flip_h`, reverses columns), then a vertical mirror (`flip_v`,
/// reverses rows).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AugmentOp {
    pub rotation: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentOp {
    pub const IDENTITY: AugmentOp = AugmentOp { rotation: 0, flip_h: false, flip_v: false };

    pub fn new(rotation: u8, flip_h: bool, flip_v: bool) -> Self {
        Self { rotation: rotation % 4, flip_h, flip_v }
    }

    /// The eight distinct elements of the square's symmetry group.
    pub fn all() -> [AugmentOp; 8] {
        let mut ops = [AugmentOp::IDENTITY; 8];
        for (i, op) in ops.iter_mut().enumerate() {
            *op = AugmentOp::new((i % 4) as u8, i >= 4, false);
        }
        ops
    }

    /// Where output pixel `(r, c)` reads from in an `h x w` input.
    fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = self.output_dims(h, w);
        let r = if self.flip_v { oh - 1 - r } else { r };
        let c = if self.flip_h { ow - 1 - c } else { c };
        match self.rotation % 4 {
            0 => (r, c),
            1 => (c, w - 1 - r),
            2 => (h - 1 - r, w - 1 - c),
            _ => (h - 1 - c, r),
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.rotation % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Transforms `bands` planes of `h x w`, returning the new buffer and its
    /// spatial dims.
    pub fn apply_planes(&self, data: &[f32], h: usize, w: usize, bands: usize) -> (Vec<f32>, usize, usize) {
        let (oh, ow) = self.output_dims(h, w);
        let mut out = vec![0.0; data.len()];
        for r in 0..oh {
            for c in 0..ow {
                let (sr, sc) = self.source(r, c, h, w);
                for b in 0..bands {
                    out[(b * oh + r) * ow + c] = data[(b * h + sr) * w + sc];
                }
            }
        }
        (out, oh, ow)
    }

    /// `self` followed by `next`, as the canonical equivalent element.
    pub fn then(&self, next: AugmentOp) -> AugmentOp {
        let probe: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let (once, h, w) = self.apply_planes(&probe, 3, 3, 1);
        let (twice, _, _) = next.apply_planes(&once, h, w, 1);
        AugmentOp::all()
            .into_iter()
            .find(|op| op.apply_planes(&probe, 3, 3, 1).0 == twice)
            .expect("dihedral group is closed")
    }

    /// Canonical form (one of [`AugmentOp::all`]) acting identically.
    pub fn canonical(&self) -> AugmentOp {
        AugmentOp::IDENTITY.then(*self)
    }
}

pub fn apply_augment(patch: &Patch, op: AugmentOp) -> Patch {
    let (data, h, w) = op.apply_planes(&patch.data, patch.height, patch.width, patch.bands);
    Patch { origin: patch.origin, height: h, width: w, bands: patch.bands, data }
}
