//! `HSM1` model checkpoints.
//!
//! Little-endian: magic `HSM1`, version `u32` = 1, block count `u32`, then per
//! block `K`, `N`, in-channels, out-channels (all `u32`), relu `u8`,
//! batch-norm-present `u8`, followed by `f32` arrays: depth-wise weights
//! (tap-major, `K*K*in*N`), point-wise weights (`out x in*N`, row-major), bias,
//! gamma, beta, running mean, running variance (each `out`). Blocks without
//! batch norm store the neutral values 1, 0, 0, 1.

use std::path::Path;

use super::{BatchNormLayer, Block, DepthwiseLayer, PointwiseLayer, Real, SeparableCnn};
use crate::cube::write_atomically;
use crate::error::{ensure, Error, Result};

pub const HSM1_MAGIC: &[u8; 4] = b"HSM1";
const HSM1_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(model: &SeparableCnn<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(HSM1_MAGIC);
    buf.extend_from_slice(&HSM1_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.blocks.len() as u32).to_le_bytes());
    let put = |buf: &mut Vec<u8>, vals: &[T]| {
        for v in vals {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    };
    for b in &model.blocks {
        for v in [b.depthwise.kernel, b.depthwise.multiplier, b.in_channels(), b.out_channels()] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.push(b.relu as u8);
        buf.push(b.batchnorm.is_some() as u8);
        put(&mut buf, &b.depthwise.weights);
        put(&mut buf, &b.pointwise.weights);
        put(&mut buf, &b.pointwise.bias);
        let neutral = BatchNormLayer::new(b.out_channels());
        let bn = b.batchnorm.as_ref().unwrap_or(&neutral);
        for arr in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
            put(&mut buf, arr);
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corrupt(format!("checkpoint truncated at byte {} (need {n} more)", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn floats<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::Corrupt("array size overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| T::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect())
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<SeparableCnn<T>> {
    ensure!(bytes.len() >= 8 && &bytes[..4] == HSM1_MAGIC, Format, "not an HSM1 checkpoint");
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()?;
    ensure!(version == HSM1_VERSION as usize, Format, "unsupported HSM1 version {version}");
    let count = r.u32()?;
    ensure!(count >= 1, Validation, "checkpoint has no blocks");
    let mut blocks = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let (k, mult, cin, cout) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let relu = r.u8()? != 0;
        let has_bn = r.u8()? != 0;
        let dw = r.floats(k * k * cin * mult)?;
        let pw = r.floats(cout * cin * mult)?;
        let bias = r.floats(cout)?;
        let mut bn = BatchNormLayer::new(cout);
        bn.gamma = r.floats(cout)?;
        bn.beta = r.floats(cout)?;
        bn.running_mean = r.floats(cout)?;
        bn.running_var = r.floats(cout)?;
        blocks.push(Block {
            depthwise: DepthwiseLayer::new(k, mult, cin, dw)?,
            pointwise: PointwiseLayer::new(cin * mult, cout, pw, bias)?,
            batchnorm: has_bn.then_some(bn),
            relu,
        });
    }
    ensure!(r.at == bytes.len(), Corrupt, "{} trailing bytes after checkpoint", bytes.len() - r.at);
    SeparableCnn::new(blocks)
}

pub fn save_checkpoint<T: Real>(model: &SeparableCnn<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomically(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<SeparableCnn<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}
