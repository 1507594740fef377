use super::{DepthwiseLayer, PointwiseLayer, Real, Tensor4};
use crate::error::{ensure, Result};

/// Full `K x K x M x L` convolution, the non-separable counterpart of a
/// depth-wise + point-wise pair. Forward only; used to compare the two
/// parameterisations.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseConvLayer<T> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `weights[((k1 * K + k2) * M + m) * L + l]`
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseConvLayer<T> {
    /// The dense kernel equal to point-wise after depth-wise:
    /// `W[k1][k2][m][l] = sum_j Wd[k1][k2][m*N + j] * Wp[l][m*N + j]`.
    pub fn from_separable(dw: &DepthwiseLayer<T>, pw: &PointwiseLayer<T>) -> Result<Self> {
        ensure!(dw.out_channels() == pw.in_channels, Shape, "depthwise/pointwise widths disagree");
        let (k, m_in, mult, l_out) = (dw.kernel, dw.in_channels, dw.multiplier, pw.out_channels);
        let mut weights = vec![T::zero(); k * k * m_in * l_out];
        for k1 in 0..k {
            for k2 in 0..k {
                for m in 0..m_in {
                    for l in 0..l_out {
                        let mut acc = T::zero();
                        for j in 0..mult {
                            let o = m * mult + j;
                            acc += dw.weight(k1, k2, o) * pw.weights[l * pw.in_channels + o];
                        }
                        weights[((k1 * k + k2) * m_in + m) * l_out + l] = acc;
                    }
                }
            }
        }
        Ok(Self { kernel: k, in_channels: m_in, out_channels: l_out, weights, bias: pw.bias.clone() })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (n, h, w, m) = x.dims();
        ensure!(m == self.in_channels, Shape, "dense conv expects {} channels, got {m}", self.in_channels);
        let (k, l) = (self.kernel, self.out_channels);
        let half = k / 2;
        let mut out = Tensor4::zeros((n, h, w, l));
        for b in 0..n {
            for y in 0..h {
                for xo in 0..w {
                    let mut acc = self.bias.clone();
                    for k1 in 0..k {
                        let Some(sy) = (y + half).checked_sub(k1).filter(|&v| v < h) else { continue };
                        for k2 in 0..k {
                            let Some(sx) = (xo + half).checked_sub(k2).filter(|&v| v < w) else { continue };
                            for c in 0..m {
                                let v = x.get(b, sy, sx, c);
                                let row = &self.weights[((k1 * k + k2) * m + c) * l..][..l];
                                for (a, &wv) in acc.iter_mut().zip(row) {
                                    *a += wv * v;
                                }
                            }
                        }
                    }
                    for (ch, a) in acc.into_iter().enumerate() {
                        out.set(b, y, xo, ch, a);
                    }
                }
            }
        }
        Ok(out)
    }
}
