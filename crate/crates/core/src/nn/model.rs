use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_forward, ReluTape};
use super::{BatchNormLayer, BatchNormTape, DepthwiseLayer, DepthwiseTape, Mode, PointwiseLayer, PointwiseTape, Real, Tensor4};
use crate::error::{ensure, Result};
use crate::rng::Rng;

/// Shape of a separable network: `bands -> hidden -> ... -> hidden -> bands`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub bands: usize,
    /// Point-wise output width of every block but the last.
    pub hidden: usize,
    pub blocks: usize,
    /// Depth-wise kernel size (odd).
    pub kernel: usize,
    /// Depth-wise channel multiplier.
    pub multiplier: usize,
}

impl Architecture {
    /// Four blocks of width 400 with 3x3 depth-wise kernels.
    pub fn standard(bands: usize) -> Self {
        Self { bands, hidden: 400, blocks: 4, kernel: 3, multiplier: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.bands >= 1, Validation, "architecture needs at least one band");
        ensure!(self.blocks >= 1, Validation, "architecture needs at least one block");
        ensure!(self.hidden >= 1 || self.blocks == 1, Validation, "hidden width must be positive");
        ensure!(self.kernel % 2 == 1, Validation, "kernel size must be odd, got {}", self.kernel);
        ensure!(self.multiplier >= 1, Validation, "depthwise multiplier must be >= 1");
        Ok(())
    }
}

/// Depth-wise conv, point-wise conv, optional batch norm, optional ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub depthwise: DepthwiseLayer<T>,
    pub pointwise: PointwiseLayer<T>,
    pub batchnorm: Option<BatchNormLayer<T>>,
    pub relu: bool,
}

impl<T: Real> Block<T> {
    pub fn in_channels(&self) -> usize {
        self.depthwise.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.out_channels
    }
}

#[derive(Clone, Debug)]
pub struct BlockTape<T> {
    depthwise: DepthwiseTape<T>,
    pointwise: PointwiseTape<T>,
    batchnorm: Option<BatchNormTape<T>>,
    relu: Option<ReluTape>,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Clone, Debug)]
pub struct GradTape<T> {
    blocks: Vec<BlockTape<T>>,
    input_dims: (usize, usize, usize, usize),
}

/// Gradients in [`SeparableCnn::param_names`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_zero())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v.f64().abs()).fold(0.0, f64::max)
    }
}

/// The separable CNN: a chain of [`Block`]s whose last block is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableCnn<T> {
    pub blocks: Vec<Block<T>>,
}

impl<T: Real> SeparableCnn<T> {
    pub fn new(blocks: Vec<Block<T>>) -> Result<Self> {
        ensure!(!blocks.is_empty(), Validation, "network needs at least one block");
        for (i, b) in blocks.iter().enumerate() {
            ensure!(
                b.depthwise.out_channels() == b.pointwise.in_channels,
                Shape,
                "block {i}: depthwise emits {} channels, pointwise takes {}",
                b.depthwise.out_channels(),
                b.pointwise.in_channels
            );
            if let Some(bn) = &b.batchnorm {
                ensure!(bn.channels() == b.out_channels(), Shape, "block {i}: batchnorm width mismatch");
            }
            if i + 1 < blocks.len() {
                ensure!(
                    b.out_channels() == blocks[i + 1].in_channels(),
                    Shape,
                    "block {i} emits {} channels, block {} takes {}",
                    b.out_channels(),
                    i + 1,
                    blocks[i + 1].in_channels()
                );
            }
        }
        let last = blocks.last().unwrap();
        ensure!(!last.relu, Validation, "final block must be linear");
        ensure!(
            last.out_channels() == blocks[0].in_channels(),
            Shape,
            "network maps {} bands to {}",
            blocks[0].in_channels(),
            last.out_channels()
        );
        Ok(Self { blocks })
    }

    /// Random initialisation: weights ~ N(0, 2 / fan_in), zero biases, unit
    /// batch-norm scale. Hidden blocks carry batch norm and ReLU; the last
    /// block is a bare separable convolution.
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut blocks = Vec::with_capacity(arch.blocks);
        let mut channels = arch.bands;
        for i in 0..arch.blocks {
            let last = i + 1 == arch.blocks;
            let out = if last { arch.bands } else { arch.hidden };
            let k = arch.kernel;
            let dw_std = (2.0 / (k * k) as f64).sqrt();
            let dw: Vec<T> = (0..k * k * channels * arch.multiplier).map(|_| T::of(dw_std * rng.gaussian())).collect();
            let fan_in = channels * arch.multiplier;
            let pw_std = (2.0 / fan_in as f64).sqrt();
            let pw: Vec<T> = (0..out * fan_in).map(|_| T::of(pw_std * rng.gaussian())).collect();
            blocks.push(Block {
                depthwise: DepthwiseLayer::new(k, arch.multiplier, channels, dw)?,
                pointwise: PointwiseLayer::new(fan_in, out, pw, vec![T::zero(); out])?,
                batchnorm: (!last).then(|| BatchNormLayer::new(out)),
                relu: !last,
            });
            channels = out;
        }
        Self::new(blocks)
    }

    /// One linear block that reproduces its input exactly.
    pub fn identity(bands: usize) -> Self {
        let block = Block {
            depthwise: DepthwiseLayer::identity(3, bands).expect("3 is odd"),
            pointwise: PointwiseLayer::identity(bands),
            batchnorm: None,
            relu: false,
        };
        Self { blocks: vec![block] }
    }

    pub fn input_bands(&self) -> usize {
        self.blocks[0].in_channels()
    }

    pub fn output_bands(&self) -> usize {
        self.blocks.last().unwrap().out_channels()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            names.push(format!("block{i}.depthwise.weight"));
            names.push(format!("block{i}.pointwise.weight"));
            names.push(format!("block{i}.pointwise.bias"));
            if b.batchnorm.is_some() {
                names.push(format!("block{i}.batchnorm.gamma"));
                names.push(format!("block{i}.batchnorm.beta"));
            }
        }
        names
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for b in &self.blocks {
            out.push(&b.depthwise.weights);
            out.push(&b.pointwise.weights);
            out.push(&b.pointwise.bias);
            if let Some(bn) = &b.batchnorm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.depthwise.weights);
            out.push(&mut b.pointwise.weights);
            out.push(&mut b.pointwise.bias);
            if let Some(bn) = &mut b.batchnorm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        ensure!(
            x.channels() == self.input_bands(),
            Shape,
            "network takes {} bands, input has {}",
            self.input_bands(),
            x.channels()
        );
        Ok(())
    }

    /// Forward pass recording a tape. Training mode updates batch-norm running
    /// statistics, hence `&mut self`.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, GradTape<T>)> {
        self.check_input(x)?;
        let input_dims = x.dims();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for block in &mut self.blocks {
            let (d, dw_tape) = block.depthwise.forward(&h)?;
            let (mut p, pw_tape) = block.pointwise.forward(&d)?;
            let bn_tape = match &mut block.batchnorm {
                Some(bn) => {
                    let (o, t) = bn.forward(&p, mode)?;
                    p = o;
                    Some(t)
                }
                None => None,
            };
            let relu_tape = if block.relu {
                let (o, t) = relu_forward(&p);
                p = o;
                Some(t)
            } else {
                None
            };
            tapes.push(BlockTape { depthwise: dw_tape, pointwise: pw_tape, batchnorm: bn_tape, relu: relu_tape });
            h = p;
        }
        Ok((h, GradTape { blocks: tapes, input_dims }))
    }

    /// Inference-mode forward pass without a tape.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut h = self.blocks[0].depthwise.apply(x)?;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                h = block.depthwise.apply(&h)?;
            }
            h = block.pointwise.apply(&h)?;
            if let Some(bn) = &block.batchnorm {
                h = bn.apply(&h)?;
            }
            if block.relu {
                h = h.map(|v| if v > T::zero() { v } else { T::zero() });
            }
        }
        Ok(h)
    }

    /// Back-propagates `grad_out` through the taped forward pass, returning
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, tape: &GradTape<T>, grad_out: &Tensor4<T>) -> Result<(ParamGrads<T>, Tensor4<T>)> {
        ensure!(tape.blocks.len() == self.blocks.len(), Shape, "tape does not belong to this network");
        let mut per_block: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.blocks.len());
        let mut g = grad_out.clone();
        for (block, bt) in self.blocks.iter().zip(&tape.blocks).rev() {
            if let Some(rt) = &bt.relu {
                g = relu_backward(rt, &g)?;
            }
            let mut grads = Vec::with_capacity(5);
            let mut bn_grads = None;
            if let (Some(bn), Some(t)) = (&block.batchnorm, &bt.batchnorm) {
                let (gi, gg, gb) = bn.backward(t, &g)?;
                g = gi;
                bn_grads = Some((gg, gb));
            }
            let (gi, gw, gb) = block.pointwise.backward(&bt.pointwise, &g)?;
            let (gi, gk) = block.depthwise.backward(&bt.depthwise, &gi)?;
            g = gi;
            grads.push(gk);
            grads.push(gw);
            grads.push(gb);
            if let Some((gg, gb)) = bn_grads {
                grads.push(gg);
                grads.push(gb);
            }
            per_block.push(grads);
        }
        per_block.reverse();
        debug_assert_eq!(g.dims(), tape.input_dims);
        Ok((ParamGrads { tensors: per_block.into_iter().flatten().collect() }, g))
    }

    /// Converts every parameter and statistic to another precision.
    pub fn cast<U: Real>(&self) -> SeparableCnn<U> {
        let conv = |v: &[T]| -> Vec<U> { v.iter().map(|x| U::of(x.f64())).collect() };
        SeparableCnn {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    depthwise: DepthwiseLayer {
                        kernel: b.depthwise.kernel,
                        multiplier: b.depthwise.multiplier,
                        in_channels: b.depthwise.in_channels,
                        weights: conv(&b.depthwise.weights),
                    },
                    pointwise: PointwiseLayer {
                        in_channels: b.pointwise.in_channels,
                        out_channels: b.pointwise.out_channels,
                        weights: conv(&b.pointwise.weights),
                        bias: conv(&b.pointwise.bias),
                    },
                    batchnorm: b.batchnorm.as_ref().map(|bn| BatchNormLayer {
                        gamma: conv(&bn.gamma),
                        beta: conv(&bn.beta),
                        running_mean: conv(&bn.running_mean),
                        running_var: conv(&bn.running_var),
                        eps: bn.eps,
                        momentum: bn.momentum,
                    }),
                    relu: b.relu,
                })
                .collect(),
        }
    }
}
