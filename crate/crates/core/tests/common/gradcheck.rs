//! Analytic gradients against central finite differences in f64.
//!
//! Every check reduces the output to `L = sum(R * out)` with a fixed random
//! `R`, so `dL/dout = R`, and compares whole gradient tensors with
//! `||analytic - numeric|| / max(||analytic||, ||numeric||)`.

use super::{central_diff, norm_rel_err, random_tensor};
use hsi_restore::nn::{
    relu_backward, relu_forward, Architecture, BatchNormLayer, DepthwiseLayer, Mode, PointwiseLayer, SeparableCnn,
    Tensor4,
};
use hsi_restore::pipelines::{masked_mse, mixed_loss};
use hsi_restore::rng::Rng;

pub const LAYER_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

fn weighted_sum(out: &Tensor4<f64>, r: &Tensor4<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// One compared gradient tensor.
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tol
    }
}

fn check(out: &mut Vec<Check>, name: &str, analytic: &[f64], numeric: &[f64], tol: f64) {
    out.push(Check { name: name.to_string(), error: norm_rel_err(analytic, numeric), tol });
}

pub fn depthwise_gradients() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(1);
    let mut x = random_tensor((2, 5, 6, 3), &mut rng);
    let (k, mult) = (3, 2);
    let weights: Vec<f64> = (0..k * k * 3 * mult).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let layer = DepthwiseLayer::new(k, mult, 3, weights.clone()).unwrap();
    let (out, tape) = layer.forward(&x).unwrap();
    let r = random_tensor(out.dims(), &mut rng);
    let (gx, gw) = layer.backward(&tape, &r).unwrap();

    let mut w = weights;
    let num_w = central_diff(&mut w, |w| {
        let l = DepthwiseLayer::new(k, mult, 3, w.to_vec()).unwrap();
        weighted_sum(&l.apply(&x).unwrap(), &r)
    });
    check(&mut checks, "depthwise weights", &gw, &num_w, LAYER_TOL);

    let dims = x.dims();
    let num_x = central_diff(x.data_mut(), |d| {
        weighted_sum(&layer.apply(&Tensor4::new(dims, d.to_vec()).unwrap()).unwrap(), &r)
    });
    check(&mut checks, "depthwise input", gx.data(), &num_x, LAYER_TOL);
    checks
}

pub fn pointwise_gradients() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(2);
    let mut x = random_tensor((3, 4, 4, 5), &mut rng);
    let (c, l) = (5, 4);
    let weights: Vec<f64> = (0..c * l).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let bias: Vec<f64> = (0..l).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let layer = PointwiseLayer::new(c, l, weights.clone(), bias.clone()).unwrap();
    let (out, tape) = layer.forward(&x).unwrap();
    let r = random_tensor(out.dims(), &mut rng);
    let (gx, gw, gb) = layer.backward(&tape, &r).unwrap();

    let mut w = weights.clone();
    let num_w = central_diff(&mut w, |w| {
        weighted_sum(&PointwiseLayer::new(c, l, w.to_vec(), bias.clone()).unwrap().apply(&x).unwrap(), &r)
    });
    check(&mut checks, "pointwise weights", &gw, &num_w, LAYER_TOL);

    let mut b = bias.clone();
    let num_b = central_diff(&mut b, |b| {
        weighted_sum(&PointwiseLayer::new(c, l, weights.clone(), b.to_vec()).unwrap().apply(&x).unwrap(), &r)
    });
    check(&mut checks, "pointwise bias", &gb, &num_b, LAYER_TOL);

    let dims = x.dims();
    let num_x = central_diff(x.data_mut(), |d| {
        weighted_sum(&layer.apply(&Tensor4::new(dims, d.to_vec()).unwrap()).unwrap(), &r)
    });
    check(&mut checks, "pointwise input", gx.data(), &num_x, LAYER_TOL);
    checks
}

pub fn batchnorm_gradients_in_training_mode() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(3);
    let mut x = random_tensor((2, 3, 4, 3), &mut rng);
    let mut layer = BatchNormLayer::<f64>::new(3);
    layer.gamma = vec![0.7, 1.3, -0.4];
    layer.beta = vec![0.1, -0.2, 0.3];
    let (out, tape) = layer.clone().forward(&x, Mode::Train).unwrap();
    let r = random_tensor(out.dims(), &mut rng);
    let (gx, gg, gb) = layer.backward(&tape, &r).unwrap();
    let eval = |l: &BatchNormLayer<f64>, x: &Tensor4<f64>| weighted_sum(&l.clone().forward(x, Mode::Train).unwrap().0, &r);

    let mut gamma = layer.gamma.clone();
    let num_g = central_diff(&mut gamma, |g| eval(&BatchNormLayer { gamma: g.to_vec(), ..layer.clone() }, &x));
    check(&mut checks, "batchnorm gamma", &gg, &num_g, END_TO_END_TOL);

    let mut beta = layer.beta.clone();
    let num_b = central_diff(&mut beta, |b| eval(&BatchNormLayer { beta: b.to_vec(), ..layer.clone() }, &x));
    check(&mut checks, "batchnorm beta", &gb, &num_b, END_TO_END_TOL);

    let dims = x.dims();
    let num_x = central_diff(x.data_mut(), |d| eval(&layer, &Tensor4::new(dims, d.to_vec()).unwrap()));
    check(&mut checks, "batchnorm input", gx.data(), &num_x, END_TO_END_TOL);
    checks
}

pub fn batchnorm_gradients_in_inference_mode() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(4);
    let mut x = random_tensor((2, 3, 3, 2), &mut rng);
    let mut layer = BatchNormLayer::<f64>::new(2);
    layer.running_mean = vec![0.2, -0.1];
    layer.running_var = vec![0.5, 2.0];
    layer.gamma = vec![1.5, -0.5];
    let (out, tape) = layer.clone().forward(&x, Mode::Infer).unwrap();
    let r = random_tensor(out.dims(), &mut rng);
    let (gx, _, _) = layer.backward(&tape, &r).unwrap();
    let dims = x.dims();
    let num_x = central_diff(x.data_mut(), |d| weighted_sum(&layer.apply(&Tensor4::new(dims, d.to_vec()).unwrap()).unwrap(), &r));
    check(&mut checks, "batchnorm input (inference)", gx.data(), &num_x, LAYER_TOL);
    checks
}

pub fn relu_gradient_away_from_kink() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(5);
    let dims = (2, 4, 4, 3);
    // Keep every input at least 0.05 from zero so no difference straddles it.
    let mut x = Tensor4::from_fn(dims, |_, _, _, _| {
        let v = rng.uniform_range(0.05, 1.0);
        if rng.bernoulli(0.5) {
            v
        } else {
            -v
        }
    });
    let (out, tape) = relu_forward(&x);
    let r = random_tensor(out.dims(), &mut rng);
    let gx = relu_backward(&tape, &r).unwrap();
    let num_x = central_diff(x.data_mut(), |d| weighted_sum(&relu_forward(&Tensor4::new(dims, d.to_vec()).unwrap()).0, &r));
    check(&mut checks, "relu input", gx.data(), &num_x, LAYER_TOL);
    checks
}

fn four_block_model(seed: u64) -> SeparableCnn<f64> {
    let arch = Architecture { bands: 3, hidden: 5, blocks: 4, kernel: 3, multiplier: 2 };
    let mut model = SeparableCnn::init(&arch, &mut Rng::new(seed)).unwrap();
    // Move batch-norm affine terms off their defaults so their gradients are generic.
    let mut rng = Rng::new(seed + 100);
    for block in &mut model.blocks {
        if let Some(bn) = &mut block.batchnorm {
            for g in &mut bn.gamma {
                *g = rng.uniform_range(0.5, 1.5);
            }
            for b in &mut bn.beta {
                *b = rng.uniform_range(-0.3, 0.3);
            }
        }
    }
    model
}

fn flat_params(model: &SeparableCnn<f64>) -> Vec<f64> {
    model.params().into_iter().flatten().copied().collect()
}

fn set_params(model: &mut SeparableCnn<f64>, flat: &[f64]) {
    let mut i = 0;
    for p in model.params_mut() {
        p.copy_from_slice(&flat[i..i + p.len()]);
        i += p.len();
    }
}

pub fn four_block_model_end_to_end() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(6);
    let mut model = four_block_model(7);
    let mut x = random_tensor((2, 5, 5, 3), &mut rng);
    let (out, tape) = model.clone().forward(&x, Mode::Train).unwrap();
    let r = random_tensor(out.dims(), &mut rng);
    let (grads, gx) = model.backward(&tape, &r).unwrap();
    let analytic: Vec<f64> = grads.tensors.iter().flatten().copied().collect();

    let mut flat = flat_params(&model);
    let base = model.clone();
    let numeric = central_diff(&mut flat, |p| {
        let mut m = base.clone();
        set_params(&mut m, p);
        weighted_sum(&m.forward(&x, Mode::Train).unwrap().0, &r)
    });
    check(&mut checks, "4-block model parameters", &analytic, &numeric, END_TO_END_TOL);

    // Biases feeding a training-mode batch norm have an exactly zero
    // gradient; there only the absolute difference is meaningful.
    let mut offset = 0;
    for (name, g) in model.param_names().iter().zip(&grads.tensors) {
        let num = &numeric[offset..offset + g.len()];
        offset += g.len();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm(g).max(norm(num)) < 1e-8 {
            continue;
        }
        check(&mut checks, name, g, num, END_TO_END_TOL);
    }

    let dims = x.dims();
    let num_x = central_diff(x.data_mut(), |d| {
        weighted_sum(&model.forward(&Tensor4::new(dims, d.to_vec()).unwrap(), Mode::Train).unwrap().0, &r)
    });
    check(&mut checks, "4-block model input", gx.data(), &num_x, END_TO_END_TOL);
    checks
}

pub fn four_block_model_inference_mode() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(8);
    let mut model = four_block_model(9);
    // Populate running statistics with a few training passes.
    for _ in 0..3 {
        model.forward(&random_tensor((2, 5, 5, 3), &mut rng), Mode::Train).unwrap();
    }
    let x = random_tensor((1, 6, 4, 3), &mut rng);
    let (out, tape) = model.clone().forward(&x, Mode::Infer).unwrap();
    let direct = model.infer(&x).unwrap();
    assert!(super::max_rel_err(direct.data(), out.data()) < 1e-12);
    let r = random_tensor(out.dims(), &mut rng);
    let (grads, _) = model.backward(&tape, &r).unwrap();
    let analytic: Vec<f64> = grads.tensors.iter().flatten().copied().collect();
    let mut flat = flat_params(&model);
    let numeric = central_diff(&mut flat, |p| {
        let mut m = model.clone();
        set_params(&mut m, p);
        weighted_sum(&m.infer(&x).unwrap(), &r)
    });
    check(&mut checks, "4-block model parameters (inference)", &analytic, &numeric, END_TO_END_TOL);
    checks
}

pub fn mixed_loss_through_l1_term() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(10);
    let arch = Architecture { bands: 3, hidden: 4, blocks: 2, kernel: 3, multiplier: 1 };
    let phi1 = SeparableCnn::<f64>::init(&arch, &mut Rng::new(11)).unwrap();
    let phi2 = SeparableCnn::<f64>::init(&arch, &mut Rng::new(12)).unwrap();
    let y = Tensor4::from_fn((2, 4, 4, 3), |_, _, _, _| rng.uniform());
    let n = Tensor4::from_fn(y.dims(), |_, _, _, _| 0.1 * rng.gaussian());
    let lambda = 2.0;
    let step = mixed_loss(&mut phi1.clone(), &mut phi2.clone(), &y, &n, lambda, true).unwrap();

    // The l1 term has kinks where y == phi2(y); make sure none is within reach.
    let z = phi2.clone().forward(&y, Mode::Train).unwrap().0;
    let closest = y.data().iter().zip(z.data()).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min);
    assert!(closest > 1e-3, "residual {closest} too close to the l1 kink");

    let eval = |p1: &SeparableCnn<f64>, p2: &SeparableCnn<f64>| {
        mixed_loss(&mut p1.clone(), &mut p2.clone(), &y, &n, lambda, true).unwrap().loss
    };
    let mut flat1 = flat_params(&phi1);
    let num1 = central_diff(&mut flat1, |p| {
        let mut m = phi1.clone();
        set_params(&mut m, p);
        eval(&m, &phi2)
    });
    let a1: Vec<f64> = step.grads1.tensors.iter().flatten().copied().collect();
    check(&mut checks, "mixed loss, phi1", &a1, &num1, END_TO_END_TOL);

    let mut flat2 = flat_params(&phi2);
    let num2 = central_diff(&mut flat2, |p| {
        let mut m = phi2.clone();
        set_params(&mut m, p);
        eval(&phi1, &m)
    });
    let a2: Vec<f64> = step.grads2.unwrap().tensors.iter().flatten().copied().collect();
    check(&mut checks, "mixed loss, phi2 (with l1 term)", &a2, &num2, END_TO_END_TOL);
    checks
}

pub fn masked_loss_gradient() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(13);
    let dims = (2, 3, 3, 2);
    let mut out = random_tensor(dims, &mut rng);
    let target = random_tensor(dims, &mut rng);
    let mask = Tensor4::from_fn(dims, |_, _, _, _| if rng.bernoulli(0.6) { 1.0 } else { 0.0 });
    let (_, grad) = masked_mse(&out, &target, &mask).unwrap();
    let num = central_diff(out.data_mut(), |d| masked_mse(&Tensor4::new(dims, d.to_vec()).unwrap(), &target, &mask).unwrap().0);
    check(&mut checks, "masked mse", grad.data(), &num, LAYER_TOL);
    checks
}
