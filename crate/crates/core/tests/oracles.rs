mod common;

use common::{depthwise_oracle, max_rel_err, pointwise_oracle, random_tensor};
use hsi_restore::nn::{DepthwiseLayer, PointwiseLayer};
use hsi_restore::rng::Rng;

pub const ORACLE_TOL: f64 = 1e-12;

struct Case {
    dims: (usize, usize, usize, usize),
    kernel: usize,
    multiplier: usize,
    out_channels: usize,
}

fn draw_case(rng: &mut Rng) -> Case {
    Case {
        dims: (1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(6)),
        kernel: [1, 3, 5][rng.below(3)],
        multiplier: 1 + rng.below(3),
        out_channels: 1 + rng.below(6),
    }
}

#[test]
fn fast_paths_match_nested_loops_on_200_cases() {
    let mut rng = Rng::new(20_24);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let Case { dims, kernel, multiplier, out_channels } = draw_case(&mut rng);
        let m = dims.3;
        let x = random_tensor(dims, &mut rng);
        let weights = (0..kernel * kernel * m * multiplier).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let dw = DepthwiseLayer::new(kernel, multiplier, m, weights).unwrap();
        let fast = dw.apply(&x).unwrap();
        let slow = depthwise_oracle(&x, &dw);
        assert_eq!(fast.dims(), slow.dims());
        let e = max_rel_err(fast.data(), slow.data());
        assert!(e <= ORACLE_TOL, "case {case}: depthwise {dims:?} K={kernel} N={multiplier}: {e:e}");
        worst = worst.max(e);

        let c = m * multiplier;
        let pw = PointwiseLayer::new(
            c,
            out_channels,
            (0..c * out_channels).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            (0..out_channels).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let fast = pw.apply(&slow).unwrap();
        let reference = pointwise_oracle(&slow, &pw);
        let e = max_rel_err(fast.data(), reference.data());
        assert!(e <= ORACLE_TOL, "case {case}: pointwise {c}->{out_channels}: {e:e}");
        worst = worst.max(e);
    }
    println!("worst relative error over 200 cases: {worst:e}");
}

#[test]
fn tape_forward_equals_apply() {
    let mut rng = Rng::new(3);
    for _ in 0..20 {
        let Case { dims, kernel, multiplier, .. } = draw_case(&mut rng);
        let x = random_tensor(dims, &mut rng);
        let weights = (0..kernel * kernel * dims.3 * multiplier).map(|_| rng.gaussian()).collect();
        let dw = DepthwiseLayer::new(kernel, multiplier, dims.3, weights).unwrap();
        assert_eq!(dw.forward(&x).unwrap().0, dw.apply(&x).unwrap());
    }
}

#[test]
fn nearest_fill_oracle_examples() {
    use hsi_restore::degrade::SamplingMask;
    use hsi_restore::HsiCube;
    // 1x4 band 0 observed at columns 0 and 3; band 1 fully observed.
    let cube = HsiCube::new(1, 4, 2, vec![1.0, 9.0, 9.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    let mask = SamplingMask { height: 1, width: 4, bands: 2, bits: vec![true, false, false, true, true, true, true, true] };
    let filled = common::nearest_observed_fill(&cube, &mask);
    assert_eq!(filled.data(), &[1.0, 1.0, 4.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let err = common::held_out_psnr(&cube, &filled, &mask);
    assert!((err - -10.0 * ((64.0 + 25.0) / 2.0f64).log10()).abs() < 1e-12);
}
