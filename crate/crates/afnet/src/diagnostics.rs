//! Self-check battery: finite-difference verification of every gradient
//! path, the two-way softmax contract, fusion parameter accounting, loss
//! analytics against closed-form values, and constellation energy. The
//! CLI `selftest` prints one line per outcome; integration tests assert
//! on the same functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    backward_from_logits, count_fusion_params, forward_cached, fusion_backward,
    fusion_forward_cached, lambda_softmax, net_kink_margin, unit_backward, unit_forward_cached,
    unit_kink_margin, FusionParams, ModelConfig, NetParams, UnitParams,
};
use crate::numeric::gradcheck::finite_diff_check;
use crate::numeric::ops::{
    self, channel_bias_grad, conv2d, conv2d_backward, dense, dense_backward, global_avg_pool,
    global_avg_pool_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, softmax,
    ConvSpec, Padding,
};
use crate::numeric::params::{flatten, load_flat};
use crate::numeric::tensor::Tensor;
use crate::signal::{constellation_points, ModulationScheme};
use crate::train::{ce_loss_label, confidence_weight, topk_entropy};

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name,
            passed,
            detail,
        }
    }

    /// Pass iff `err < bound`.
    fn bounded(name: &'static str, err: f64, bound: f64) -> Self {
        Self::new(
            name,
            err.is_finite() && err < bound,
            format!("error {err:.3e} (bound {bound:.0e})"),
        )
    }
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

/// Runs the full battery in a fixed order.
pub fn run_all() -> Vec<CheckOutcome> {
    let mut out = check_layer_gradients();
    out.push(check_fusion_gradient());
    out.push(check_unit_gradient());
    out.push(check_net_gradient());
    out.push(check_lambda_softmax());
    out.extend(check_fusion_counts());
    out.extend(check_loss_analytics());
    out.push(check_constellation_energy());
    out
}

/// Max relative gradient error accepted from the finite-difference
/// comparisons.
pub const GRAD_TOL: f64 = 1e-4;

/// Safety margin to the nearest ReLU/max kink required before running a
/// finite-difference pass (step is 1e-5).
const KINK_MARGIN: f64 = 1e-3;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("shape/data agree")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn min_abs(t: &Tensor<f64>) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

/// Every plain layer: both convolution variants, dense, max pool, global
/// average pool, ReLU, and softmax with cross entropy.
pub fn check_layer_gradients() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c61);

    let mut out = Vec::new();

    // grouped + dilated convolution, same padding (branch shape)
    {
        let spec = ConvSpec::new(2, (1, 2), (Padding::Same, Padding::Same));
        let input = random_tensor(&mut rng, &[1, 7, 4]);
        let kernels = random_tensor(&mut rng, &[1, 3, 2, 4]);
        let proj = random_tensor(&mut rng, &[1, 7, 4]);
        let mut point = input.data().to_vec();
        point.extend(kernels.data());
        let loss = |x: &[f64]| {
            let input = Tensor::from_vec(&[1, 7, 4], x[..28].to_vec()).unwrap();
            let kernels = Tensor::from_vec(&[1, 3, 2, 4], x[28..].to_vec()).unwrap();
            dot(&conv2d(&input, &kernels, &spec).unwrap(), &proj)
        };
        let (gi, gk) = conv2d_backward(&input, &kernels, &spec, &proj).unwrap();
        let mut analytic = gi.data().to_vec();
        analytic.extend(gk.data());
        out.push(CheckOutcome::bounded(
            "grad conv grouped dilated",
            finite_diff_check(&point, &analytic, loss),
            GRAD_TOL,
        ));
    }

    // first-layer convolution: valid height, same width, with bias
    {
        let spec = ConvSpec::new(1, (1, 1), (Padding::Valid, Padding::Same));
        let input = random_tensor(&mut rng, &[2, 9, 1]);
        let kernels = random_tensor(&mut rng, &[2, 5, 1, 3]);
        let bias = random_tensor(&mut rng, &[3]);
        let proj = random_tensor(&mut rng, &[1, 9, 3]);
        let mut point = kernels.data().to_vec();
        point.extend(bias.data());
        let loss = |x: &[f64]| {
            let kernels = Tensor::from_vec(&[2, 5, 1, 3], x[..30].to_vec()).unwrap();
            let bias = Tensor::from_vec(&[3], x[30..].to_vec()).unwrap();
            let mut map = conv2d(&input, &kernels, &spec).unwrap();
            ops::add_channel_bias(&mut map, &bias).unwrap();
            dot(&map, &proj)
        };
        let (_, gk) = conv2d_backward(&input, &kernels, &spec, &proj).unwrap();
        let mut analytic = gk.data().to_vec();
        analytic.extend(channel_bias_grad(&proj).unwrap().data());
        out.push(CheckOutcome::bounded(
            "grad conv first layer",
            finite_diff_check(&point, &analytic, loss),
            GRAD_TOL,
        ));
    }

    // dense with bias
    {
        let input = random_tensor(&mut rng, &[5]);
        let weights = random_tensor(&mut rng, &[5, 3]);
        let bias = random_tensor(&mut rng, &[3]);
        let proj = random_tensor(&mut rng, &[3]);
        let mut point = input.data().to_vec();
        point.extend(weights.data());
        point.extend(bias.data());
        let loss = |x: &[f64]| {
            let input = Tensor::from_vec(&[5], x[..5].to_vec()).unwrap();
            let weights = Tensor::from_vec(&[5, 3], x[5..20].to_vec()).unwrap();
            let bias = Tensor::from_vec(&[3], x[20..].to_vec()).unwrap();
            dot(&dense(&input, &weights, Some(&bias)).unwrap(), &proj)
        };
        let (gi, gw, gb) = dense_backward(&input, &weights, &proj).unwrap();
        let mut analytic = gi.data().to_vec();
        analytic.extend(gw.data());
        analytic.extend(gb.data());
        out.push(CheckOutcome::bounded(
            "grad dense",
            finite_diff_check(&point, &analytic, loss),
            GRAD_TOL,
        ));
    }

    // max pool over (1,2) windows; input resampled clear of ties
    {
        let input = loop {
            let t = random_tensor(&mut rng, &[1, 6, 3]);
            let mut margin = f64::INFINITY;
            for pair in 0..3 {
                for c in 0..3 {
                    let l = t.data()[(2 * pair) * 3 + c];
                    let r = t.data()[(2 * pair + 1) * 3 + c];
                    margin = margin.min((l - r).abs());
                }
            }
            if margin > KINK_MARGIN {
                break t;
            }
        };
        let proj = random_tensor(&mut rng, &[1, 3, 3]);
        let loss = |x: &[f64]| {
            let input = Tensor::from_vec(&[1, 6, 3], x.to_vec()).unwrap();
            dot(&maxpool2d(&input, (1, 2)).unwrap(), &proj)
        };
        let analytic = maxpool2d_backward(&input, &proj, (1, 2)).unwrap();
        out.push(CheckOutcome::bounded(
            "grad max pool",
            finite_diff_check(input.data(), analytic.data(), loss),
            GRAD_TOL,
        ));
    }

    // global average pool
    {
        let input = random_tensor(&mut rng, &[1, 6, 4]);
        let proj = random_tensor(&mut rng, &[4]);
        let loss = |x: &[f64]| {
            let input = Tensor::from_vec(&[1, 6, 4], x.to_vec()).unwrap();
            dot(&global_avg_pool(&input).unwrap(), &proj)
        };
        let analytic = global_avg_pool_backward(&[1, 6, 4], &proj).unwrap();
        out.push(CheckOutcome::bounded(
            "grad global average pool",
            finite_diff_check(input.data(), analytic.data(), loss),
            GRAD_TOL,
        ));
    }

    // relu, clear of the kink at zero
    {
        let input = loop {
            let t = random_tensor(&mut rng, &[1, 4, 3]);
            if min_abs(&t) > KINK_MARGIN {
                break t;
            }
        };
        let proj = random_tensor(&mut rng, &[1, 4, 3]);
        let loss = |x: &[f64]| {
            let input = Tensor::from_vec(&[1, 4, 3], x.to_vec()).unwrap();
            dot(&relu(&input), &proj)
        };
        let analytic = relu_backward(&input, &proj).unwrap();
        out.push(CheckOutcome::bounded(
            "grad relu",
            finite_diff_check(input.data(), analytic.data(), loss),
            GRAD_TOL,
        ));
    }

    // softmax + cross entropy: gradient is probs - one_hot
    {
        let logits = random_tensor(&mut rng, &[6]);
        let label = 2;
        let loss = |x: &[f64]| {
            let logits = Tensor::from_vec(&[6], x.to_vec()).unwrap();
            ce_loss_label(&softmax(&logits).unwrap(), label).unwrap()
        };
        let probs = softmax(&logits).unwrap();
        let analytic: Vec<f64> = probs
            .data()
            .iter()
            .enumerate()
            .map(|(i, p)| p - f64::from(u8::from(i == label)))
            .collect();
        out.push(CheckOutcome::bounded(
            "grad softmax cross entropy",
            finite_diff_check(logits.data(), &analytic, loss),
            GRAD_TOL,
        ));
    }

    out
}

/// The fusion module: gradients for both inputs and all three weight
/// matrices, at both lambda values.
pub fn check_fusion_gradient() -> CheckOutcome {
    let (c, d) = (6, 3);
    let shapes: [&[usize]; 5] = [&[1, 5, c], &[1, 5, c], &[c, d], &[d, c], &[d, c]];
    let mut worst = 0.0f64;
    for lambda in [1.0, 2.0] {
        let mut found = false;
        for seed in 0..32 {
            let mut rng = ChaCha8Rng::seed_from_u64(0xf0 + seed);
            let parts: Vec<Tensor<f64>> =
                shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
            let proj = random_tensor(&mut rng, &[1, 5, c]);
            let unpack = |x: &[f64]| {
                let mut off = 0;
                let mut take = |shape: &[usize]| {
                    let n: usize = shape.iter().product();
                    let t = Tensor::from_vec(shape, x[off..off + n].to_vec()).unwrap();
                    off += n;
                    t
                };
                let a = take(shapes[0]);
                let b = take(shapes[1]);
                let fp = FusionParams {
                    w1: take(shapes[2]),
                    w2: take(shapes[3]),
                    w3: take(shapes[4]),
                    lambda,
                };
                (a, b, fp)
            };
            let point: Vec<f64> = parts.iter().flat_map(|t| t.data().to_vec()).collect();
            let (a, b, fp) = unpack(&point);
            let (_, cache) = fusion_forward_cached(&a, &b, &fp).unwrap();
            if min_abs(&cache.z_pre) <= KINK_MARGIN {
                continue;
            }
            found = true;
            let (ga, gb, gf) = fusion_backward(&a, &b, &fp, &cache, &proj).unwrap();
            let mut analytic = ga.data().to_vec();
            for t in [&gb, &gf.w1, &gf.w2, &gf.w3] {
                analytic.extend(t.data());
            }
            let loss = |x: &[f64]| {
                let (a, b, fp) = unpack(x);
                let (v, _) = fusion_forward_cached(&a, &b, &fp).unwrap();
                dot(&v, &proj)
            };
            worst = worst.max(finite_diff_check(&point, &analytic, loss));
            break;
        }
        if !found {
            return CheckOutcome::new(
                "grad fusion module",
                false,
                "no kink-free sample found".into(),
            );
        }
    }
    CheckOutcome::bounded("grad fusion module", worst, GRAD_TOL)
}

/// One adaptive-fusion unit end to end.
pub fn check_unit_gradient() -> CheckOutcome {
    let (c, groups, d) = (8, 2, 4);
    let cpg = c / groups;
    let shapes: [&[usize]; 9] = [
        &[1, 3, cpg, c],
        &[1, 3, cpg, c],
        &[c, d],
        &[d, c],
        &[d, c],
        &[c, d],
        &[d, c],
        &[d, c],
        &[1, 6, c],
    ];
    for seed in 0..32 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xa0 + seed);
        let parts: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
        let proj = random_tensor(&mut rng, &[1, 6, c]);
        let unpack = |x: &[f64]| {
            let mut off = 0;
            let mut take = |shape: &[usize]| {
                let n: usize = shape.iter().product();
                let t = Tensor::from_vec(shape, x[off..off + n].to_vec()).unwrap();
                off += n;
                t
            };
            let up = UnitParams {
                small: take(shapes[0]),
                large: take(shapes[1]),
                fusion1: FusionParams {
                    w1: take(shapes[2]),
                    w2: take(shapes[3]),
                    w3: take(shapes[4]),
                    lambda: 1.0,
                },
                fusion2: FusionParams {
                    w1: take(shapes[5]),
                    w2: take(shapes[6]),
                    w3: take(shapes[7]),
                    lambda: 2.0,
                },
            };
            let x = take(shapes[8]);
            (up, x)
        };
        let point: Vec<f64> = parts.iter().flat_map(|t| t.data().to_vec()).collect();
        let (up, x) = unpack(&point);
        let (_, cache) = unit_forward_cached(&x, &up, groups).unwrap();
        if unit_kink_margin(&cache) <= KINK_MARGIN {
            continue;
        }
        let (gx, gu) = unit_backward(&x, &up, groups, &cache, &proj).unwrap();
        let mut analytic = Vec::new();
        for t in [
            &gu.small,
            &gu.large,
            &gu.fusion1.w1,
            &gu.fusion1.w2,
            &gu.fusion1.w3,
            &gu.fusion2.w1,
            &gu.fusion2.w2,
            &gu.fusion2.w3,
            &gx,
        ] {
            analytic.extend(t.data());
        }
        let loss = |x: &[f64]| {
            let (up, inp) = unpack(x);
            let (y, _) = unit_forward_cached(&inp, &up, groups).unwrap();
            dot(&y, &proj)
        };
        return CheckOutcome::bounded(
            "grad fusion unit",
            finite_diff_check(&point, &analytic, loss),
            GRAD_TOL,
        );
    }
    CheckOutcome::new(
        "grad fusion unit",
        false,
        "no kink-free sample found".into(),
    )
}

/// A small but complete network against the cross-entropy loss.
pub fn check_net_gradient() -> CheckOutcome {
    let cfg = ModelConfig {
        channels: 8,
        compression: 4,
        units: 2,
        pool_after: vec![1, 2],
        groups: 2,
        classes: 4,
        frame_len: 16,
    };
    let label = 2;
    for seed in 0..32 {
        let params = NetParams::<f64>::init(&cfg, 0x6e65 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x1000 + seed);
        let input = random_tensor(&mut rng, &[2, cfg.frame_len, 1]);
        let (probs, cache) = forward_cached(&input, &params, &cfg).unwrap();
        if net_kink_margin(&cache, &cfg) <= KINK_MARGIN {
            continue;
        }
        let grad_logits = Tensor::from_vec(
            &[cfg.classes],
            probs
                .data()
                .iter()
                .enumerate()
                .map(|(i, p)| p - f64::from(u8::from(i == label)))
                .collect(),
        )
        .unwrap();
        let (grads, _) = backward_from_logits(&params, &cfg, &cache, &grad_logits).unwrap();
        let point = flatten(&params);
        let analytic = flatten(&grads);
        let loss = |x: &[f64]| {
            let mut p = params.clone();
            load_flat(&mut p, x).unwrap();
            let (probs, _) = forward_cached(&input, &p, &cfg).unwrap();
            ce_loss_label(&probs, label).unwrap()
        };
        return CheckOutcome::bounded(
            "grad full network",
            finite_diff_check(&point, &analytic, loss),
            GRAD_TOL,
        );
    }
    CheckOutcome::new(
        "grad full network",
        false,
        "no kink-free sample found".into(),
    )
}

/// The two-way scaled softmax: weights sum to lambda per channel
/// (|error| < 1e-12) and shifting both logit vectors by a common offset
/// leaves the weights unchanged (|error| < 1e-9), over 1e5 random
/// triples at both lambda values.
pub fn check_lambda_softmax() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2c);
    let c = 8;
    let mut sum_err = 0.0f64;
    let mut shift_err = 0.0f64;
    for i in 0..100_000 {
        let lambda = if i % 2 == 0 { 1.0 } else { 2.0 };
        let a: Tensor<f64> = Tensor::from_fn(&[c], |_| rng.gen_range(-30.0..30.0));
        let b: Tensor<f64> = Tensor::from_fn(&[c], |_| rng.gen_range(-30.0..30.0));
        let shift = rng.gen_range(-100.0..100.0);
        let (alpha, beta) = lambda_softmax(&a, &b, lambda).unwrap();
        for (x, y) in alpha.data().iter().zip(beta.data()) {
            sum_err = sum_err.max((x + y - lambda).abs());
        }
        let shifted = |t: &Tensor<f64>| {
            Tensor::from_vec(&[c], t.data().iter().map(|x| x + shift).collect()).unwrap()
        };
        let a2 = shifted(&a);
        let b2 = shifted(&b);
        let (alpha2, beta2) = lambda_softmax(&a2, &b2, lambda).unwrap();
        for (x, y) in alpha.data().iter().zip(alpha2.data()) {
            shift_err = shift_err.max((x - y).abs());
        }
        for (x, y) in beta.data().iter().zip(beta2.data()) {
            shift_err = shift_err.max((x - y).abs());
        }
    }
    let passed = sum_err < 1e-12 && shift_err < 1e-9;
    CheckOutcome::new(
        "two-way softmax contract",
        passed,
        format!("sum error {sum_err:.3e} (bound 1e-12), shift error {shift_err:.3e} (bound 1e-9)"),
    )
}

/// Fusion parameter count 3C^2/r: the closed-form count and the
/// instantiated module agree for the benchmark sizes.
pub fn check_fusion_counts() -> Vec<CheckOutcome> {
    [(48usize, 16usize, 432usize), (48, 8, 864)]
        .iter()
        .map(|&(c, r, expect)| {
            let formula = count_fusion_params(c, r);
            let cfg = ModelConfig {
                channels: c,
                compression: r,
                units: 1,
                pool_after: vec![1],
                groups: 2,
                classes: 11,
                frame_len: 8,
            };
            let instantiated = NetParams::<f32>::init(&cfg, 1).map(|p| {
                (
                    p.units[0].fusion1.value_count(),
                    p.units[0].fusion2.value_count(),
                )
            });
            let (passed, detail) = match (formula, instantiated) {
                (Ok(f), Ok((i1, i2))) => (
                    f == expect && i1 == expect && i2 == expect,
                    format!("C={c} r={r}: formula {f}, instantiated {i1}/{i2}, expected {expect}"),
                ),
                (f, i) => (
                    false,
                    format!("C={c} r={r}: formula {f:?}, instantiated {i:?}"),
                ),
            };
            CheckOutcome::new(
                if r == 16 {
                    "fusion parameter count C=48 r=16"
                } else {
                    "fusion parameter count C=48 r=8"
                },
                passed,
                detail,
            )
        })
        .collect()
}

/// Loss analytics against independent closed-form values.
pub fn check_loss_analytics() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let uniform = |m: usize| Tensor::from_vec(&[m], vec![1.0 / m as f64; m]).unwrap();

    let ce = ce_loss_label(&uniform(11), 4).unwrap();
    let err = (ce - 11f64.ln()).abs();
    out.push(CheckOutcome::bounded(
        "cross entropy of uniform 11-class",
        err,
        1e-9,
    ));

    let mut hot = vec![0.0; 11];
    hot[3] = 1.0;
    let w = confidence_weight(&Tensor::from_vec(&[11], hot).unwrap(), 3).unwrap();
    out.push(CheckOutcome::new(
        "confidence of a one-hot prediction",
        w == 1.0,
        format!("w = {w} (expected exactly 1)"),
    ));

    let w = confidence_weight(&uniform(11), 5).unwrap();
    out.push(CheckOutcome::bounded(
        "confidence of a uniform prediction",
        w.abs(),
        1e-12,
    ));

    let mut p = vec![0.0f64; 11];
    (p[0], p[1], p[2]) = (0.5, 0.25, 0.25);
    let w = confidence_weight(&Tensor::from_vec(&[11], p).unwrap(), 3).unwrap();
    out.push(CheckOutcome::bounded(
        "confidence k=3 of a half-quarter-quarter prediction",
        (w - 0.0536).abs(),
        1e-3,
    ));

    let flat = Tensor::from_vec(&[3], vec![0.5, 0.5, 0.0]).unwrap();
    let peaked = Tensor::from_vec(&[3], vec![0.5, 0.25, 0.25]).unwrap();
    let h_flat = topk_entropy(&flat, 2).unwrap();
    let h_peaked = topk_entropy(&peaked, 2).unwrap();
    out.push(CheckOutcome::new(
        "top-2 entropy ranks an even split as less certain",
        h_flat > h_peaked,
        format!("H[0.5,0.5,0] = {h_flat:.6} vs H[0.5,0.25,0.25] = {h_peaked:.6}"),
    ));

    out
}

/// Every linearly modulated constellation has unit mean symbol energy.
pub fn check_constellation_energy() -> CheckOutcome {
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for scheme in ModulationScheme::ALL {
        if !scheme.is_linear_digital() {
            continue;
        }
        match constellation_points(scheme) {
            Ok(points) => {
                let energy: f64 =
                    points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
                worst = worst.max((energy - 1.0).abs());
            }
            Err(e) => {
                detail = format!("{}: {e}", scheme.name());
                worst = f64::INFINITY;
            }
        }
    }
    if detail.is_empty() {
        CheckOutcome::bounded("constellation unit energy", worst, 1e-9)
    } else {
        CheckOutcome::new("constellation unit energy", false, detail)
    }
}
