//! Forward and backward passes for the fusion module, the adaptive-fusion
//! unit, and the full network. Every `*_cached` forward records the
//! intermediates its matching backward needs; gradients are returned in
//! containers shaped exactly like the parameters.

use super::params::{FusionParams, NetParams, UnitParams};
use super::{ModelConfig, LARGE_BRANCH_DILATION};
use crate::error::{Error, Result};
use crate::numeric::ops::{
    add_channel_bias, channel_bias_grad, conv2d, conv2d_backward, dense, dense_backward,
    global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    softmax, ConvSpec, Padding,
};
use crate::numeric::tensor::{same_shape, Scalar, Tensor};
use crate::signal::FrameRecord;

const POOL_WINDOW: (usize, usize) = (1, 2);

fn small_branch_spec(groups: usize) -> ConvSpec {
    ConvSpec::new(groups, (1, 1), (Padding::Same, Padding::Same))
}

fn large_branch_spec(groups: usize) -> ConvSpec {
    ConvSpec::new(
        groups,
        (1, LARGE_BRANCH_DILATION),
        (Padding::Same, Padding::Same),
    )
}

fn conv1_spec() -> ConvSpec {
    ConvSpec::new(1, (1, 1), (Padding::Valid, Padding::Same))
}

/// Channel-pair softmax scaled by lambda: per channel c,
/// alpha_c = lambda*e^{a_c}/(e^{a_c}+e^{b_c}) and beta_c analogously, so
/// alpha_c + beta_c = lambda. Computed max-shifted per channel.
pub fn lambda_softmax<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    lambda: F,
) -> Result<(Tensor<F>, Tensor<F>)> {
    same_shape("lambda_softmax", a, b)?;
    if lambda <= F::zero() {
        return Err(Error::invalid(format!(
            "lambda_softmax: lambda must be positive, got {lambda}"
        )));
    }
    let n = a.len();
    let mut alpha = vec![F::zero(); n];
    let mut beta = vec![F::zero(); n];
    for i in 0..n {
        let (av, bv) = (a.data()[i], b.data()[i]);
        let m = if av >= bv { av } else { bv };
        let ea = (av - m).exp();
        let eb = (bv - m).exp();
        let denom = ea + eb;
        alpha[i] = lambda * ea / denom;
        beta[i] = lambda * eb / denom;
    }
    Ok((
        Tensor::from_vec(a.shape(), alpha)?,
        Tensor::from_vec(a.shape(), beta)?,
    ))
}

/// Gradients w.r.t. the logit pair. Since alpha = lambda*sigmoid(a-b),
/// d(alpha)/da = alpha*beta/lambda and the b-logit gradient is its
/// negation.
pub fn lambda_softmax_backward<F: Scalar>(
    alpha: &Tensor<F>,
    beta: &Tensor<F>,
    lambda: F,
    grad_alpha: &Tensor<F>,
    grad_beta: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    same_shape("lambda_softmax_backward", alpha, beta)?;
    same_shape("lambda_softmax_backward grads", grad_alpha, grad_beta)?;
    same_shape("lambda_softmax_backward value/grad", alpha, grad_alpha)?;
    let n = alpha.len();
    let mut ga = vec![F::zero(); n];
    let mut gb = vec![F::zero(); n];
    for i in 0..n {
        let jac = alpha.data()[i] * beta.data()[i] / lambda;
        let g = jac * (grad_alpha.data()[i] - grad_beta.data()[i]);
        ga[i] = g;
        gb[i] = -g;
    }
    Ok((
        Tensor::from_vec(alpha.shape(), ga)?,
        Tensor::from_vec(alpha.shape(), gb)?,
    ))
}

/// Intermediates of one fusion forward, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct FusionCache<F> {
    /// GAP of A+B, length C.
    pub s: Tensor<F>,
    /// Squeeze output before ReLU, length d.
    pub z_pre: Tensor<F>,
    /// Squeeze output after ReLU, length d.
    pub z: Tensor<F>,
    pub a_logits: Tensor<F>,
    pub b_logits: Tensor<F>,
    pub alpha: Tensor<F>,
    pub beta: Tensor<F>,
}

/// Attention fusion of two same-shape maps: squeeze the summed map to a
/// channel descriptor, expand to two logit vectors, convert to per-channel
/// weights via [`lambda_softmax`], and blend: V_c = alpha_c A_c + beta_c B_c.
pub fn fusion_forward_cached<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    fp: &FusionParams<F>,
) -> Result<(Tensor<F>, FusionCache<F>)> {
    same_shape("fusion_forward inputs", a, b)?;
    if a.rank() != 3 || a.shape()[2] != fp.channels() {
        return Err(Error::shape(format!(
            "fusion_forward: input {:?} does not match {} channels",
            a.shape(),
            fp.channels()
        )));
    }
    let mut sum = a.clone();
    sum.add_assign(b)?;
    let s = global_avg_pool(&sum)?;
    let z_pre = dense(&s, &fp.w1, None)?;
    let z = relu(&z_pre);
    let a_logits = dense(&z, &fp.w2, None)?;
    let b_logits = dense(&z, &fp.w3, None)?;
    let (alpha, beta) = lambda_softmax(&a_logits, &b_logits, fp.lambda)?;

    let c = fp.channels();
    let rows = a.len() / c;
    let mut v = Tensor::zeros(a.shape());
    {
        let vd = v.data_mut();
        let ad = a.data();
        let bd = b.data();
        let al = alpha.data();
        let be = beta.data();
        for row in 0..rows {
            let base = row * c;
            for j in 0..c {
                vd[base + j] = al[j] * ad[base + j] + be[j] * bd[base + j];
            }
        }
    }
    Ok((
        v,
        FusionCache {
            s,
            z_pre,
            z,
            a_logits,
            b_logits,
            alpha,
            beta,
        },
    ))
}

pub fn fusion_forward<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    fp: &FusionParams<F>,
) -> Result<Tensor<F>> {
    fusion_forward_cached(a, b, fp).map(|(v, _)| v)
}

/// Gradients of one fusion module: returns (dL/dA, dL/dB, parameter
/// gradients). The returned [`FusionParams`] is a gradient container; its
/// `lambda` is copied unchanged (a fixed hyperparameter, never trained).
pub fn fusion_backward<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    fp: &FusionParams<F>,
    cache: &FusionCache<F>,
    grad_v: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, FusionParams<F>)> {
    same_shape("fusion_backward grad", a, grad_v)?;
    let c = fp.channels();
    let rows = a.len() / c;
    let ad = a.data();
    let bd = b.data();
    let gd = grad_v.data();
    let al = cache.alpha.data();
    let be = cache.beta.data();

    // Direct blend path plus per-channel weight gradients.
    let mut grad_a = Tensor::zeros(a.shape());
    let mut grad_b = Tensor::zeros(b.shape());
    let mut g_alpha = vec![F::zero(); c];
    let mut g_beta = vec![F::zero(); c];
    {
        let gad = grad_a.data_mut();
        let gbd = grad_b.data_mut();
        for row in 0..rows {
            let base = row * c;
            for j in 0..c {
                let g = gd[base + j];
                gad[base + j] = al[j] * g;
                gbd[base + j] = be[j] * g;
                g_alpha[j] = g_alpha[j] + g * ad[base + j];
                g_beta[j] = g_beta[j] + g * bd[base + j];
            }
        }
    }
    let g_alpha = Tensor::from_vec(&[c], g_alpha)?;
    let g_beta = Tensor::from_vec(&[c], g_beta)?;

    // Attention path back through the two expand maps, the shared squeeze,
    // and GAP of the summed input.
    let (g_al, g_bl) =
        lambda_softmax_backward(&cache.alpha, &cache.beta, fp.lambda, &g_alpha, &g_beta)?;
    let (gz_a, gw2, _) = dense_backward(&cache.z, &fp.w2, &g_al)?;
    let (gz_b, gw3, _) = dense_backward(&cache.z, &fp.w3, &g_bl)?;
    let mut gz = gz_a;
    gz.add_assign(&gz_b)?;
    let gz_pre = relu_backward(&cache.z_pre, &gz)?;
    let (gs, gw1, _) = dense_backward(&cache.s, &fp.w1, &gz_pre)?;
    let g_sum = global_avg_pool_backward(a.shape(), &gs)?;
    grad_a.add_assign(&g_sum)?;
    grad_b.add_assign(&g_sum)?;

    Ok((
        grad_a,
        grad_b,
        FusionParams {
            w1: gw1,
            w2: gw2,
            w3: gw3,
            lambda: fp.lambda,
        },
    ))
}

/// Intermediates of one unit forward.
#[derive(Clone, Debug)]
pub struct UnitCache<F> {
    pub p_pre: Tensor<F>,
    pub q_pre: Tensor<F>,
    pub p: Tensor<F>,
    pub q: Tensor<F>,
    pub u: Tensor<F>,
    pub fusion1: FusionCache<F>,
    pub fusion2: FusionCache<F>,
}

/// One adaptive-fusion unit: two grouped branch convolutions (plain and
/// dilated), branch fusion with lambda=1, then fusion with the unit input
/// (lambda=2). Shape-preserving.
pub fn unit_forward_cached<F: Scalar>(
    x: &Tensor<F>,
    up: &UnitParams<F>,
    groups: usize,
) -> Result<(Tensor<F>, UnitCache<F>)> {
    let p_pre = conv2d(x, &up.small, &small_branch_spec(groups))?;
    let q_pre = conv2d(x, &up.large, &large_branch_spec(groups))?;
    let p = relu(&p_pre);
    let q = relu(&q_pre);
    let (u, f1) = fusion_forward_cached(&p, &q, &up.fusion1)?;
    let (y, f2) = fusion_forward_cached(x, &u, &up.fusion2)?;
    Ok((
        y,
        UnitCache {
            p_pre,
            q_pre,
            p,
            q,
            u,
            fusion1: f1,
            fusion2: f2,
        },
    ))
}

pub fn unit_forward<F: Scalar>(
    x: &Tensor<F>,
    up: &UnitParams<F>,
    groups: usize,
) -> Result<Tensor<F>> {
    unit_forward_cached(x, up, groups).map(|(y, _)| y)
}

/// Gradients of one unit: (dL/dX, parameter gradients).
pub fn unit_backward<F: Scalar>(
    x: &Tensor<F>,
    up: &UnitParams<F>,
    groups: usize,
    cache: &UnitCache<F>,
    grad_y: &Tensor<F>,
) -> Result<(Tensor<F>, UnitParams<F>)> {
    let (mut grad_x, grad_u, gf2) =
        fusion_backward(x, &cache.u, &up.fusion2, &cache.fusion2, grad_y)?;
    let (grad_p, grad_q, gf1) =
        fusion_backward(&cache.p, &cache.q, &up.fusion1, &cache.fusion1, &grad_u)?;
    let gp_pre = relu_backward(&cache.p_pre, &grad_p)?;
    let gq_pre = relu_backward(&cache.q_pre, &grad_q)?;
    let (gx_small, g_small) = conv2d_backward(x, &up.small, &small_branch_spec(groups), &gp_pre)?;
    let (gx_large, g_large) = conv2d_backward(x, &up.large, &large_branch_spec(groups), &gq_pre)?;
    grad_x.add_assign(&gx_small)?;
    grad_x.add_assign(&gx_large)?;
    Ok((
        grad_x,
        UnitParams {
            small: g_small,
            large: g_large,
            fusion1: gf1,
            fusion2: gf2,
        },
    ))
}

/// Intermediates of one full forward pass.
#[derive(Clone, Debug)]
pub struct NetCache<F> {
    pub input: Tensor<F>,
    /// First conv output after bias, before ReLU.
    pub conv1_pre: Tensor<F>,
    /// Input map of each unit (post any preceding pool).
    pub unit_inputs: Vec<Tensor<F>>,
    pub unit_caches: Vec<UnitCache<F>>,
    /// Output map of each unit (pre any following pool).
    pub unit_outputs: Vec<Tensor<F>>,
    /// Shape of the map entering GAP.
    pub final_shape: Vec<usize>,
    /// GAP output, length C.
    pub features: Tensor<F>,
    pub logits: Tensor<F>,
}

/// Converts a stored frame to the network input layout [2, N, 1]
/// (row 0 = I, row 1 = Q), rescaled to unit average power.
///
/// The rescale acts as receiver gain control: a frame's received power
/// grows with its noise floor, and without the rescale that loudness
/// saturates the attention softmaxes and the class logits, making the
/// network confidently wrong on noise-dominated frames. Normalizing
/// here keeps input scale independent of noise level so the network
/// sees waveform structure rather than received power.
pub fn frame_to_input<F: Scalar>(record: &FrameRecord) -> Tensor<F> {
    let n = record.frame_len().max(1);
    let power = record.iq.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / n as f64;
    let scale = if power > 0.0 {
        power.sqrt().recip()
    } else {
        1.0
    };
    let data: Vec<F> = record
        .iq
        .iter()
        .map(|&v| F::from_f64(v as f64 * scale))
        .collect();
    Tensor::from_vec(&[2, record.frame_len(), 1], data).expect("frame record stores 2*N samples")
}

/// Full forward pass: input conv (valid height, same width) + bias + ReLU,
/// the unit stack with (1,2) max pools at the configured positions, GAP,
/// dense head. Returns class probabilities and the cache.
pub fn forward_cached<F: Scalar>(
    input: &Tensor<F>,
    params: &NetParams<F>,
    cfg: &ModelConfig,
) -> Result<(Tensor<F>, NetCache<F>)> {
    if input.shape() != [2, cfg.frame_len, 1] {
        return Err(Error::shape(format!(
            "network input must be [2, {}, 1], got {:?}",
            cfg.frame_len,
            input.shape()
        )));
    }
    if params.units.len() != cfg.units {
        return Err(Error::shape(format!(
            "params hold {} units, config expects {}",
            params.units.len(),
            cfg.units
        )));
    }
    let mut conv1_pre = conv2d(input, &params.conv1_kernels, &conv1_spec())?;
    add_channel_bias(&mut conv1_pre, &params.conv1_bias)?;
    let mut t = relu(&conv1_pre);

    let mut unit_inputs = Vec::with_capacity(cfg.units);
    let mut unit_caches = Vec::with_capacity(cfg.units);
    let mut unit_outputs = Vec::with_capacity(cfg.units);
    for (i, up) in params.units.iter().enumerate() {
        unit_inputs.push(t.clone());
        let (y, cache) = unit_forward_cached(&t, up, cfg.groups)?;
        unit_caches.push(cache);
        t = if cfg.pool_after.contains(&(i + 1)) {
            maxpool2d(&y, POOL_WINDOW)?
        } else {
            y.clone()
        };
        unit_outputs.push(y);
    }

    let final_shape = t.shape().to_vec();
    let features = global_avg_pool(&t)?;
    let logits = dense(&features, &params.head_weights, Some(&params.head_bias))?;
    let probs = softmax(&logits)?;
    Ok((
        probs,
        NetCache {
            input: input.clone(),
            conv1_pre,
            unit_inputs,
            unit_caches,
            unit_outputs,
            final_shape,
            features,
            logits,
        },
    ))
}

pub fn forward<F: Scalar>(
    input: &Tensor<F>,
    params: &NetParams<F>,
    cfg: &ModelConfig,
) -> Result<Tensor<F>> {
    forward_cached(input, params, cfg).map(|(p, _)| p)
}

/// Argmax class under the softmax posterior (ties to the lower index).
pub fn predict<F: Scalar>(
    input: &Tensor<F>,
    params: &NetParams<F>,
    cfg: &ModelConfig,
) -> Result<usize> {
    let probs = forward(input, params, cfg)?;
    let mut best = 0;
    for (i, &p) in probs.data().iter().enumerate() {
        if p > probs.data()[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Backpropagates dL/d(logits) through the whole network. Returns
/// parameter gradients (same structure as the parameters) and dL/d(input).
/// Callers fuse the softmax into the loss gradient: for cross entropy the
/// logit gradient is simply w*(p - y).
pub fn backward_from_logits<F: Scalar>(
    params: &NetParams<F>,
    cfg: &ModelConfig,
    cache: &NetCache<F>,
    grad_logits: &Tensor<F>,
) -> Result<(NetParams<F>, Tensor<F>)> {
    same_shape("backward_from_logits grad", grad_logits, &cache.logits)?;
    let mut grads = params.zeros_like();

    let (g_feat, g_hw, g_hb) = dense_backward(&cache.features, &params.head_weights, grad_logits)?;
    grads.head_weights = g_hw;
    grads.head_bias = g_hb;

    let mut g = global_avg_pool_backward(&cache.final_shape, &g_feat)?;
    for i in (0..cfg.units).rev() {
        if cfg.pool_after.contains(&(i + 1)) {
            g = maxpool2d_backward(&cache.unit_outputs[i], &g, POOL_WINDOW)?;
        }
        let (gx, ug) = unit_backward(
            &cache.unit_inputs[i],
            &params.units[i],
            cfg.groups,
            &cache.unit_caches[i],
            &g,
        )?;
        grads.units[i] = ug;
        g = gx;
    }

    let g_pre = relu_backward(&cache.conv1_pre, &g)?;
    grads.conv1_bias = channel_bias_grad(&g_pre)?;
    let (g_input, g_k) =
        conv2d_backward(&cache.input, &params.conv1_kernels, &conv1_spec(), &g_pre)?;
    grads.conv1_kernels = g_k;
    Ok((grads, g_input))
}

fn min_abs<F: Scalar>(t: &Tensor<F>, current: f64) -> f64 {
    t.data()
        .iter()
        .fold(current, |m, &v| m.min(v.as_f64().abs()))
}

fn unit_margin<F: Scalar>(c: &UnitCache<F>, mut m: f64) -> f64 {
    m = min_abs(&c.p_pre, m);
    m = min_abs(&c.q_pre, m);
    m = min_abs(&c.fusion1.z_pre, m);
    m = min_abs(&c.fusion2.z_pre, m);
    m
}

/// Smallest distance to a ReLU kink inside one unit (branch and squeeze
/// pre-activations). Finite-difference checks resample points whose margin
/// is below the probe step.
pub fn unit_kink_margin<F: Scalar>(cache: &UnitCache<F>) -> f64 {
    unit_margin(cache, f64::INFINITY)
}

/// Smallest distance to any nondifferentiable point in a full forward:
/// ReLU pre-activations everywhere plus the |left - right| gap of every
/// max-pool pair (a tie is a kink of the max).
pub fn net_kink_margin<F: Scalar>(cache: &NetCache<F>, cfg: &ModelConfig) -> f64 {
    let mut m = min_abs(&cache.conv1_pre, f64::INFINITY);
    for uc in &cache.unit_caches {
        m = unit_margin(uc, m);
    }
    for &pos in &cfg.pool_after {
        let y = &cache.unit_outputs[pos - 1];
        let (h, w, c) = (y.shape()[0], y.shape()[1], y.shape()[2]);
        let yd = y.data();
        for row in 0..h {
            for x2 in 0..w / 2 {
                let base = (row * w + 2 * x2) * c;
                for j in 0..c {
                    let gap = (yd[base + j] - yd[base + c + j]).as_f64().abs();
                    m = m.min(gap);
                }
            }
        }
    }
    m
}
