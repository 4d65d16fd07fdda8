//! Layer forward/backward kernels. Conventions:
//! - feature maps are rank-3 `[H, W, C]`, channels contiguous;
//! - conv kernels are rank-4 `[kh, kw, C_in/groups, C_out]`;
//! - stride is fixed at 1; downsampling happens only in max pooling;
//! - every backward takes the forward inputs it needs and returns dense
//!   gradients of the same shapes.

use crate::error::{Error, Result};
use crate::numeric::tensor::{same_shape, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output length equals the input length.
    Same,
    /// No padding; output shrinks by (k-1)*dilation.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub groups: usize,
    pub dilation: (usize, usize),
    /// Padding mode per spatial axis: (height, width).
    pub padding: (Padding, Padding),
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            groups: 1,
            dilation: (1, 1),
            padding: (Padding::Same, Padding::Same),
        }
    }
}

impl ConvSpec {
    pub fn new(groups: usize, dilation: (usize, usize), padding: (Padding, Padding)) -> Self {
        ConvSpec {
            groups,
            dilation,
            padding,
        }
    }
}

/// Returns (pad_before, out_len) for one axis.
fn pad_arithmetic(in_len: usize, eff_kernel: usize, mode: Padding) -> Result<(usize, usize)> {
    match mode {
        Padding::Same => Ok(((eff_kernel - 1) / 2, in_len)),
        Padding::Valid => {
            if in_len < eff_kernel {
                Err(Error::shape(format!(
                    "valid convolution: input length {in_len} shorter than effective kernel {eff_kernel}"
                )))
            } else {
                Ok((0, in_len - eff_kernel + 1))
            }
        }
    }
}

struct ConvDims {
    in_h: usize,
    in_w: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    cpg: usize,
    c_out: usize,
    opg: usize,
    groups: usize,
    dh: usize,
    dw: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_dims<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    spec: &ConvSpec,
) -> Result<ConvDims> {
    if input.rank() != 3 {
        return Err(Error::shape(format!(
            "conv2d input must be rank 3 [H,W,C], got {:?}",
            input.shape()
        )));
    }
    if kernels.rank() != 4 {
        return Err(Error::shape(format!(
            "conv2d kernels must be rank 4 [kh,kw,C_in/groups,C_out], got {:?}",
            kernels.shape()
        )));
    }
    let (in_h, in_w, c_in) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, cpg, c_out) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    let groups = spec.groups;
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::invalid(format!(
            "groups={groups} must divide both C_in={c_in} and C_out={c_out}"
        )));
    }
    if cpg != c_in / groups {
        return Err(Error::shape(format!(
            "kernel in-channel axis {cpg} != C_in/groups = {}",
            c_in / groups
        )));
    }
    let (dh, dw) = spec.dilation;
    if dh == 0 || dw == 0 {
        return Err(Error::invalid(
            "dilation components must be >= 1".to_string(),
        ));
    }
    let eff_h = (kh - 1) * dh + 1;
    let eff_w = (kw - 1) * dw + 1;
    let (pad_top, out_h) = pad_arithmetic(in_h, eff_h, spec.padding.0)?;
    let (pad_left, out_w) = pad_arithmetic(in_w, eff_w, spec.padding.1)?;
    Ok(ConvDims {
        in_h,
        in_w,
        c_in,
        kh,
        kw,
        cpg,
        c_out,
        opg: c_out / groups,
        groups,
        dh,
        dw,
        pad_top,
        pad_left,
        out_h,
        out_w,
    })
}

/// Cross-correlation with groups, dilation, per-axis padding, stride 1.
pub fn conv2d<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    spec: &ConvSpec,
) -> Result<Tensor<F>> {
    let d = conv_dims(input, kernels, spec)?;
    let id = input.data();
    let kd = kernels.data();
    let mut out = Tensor::zeros(&[d.out_h, d.out_w, d.c_out]);
    let od = out.data_mut();
    for oy in 0..d.out_h {
        for ky in 0..d.kh {
            let iy = oy + ky * d.dh;
            if iy < d.pad_top || iy - d.pad_top >= d.in_h {
                continue;
            }
            let iy = iy - d.pad_top;
            for ox in 0..d.out_w {
                let obase = (oy * d.out_w + ox) * d.c_out;
                for kx in 0..d.kw {
                    let ix = ox + kx * d.dw;
                    if ix < d.pad_left || ix - d.pad_left >= d.in_w {
                        continue;
                    }
                    let ix = ix - d.pad_left;
                    let ibase = (iy * d.in_w + ix) * d.c_in;
                    let kbase = (ky * d.kw + kx) * d.cpg;
                    for g in 0..d.groups {
                        let orow = &mut od[obase + g * d.opg..obase + (g + 1) * d.opg];
                        for ci in 0..d.cpg {
                            let x = id[ibase + g * d.cpg + ci];
                            let krow = &kd[(kbase + ci) * d.c_out + g * d.opg..][..d.opg];
                            for (o, k) in orow.iter_mut().zip(krow) {
                                *o = *o + x * *k;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of conv2d w.r.t. (input, kernels) given dL/d(output).
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    spec: &ConvSpec,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let d = conv_dims(input, kernels, spec)?;
    if grad_out.shape() != [d.out_h, d.out_w, d.c_out] {
        return Err(Error::shape(format!(
            "conv2d_backward: grad shape {:?} != output shape {:?}",
            grad_out.shape(),
            [d.out_h, d.out_w, d.c_out]
        )));
    }
    let id = input.data();
    let kd = kernels.data();
    let god = grad_out.data();
    let mut grad_in = input.zeros_like();
    let mut grad_k = kernels.zeros_like();
    let gid = grad_in.data_mut();
    let gkd = grad_k.data_mut();
    for oy in 0..d.out_h {
        for ky in 0..d.kh {
            let iy = oy + ky * d.dh;
            if iy < d.pad_top || iy - d.pad_top >= d.in_h {
                continue;
            }
            let iy = iy - d.pad_top;
            for ox in 0..d.out_w {
                let obase = (oy * d.out_w + ox) * d.c_out;
                for kx in 0..d.kw {
                    let ix = ox + kx * d.dw;
                    if ix < d.pad_left || ix - d.pad_left >= d.in_w {
                        continue;
                    }
                    let ix = ix - d.pad_left;
                    let ibase = (iy * d.in_w + ix) * d.c_in;
                    let kbase = (ky * d.kw + kx) * d.cpg;
                    for g in 0..d.groups {
                        let gorow = &god[obase + g * d.opg..obase + (g + 1) * d.opg];
                        for ci in 0..d.cpg {
                            let x = id[ibase + g * d.cpg + ci];
                            let koff = (kbase + ci) * d.c_out + g * d.opg;
                            let krow = &kd[koff..koff + d.opg];
                            let gkrow = &mut gkd[koff..koff + d.opg];
                            let mut acc = F::zero();
                            for j in 0..d.opg {
                                let go = gorow[j];
                                acc = acc + krow[j] * go;
                                gkrow[j] = gkrow[j] + x * go;
                            }
                            gid[ibase + g * d.cpg + ci] = gid[ibase + g * d.cpg + ci] + acc;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_k))
}

fn check_pool_window(window: (usize, usize)) -> Result<()> {
    if window != (1, 2) {
        return Err(Error::invalid(format!(
            "maxpool2d supports only window (1,2), got {:?}",
            window
        )));
    }
    Ok(())
}

/// Max pooling with window = stride = (1,2).
pub fn maxpool2d<F: Scalar>(input: &Tensor<F>, window: (usize, usize)) -> Result<Tensor<F>> {
    check_pool_window(window)?;
    if input.rank() != 3 {
        return Err(Error::shape(format!(
            "maxpool2d input must be rank 3, got {:?}",
            input.shape()
        )));
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2d needs even width, got {w}; choose frame lengths divisible by 4 so both pooling stages divide evenly"
        )));
    }
    let id = input.data();
    let mut out = Tensor::zeros(&[h, w / 2, c]);
    let od = out.data_mut();
    for y in 0..h {
        for x2 in 0..w / 2 {
            let a = &id[(y * w + 2 * x2) * c..][..c];
            let b = &id[(y * w + 2 * x2 + 1) * c..][..c];
            let o = &mut od[(y * (w / 2) + x2) * c..][..c];
            for j in 0..c {
                o[j] = if a[j] >= b[j] { a[j] } else { b[j] };
            }
        }
    }
    Ok(out)
}

/// Routes each output gradient to the argmax of its window; ties go to the
/// first (left) element.
pub fn maxpool2d_backward<F: Scalar>(
    input: &Tensor<F>,
    grad_out: &Tensor<F>,
    window: (usize, usize),
) -> Result<Tensor<F>> {
    check_pool_window(window)?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if grad_out.shape() != [h, w / 2, c] {
        return Err(Error::shape(format!(
            "maxpool2d_backward: grad shape {:?} != pooled shape {:?}",
            grad_out.shape(),
            [h, w / 2, c]
        )));
    }
    let id = input.data();
    let god = grad_out.data();
    let mut grad_in = input.zeros_like();
    let gid = grad_in.data_mut();
    for y in 0..h {
        for x2 in 0..w / 2 {
            let ia = (y * w + 2 * x2) * c;
            let ib = ia + c;
            let og = &god[(y * (w / 2) + x2) * c..][..c];
            for j in 0..c {
                if id[ia + j] >= id[ib + j] {
                    gid[ia + j] = gid[ia + j] + og[j];
                } else {
                    gid[ib + j] = gid[ib + j] + og[j];
                }
            }
        }
    }
    Ok(grad_in)
}

/// Per-channel spatial mean: [H,W,C] -> [C].
pub fn global_avg_pool<F: Scalar>(input: &Tensor<F>) -> Result<Tensor<F>> {
    if input.rank() != 3 {
        return Err(Error::shape(format!(
            "global_avg_pool input must be rank 3, got {:?}",
            input.shape()
        )));
    }
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let id = input.data();
    let mut acc = vec![F::zero(); c];
    for row in 0..h * w {
        let r = &id[row * c..][..c];
        for j in 0..c {
            acc[j] = acc[j] + r[j];
        }
    }
    let inv = F::one() / F::from_usize(h * w);
    for a in &mut acc {
        *a = *a * inv;
    }
    Tensor::from_vec(&[c], acc)
}

pub fn global_avg_pool_backward<F: Scalar>(
    in_shape: &[usize],
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    if in_shape.len() != 3 {
        return Err(Error::shape(format!(
            "global_avg_pool_backward input shape must be rank 3, got {:?}",
            in_shape
        )));
    }
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    if grad_out.shape() != [c] {
        return Err(Error::shape(format!(
            "global_avg_pool_backward: grad shape {:?} != [{c}]",
            grad_out.shape()
        )));
    }
    let inv = F::one() / F::from_usize(h * w);
    let god = grad_out.data();
    let mut grad_in = Tensor::zeros(in_shape);
    let gid = grad_in.data_mut();
    for row in 0..h * w {
        let r = &mut gid[row * c..][..c];
        for j in 0..c {
            r[j] = god[j] * inv;
        }
    }
    Ok(grad_in)
}

/// Affine map [C_in] x [C_in,C_out] (+ bias) -> [C_out]; bias optional
/// because the fusion modules are bias-free.
pub fn dense<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let (c_in, c_out) = dense_dims(input, weights, bias)?;
    let id = input.data();
    let wd = weights.data();
    let mut out = match bias {
        Some(b) => b.clone(),
        None => Tensor::zeros(&[c_out]),
    };
    let od = out.data_mut();
    for i in 0..c_in {
        let x = id[i];
        let wrow = &wd[i * c_out..][..c_out];
        for (o, wv) in od.iter_mut().zip(wrow) {
            *o = *o + x * *wv;
        }
    }
    Ok(out)
}

fn dense_dims<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<(usize, usize)> {
    if input.rank() != 1 || weights.rank() != 2 {
        return Err(Error::shape(format!(
            "dense expects input rank 1 and weights rank 2, got {:?} and {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    let (c_in, c_out) = (weights.shape()[0], weights.shape()[1]);
    if input.shape()[0] != c_in {
        return Err(Error::shape(format!(
            "dense: input length {} != weight rows {c_in}",
            input.shape()[0]
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(format!(
                "dense: bias shape {:?} != [{c_out}]",
                b.shape()
            )));
        }
    }
    Ok((c_in, c_out))
}

/// Gradients of dense w.r.t. (input, weights, bias).
pub fn dense_backward<F: Scalar>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (c_in, c_out) = dense_dims(input, weights, None)?;
    if grad_out.shape() != [c_out] {
        return Err(Error::shape(format!(
            "dense_backward: grad shape {:?} != [{c_out}]",
            grad_out.shape()
        )));
    }
    let id = input.data();
    let wd = weights.data();
    let god = grad_out.data();
    let mut grad_in = input.zeros_like();
    let mut grad_w = weights.zeros_like();
    {
        let gid = grad_in.data_mut();
        let gwd = grad_w.data_mut();
        for i in 0..c_in {
            let x = id[i];
            let wrow = &wd[i * c_out..][..c_out];
            let gwrow = &mut gwd[i * c_out..][..c_out];
            let mut acc = F::zero();
            for j in 0..c_out {
                acc = acc + wrow[j] * god[j];
                gwrow[j] = gwrow[j] + x * god[j];
            }
            gid[i] = acc;
        }
    }
    Ok((grad_in, grad_w, grad_out.clone()))
}

/// Elementwise max(0, x). The subgradient at exactly 0 is taken as 0.
pub fn relu<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    let mut out = input.clone();
    for x in out.data_mut() {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
    out
}

/// Masks the incoming gradient by (pre-activation > 0).
pub fn relu_backward<F: Scalar>(pre: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("relu_backward", pre, grad_out)?;
    let mut grad = grad_out.clone();
    for (g, p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if *p <= F::zero() {
            *g = F::zero();
        }
    }
    Ok(grad)
}

/// Max-shifted softmax over a rank-1 tensor.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    if logits.rank() != 1 {
        return Err(Error::shape(format!(
            "softmax expects rank 1, got {:?}",
            logits.shape()
        )));
    }
    let d = logits.data();
    let mut m = d[0];
    for &x in d {
        if x > m {
            m = x;
        }
    }
    let mut out = logits.clone();
    let mut sum = F::zero();
    for x in out.data_mut() {
        *x = (*x - m).exp();
        sum = sum + *x;
    }
    let inv = F::one() / sum;
    for x in out.data_mut() {
        *x = *x * inv;
    }
    Ok(out)
}

/// Jacobian-vector product of softmax given its output probabilities:
/// g_i = p_i * (go_i - sum_j go_j p_j).
pub fn softmax_backward<F: Scalar>(probs: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    same_shape("softmax_backward", probs, grad_out)?;
    let p = probs.data();
    let go = grad_out.data();
    let mut dot = F::zero();
    for j in 0..p.len() {
        dot = dot + go[j] * p[j];
    }
    let mut grad = probs.clone();
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        *g = p[i] * (go[i] - dot);
    }
    Ok(grad)
}

/// Adds a per-channel bias to a rank-3 feature map in place.
pub fn add_channel_bias<F: Scalar>(map: &mut Tensor<F>, bias: &Tensor<F>) -> Result<()> {
    if map.rank() != 3 || bias.rank() != 1 || map.shape()[2] != bias.shape()[0] {
        return Err(Error::shape(format!(
            "add_channel_bias: map {:?} vs bias {:?}",
            map.shape(),
            bias.shape()
        )));
    }
    let c = bias.shape()[0];
    let rows = map.len() / c;
    let bd = bias.data().to_vec();
    let md = map.data_mut();
    for row in 0..rows {
        let r = &mut md[row * c..][..c];
        for j in 0..c {
            r[j] = r[j] + bd[j];
        }
    }
    Ok(())
}

/// Gradient of a per-channel bias: sums the map gradient over all spatial
/// positions.
pub fn channel_bias_grad<F: Scalar>(grad_map: &Tensor<F>) -> Result<Tensor<F>> {
    if grad_map.rank() != 3 {
        return Err(Error::shape(format!(
            "channel_bias_grad expects rank 3, got {:?}",
            grad_map.shape()
        )));
    }
    let c = grad_map.shape()[2];
    let rows = grad_map.len() / c;
    let gd = grad_map.data();
    let mut acc = vec![F::zero(); c];
    for row in 0..rows {
        let r = &gd[row * c..][..c];
        for j in 0..c {
            acc[j] = acc[j] + r[j];
        }
    }
    Tensor::from_vec(&[c], acc)
}
