use crate::error::{Error, Result};
use crate::numeric::params::ParamBlocks;
use crate::numeric::tensor::{Scalar, Tensor};

/// Adam accumulator state. Moment shapes mirror the parameter blocks they
/// were created from; `step` counts completed updates.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub step: u64,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<P: ParamBlocks<F>>(params: &P) -> Self {
        Self::with_hyper(
            params,
            F::from_f64(0.9),
            F::from_f64(0.999),
            F::from_f64(1e-8),
        )
    }

    pub fn with_hyper<P: ParamBlocks<F>>(params: &P, beta1: F, beta2: F, epsilon: F) -> Self {
        let m = params
            .blocks()
            .iter()
            .map(|(_, t)| t.zeros_like())
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            step: 0,
            beta1,
            beta2,
            epsilon,
            m,
            v,
        }
    }
}

/// One bias-corrected Adam update over all parameter blocks. Rejects
/// non-finite gradients, naming the offending block.
pub fn adam_step<F: Scalar, P: ParamBlocks<F>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<F>,
    lr: F,
) -> Result<()> {
    let grad_blocks = grads.blocks();
    let mut param_blocks = params.blocks_mut();
    if param_blocks.len() != state.m.len() || param_blocks.len() != grad_blocks.len() {
        return Err(Error::shape(format!(
            "adam_step: {} param blocks, {} grad blocks, state built for {}",
            param_blocks.len(),
            grad_blocks.len(),
            state.m.len()
        )));
    }
    for ((name, p), (gname, g)) in param_blocks.iter().zip(&grad_blocks) {
        if name != gname {
            return Err(Error::shape(format!(
                "adam_step: block order mismatch ({name} vs {gname})"
            )));
        }
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "adam_step: {name} param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient block {name}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let one = F::one();
    // 1 - beta^t, computed in the working precision so f32 and f64 runs are
    // each internally consistent.
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for (i, (_, p)) in param_blocks.iter_mut().enumerate() {
        let g = grad_blocks[i].1.data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        for j in 0..pd.len() {
            m[j] = state.beta1 * m[j] + (one - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (one - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            pd[j] = pd[j] - lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
