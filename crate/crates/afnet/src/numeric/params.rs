use crate::error::{Error, Result};
use crate::numeric::tensor::{Scalar, Tensor};

/// A named, ordered view over a parameter collection. The order is part of
/// the contract: checkpoints, optimizer state, and gradient flattening all
/// rely on it being stable.
pub trait ParamBlocks<F: Scalar> {
    fn blocks(&self) -> Vec<(String, &Tensor<F>)>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut Tensor<F>)>;

    fn value_count(&self) -> usize {
        self.blocks().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Concatenates all blocks into one f64 vector in block order.
pub fn flatten<F: Scalar, P: ParamBlocks<F>>(params: &P) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.value_count());
    for (_, t) in params.blocks() {
        out.extend(t.data().iter().map(|x| x.as_f64()));
    }
    out
}

/// Writes a flat f64 vector back into the blocks, in block order.
pub fn load_flat<F: Scalar, P: ParamBlocks<F>>(params: &mut P, flat: &[f64]) -> Result<()> {
    let expect = params.value_count();
    if flat.len() != expect {
        return Err(Error::shape(format!(
            "load_flat: {} values for {} parameters",
            flat.len(),
            expect
        )));
    }
    let mut offset = 0;
    for (_, t) in params.blocks_mut() {
        let n = t.len();
        for (dst, src) in t.data_mut().iter_mut().zip(&flat[offset..offset + n]) {
            *dst = F::from_f64(*src);
        }
        offset += n;
    }
    Ok(())
}

/// Accumulates `other`'s blocks into `acc` (elementwise add). Shapes and
/// block order must agree; used for fixed-order gradient reduction.
pub fn accumulate<F: Scalar, P: ParamBlocks<F>>(acc: &mut P, other: &P) -> Result<()> {
    let other_blocks = other.blocks();
    let mut acc_blocks = acc.blocks_mut();
    if acc_blocks.len() != other_blocks.len() {
        return Err(Error::shape(format!(
            "accumulate: {} blocks vs {}",
            acc_blocks.len(),
            other_blocks.len()
        )));
    }
    for ((name, dst), (other_name, src)) in acc_blocks.iter_mut().zip(&other_blocks) {
        if name != other_name {
            return Err(Error::shape(format!(
                "accumulate: block order mismatch ({name} vs {other_name})"
            )));
        }
        dst.add_assign(src)
            .map_err(|e| Error::shape(format!("accumulate {name}: {e}")))?;
    }
    Ok(())
}

/// Scales every block by `factor` (e.g. 1/batch for mean gradients).
pub fn scale_blocks<F: Scalar, P: ParamBlocks<F>>(params: &mut P, factor: F) {
    for (_, t) in params.blocks_mut() {
        t.scale(factor);
    }
}
