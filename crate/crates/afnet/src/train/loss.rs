//! The loss family. All logarithms are natural; probabilities are clamped
//! at [`PROB_FLOOR`] before any log so confident wrong predictions keep
//! finite losses.

use crate::error::{Error, Result};
use crate::numeric::tensor::{Scalar, Tensor};

/// Lower clamp applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_distribution<F: Scalar>(p: &Tensor<F>, what: &str) -> Result<()> {
    if p.rank() != 1 {
        return Err(Error::shape(format!(
            "{what}: expected a probability vector, got shape {:?}",
            p.shape()
        )));
    }
    if p.data().iter().any(|v| !v.is_finite() || *v < F::zero()) {
        return Err(Error::invalid(format!(
            "{what}: probabilities must be finite and non-negative"
        )));
    }
    Ok(())
}

/// One-hot vector of length `classes` with a 1 at `label`.
pub fn one_hot<F: Scalar>(label: usize, classes: usize) -> Result<Tensor<F>> {
    if label >= classes {
        return Err(Error::invalid(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let mut t = Tensor::zeros(&[classes]);
    t.data_mut()[label] = F::one();
    Ok(t)
}

fn one_hot_label<F: Scalar>(y: &Tensor<F>) -> Result<usize> {
    let mut label = None;
    for (i, &v) in y.data().iter().enumerate() {
        if v == F::one() {
            if label.is_some() {
                return Err(Error::invalid("target vector has more than one 1"));
            }
            label = Some(i);
        } else if v != F::zero() {
            return Err(Error::invalid(format!(
                "target vector must be one-hot, found {v} at index {i}"
            )));
        }
    }
    label.ok_or_else(|| Error::invalid("target vector has no 1"))
}

/// Cross entropy −Σ y_i ln p_i against a one-hot target.
pub fn ce_loss<F: Scalar>(p: &Tensor<F>, y: &Tensor<F>) -> Result<F> {
    check_distribution(p, "ce_loss")?;
    if p.shape() != y.shape() {
        return Err(Error::shape(format!(
            "ce_loss: prediction {:?} vs target {:?}",
            p.shape(),
            y.shape()
        )));
    }
    ce_loss_label(p, one_hot_label(y)?)
}

/// Cross entropy with the target given as a class index.
pub fn ce_loss_label<F: Scalar>(p: &Tensor<F>, label: usize) -> Result<F> {
    check_distribution(p, "ce_loss")?;
    if label >= p.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            p.len()
        )));
    }
    let floor = F::from_f64(PROB_FLOOR);
    let pv = p.data()[label];
    let clamped = if pv > floor { pv } else { floor };
    Ok(-clamped.ln())
}

/// Entropy −Σ p_i ln p_i with 0·ln 0 = 0.
pub fn entropy_full<F: Scalar>(p: &Tensor<F>) -> Result<F> {
    check_distribution(p, "entropy_full")?;
    let mut h = F::zero();
    for &v in p.data() {
        if v > F::zero() {
            h = h - v * v.ln();
        }
    }
    Ok(h)
}

/// Indices of the k largest probabilities, ties broken toward the lower
/// class index.
pub fn topk_indices<F: Scalar>(p: &Tensor<F>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| {
        p.data()[b]
            .partial_cmp(&p.data()[a])
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Entropy of the k largest probabilities after renormalizing them to
/// sum to 1.
pub fn topk_entropy<F: Scalar>(p: &Tensor<F>, k: usize) -> Result<F> {
    check_distribution(p, "topk_entropy")?;
    if k < 2 || k > p.len() {
        return Err(Error::invalid(format!(
            "top-k needs 2 <= k <= {}, got {k}",
            p.len()
        )));
    }
    let idx = topk_indices(p, k);
    let total: F = idx.iter().map(|&i| p.data()[i]).sum();
    if total <= F::zero() {
        return Err(Error::invalid(
            "topk_entropy: top-k probabilities sum to zero",
        ));
    }
    let mut h = F::zero();
    for &i in &idx {
        let q = p.data()[i] / total;
        if q > F::zero() {
            h = h - q * q.ln();
        }
    }
    Ok(h)
}

/// Confidence of a prediction: w = 1 − H_topk(p)/ln k, clamped into
/// [0, 1] against float round-off. 1 means the top-k mass sits on one
/// class; 0 means the top k probabilities are equal.
pub fn confidence_weight<F: Scalar>(p: &Tensor<F>, k: usize) -> Result<F> {
    let h = topk_entropy(p, k)?;
    let w = F::one() - h / F::from_usize(k).ln();
    Ok(w.max(F::zero()).min(F::one()))
}

/// Confidence-weighted cross entropy: w · ce_loss(p, y).
pub fn cw_loss<F: Scalar>(p: &Tensor<F>, y: &Tensor<F>, w: F) -> Result<F> {
    if !(w >= F::zero() && w <= F::one()) {
        return Err(Error::invalid(format!(
            "confidence weight must be in [0, 1], got {w}"
        )));
    }
    Ok(w * ce_loss(p, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn ce_oracle_values() {
        let y = one_hot::<f64>(2, 11).unwrap();
        assert_eq!(ce_loss(&y, &y).unwrap(), 0.0);

        let uniform = dist(&[1.0 / 11.0; 11]);
        let l = ce_loss(&uniform, &y).unwrap();
        assert!((l - 11f64.ln()).abs() < 1e-9);

        // strictly decreasing in the true-class probability
        let mut prev = f64::INFINITY;
        for pt in [0.1, 0.3, 0.5, 0.9] {
            let rest = (1.0 - pt) / 2.0;
            let l = ce_loss(&dist(&[rest, pt, rest]), &one_hot(1, 3).unwrap()).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn ce_clamps_zero_probability() {
        let y = one_hot::<f64>(0, 2).unwrap();
        let p = dist(&[0.0, 1.0]);
        let l = ce_loss(&p, &y).unwrap();
        assert!((l - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(l.is_finite());
    }

    #[test]
    fn ce_rejects_non_one_hot() {
        let p = dist(&[0.5, 0.5]);
        assert!(ce_loss(&p, &dist(&[0.5, 0.5])).is_err());
        assert!(ce_loss(&p, &dist(&[1.0, 1.0])).is_err());
        assert!(ce_loss(&p, &dist(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn entropy_oracle_values() {
        assert_eq!(entropy_full(&one_hot::<f64>(3, 7).unwrap()).unwrap(), 0.0);
        let m = 11;
        let h = entropy_full(&dist(&vec![1.0 / m as f64; m])).unwrap();
        assert!((h - (m as f64).ln()).abs() < 1e-12);
    }

    /// The motivating defect of plain entropy: [0.5, 0.25, 0.25] scores
    /// as MORE uncertain than [0.5, 0.5, 0] even though the latter is an
    /// actual coin flip between two classes.
    #[test]
    fn entropy_defect_ordering() {
        let ha = entropy_full(&dist(&[0.5, 0.25, 0.25])).unwrap();
        let hb = entropy_full(&dist(&[0.5, 0.5, 0.0])).unwrap();
        assert!((ha - 1.0397207708399179).abs() < 1e-12);
        assert!((hb - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(ha > hb);
    }

    #[test]
    fn topk_oracle_values() {
        // coin flip survives renormalization
        let h = topk_entropy(&dist(&[0.5, 0.5, 0.0]), 2).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);

        // [0.5, 0.25] -> [2/3, 1/3]
        let h = topk_entropy(&dist(&[0.5, 0.25, 0.25]), 2).unwrap();
        let oracle = -(2.0 / 3.0) * (2.0f64 / 3.0).ln() - (1.0 / 3.0) * (1.0f64 / 3.0).ln();
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.6365141682948128).abs() < 1e-12);

        // top-2 restores the correct uncertainty ordering
        let ha = topk_entropy(&dist(&[0.5, 0.25, 0.25]), 2).unwrap();
        let hb = topk_entropy(&dist(&[0.5, 0.5, 0.0]), 2).unwrap();
        assert!(hb > ha);
    }

    #[test]
    fn topk_tie_takes_lower_index() {
        // classes 1 and 2 tie at 0.2 for the last top-3 slot; index 1 wins
        let p = dist(&[0.3, 0.2, 0.2, 0.3]);
        let with_tie = topk_entropy(&p, 3).unwrap();
        let oracle = {
            let q = [0.3f64 / 0.8, 0.3 / 0.8, 0.2 / 0.8];
            -q.iter().map(|x| x * x.ln()).sum::<f64>()
        };
        assert!((with_tie - oracle).abs() < 1e-12);
        let idx = topk_indices(&p, 3);
        assert_eq!(idx, vec![0, 3, 1]);
    }

    #[test]
    fn confidence_weight_oracle_values() {
        let w = confidence_weight(&one_hot::<f64>(0, 11).unwrap(), 3).unwrap();
        assert_eq!(w, 1.0);

        let w = confidence_weight(&dist(&[0.5, 0.5, 0.0]), 2).unwrap();
        assert!(w.abs() < 1e-12);

        let w = confidence_weight(&dist(&[0.5, 0.25, 0.25, 0.0]), 3).unwrap();
        let oracle = 1.0 - 1.0397207708399179 / 3.0f64.ln();
        assert!((w - oracle).abs() < 1e-12);
        assert!((w - 0.0536).abs() < 1e-3);
    }

    #[test]
    fn cw_loss_scales_ce() {
        let y = one_hot::<f64>(0, 11).unwrap();
        let uniform = dist(&[1.0 / 11.0; 11]);
        assert_eq!(
            cw_loss(&uniform, &y, 1.0).unwrap(),
            ce_loss(&uniform, &y).unwrap()
        );
        assert_eq!(cw_loss(&uniform, &y, 0.0).unwrap(), 0.0);
        let half = cw_loss(&uniform, &y, 0.5).unwrap();
        assert!((half - 0.5 * 11f64.ln()).abs() < 1e-9);
        assert!((half - 1.199).abs() < 1e-3);
        assert!(cw_loss(&uniform, &y, 1.5).is_err());
        assert!(cw_loss(&uniform, &y, -0.1).is_err());
    }
}
