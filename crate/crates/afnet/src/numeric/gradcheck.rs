//! Central finite-difference verification of analytic gradients. Runs in
//! f64 only; the training path (f32) shares the same generic code, so a
//! pass here validates both.

/// Perturbation step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative error denominator floor. Coordinates whose gradients are tiny
/// compared to this behave as absolute comparisons, which keeps
/// finite-difference roundoff (~1e-9 for O(1) losses) from dominating the
/// reported error.
pub const FD_DENOM_FLOOR: f64 = 1e-3;

/// Compares the analytic gradient of `loss` at `point` against central
/// finite differences, coordinate by coordinate, and returns the maximum
/// relative error max |a-n| / max(|a|+|n|, floor).
pub fn finite_diff_check<L>(point: &[f64], analytic: &[f64], mut loss: L) -> f64
where
    L: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        point.len(),
        analytic.len(),
        "finite_diff_check: point and gradient lengths differ"
    );
    let mut buf = point.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..point.len() {
        let x = point[i];
        buf[i] = x + FD_STEP;
        let f_plus = loss(&buf);
        buf[i] = x - FD_STEP;
        let f_minus = loss(&buf);
        buf[i] = x;
        let numeric = (f_plus - f_minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(FD_DENOM_FLOOR);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::ops;
    use crate::numeric::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (c_in, c_out) = (5, 4);
        let x = uniform_vec(&mut rng, c_in);
        let w = uniform_vec(&mut rng, c_in * c_out);
        let b = uniform_vec(&mut rng, c_out);
        let proj = uniform_vec(&mut rng, c_out);

        let eval = |xv: &[f64], wv: &[f64], bv: &[f64]| -> f64 {
            let xt = Tensor::from_vec(&[c_in], xv.to_vec()).unwrap();
            let wt = Tensor::from_vec(&[c_in, c_out], wv.to_vec()).unwrap();
            let bt = Tensor::from_vec(&[c_out], bv.to_vec()).unwrap();
            let out = ops::dense(&xt, &wt, Some(&bt)).unwrap();
            out.data().iter().zip(&proj).map(|(o, p)| o * p).sum()
        };

        let xt = Tensor::from_vec(&[c_in], x.clone()).unwrap();
        let wt = Tensor::from_vec(&[c_in, c_out], w.clone()).unwrap();
        let grad_out = Tensor::from_vec(&[c_out], proj.clone()).unwrap();
        let (gx, gw, gb) = ops::dense_backward(&xt, &wt, &grad_out).unwrap();

        let ex = finite_diff_check(&x, gx.data(), |p| eval(p, &w, &b));
        let ew = finite_diff_check(&w, gw.data(), |p| eval(&x, p, &b));
        let eb = finite_diff_check(&b, gb.data(), |p| eval(&x, &w, p));
        assert!(ex < 1e-6, "input grad error {ex}");
        assert!(ew < 1e-6, "weight grad error {ew}");
        assert!(eb < 1e-6, "bias grad error {eb}");
    }

    #[test]
    fn relu_gradients_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // keep every coordinate at least 0.1 from the kink at zero
        let x: Vec<f64> = (0..16)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let proj = uniform_vec(&mut rng, 16);

        let xt = Tensor::from_vec(&[16], x.clone()).unwrap();
        let grad_out = Tensor::from_vec(&[16], proj.clone()).unwrap();
        let gx = ops::relu_backward(&xt, &grad_out).unwrap();

        let err = finite_diff_check(&x, gx.data(), |p| {
            let t = Tensor::from_vec(&[16], p.to_vec()).unwrap();
            ops::relu(&t)
                .data()
                .iter()
                .zip(&proj)
                .map(|(o, r)| o * r)
                .sum()
        });
        assert!(err < 1e-6, "relu grad error {err}");
    }

    #[test]
    fn softmax_gradients_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = uniform_vec(&mut rng, 7);
        let proj = uniform_vec(&mut rng, 7);

        let zt = Tensor::from_vec(&[7], z.clone()).unwrap();
        let p = ops::softmax(&zt).unwrap();
        let grad_out = Tensor::from_vec(&[7], proj.clone()).unwrap();
        let gz = ops::softmax_backward(&p, &grad_out).unwrap();

        let err = finite_diff_check(&z, gz.data(), |pt| {
            let t = Tensor::from_vec(&[7], pt.to_vec()).unwrap();
            let sm = ops::softmax(&t).unwrap();
            sm.data().iter().zip(&proj).map(|(o, r)| o * r).sum()
        });
        assert!(err < 1e-6, "softmax grad error {err}");
    }
}
