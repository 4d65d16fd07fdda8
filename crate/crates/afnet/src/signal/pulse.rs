//! Pulse shaping: root-raised-cosine and Gaussian filters.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Root-raised-cosine impulse response, sampled at `sps` samples per
/// symbol over `span` symbols (length span*sps + 1, symmetric), with taps
/// normalized to unit energy.
pub fn rrc_taps(sps: usize, rolloff: f64, span: usize) -> Result<Vec<f64>> {
    if sps < 2 {
        return Err(Error::invalid(format!("rrc: sps must be >= 2, got {sps}")));
    }
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::invalid(format!(
            "rrc: rolloff must be in (0, 1], got {rolloff}"
        )));
    }
    if span == 0 {
        return Err(Error::invalid("rrc: span must be >= 1".to_string()));
    }
    let b = rolloff;
    let n = span * sps + 1;
    let half = (n - 1) as f64 / 2.0;
    let mut taps = Vec::with_capacity(n);
    for i in 0..n {
        // t in symbol periods
        let t = (i as f64 - half) / sps as f64;
        taps.push(rrc_impulse(t, b));
    }
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = 1.0 / energy.sqrt();
    for h in &mut taps {
        *h *= scale;
    }
    Ok(taps)
}

/// The closed-form RRC impulse at time t (symbol periods), with the two
/// removable singularities (t = 0 and 4*b*|t| = 1) handled explicitly.
fn rrc_impulse(t: f64, b: f64) -> f64 {
    use std::f64::consts::PI;
    let eps = 1e-9;
    if t.abs() < eps {
        return 1.0 - b + 4.0 * b / PI;
    }
    let four_bt = 4.0 * b * t;
    if (four_bt.abs() - 1.0).abs() < eps {
        let x = PI / (4.0 * b);
        return (b / 2.0f64.sqrt()) * ((1.0 + 2.0 / PI) * x.sin() + (1.0 - 2.0 / PI) * x.cos());
    }
    let num = (PI * t * (1.0 - b)).sin() + four_bt * (PI * t * (1.0 + b)).cos();
    let den = PI * t * (1.0 - four_bt * four_bt);
    num / den
}

/// Upsamples by inserting sps-1 zeros between consecutive symbols (no
/// trailing zeros), so a single symbol stays a single impulse.
pub fn upsample_zero_stuffed(symbols: &[Complex64], sps: usize) -> Vec<Complex64> {
    if symbols.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); (symbols.len() - 1) * sps + 1];
    for (k, &s) in symbols.iter().enumerate() {
        out[k * sps] = s;
    }
    out
}

/// Full (non-truncated) convolution of a complex sequence with real taps.
pub fn convolve_full(signal: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    if signal.is_empty() || taps.is_empty() {
        return Vec::new();
    }
    let n = signal.len() + taps.len() - 1;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (i, &x) in signal.iter().enumerate() {
        if x.re == 0.0 && x.im == 0.0 {
            continue;
        }
        for (j, &h) in taps.iter().enumerate() {
            out[i + j] += x * h;
        }
    }
    out
}

/// Upsample + RRC-shape a symbol sequence. A single unit symbol yields
/// exactly the (unit-energy) tap sequence.
pub fn rrc_filter(
    symbols: &[Complex64],
    sps: usize,
    rolloff: f64,
    span: usize,
) -> Result<Vec<Complex64>> {
    let taps = rrc_taps(sps, rolloff, span)?;
    let up = upsample_zero_stuffed(symbols, sps);
    Ok(convolve_full(&up, &taps))
}

/// Gaussian frequency-pulse filter for GFSK: samples of a Gaussian with
/// bandwidth-time product `bt`, truncated to `span` symbols, normalized
/// to unit DC gain so filtered NRZ levels keep their +/-1 swing.
pub fn gaussian_taps(bt: f64, sps: usize, span: usize) -> Result<Vec<f64>> {
    if !bt.is_finite() || bt <= 0.0 {
        return Err(Error::invalid(format!(
            "gaussian: bt must be > 0, got {bt}"
        )));
    }
    if sps < 2 || span == 0 {
        return Err(Error::invalid(format!(
            "gaussian: need sps >= 2 and span >= 1, got sps={sps} span={span}"
        )));
    }
    let ln2 = std::f64::consts::LN_2;
    let n = span * sps + 1;
    let half = (n - 1) as f64 / 2.0;
    let alpha = 2.0 * std::f64::consts::PI * std::f64::consts::PI * bt * bt / ln2;
    let mut taps = Vec::with_capacity(n);
    for i in 0..n {
        let t = (i as f64 - half) / sps as f64;
        taps.push((-alpha * t * t).exp());
    }
    let sum: f64 = taps.iter().sum();
    for h in &mut taps {
        *h /= sum;
    }
    Ok(taps)
}
