//! Analog message synthesis and the three analog modulators.
//!
//! The message is three fixed-frequency sinusoids with random phases plus
//! low-pass filtered Gaussian noise 10 dB below the sinusoid bed, scaled
//! to unit peak so the AM modulation index has its usual meaning.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::constants::{
    AM_INDEX, HILBERT_TAPS, MESSAGE_FREQS, MESSAGE_NOISE_DB, MESSAGE_NOISE_POLE, WBFM_DEVIATION,
};
use super::pulse::convolve_full;

/// Synthesizes `len` samples of the analog message. Draw order (3 phases,
/// then `len` noise samples) is part of the determinism contract.
pub fn message_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let phases: Vec<f64> = (0..MESSAGE_FREQS.len())
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let mut m = vec![0.0f64; len];
    for (f, phi) in MESSAGE_FREQS.iter().zip(&phases) {
        for (n, s) in m.iter_mut().enumerate() {
            *s += (std::f64::consts::TAU * f * n as f64 + phi).sin();
        }
    }

    // low-pass filtered Gaussian noise, scaled to the target power
    // relative to the sinusoid bed (3 sinusoids at power 1/2 each)
    let mut noise = Vec::with_capacity(len);
    let mut state = 0.0f64;
    for _ in 0..len {
        let e: f64 = StandardNormal.sample(rng);
        state = MESSAGE_NOISE_POLE * state + (1.0 - MESSAGE_NOISE_POLE) * e;
        noise.push(state);
    }
    let noise_power: f64 = noise.iter().map(|x| x * x).sum::<f64>() / len as f64;
    let sinusoid_power = MESSAGE_FREQS.len() as f64 * 0.5;
    let target = sinusoid_power * 10f64.powf(MESSAGE_NOISE_DB / 10.0);
    if noise_power > 0.0 {
        let scale = (target / noise_power).sqrt();
        for (s, e) in m.iter_mut().zip(&noise) {
            *s += scale * e;
        }
    }

    // unit peak
    let peak = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if peak > 0.0 {
        for s in &mut m {
            *s /= peak;
        }
    }
    m
}

/// Wideband FM: phase accumulates 2*pi*deviation*m[n] per sample.
pub fn fm_modulate(message: &[f64]) -> Vec<Complex64> {
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(message.len());
    for &m in message {
        phase += std::f64::consts::TAU * WBFM_DEVIATION * m;
        out.push(Complex64::from_polar(1.0, phase));
    }
    out
}

/// Double-sideband AM with carrier: envelope 1 + index*m at DC.
pub fn am_dsb_modulate(message: &[f64]) -> Vec<Complex64> {
    message
        .iter()
        .map(|&m| Complex64::new(1.0 + AM_INDEX * m, 0.0))
        .collect()
}

/// Single-sideband (suppressed carrier) via the discrete Hilbert
/// transform: the analytic signal m + j*H{m} keeps only the upper
/// sideband. Group delay is compensated so message and quadrature stay
/// aligned; the result has the message's length.
pub fn am_ssb_modulate(message: &[f64]) -> Vec<Complex64> {
    let h = hilbert_taps(HILBERT_TAPS);
    let msg_c: Vec<Complex64> = message.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let full = convolve_full(&msg_c, &h);
    let delay = (HILBERT_TAPS - 1) / 2;
    message
        .iter()
        .enumerate()
        .map(|(n, &m)| Complex64::new(m, full[n + delay].re))
        .collect()
}

/// Type-III FIR Hilbert transformer (odd length, antisymmetric), Hamming
/// windowed: ideal response 2/(pi*k) at odd offsets k from the center.
fn hilbert_taps(len: usize) -> Vec<f64> {
    assert!(len % 2 == 1, "hilbert length must be odd");
    let mid = (len - 1) / 2;
    let mut taps = vec![0.0f64; len];
    for (i, t) in taps.iter_mut().enumerate() {
        let k = i as i64 - mid as i64;
        if k % 2 != 0 {
            let ideal = 2.0 / (std::f64::consts::PI * k as f64);
            let w = 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (len - 1) as f64).cos();
            *t = ideal * w;
        }
    }
    taps
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn message_is_deterministic_and_unit_peak() {
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = message_signal(&mut r1, 512);
        let b = message_signal(&mut r2, 512);
        assert_eq!(a, b);
        let peak = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        assert!((peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fm_has_constant_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = message_signal(&mut rng, 256);
        let s = fm_modulate(&m);
        for c in &s {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn am_dsb_envelope_tracks_message() {
        let m = vec![0.0, 1.0, -1.0];
        let s = am_dsb_modulate(&m);
        assert_eq!(s[0].re, 1.0);
        assert_eq!(s[1].re, 1.5);
        assert_eq!(s[2].re, 0.5);
        assert!(s.iter().all(|c| c.im == 0.0));
    }

    #[test]
    fn ssb_suppresses_the_negative_sideband_of_a_tone() {
        // a pure tone at f: analytic signal should rotate one way only;
        // measure by correlating with e^{+j2pift} vs e^{-j2pift}
        let f = 0.05;
        let n = 1024;
        let tone: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * f * i as f64).sin())
            .collect();
        let s = am_ssb_modulate(&tone);
        // skip the filter edges
        let core = &s[100..n - 100];
        let mut pos = Complex64::new(0.0, 0.0);
        let mut neg = Complex64::new(0.0, 0.0);
        for (i, c) in core.iter().enumerate() {
            let idx = (i + 100) as f64;
            let w = Complex64::from_polar(1.0, std::f64::consts::TAU * f * idx);
            pos += c * w.conj();
            neg += c * w;
        }
        let ratio = neg.norm() / pos.norm();
        assert!(ratio < 0.05, "sideband leakage ratio {ratio}");
    }

    #[test]
    fn hilbert_taps_are_antisymmetric() {
        let h = hilbert_taps(HILBERT_TAPS);
        let mid = (HILBERT_TAPS - 1) / 2;
        assert_eq!(h[mid], 0.0);
        for k in 0..mid {
            assert!((h[mid - k - 1] + h[mid + k + 1]).abs() < 1e-15);
        }
    }
}
