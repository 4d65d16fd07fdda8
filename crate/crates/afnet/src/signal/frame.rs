//! Per-frame synthesis: one instance seed drives every random draw (bits
//! or message, crop offset, optional silent burst, then noise), so a
//! frame is a pure function of (scheme, snr, seed, config).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::analog::{am_dsb_modulate, am_ssb_modulate, fm_modulate, message_signal};
use super::constants::{
    FSK_INDEX, GFSK_BT, GFSK_SPAN_SYMBOLS, RRC_ROLLOFF, RRC_SPAN_SYMBOLS, SILENT_BURST_PROB,
};
use super::constellation::{bits_per_symbol, map_symbols};
use super::pulse::{convolve_full, gaussian_taps, rrc_filter};
use super::{FrameRecord, GenConfig, ModulationScheme};
use crate::error::{Error, Result};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Instance seed for one frame, mixing the master seed with the scheme's
/// global label index, the SNR value, and the frame index. Depending on
/// values rather than manifest positions keeps a cell's frames identical
/// across differently composed manifests.
pub fn instance_seed(master: u64, scheme: ModulationScheme, snr_db: i8, frame_idx: usize) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ scheme.index() as u64);
    h = splitmix64(h ^ (snr_db as i64 as u64));
    h = splitmix64(h ^ frame_idx as u64);
    h
}

/// Scales the signal so mean(|x|^2) = 1. Phase of every sample is
/// preserved; an all-zero signal is rejected.
pub fn normalize_rms(signal: &mut [Complex64]) -> Result<()> {
    let n = signal.len();
    if n == 0 {
        return Err(Error::invalid("normalize_rms: empty signal".to_string()));
    }
    let power: f64 = signal.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
    if power <= 0.0 {
        return Err(Error::invalid(
            "normalize_rms: all-zero signal has no finite scale".to_string(),
        ));
    }
    let scale = 1.0 / power.sqrt();
    for c in signal {
        *c *= scale;
    }
    Ok(())
}

/// Adds circular complex Gaussian noise of total variance
/// 10^(-snr_db/10), split equally between I and Q. The caller is expected
/// to pass a unit-power signal so snr_db is the resulting SNR.
pub fn add_awgn(signal: &mut [Complex64], snr_db: f64, rng: &mut ChaCha8Rng) {
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let per_component = (sigma2 / 2.0).sqrt();
    for c in signal {
        let ni: f64 = StandardNormal.sample(rng);
        let nq: f64 = StandardNormal.sample(rng);
        *c += Complex64::new(per_component * ni, per_component * nq);
    }
}

/// Continuous-phase FSK of +/-1 symbols: the frequency pulse is the
/// symbol stream held for sps samples (optionally Gaussian-filtered), and
/// each sample advances the phase by pi * h * f[n] / sps, so one symbol
/// of constant +1 advances the carrier by pi*h.
fn cpm_modulate(freq: &[f64], sps: usize, index: f64) -> Vec<Complex64> {
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(freq.len());
    for &f in freq {
        phase += std::f64::consts::PI * index * f / sps as f64;
        out.push(Complex64::from_polar(1.0, phase));
    }
    out
}

fn nrz_hold(bits: &[u8], sps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(bits.len() * sps);
    for &b in bits {
        let level = if b == 0 { 1.0 } else { -1.0 };
        out.extend(std::iter::repeat_n(level, sps));
    }
    out
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen_range(0..2u8)).collect()
}

/// Length margin kept at each end of the shaped waveform so random crops
/// avoid filter ramp-in/ramp-out transients.
fn crop_margin(cfg: &GenConfig) -> usize {
    RRC_SPAN_SYMBOLS * cfg.samples_per_symbol
}

/// Synthesizes the clean (pre-noise) waveform for one seed, long enough
/// to crop a frame away from the edges.
fn clean_waveform(
    scheme: ModulationScheme,
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
) -> Result<Vec<Complex64>> {
    let n = cfg.frame_len;
    let sps = cfg.samples_per_symbol;
    let target_len = 3 * n + 2 * crop_margin(cfg);
    let wave = match scheme {
        m if m.is_linear_digital() => {
            let bps = bits_per_symbol(m)?;
            let n_sym = target_len.div_ceil(sps) + RRC_SPAN_SYMBOLS;
            let bits = random_bits(rng, n_sym * bps);
            let symbols = map_symbols(m, &bits)?;
            rrc_filter(&symbols, sps, RRC_ROLLOFF, RRC_SPAN_SYMBOLS)?
        }
        ModulationScheme::Gfsk => {
            let n_sym = target_len.div_ceil(sps) + GFSK_SPAN_SYMBOLS;
            let bits = random_bits(rng, n_sym);
            let taps = gaussian_taps(GFSK_BT, sps, GFSK_SPAN_SYMBOLS)?;
            let nrz: Vec<Complex64> = nrz_hold(&bits, sps)
                .into_iter()
                .map(|x| Complex64::new(x, 0.0))
                .collect();
            let shaped = convolve_full(&nrz, &taps);
            let freq: Vec<f64> = shaped.iter().map(|c| c.re).collect();
            cpm_modulate(&freq, sps, FSK_INDEX)
        }
        ModulationScheme::Cpfsk => {
            let n_sym = target_len.div_ceil(sps);
            let bits = random_bits(rng, n_sym);
            cpm_modulate(&nrz_hold(&bits, sps), sps, FSK_INDEX)
        }
        ModulationScheme::Wbfm => fm_modulate(&message_signal(rng, target_len)),
        ModulationScheme::AmDsb => am_dsb_modulate(&message_signal(rng, target_len)),
        ModulationScheme::AmSsb => am_ssb_modulate(&message_signal(rng, target_len)),
        _ => unreachable!("all schemes covered"),
    };
    if wave.len() < n + 2 * crop_margin(cfg) {
        return Err(Error::invalid(format!(
            "waveform of {} samples too short for frame length {n}",
            wave.len()
        )));
    }
    Ok(wave)
}

/// Synthesizes one frame and returns (clean, noisy) N-sample signals. The
/// clean frame has unit average power; the noisy frame adds calibrated
/// AWGN on top of it.
pub fn synthesize_frame(
    scheme: ModulationScheme,
    snr_db: i8,
    seed: u64,
    cfg: &GenConfig,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    cfg.validate()?;
    let n = cfg.frame_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let wave = clean_waveform(scheme, &mut rng, cfg)?;
    let margin = crop_margin(cfg);
    let offset = rng.gen_range(margin..=wave.len() - n - margin);
    let mut clean: Vec<Complex64> = wave[offset..offset + n].to_vec();

    if cfg.silent_bursts && rng.gen_bool(SILENT_BURST_PROB) {
        let burst = rng.gen_range(n / 8..=n / 4);
        let start = rng.gen_range(0..=n - burst);
        for c in &mut clean[start..start + burst] {
            *c = Complex64::new(0.0, 0.0);
        }
    }

    normalize_rms(&mut clean)?;
    let mut noisy = clean.clone();
    add_awgn(&mut noisy, snr_db as f64, &mut rng);
    Ok((clean, noisy))
}

/// Synthesizes one frame as a stored record (f32 I row then Q row).
pub fn modulate_frame(
    scheme: ModulationScheme,
    snr_db: i8,
    seed: u64,
    cfg: &GenConfig,
) -> Result<FrameRecord> {
    let (_, noisy) = synthesize_frame(scheme, snr_db, seed, cfg)?;
    let n = noisy.len();
    let mut iq = Vec::with_capacity(2 * n);
    iq.extend(noisy.iter().map(|c| c.re as f32));
    iq.extend(noisy.iter().map(|c| c.im as f32));
    let record = FrameRecord {
        label: scheme,
        snr_db,
        seed,
        iq,
    };
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let mut s = vec![Complex64::new(2.0, 0.0); 8];
        normalize_rms(&mut s).unwrap();
        for c in &s {
            assert!((c.re - 1.0).abs() < 1e-15 && c.im == 0.0);
        }

        let mut unit: Vec<Complex64> = (0..8)
            .map(|i| Complex64::from_polar(1.0, i as f64))
            .collect();
        let before = unit.clone();
        normalize_rms(&mut unit).unwrap();
        for (a, b) in unit.iter().zip(&before) {
            assert!((a - b).norm() < 1e-12);
        }

        let mut mixed = vec![Complex64::new(3.0, 4.0), Complex64::new(-1.0, 2.0)];
        let args_before: Vec<f64> = mixed.iter().map(|c| c.arg()).collect();
        normalize_rms(&mut mixed).unwrap();
        let args_after: Vec<f64> = mixed.iter().map(|c| c.arg()).collect();
        assert_eq!(args_before, args_after);

        let mut zero = vec![Complex64::new(0.0, 0.0); 4];
        assert!(normalize_rms(&mut zero).is_err());
    }

    #[test]
    fn awgn_variance_examples() {
        assert!((10f64.powf(-0.0 / 10.0) - 1.0).abs() < 1e-15);
        assert!((10f64.powf(-10.0 / 10.0) - 0.1).abs() < 1e-15);

        // Monte-Carlo: empirical total noise variance within 1% of target
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let mut signal = vec![Complex64::new(0.0, 0.0); n];
        add_awgn(&mut signal, 6.0, &mut rng);
        let var: f64 = signal.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        let target = 10f64.powf(-0.6);
        assert!(
            (var - target).abs() / target < 0.01,
            "empirical {var} vs {target}"
        );
    }

    #[test]
    fn frames_are_deterministic() {
        let cfg = GenConfig::default();
        for scheme in ModulationScheme::ALL {
            let a = modulate_frame(scheme, 18, 0xABCD, &cfg).unwrap();
            let b = modulate_frame(scheme, 18, 0xABCD, &cfg).unwrap();
            assert_eq!(a, b, "{} frame not reproducible", scheme.name());
            let c = modulate_frame(scheme, 18, 0xABCE, &cfg).unwrap();
            assert_ne!(a.iq, c.iq, "{} ignores its seed", scheme.name());
        }
    }

    #[test]
    fn bpsk_clean_frame_is_real() {
        let cfg = GenConfig::default();
        for seed in [1u64, 2, 3] {
            let (clean, _) = synthesize_frame(ModulationScheme::Bpsk, 0, seed, &cfg).unwrap();
            for c in &clean {
                assert!(c.im.abs() < 1e-9, "imaginary leakage {}", c.im);
            }
        }
    }

    #[test]
    fn clean_frames_have_unit_power() {
        let cfg = GenConfig::default();
        for scheme in ModulationScheme::ALL {
            for seed in [11u64, 12, 13] {
                let (clean, _) = synthesize_frame(scheme, -20, seed, &cfg).unwrap();
                assert_eq!(clean.len(), cfg.frame_len);
                let p: f64 = clean.iter().map(|c| c.norm_sqr()).sum::<f64>() / clean.len() as f64;
                assert!(
                    (p - 1.0).abs() < 1e-6,
                    "{} seed {seed}: clean power {p}",
                    scheme.name()
                );
            }
        }
    }

    #[test]
    fn instance_seed_mixes_all_inputs() {
        let base = instance_seed(1, ModulationScheme::Bpsk, 0, 0);
        assert_ne!(base, instance_seed(2, ModulationScheme::Bpsk, 0, 0));
        assert_ne!(base, instance_seed(1, ModulationScheme::Qpsk, 0, 0));
        assert_ne!(base, instance_seed(1, ModulationScheme::Bpsk, 2, 0));
        assert_ne!(base, instance_seed(1, ModulationScheme::Bpsk, 0, 1));
        // stable across runs: frozen value guards accidental reseeding
        assert_eq!(base, instance_seed(1, ModulationScheme::Bpsk, 0, 0));
    }

    #[test]
    fn silent_bursts_zero_a_span_but_keep_unit_power() {
        let cfg = GenConfig {
            silent_bursts: true,
            ..GenConfig::default()
        };
        let mut saw_burst = false;
        for seed in 0..200u64 {
            let (clean, _) = synthesize_frame(ModulationScheme::Qpsk, 18, seed, &cfg).unwrap();
            let p: f64 = clean.iter().map(|c| c.norm_sqr()).sum::<f64>() / clean.len() as f64;
            assert!((p - 1.0).abs() < 1e-6);
            let zeros = clean.iter().filter(|c| c.norm_sqr() == 0.0).count();
            if zeros >= cfg.frame_len / 8 {
                saw_burst = true;
            }
        }
        assert!(saw_burst, "no silent bursts observed in 200 frames");
    }
}
