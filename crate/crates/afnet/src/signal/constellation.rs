//! Gray-coded constellations, each normalized to unit average symbol
//! energy. The bit-to-point maps are fixed:
//! - BPSK: bit 0 -> +1, bit 1 -> -1.
//! - QPSK: first bit selects the I sign, second the Q sign (0 -> +), each
//!   component 1/sqrt(2); 00 -> (1+j)/sqrt(2).
//! - 8PSK: the 3-bit word is the binary-reflected Gray code of the phase
//!   slot k, symbol = exp(j*k*pi/4); neighbors differ in one bit.
//! - PAM4: the 2-bit word Gray-codes the level index into {-3,-1,1,3}
//!   scaled by 1/sqrt(5).
//! - QAM16/QAM64: independent Gray-coded PAM on I (first half of the
//!   bits) and Q (second half), scaled by 1/sqrt(10) and 1/sqrt(42).

use num_complex::Complex64;

use super::ModulationScheme;
use crate::error::{Error, Result};

/// Bits per symbol for the linearly modulated digital schemes.
pub fn bits_per_symbol(scheme: ModulationScheme) -> Result<usize> {
    match scheme {
        ModulationScheme::Bpsk => Ok(1),
        ModulationScheme::Qpsk => Ok(2),
        ModulationScheme::Psk8 => Ok(3),
        ModulationScheme::Pam4 => Ok(2),
        ModulationScheme::Qam16 => Ok(4),
        ModulationScheme::Qam64 => Ok(6),
        ModulationScheme::Gfsk | ModulationScheme::Cpfsk => Err(Error::invalid(format!(
            "{} is frequency-modulated; use the FSK path, not a constellation",
            scheme.name()
        ))),
        _ => Err(Error::invalid(format!(
            "{} is analog; use the analog message path",
            scheme.name()
        ))),
    }
}

/// Inverse binary-reflected Gray code (enough bits for our alphabets).
fn gray_inverse(mut v: usize) -> usize {
    v ^= v >> 1;
    v ^= v >> 2;
    v ^= v >> 4;
    v
}

/// Gray-coded PAM amplitude for a `bits`-bit word: the word is the Gray
/// code of the level index; levels are {-(L-1), ..., -1, 1, ..., L-1} in
/// steps of 2, unnormalized.
fn pam_level(word: usize, bits: usize) -> f64 {
    let levels = 1usize << bits;
    let idx = gray_inverse(word);
    (2 * idx) as f64 - (levels - 1) as f64
}

/// The full constellation indexed by bit word (word 0 first). Mean
/// |point|^2 over the table is 1 for every scheme.
pub fn constellation_points(scheme: ModulationScheme) -> Result<Vec<Complex64>> {
    let bps = bits_per_symbol(scheme)?;
    let size = 1usize << bps;
    let mut points = Vec::with_capacity(size);
    for word in 0..size {
        points.push(point_for_word(scheme, word, bps));
    }
    Ok(points)
}

fn point_for_word(scheme: ModulationScheme, word: usize, bps: usize) -> Complex64 {
    match scheme {
        ModulationScheme::Bpsk => Complex64::new(if word == 0 { 1.0 } else { -1.0 }, 0.0),
        ModulationScheme::Qpsk => {
            let i = if word >> 1 == 0 { 1.0 } else { -1.0 };
            let q = if word & 1 == 0 { 1.0 } else { -1.0 };
            Complex64::new(i, q) / 2.0f64.sqrt()
        }
        ModulationScheme::Psk8 => {
            let k = gray_inverse(word);
            let phase = std::f64::consts::FRAC_PI_4 * k as f64;
            Complex64::new(phase.cos(), phase.sin())
        }
        ModulationScheme::Pam4 => Complex64::new(pam_level(word, 2) / 5.0f64.sqrt(), 0.0),
        ModulationScheme::Qam16 | ModulationScheme::Qam64 => {
            let half = bps / 2;
            let mask = (1 << half) - 1;
            let i = pam_level(word >> half, half);
            let q = pam_level(word & mask, half);
            // mean of level^2 over 2^half Gray-PAM levels
            let per_axis: f64 = (0..1usize << half)
                .map(|w| {
                    let l = pam_level(w, half);
                    l * l
                })
                .sum::<f64>()
                / (1 << half) as f64;
            Complex64::new(i, q) / (2.0 * per_axis).sqrt()
        }
        _ => unreachable!("constellation_points validates the scheme"),
    }
}

/// Maps a bit sequence onto constellation symbols, consuming
/// bits-per-symbol bits per symbol, first bit most significant.
pub fn map_symbols(scheme: ModulationScheme, bits: &[u8]) -> Result<Vec<Complex64>> {
    let bps = bits_per_symbol(scheme)?;
    if !bits.len().is_multiple_of(bps) {
        return Err(Error::invalid(format!(
            "bit count {} not divisible by {} bits/symbol for {}",
            bits.len(),
            bps,
            scheme.name()
        )));
    }
    let points = constellation_points(scheme)?;
    let mut out = Vec::with_capacity(bits.len() / bps);
    for chunk in bits.chunks(bps) {
        let mut word = 0usize;
        for &b in chunk {
            debug_assert!(b <= 1);
            word = (word << 1) | b as usize;
        }
        out.push(points[word]);
    }
    Ok(out)
}
