//! Linear MMSE equalizer and Gray-mapped QPSK.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::linalg::{solve, CMatrix, CVector};
use crate::Complex64;

/// `x̂ = H^H (H H^H + σ_w² I)^{-1} y`.
pub fn lmmse_equalize(h: &CMatrix, y: &CVector, noise_variance: f64) -> Result<CVector> {
    if !h.is_square() || h.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{}x{} channel with frame {}",
            h.nrows(),
            h.ncols(),
            y.len()
        )));
    }
    if noise_variance.is_nan() || noise_variance < 0.0 {
        return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
    }
    let mut gram = h * h.adjoint();
    for i in 0..gram.nrows() {
        gram[(i, i)] += noise_variance;
    }
    let z = solve(&gram, y)?;
    Ok(h.ad_mul(&z))
}

/// Bit pairs `(b0, b1)` to `((1-2 b0) + j(1-2 b1))/√2`.
pub fn qpsk_map(bits: &[u8]) -> Result<CVector> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("odd bit count {}", bits.len())));
    }
    let level = |b: u8| if b == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Ok(CVector::from_iterator(
        bits.len() / 2,
        bits.chunks(2).map(|c| Complex64::new(level(c[0]), level(c[1]))),
    ))
}

/// Quadrant decision back to bits.
pub fn qpsk_demap(symbols: &CVector) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub equalized: CVector,
    pub bits: Vec<u8>,
    pub bit_errors: usize,
}

impl DetectionResult {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits.len() as f64
    }
}

pub fn count_bit_errors(a: &[u8], b: &[u8]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "bit strings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Equalize, demap and count errors against the transmitted bits.
pub fn detect(h: &CMatrix, y: &CVector, noise_variance: f64, sent_bits: &[u8]) -> Result<DetectionResult> {
    let equalized = lmmse_equalize(h, y, noise_variance)?;
    let bits = qpsk_demap(&equalized);
    let bit_errors = count_bit_errors(&bits, sent_bits)?;
    Ok(DetectionResult {
        equalized,
        bits,
        bit_errors,
    })
}
