//! Effective path matrices `G_p` for OFDM, OTFS and AFDM frames and a
//! brute-force time-domain simulator used as their reference.
//!
//! All three waveforms share the same time-domain channel: a path with
//! normalized delay `ℓ` and Doppler `f` maps the transmit samples `s` to
//! `r[t] = e^{j2πft/N} s[t-ℓ]`, with the cyclic (or chirp-periodic) prefix
//! making the delay circular. In matrix form that is `Ω^f Π^ℓ` (times the
//! prefix correction `Θ` for AFDM), sandwiched between the waveform's
//! demodulator and modulator.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::SystemParams;
use crate::error::{Error, Result};
use crate::linalg::{cis, diag, kron, CMatrix, CVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveformKind {
    Ofdm,
    Otfs,
    Afdm,
}

impl WaveformKind {
    pub const ALL: [WaveformKind; 3] = [WaveformKind::Ofdm, WaveformKind::Otfs, WaveformKind::Afdm];

    pub fn name(self) -> &'static str {
        match self {
            WaveformKind::Ofdm => "ofdm",
            WaveformKind::Otfs => "otfs",
            WaveformKind::Afdm => "afdm",
        }
    }
}

impl fmt::Display for WaveformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ofdm" => Ok(WaveformKind::Ofdm),
            "otfs" => Ok(WaveformKind::Otfs),
            "afdm" => Ok(WaveformKind::Afdm),
            _ => Err(Error::InvalidArgument(format!("unknown waveform {s:?}"))),
        }
    }
}

/// Normalized `n`-point DFT matrix, `[F]_{m,k} = e^{-j2πmk/n} / √n`.
pub fn dft_matrix(n: usize) -> CMatrix {
    assert!(n >= 1, "DFT size must be positive");
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |m, k| {
        // reduce mk mod n before scaling to keep the phase accurate
        let idx = ((m * k) % n) as f64;
        cis(-2.0 * PI * idx / n as f64) * scale
    })
}

fn check_delay(n: usize, delay: f64) -> Result<()> {
    if delay.is_finite() && delay >= 0.0 && delay < n as f64 {
        Ok(())
    } else {
        Err(Error::DelayOutOfRange { delay, size: n })
    }
}

/// Forward cyclic delay `Π^ℓ`, `(Π^ℓ x)_k = x_{(k-ℓ) mod n}`.
pub fn delay_matrix(n: usize, delay: usize) -> Result<CMatrix> {
    check_delay(n, delay as f64)?;
    let mut m = CMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, (k + n - delay) % n)] = Complex64::new(1.0, 0.0);
    }
    Ok(m)
}

/// Band-limited cyclic delay by a real number of samples,
/// `F^H diag(e^{-j2π m ℓ / n}) F` with frequencies `m` centred on zero.
/// Coincides with [`delay_matrix`] for integer delays.
pub fn fractional_delay_matrix(n: usize, delay: f64) -> Result<CMatrix> {
    check_delay(n, delay)?;
    let f = dft_matrix(n);
    let phases: Vec<Complex64> = (0..n)
        .map(|m| cis(-2.0 * PI * centred_bin(m, n) * delay / n as f64))
        .collect();
    Ok(f.adjoint() * diag(&phases) * f)
}

fn centred_bin(m: usize, n: usize) -> f64 {
    if 2 * m > n {
        m as f64 - n as f64
    } else {
        m as f64
    }
}

/// Doppler phase ramp `Ω^f = diag(e^{j2πfk/n})`, `k = 0..n-1`.
pub fn doppler_matrix(n: usize, doppler: f64) -> CMatrix {
    diag(&doppler_phases(n, doppler))
}

fn doppler_phases(n: usize, doppler: f64) -> Vec<Complex64> {
    (0..n).map(|k| cis(2.0 * PI * doppler * k as f64 / n as f64)).collect()
}

/// Chirp `Λ_c = diag(e^{-j2πck²})`.
pub fn chirp_matrix(n: usize, c: f64) -> CMatrix {
    diag(&chirp_phases(n, c))
}

fn chirp_phases(n: usize, c: f64) -> Vec<Complex64> {
    (0..n).map(|k| cis(-2.0 * PI * c * (k * k) as f64)).collect()
}

/// Chirp-periodic-prefix correction `Θ` for a delay of `ℓ` samples.
pub fn cpp_matrix(n: usize, c1: f64, delay: usize) -> Result<CMatrix> {
    check_delay(n, delay as f64)?;
    Ok(diag(&cpp_phases(n, c1, delay as f64)))
}

/// Entries `e^{-j2πc1(n² + 2n(k-ℓ))}` for `k < ℓ`, one elsewhere. Samples
/// that wrapped into the prefix carry the chirp phase mismatch.
fn cpp_phases(n: usize, c1: f64, delay: f64) -> Vec<Complex64> {
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let k = k as f64;
            if k < delay {
                // split the phase to avoid losing precision on c1 * n²
                let wrapped = (c1 * nf * nf).rem_euclid(1.0) + (2.0 * c1 * nf * (k - delay)).rem_euclid(1.0);
                cis(-2.0 * PI * wrapped)
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect()
}

/// Per-waveform transforms, built once and reused for every path.
#[derive(Debug, Clone)]
pub struct WaveformEngine {
    kind: WaveformKind,
    n: usize,
    c1: f64,
    c2: f64,
    /// Demodulator `A` so that `G = A · Θ Ω Π · A^H`.
    demod: CMatrix,
    dft: CMatrix,
}

impl WaveformEngine {
    pub fn new(kind: WaveformKind, sys: &SystemParams) -> Result<Self> {
        let n = sys.subcarrier_count;
        if n == 0 {
            return Err(Error::InvalidArgument("frame length must be positive".into()));
        }
        let dft = dft_matrix(n);
        let (c1, c2) = (sys.afdm_chirps.c1, sys.afdm_chirps.c2);
        let demod = match kind {
            WaveformKind::Ofdm => dft.clone(),
            WaveformKind::Otfs => {
                let (n1, n2) = sys.otfs_factors;
                if n1 * n2 != n || n1 == 0 {
                    return Err(Error::validation(
                        "system.otfs_factors",
                        format!("{n1} x {n2} != N = {n}"),
                    ));
                }
                kron(&dft_matrix(n1), &CMatrix::identity(n2, n2))
            }
            WaveformKind::Afdm => chirp_matrix(n, c2) * &dft * chirp_matrix(n, c1),
        };
        Ok(WaveformEngine {
            kind,
            n,
            c1,
            c2,
            demod,
            dft,
        })
    }

    pub fn kind(&self) -> WaveformKind {
        self.kind
    }

    pub fn frame_len(&self) -> usize {
        self.n
    }

    /// Modulator `A^H` (symbols to time samples).
    pub fn modulate(&self, x: &CVector) -> CVector {
        self.demod.ad_mul(x)
    }

    pub fn demodulate(&self, r: &CVector) -> CVector {
        &self.demod * r
    }

    /// Diagonal of `Θ Ω^f` for the given path.
    fn phase_diagonal(&self, delay: f64, doppler: f64) -> Vec<Complex64> {
        let mut d = doppler_phases(self.n, doppler);
        if self.kind == WaveformKind::Afdm {
            for (x, t) in d.iter_mut().zip(cpp_phases(self.n, self.c1, delay)) {
                *x *= t;
            }
        }
        d
    }

    fn delay_samples(&self, s: &CVector, delay: f64) -> CVector {
        let n = self.n;
        if delay.fract() == 0.0 {
            let l = delay as usize;
            CVector::from_fn(n, |k, _| s[(k + n - l) % n])
        } else {
            let spec = &self.dft * s;
            let shifted = CVector::from_fn(n, |m, _| {
                spec[m] * cis(-2.0 * PI * centred_bin(m, n) * delay / n as f64)
            });
            self.dft.ad_mul(&shifted)
        }
    }

    /// Time-domain path response `Θ Ω^f Π^ℓ` applied to samples.
    fn time_domain_path(&self, s: &CVector, delay: f64, doppler: f64) -> CVector {
        let shifted = self.delay_samples(s, delay);
        let phases = self.phase_diagonal(delay, doppler);
        CVector::from_fn(self.n, |k, _| shifted[k] * phases[k])
    }

    /// `G_p x` without materializing `G_p`.
    pub fn apply_path(&self, delay: f64, doppler: f64, x: &CVector) -> Result<CVector> {
        check_delay(self.n, delay)?;
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "frame of length {} for N = {}",
                x.len(),
                self.n
            )));
        }
        let s = self.modulate(x);
        Ok(self.demodulate(&self.time_domain_path(&s, delay, doppler)))
    }

    /// Dense `G_p` for a (possibly fractional) delay and real Doppler.
    pub fn path_matrix(&self, delay: f64, doppler: f64) -> Result<EffectivePathMatrix> {
        check_delay(self.n, delay)?;
        let pi = if delay.fract() == 0.0 {
            delay_matrix(self.n, delay as usize)?
        } else {
            fractional_delay_matrix(self.n, delay)?
        };
        let middle = diag(&self.phase_diagonal(delay, doppler)) * pi;
        let matrix = &self.demod * middle * self.demod.adjoint();
        Ok(EffectivePathMatrix {
            matrix,
            delay,
            doppler,
            kind: self.kind,
        })
    }

    pub fn chirps(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePathMatrix {
    pub matrix: CMatrix,
    /// Normalized delay in samples.
    pub delay: f64,
    pub doppler: f64,
    pub kind: WaveformKind,
}

/// `G_p` for one path: AFDM `Λ2 F Λ1 Θ Ω Π Λ1^H F^H Λ2^H`, OFDM `F Ω Π F^H`,
/// OTFS `(F_{N1} ⊗ I) Ω Π (F_{N1}^H ⊗ I)`.
pub fn effective_path_matrix(
    kind: WaveformKind,
    sys: &SystemParams,
    delay: f64,
    doppler: f64,
) -> Result<EffectivePathMatrix> {
    WaveformEngine::new(kind, sys)?.path_matrix(delay, doppler)
}

/// One path of the reference simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePath {
    pub gain: Complex64,
    pub delay: usize,
    pub doppler: f64,
}

/// Brute-force noiseless link with a prefix as long as the largest delay.
pub fn time_domain_oracle(
    kind: WaveformKind,
    sys: &SystemParams,
    paths: &[OraclePath],
    x: &CVector,
) -> Result<CVector> {
    let prefix = paths.iter().map(|p| p.delay).max().unwrap_or(0);
    time_domain_oracle_with_prefix(kind, sys, paths, x, prefix)
}

/// Brute-force noiseless link: modulate by direct summation, prepend a
/// CP (OFDM/OTFS) or CPP (AFDM) of `prefix` samples, run every sample
/// through the multipath channel, strip the prefix and demodulate.
///
/// Deliberately shares no code with the matrix model.
pub fn time_domain_oracle_with_prefix(
    kind: WaveformKind,
    sys: &SystemParams,
    paths: &[OraclePath],
    x: &CVector,
    prefix: usize,
) -> Result<CVector> {
    let n = sys.subcarrier_count;
    if x.len() != n {
        return Err(Error::Dimension(format!("frame of length {} for N = {n}", x.len())));
    }
    let max_delay = paths.iter().map(|p| p.delay).max().unwrap_or(0);
    if prefix < max_delay {
        return Err(Error::PrefixTooShort { prefix, max_delay });
    }
    if prefix >= n {
        return Err(Error::InvalidArgument(format!(
            "prefix {prefix} must be shorter than N = {n}"
        )));
    }
    let nf = n as f64;
    let (c1, c2) = (sys.afdm_chirps.c1, sys.afdm_chirps.c2);
    let (n1, n2) = sys.otfs_factors;
    if kind == WaveformKind::Otfs && n1 * n2 != n {
        return Err(Error::validation(
            "system.otfs_factors",
            format!("{n1} x {n2} != N = {n}"),
        ));
    }

    // modulation
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    match kind {
        WaveformKind::Ofdm => {
            for (t, st) in s.iter_mut().enumerate() {
                for (m, xm) in x.iter().enumerate() {
                    *st += xm * cis(2.0 * PI * ((m * t) % n) as f64 / nf);
                }
                *st /= nf.sqrt();
            }
        }
        WaveformKind::Otfs => {
            for a in 0..n1 {
                for b in 0..n2 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for a2 in 0..n1 {
                        acc += x[a2 * n2 + b] * cis(2.0 * PI * ((a * a2) % n1) as f64 / n1 as f64);
                    }
                    s[a * n2 + b] = acc / (n1 as f64).sqrt();
                }
            }
        }
        WaveformKind::Afdm => {
            for (t, st) in s.iter_mut().enumerate() {
                let tf = t as f64;
                for (m, xm) in x.iter().enumerate() {
                    let mf = m as f64;
                    *st += xm * cis(2.0 * PI * (c1 * tf * tf + c2 * mf * mf + ((m * t) % n) as f64 / nf));
                }
                *st /= nf.sqrt();
            }
        }
    }

    // prefix: sample at time t = -prefix .. N-1 lives at index t + prefix
    let mut tx = Vec::with_capacity(prefix + n);
    for t in -(prefix as i64)..0 {
        let src = s[(t + n as i64) as usize];
        let sample = match kind {
            WaveformKind::Afdm => {
                let tf = t as f64;
                src * cis(-2.0 * PI * c1 * (nf * nf + 2.0 * nf * tf))
            }
            _ => src,
        };
        tx.push(sample);
    }
    tx.extend_from_slice(&s);

    // channel, sample by sample over the whole extended frame
    let mut rx = vec![Complex64::new(0.0, 0.0); prefix + n];
    for (idx, r) in rx.iter_mut().enumerate() {
        let t = idx as f64 - prefix as f64;
        for p in paths {
            if idx >= p.delay {
                *r += p.gain * cis(2.0 * PI * p.doppler * t / nf) * tx[idx - p.delay];
            }
        }
    }
    let r = &rx[prefix..];

    // demodulation
    let mut y = CVector::zeros(n);
    match kind {
        WaveformKind::Ofdm => {
            for m in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, rt) in r.iter().enumerate() {
                    acc += rt * cis(-2.0 * PI * ((m * t) % n) as f64 / nf);
                }
                y[m] = acc / nf.sqrt();
            }
        }
        WaveformKind::Otfs => {
            for a in 0..n1 {
                for b in 0..n2 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for a2 in 0..n1 {
                        acc += r[a2 * n2 + b] * cis(-2.0 * PI * ((a * a2) % n1) as f64 / n1 as f64);
                    }
                    y[a * n2 + b] = acc / (n1 as f64).sqrt();
                }
            }
        }
        WaveformKind::Afdm => {
            for m in 0..n {
                let mf = m as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, rt) in r.iter().enumerate() {
                    let tf = t as f64;
                    acc += rt * cis(-2.0 * PI * (c1 * tf * tf + c2 * mf * mf + ((m * t) % n) as f64 / nf));
                }
                y[m] = acc / nf.sqrt();
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::seeded_rng;
    use crate::linalg::{max_abs_diff, max_abs_diff_vec, unitarity_defect};
    use rand::Rng;

    fn random_frame(n: usize, rng: &mut impl Rng) -> CVector {
        CVector::from_fn(n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn dft_small_cases() {
        let f1 = dft_matrix(1);
        assert!((f1[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let f2 = dft_matrix(2);
        let h = 1.0 / 2f64.sqrt();
        let expected = CMatrix::from_row_slice(2, 2, &[h.into(), h.into(), h.into(), (-h).into()]);
        assert!(max_abs_diff(&f2, &expected) < 1e-15);
        assert!(unitarity_defect(&dft_matrix(8)) < 1e-12);
    }

    #[test]
    fn delay_matrix_definition() {
        assert_eq!(delay_matrix(5, 0).unwrap(), CMatrix::identity(5, 5));
        let x = CVector::from_iterator(4, (0..4).map(|i| Complex64::new(i as f64, 0.0)));
        let y = delay_matrix(4, 1).unwrap() * x;
        let expected: Vec<f64> = vec![3.0, 0.0, 1.0, 2.0];
        for (a, b) in y.iter().zip(expected) {
            assert_eq!(a.re, b);
        }
        assert!(delay_matrix(4, 4).is_err());
    }

    #[test]
    fn delay_powers_compose() {
        for n in 1..=8 {
            for a in 0..n {
                for b in 0..n {
                    let lhs = delay_matrix(n, a).unwrap() * delay_matrix(n, b).unwrap();
                    assert_eq!(lhs, delay_matrix(n, (a + b) % n).unwrap());
                }
            }
        }
    }

    #[test]
    fn fractional_delay_matches_permutation_on_integers() {
        for n in [7, 8, 16] {
            for l in 0..n {
                let frac = fractional_delay_matrix(n, l as f64).unwrap();
                assert!(max_abs_diff(&frac, &delay_matrix(n, l).unwrap()) < 1e-12);
            }
        }
        assert!(unitarity_defect(&fractional_delay_matrix(16, 2.37).unwrap()) < 1e-12);
    }

    #[test]
    fn doppler_and_chirp_matrices() {
        assert!(max_abs_diff(&doppler_matrix(8, 0.0), &CMatrix::identity(8, 8)) < 1e-15);
        assert!(max_abs_diff(&doppler_matrix(8, 8.0), &CMatrix::identity(8, 8)) < 1e-12);
        for d in doppler_matrix(16, 0.3712).diagonal().iter() {
            assert!((d.norm() - 1.0).abs() < 1e-14);
        }
        assert!(max_abs_diff(&chirp_matrix(8, 0.0), &CMatrix::identity(8, 8)) < 1e-15);
        let l = chirp_matrix(16, 0.0123);
        for d in l.diagonal().iter() {
            assert!((d.norm() - 1.0).abs() < 1e-14);
        }
        assert!(max_abs_diff(&(&l * l.adjoint()), &CMatrix::identity(16, 16)) < 1e-14);
    }

    #[test]
    fn cpp_identity_cases() {
        assert!(max_abs_diff(&cpp_matrix(16, 0.37, 0).unwrap(), &CMatrix::identity(16, 16)) < 1e-15);
        for l in 0..16 {
            assert!(max_abs_diff(&cpp_matrix(16, 0.0, l).unwrap(), &CMatrix::identity(16, 16)) < 1e-15);
        }
        assert!(cpp_matrix(16, 0.1, 16).is_err());
    }

    #[test]
    fn cpp_model_matches_oracle() {
        let mut sys = SystemParams::with_frame(16);
        sys.afdm_chirps.c1 = crate::config::default_c1(1.0, 16);
        let mut rng = seeded_rng(5, "cpp");
        let x = random_frame(16, &mut rng);
        let g = effective_path_matrix(WaveformKind::Afdm, &sys, 3.0, 0.4).unwrap();
        let path = OraclePath {
            gain: Complex64::new(1.0, 0.0),
            delay: 3,
            doppler: 0.4,
        };
        let oracle = time_domain_oracle(WaveformKind::Afdm, &sys, &[path], &x).unwrap();
        assert!(max_abs_diff_vec(&(&g.matrix * &x), &oracle) < 1e-8);
        // a non-integer 2N·c1 makes the prefix correction non-trivial
        sys.afdm_chirps.c1 = 0.0123;
        let g = effective_path_matrix(WaveformKind::Afdm, &sys, 3.0, 0.4).unwrap();
        let oracle = time_domain_oracle(WaveformKind::Afdm, &sys, &[path], &x).unwrap();
        assert!(max_abs_diff_vec(&(&g.matrix * &x), &oracle) < 1e-8);
    }

    #[test]
    fn zero_path_is_identity() {
        for n in [8, 12, 16] {
            let sys = SystemParams::with_frame(n);
            for kind in WaveformKind::ALL {
                let g = effective_path_matrix(kind, &sys, 0.0, 0.0).unwrap();
                assert!(max_abs_diff(&g.matrix, &CMatrix::identity(n, n)) < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn ofdm_pure_delay_is_diagonal() {
        let sys = SystemParams::with_frame(16);
        for l in 0..16 {
            let g = effective_path_matrix(WaveformKind::Ofdm, &sys, l as f64, 0.0)
                .unwrap()
                .matrix;
            for i in 0..16 {
                for j in 0..16 {
                    if i == j {
                        assert!((g[(i, j)].norm() - 1.0).abs() < 1e-12);
                    } else {
                        assert!(g[(i, j)].norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn apply_path_matches_dense_matrix() {
        let sys = SystemParams::with_frame(12);
        let mut rng = seeded_rng(9, "apply");
        for kind in WaveformKind::ALL {
            let engine = WaveformEngine::new(kind, &sys).unwrap();
            for _ in 0..10 {
                let l: f64 = rng.random_range(0.0..11.0);
                let l = if rng.random_bool(0.5) { l.floor() } else { l };
                let f = rng.random_range(-3.0..3.0);
                let x = random_frame(12, &mut rng);
                let dense = &engine.path_matrix(l, f).unwrap().matrix * &x;
                assert!(max_abs_diff_vec(&dense, &engine.apply_path(l, f, &x).unwrap()) < 1e-11);
            }
        }
    }

    #[test]
    fn oracle_prefix_checks() {
        let sys = SystemParams::with_frame(8);
        let x = CVector::from_element(8, Complex64::new(1.0, 0.0));
        let p = OraclePath {
            gain: Complex64::new(1.0, 0.0),
            delay: 3,
            doppler: 0.0,
        };
        assert!(matches!(
            time_domain_oracle_with_prefix(WaveformKind::Ofdm, &sys, &[p], &x, 2),
            Err(Error::PrefixTooShort {
                prefix: 2,
                max_delay: 3
            })
        ));
        let unit = OraclePath {
            gain: Complex64::new(1.0, 0.0),
            delay: 0,
            doppler: 0.0,
        };
        for kind in WaveformKind::ALL {
            let y = time_domain_oracle(kind, &sys, &[unit], &x).unwrap();
            assert!(max_abs_diff_vec(&y, &x) < 1e-12);
        }
    }

    #[test]
    fn otfs_requires_factorization() {
        let mut sys = SystemParams::with_frame(12);
        sys.otfs_factors = (5, 2);
        assert!(effective_path_matrix(WaveformKind::Otfs, &sys, 0.0, 0.0).is_err());
        assert!(effective_path_matrix(WaveformKind::Ofdm, &sys, 0.0, 0.0).is_ok());
    }

    #[test]
    fn waveform_names_parse() {
        for k in WaveformKind::ALL {
            assert_eq!(k.name().parse::<WaveformKind>().unwrap(), k);
        }
        assert!("fmcw".parse::<WaveformKind>().is_err());
    }
}
