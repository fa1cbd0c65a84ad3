//! Delay-Doppler dictionary and Bernoulli-Gaussian PDA sparse recovery.
//!
//! The received frame is modelled as `y = E h + w` where column `p̌ = k̄ D_ν + d̄`
//! of `E` is the known frame pushed through the path matrix of grid point
//! `(τ_k̄, ν_d̄)`. The estimator runs soft interference cancellation against
//! one shared covariance `Σ`, denoises each belief with a Bernoulli-Gaussian
//! prior whose mean and variance are the previous iterates, then damps.

use serde::{Deserialize, Serialize};

use crate::config::{physical_from_delay_doppler, SystemParams, TargetTruth};
use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, CMatrix, CVector};
use crate::waveform::WaveformEngine;
use crate::{Complex64, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `K_τ`.
    pub delay_bins: usize,
    /// `D_ν`.
    pub doppler_bins: usize,
    pub tau_max_s: f64,
    pub nu_max_hz: f64,
    /// Snap scenario targets onto grid points.
    pub on_grid: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            delay_bins: 32,
            doppler_bins: 32,
            tau_max_s: 0.5e-6,
            nu_max_hz: 6e3,
            on_grid: false,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.delay_bins < 2 {
            return Err(Error::validation("grid.delay_bins", "must be at least 2"));
        }
        if self.doppler_bins < 2 {
            return Err(Error::validation("grid.doppler_bins", "must be at least 2"));
        }
        if !(self.tau_max_s.is_finite() && self.tau_max_s > 0.0) {
            return Err(Error::validation("grid.tau_max_s", "must be positive"));
        }
        if !(self.nu_max_hz.is_finite() && self.nu_max_hz > 0.0) {
            return Err(Error::validation("grid.nu_max_hz", "must be positive"));
        }
        Ok(())
    }

    /// `K_τ D_ν`.
    pub fn size(&self) -> usize {
        self.delay_bins * self.doppler_bins
    }

    pub fn delay_step(&self) -> f64 {
        self.tau_max_s / (self.delay_bins - 1) as f64
    }

    pub fn doppler_step(&self) -> f64 {
        2.0 * self.nu_max_hz / (self.doppler_bins - 1) as f64
    }

    /// `τ_k̄` in seconds.
    pub fn delay_of(&self, k: usize) -> f64 {
        k as f64 * self.delay_step()
    }

    /// `ν_d̄` in Hz.
    pub fn doppler_of(&self, d: usize) -> f64 {
        -self.nu_max_hz + d as f64 * self.doppler_step()
    }

    /// `p̌ = k̄ D_ν + d̄`.
    pub fn index(&self, k: usize, d: usize) -> usize {
        k * self.doppler_bins + d
    }

    /// `(k̄, d̄)` of column `p̌`.
    pub fn bins(&self, index: usize) -> (usize, usize) {
        (index / self.doppler_bins, index % self.doppler_bins)
    }

    /// `(τ, ν)` of column `p̌`.
    pub fn point(&self, index: usize) -> (f64, f64) {
        let (k, d) = self.bins(index);
        (self.delay_of(k), self.doppler_of(d))
    }

    /// Normalized `(ℓ, f)` of column `p̌`.
    pub fn normalized(&self, index: usize, sys: &SystemParams) -> (f64, f64) {
        let (tau, nu) = self.point(index);
        let fs = sys.sampling_rate_hz;
        (tau * fs, sys.subcarrier_count as f64 * nu / fs)
    }

    /// Column index nearest to `(τ, ν)`, clamped to the grid.
    pub fn nearest_index(&self, tau_s: f64, nu_hz: f64) -> usize {
        let k = (tau_s / self.delay_step())
            .round()
            .clamp(0.0, (self.delay_bins - 1) as f64) as usize;
        let d = ((nu_hz + self.nu_max_hz) / self.doppler_step())
            .round()
            .clamp(0.0, (self.doppler_bins - 1) as f64) as usize;
        self.index(k, d)
    }

    /// The target moved to its nearest grid point; angles and gain kept.
    pub fn snap_target(&self, truth: &TargetTruth, sys: &SystemParams) -> TargetTruth {
        let (tau, nu) = self.point(self.nearest_index(truth.delay_s(), truth.doppler_hz(sys)));
        let (range_m, velocity_mps) = physical_from_delay_doppler(tau, nu, sys);
        TargetTruth {
            range_m,
            velocity_mps,
            ..truth.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct DelayDopplerDictionary {
    pub grid: GridSpec,
    /// `E`, one column per grid point.
    pub matrix: CMatrix,
}

impl DelayDopplerDictionary {
    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }
}

/// `e_{k̄,d̄} = G_{k̄,d̄} x` for every grid point.
pub fn build_dictionary(
    grid: &GridSpec,
    sys: &SystemParams,
    engine: &WaveformEngine,
    x: &CVector,
) -> Result<DelayDopplerDictionary> {
    grid.validate()?;
    if x.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return Err(Error::InvalidArgument("known frame is all zero".into()));
    }
    let mut matrix = CMatrix::zeros(x.len(), grid.size());
    for p in 0..grid.size() {
        let (l, f) = grid.normalized(p, sys);
        matrix.set_column(p, &engine.apply_path(l, f, x)?);
    }
    Ok(DelayDopplerDictionary {
        grid: grid.clone(),
        matrix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdaConfig {
    /// `i_max`.
    pub max_iterations: usize,
    /// `β̃_h`.
    pub damping: f64,
    /// `σ_w²`.
    pub noise_variance: f64,
    /// `P̂`.
    pub assumed_paths: usize,
}

impl Default for PdaConfig {
    fn default() -> Self {
        PdaConfig {
            max_iterations: 50,
            damping: 0.5,
            noise_variance: 1e-2,
            assumed_paths: 2,
        }
    }
}

impl PdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::validation("pda.max_iterations", "must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::validation("pda.damping", "must lie in (0, 1]"));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(Error::validation("pda.noise_variance", "must be positive"));
        }
        if self.assumed_paths == 0 {
            return Err(Error::validation("pda.assumed_paths", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannelEstimate {
    /// `ĥ`.
    pub mean: CVector,
    /// `σ̂²`.
    pub variance: Vec<f64>,
    /// `κ̂`.
    pub support: Vec<f64>,
    /// Prior sparsity `κ`.
    pub kappa: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `ĥ = 0`, `σ̂² = 1/(K_τ D_ν)`, `κ = P̂/(K_τ D_ν)`.
pub fn pda_init(config: &PdaConfig, grid: &GridSpec) -> SparseChannelEstimate {
    let size = grid.size();
    let sigma_h = 1.0 / size as f64;
    let kappa = config.assumed_paths as f64 / size as f64;
    SparseChannelEstimate {
        mean: CVector::zeros(size),
        variance: vec![sigma_h; size],
        support: vec![kappa; size],
        kappa,
        iterations: 0,
        converged: false,
    }
}

/// Posterior support probability `κ̂ = (r · e^a · (1-κ)/κ + 1)^{-1}` with
/// variance ratio `r = (σ̃² + σ̂²)/σ̃²` and exponent `a`, evaluated as a
/// logistic of the log odds so that it stays in `[0, 1]` for any finite `a`.
pub fn support_probability(kappa: f64, variance_ratio: f64, exponent: f64) -> f64 {
    let log_odds = ((1.0 - kappa) / kappa).ln() + variance_ratio.ln() + exponent;
    if log_odds >= 0.0 {
        let e = (-log_odds).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + log_odds.exp())
    }
}

/// `κ̂` from a belief `(h̃, σ̃²)` and prior `(ĥ, σ̂²)`.
pub fn support_from_belief(kappa: f64, belief: Complex64, belief_var: f64, prior: Complex64, prior_var: f64) -> f64 {
    let total = belief_var + prior_var;
    let exponent = -belief.norm_sqr() / belief_var + (belief - prior).norm_sqr() / total;
    support_probability(kappa, total / belief_var, exponent)
}

/// Product-of-Gaussians mean `(σ̂² h̃ + σ̃² ĥ)/(σ̃² + σ̂²)`.
pub fn combined_mean(belief: Complex64, belief_var: f64, prior: Complex64, prior_var: f64) -> Complex64 {
    (belief * prior_var + prior * belief_var) / (belief_var + prior_var)
}

/// Product-of-Gaussians variance `σ̂² σ̃² / (σ̃² + σ̂²)`.
pub fn harmonic_variance(belief_var: f64, prior_var: f64) -> f64 {
    prior_var * belief_var / (belief_var + prior_var)
}

/// Damped soft replica and MSE:
/// `ĥ = β κ̂ h + (1-β) ĥ_old`,
/// `σ̂² = β[(1-κ̂) κ̂ |h|² + κ̂ σ²] + (1-β) σ̂²_old`.
pub fn damp(
    damping: f64,
    support: f64,
    mean: Complex64,
    variance: f64,
    old_mean: Complex64,
    old_variance: f64,
) -> (Complex64, f64) {
    let h = mean * (damping * support) + old_mean * (1.0 - damping);
    let v =
        damping * ((1.0 - support) * support * mean.norm_sqr() + support * variance) + (1.0 - damping) * old_variance;
    (h, v)
}

/// `Σ = Σ_p̌ σ̂²_p̌ e_p̌ e_p̌^H + σ_w² I`.
pub fn common_covariance(e: &CMatrix, variance: &[f64], noise_variance: f64) -> CMatrix {
    let mut scaled = e.clone();
    for (mut col, v) in scaled.column_iter_mut().zip(variance) {
        col.scale_mut(v.sqrt());
    }
    let mut sigma = &scaled * scaled.adjoint();
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += noise_variance;
    }
    sigma
}

/// Extrinsic beliefs `(h̃, σ̃²)` of every column under soft interference
/// cancellation against the shared covariance.
pub fn beliefs(
    state: &SparseChannelEstimate,
    e: &CMatrix,
    y: &CVector,
    noise_variance: f64,
) -> Result<(CVector, Vec<f64>)> {
    let sigma_inv = hpd_inverse(&common_covariance(e, &state.variance, noise_variance))?;
    let z = &sigma_inv * e;
    let residual = y - e * &state.mean;
    let projected = z.ad_mul(&residual);
    let mut means = CVector::zeros(e.ncols());
    let mut vars = vec![0.0; e.ncols()];
    for p in 0..e.ncols() {
        let eta = e.column(p).dotc(&z.column(p)).re;
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::Numerical(format!("non-positive normalizer {eta} at column {p}")));
        }
        // e^H Σ^{-1} (r + e ĥ) / η = e^H Σ^{-1} r / η + ĥ
        means[p] = projected[p] / eta + state.mean[p];
        vars[p] = (1.0 / eta - state.variance[p]).max(state.variance[p] * f64::EPSILON);
    }
    Ok((means, vars))
}

pub fn pda_iteration(
    state: &SparseChannelEstimate,
    e: &CMatrix,
    y: &CVector,
    config: &PdaConfig,
) -> Result<SparseChannelEstimate> {
    if e.nrows() != y.len() || e.ncols() != state.mean.len() {
        return Err(Error::Dimension(format!(
            "dictionary {}x{} with frame {} and state {}",
            e.nrows(),
            e.ncols(),
            y.len(),
            state.mean.len()
        )));
    }
    if config.noise_variance.is_nan() || config.noise_variance <= 0.0 {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    let (tilde_h, tilde_v) = beliefs(state, e, y, config.noise_variance)?;
    let mut next = state.clone();
    for p in 0..e.ncols() {
        let (prior, prior_var) = (state.mean[p], state.variance[p]);
        let kappa_hat = support_from_belief(state.kappa, tilde_h[p], tilde_v[p], prior, prior_var);
        let mean = combined_mean(tilde_h[p], tilde_v[p], prior, prior_var);
        let var = harmonic_variance(tilde_v[p], prior_var);
        let (h, v) = damp(config.damping, kappa_hat, mean, var, prior, prior_var);
        next.mean[p] = h;
        next.variance[p] = v.max(f64::MIN_POSITIVE);
        next.support[p] = kappa_hat;
    }
    next.iterations = state.iterations + 1;
    Ok(next)
}

/// Runs up to `i_max` iterations, stopping once no mean moves by more than
/// `1e-8`.
pub fn run_pda(dictionary: &DelayDopplerDictionary, y: &CVector, config: &PdaConfig) -> Result<SparseChannelEstimate> {
    config.validate()?;
    let mut state = pda_init(config, &dictionary.grid);
    for _ in 0..config.max_iterations {
        let next = pda_iteration(&state, &dictionary.matrix, y, config)?;
        let change = next
            .mean
            .iter()
            .zip(state.mean.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        state = next;
        if change < 1e-8 {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    pub index: usize,
    pub tau_s: f64,
    pub nu_hz: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub gain: Complex64,
    pub support: f64,
}

impl ParameterEstimate {
    pub fn score(&self) -> f64 {
        self.gain.norm() * self.support
    }
}

/// The `P̂` columns with the largest `|ĥ| κ̂`, best first.
pub fn extract_parameters(
    state: &SparseChannelEstimate,
    grid: &GridSpec,
    sys: &SystemParams,
    paths: usize,
) -> Result<Vec<ParameterEstimate>> {
    if paths == 0 {
        return Err(Error::InvalidArgument("at least one path must be extracted".into()));
    }
    if paths > grid.size() || state.mean.len() != grid.size() {
        return Err(Error::InvalidArgument(format!(
            "{paths} paths from a grid of {}",
            grid.size()
        )));
    }
    let mut order: Vec<usize> = (0..grid.size()).collect();
    let score = |p: usize| state.mean[p].norm() * state.support[p];
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(paths)
        .map(|p| {
            let (tau_s, nu_hz) = grid.point(p);
            let (range_m, velocity_mps) = physical_from_delay_doppler(tau_s, nu_hz, sys);
            ParameterEstimate {
                index: p,
                tau_s,
                nu_hz,
                range_m,
                velocity_mps,
                gain: state.mean[p],
                support: state.support[p],
            }
        })
        .collect())
}

/// `|e_p̌^H y| / ‖e_p̌‖²` for every column.
pub fn matched_filter_oracle(e: &CMatrix, y: &CVector) -> Vec<f64> {
    e.column_iter()
        .map(|c| {
            let energy = c.norm_squared();
            if energy == 0.0 {
                0.0
            } else {
                c.dotc(y).norm() / energy
            }
        })
        .collect()
}

/// Per-target range and velocity RMSE after greedy nearest-neighbour
/// pairing in `(τ/τ_max, ν/ν_max)`.
pub fn estimation_rmse(
    estimates: &[(f64, f64)],
    truth: &[TargetTruth],
    grid: &GridSpec,
    sys: &SystemParams,
) -> Result<(f64, f64)> {
    if estimates.is_empty() || truth.is_empty() {
        return Err(Error::InvalidArgument("empty estimate or truth list".into()));
    }
    let to_norm = |range: f64, velocity: f64| {
        let tau = range / SPEED_OF_LIGHT;
        let nu = velocity * sys.carrier_frequency_hz / SPEED_OF_LIGHT;
        (tau / grid.tau_max_s, nu / grid.nu_max_hz)
    };
    let mut pairs = Vec::with_capacity(estimates.len() * truth.len());
    for (i, &(r, v)) in estimates.iter().enumerate() {
        let a = to_norm(r, v);
        for (j, t) in truth.iter().enumerate() {
            let b = to_norm(t.range_m, t.velocity_mps);
            pairs.push(((a.0 - b.0).hypot(a.1 - b.1), i, j));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let (mut used_e, mut used_t) = (vec![false; estimates.len()], vec![false; truth.len()]);
    let (mut se_r, mut se_v, mut count) = (0.0, 0.0, 0usize);
    for (_, i, j) in pairs {
        if used_e[i] || used_t[j] {
            continue;
        }
        used_e[i] = true;
        used_t[j] = true;
        se_r += (estimates[i].0 - truth[j].range_m).powi(2);
        se_v += (estimates[i].1 - truth[j].velocity_mps).powi(2);
        count += 1;
    }
    Ok(((se_r / count as f64).sqrt(), (se_v / count as f64).sqrt()))
}

/// RMSE of truth snapped to its nearest grid point.
pub fn resolution_floor(grid: &GridSpec, truth: &[TargetTruth], sys: &SystemParams) -> Result<(f64, f64)> {
    let snapped: Vec<(f64, f64)> = truth
        .iter()
        .map(|t| {
            let s = grid.snap_target(t, sys);
            (s.range_m, s.velocity_mps)
        })
        .collect();
    estimation_rmse(&snapped, truth, grid, sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::seeded_rng;
    use crate::metasurface::complex_normal;
    use crate::waveform::WaveformKind;

    fn small_grid() -> GridSpec {
        GridSpec {
            delay_bins: 4,
            doppler_bins: 5,
            tau_max_s: 0.15e-6,
            nu_max_hz: 6e3,
            on_grid: true,
        }
    }

    #[test]
    fn index_bijection() {
        let g = small_grid();
        for p in 0..g.size() {
            let (k, d) = g.bins(p);
            assert_eq!(g.index(k, d), p);
            let (tau, nu) = g.point(p);
            assert_eq!(g.nearest_index(tau, nu), p);
        }
    }

    #[test]
    fn init_values() {
        let g = GridSpec::default();
        let s = pda_init(&PdaConfig::default(), &g);
        assert!((s.kappa - 2.0 / 1024.0).abs() < 1e-15);
        assert!((s.kappa - 0.001953).abs() < 1e-6);
        assert!(s.variance.iter().all(|v| *v == 1.0 / 1024.0));
        assert!(s.mean.iter().all(|h| *h == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn dictionary_columns() {
        let sys = SystemParams::with_frame(16);
        let g = small_grid();
        let mut rng = seeded_rng(3, "dict");
        let x = CVector::from_fn(16, |_, _| complex_normal(&mut rng));
        for kind in WaveformKind::ALL {
            let engine = WaveformEngine::new(kind, &sys).unwrap();
            let d = build_dictionary(&g, &sys, &engine, &x).unwrap();
            assert_eq!(d.columns(), 20);
            for c in d.matrix.column_iter() {
                assert!((c.norm() - x.norm()).abs() < 1e-9);
            }
            // Doppler bin 2 of 5 is ν = 0
            let zero = g.index(0, 2);
            assert_eq!(g.point(zero), (0.0, 0.0));
            assert!((d.matrix.column(zero) - &x).camax() < 1e-12);
        }
    }

    #[test]
    fn dictionary_rejects_oversized_grid() {
        let sys = SystemParams::with_frame(8);
        let g = GridSpec {
            tau_max_s: 1e-6,
            ..small_grid()
        };
        let engine = WaveformEngine::new(WaveformKind::Ofdm, &sys).unwrap();
        let x = CVector::from_element(8, Complex64::new(1.0, 0.0));
        assert!(build_dictionary(&g, &sys, &engine, &x).is_err());
        assert!(build_dictionary(&small_grid(), &sys, &engine, &CVector::zeros(8)).is_err());
    }

    #[test]
    fn support_probability_extremes() {
        for a in [-1e6, -1e3, -1.0, 0.0, 1.0, 1e3, 1e6] {
            let k = support_probability(0.01, 3.0, a);
            assert!((0.0..=1.0).contains(&k), "{a}: {k}");
        }
        assert_eq!(support_probability(0.01, 3.0, 1e6), 0.0);
        assert_eq!(support_probability(0.01, 3.0, -1e6), 1.0);
    }

    #[test]
    fn support_probability_matches_raw_form() {
        let mut rng = seeded_rng(4, "kappa");
        for _ in 0..200 {
            let (h, hb) = (complex_normal(&mut rng), complex_normal(&mut rng) * 0.3);
            let (vt, vb) = (
                0.5 + rand::Rng::random::<f64>(&mut rng),
                0.2 + rand::Rng::random::<f64>(&mut rng),
            );
            let kappa = 0.1;
            let raw = 1.0
                / ((1.0 - kappa) / kappa * (vt + vb) / vt
                    * (-h.norm_sqr() / vt + (h - hb).norm_sqr() / (vt + vb)).exp()
                    + 1.0);
            assert!((support_from_belief(kappa, h, vt, hb, vb) - raw).abs() < 1e-12);
        }
    }

    #[test]
    fn undamped_update_is_raw_denoiser() {
        let mut rng = seeded_rng(5, "damp");
        for _ in 0..100 {
            let h = complex_normal(&mut rng);
            let old = complex_normal(&mut rng);
            let k: f64 = rand::Rng::random(&mut rng);
            let (m, v) = damp(1.0, k, h, 0.3, old, 0.9);
            assert!((m - h * k).norm() < 1e-12);
            assert!((v - ((1.0 - k) * k * h.norm_sqr() + k * 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_variance_bounds() {
        for (a, b) in [(1.0, 1.0), (1e-6, 3.0), (2.0, 5.0), (1e3, 1e-3)] {
            let h = harmonic_variance(a, b);
            assert!(h > 0.0 && h <= a.min(b) * (1.0 + 1e-9));
            assert!((1.0 / h - (1.0 / a + 1.0 / b)).abs() < 1e-9 / h);
        }
    }

    #[test]
    fn null_signal_stays_null() {
        let sys = SystemParams::with_frame(16);
        let g = small_grid();
        let engine = WaveformEngine::new(WaveformKind::Ofdm, &sys).unwrap();
        let mut rng = seeded_rng(6, "null");
        let x = CVector::from_fn(16, |_, _| complex_normal(&mut rng));
        let d = build_dictionary(&g, &sys, &engine, &x).unwrap();
        let cfg = PdaConfig {
            noise_variance: 0.1,
            ..PdaConfig::default()
        };
        let s = run_pda(&d, &CVector::zeros(16), &cfg).unwrap();
        assert!(s.mean.iter().all(|h| h.norm() < 1e-12));
        assert!(s.support.iter().all(|k| *k <= s.kappa));
    }

    #[test]
    fn single_column_least_squares() {
        let g = GridSpec {
            delay_bins: 2,
            doppler_bins: 2,
            ..small_grid()
        };
        let mut rng = seeded_rng(7, "ls");
        let e = CMatrix::from_fn(12, 1, |_, _| complex_normal(&mut rng));
        let h = Complex64::new(0.7, -0.4);
        let y = e.column(0) * h + CVector::from_fn(12, |_, _| complex_normal(&mut rng) * 1e-3);
        let ls = e.column(0).dotc(&y) / e.column(0).norm_squared();
        let cfg = PdaConfig {
            noise_variance: 1e-8,
            damping: 1.0,
            assumed_paths: 1,
            max_iterations: 200,
        };
        let mut state = pda_init(&cfg, &g);
        state.mean = CVector::zeros(1);
        state.variance = vec![0.25];
        state.support = vec![0.25];
        for _ in 0..200 {
            state = pda_iteration(&state, &e, &y, &cfg).unwrap();
        }
        assert!((state.mean[0] - ls).norm() < 1e-6, "{} vs {ls}", state.mean[0]);
    }

    #[test]
    fn extraction_order() {
        let g = small_grid();
        let sys = SystemParams::with_frame(16);
        let mut s = pda_init(&PdaConfig::default(), &g);
        s.mean[7] = Complex64::new(2.0, 0.0);
        s.support[7] = 1.0;
        let one = extract_parameters(&s, &g, &sys, 1).unwrap();
        assert_eq!(one[0].index, 7);
        assert_eq!((one[0].tau_s, one[0].nu_hz), g.point(7));
        let all = extract_parameters(&s, &g, &sys, g.size()).unwrap();
        assert_eq!(all.len(), g.size());
        assert!(all.windows(2).all(|w| w[0].score() >= w[1].score()));
        assert!(extract_parameters(&s, &g, &sys, g.size() + 1).is_err());
        assert!(extract_parameters(&s, &g, &sys, 0).is_err());
    }

    #[test]
    fn matched_filter_basics() {
        let mut rng = seeded_rng(8, "mf");
        let e = CMatrix::from_fn(10, 6, |_, _| complex_normal(&mut rng));
        let s = matched_filter_oracle(&e, &e.column(4).into_owned());
        let best = (0..6).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(best, 4);
        assert!(matched_filter_oracle(&e, &CVector::zeros(10)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rmse_cases() {
        let sys = SystemParams::with_frame(48);
        let g = GridSpec::default();
        let truth = vec![TargetTruth::new(37.5, -54.0), TargetTruth::new(97.5, 54.0)];
        let perfect: Vec<_> = truth.iter().map(|t| (t.range_m, t.velocity_mps)).collect();
        assert_eq!(estimation_rmse(&perfect, &truth, &g, &sys).unwrap(), (0.0, 0.0));
        let est = vec![(98.0, 50.0), (36.0, -50.0)];
        let a = estimation_rmse(&est, &truth, &g, &sys).unwrap();
        let b = estimation_rmse(&[est[1], est[0]], &truth, &g, &sys).unwrap();
        assert_eq!(a, b);
        assert!((a.0 - ((0.25 + 2.25) / 2.0f64).sqrt()).abs() < 1e-12);
        assert!((a.1 - 4.0).abs() < 1e-12);
        assert!(estimation_rmse(&[], &truth, &g, &sys).is_err());
    }

    #[test]
    fn resolution_floor_closed_form() {
        let sys = SystemParams::with_frame(48);
        let g = GridSpec::default();
        let t = TargetTruth::new(37.5, -54.0);
        let dt = g.delay_step();
        let dn = g.doppler_step();
        let tau = t.delay_s();
        let nu = t.doppler_hz(&sys);
        let tau_err = tau - (tau / dt).round() * dt;
        let nu_err = (nu + g.nu_max_hz) - ((nu + g.nu_max_hz) / dn).round() * dn;
        let (r, v) = resolution_floor(&g, &[t], &sys).unwrap();
        assert!((r - tau_err.abs() * SPEED_OF_LIGHT).abs() < 1e-9);
        assert!((v - nu_err.abs() * SPEED_OF_LIGHT / sys.carrier_frequency_hz).abs() < 1e-9);
    }

    #[test]
    fn reference_targets_inside_default_grid() {
        let sys = SystemParams::with_frame(144);
        let g = GridSpec::default();
        for t in [TargetTruth::new(37.5, -54.0), TargetTruth::new(97.5, 54.0)] {
            assert!((0.0..=g.tau_max_s).contains(&t.delay_s()));
            assert!(t.doppler_hz(&sys).abs() <= g.nu_max_hz);
        }
    }

    #[test]
    fn config_validation() {
        assert!(PdaConfig::default().validate().is_ok());
        for bad in [
            PdaConfig {
                damping: 0.0,
                ..PdaConfig::default()
            },
            PdaConfig {
                max_iterations: 0,
                ..PdaConfig::default()
            },
            PdaConfig {
                noise_variance: 0.0,
                ..PdaConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
