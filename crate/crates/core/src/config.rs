//! Scenario description, validation and unit conversion.
//!
//! A scenario is a JSON document. Every section except `system`, `tx_sim`,
//! `rx_sim` and `targets` is optional; absent keys take the defaults listed
//! on each `Raw*` struct. Physical lengths of the metasurface default to
//! fractions of the carrier wavelength, so they are filled in after the
//! system block is known.
//!
//! ```json
//! {
//!   "system": { "carrier_frequency_hz": 28e9, "bandwidth_hz": 20e6, "subcarrier_count": 144 },
//!   "tx_sim": { "layers": 3, "grid_dims": [10, 10] },
//!   "rx_sim": { "layers": 3, "grid_dims": [10, 10] },
//!   "targets": [ { "range_m": 37.5, "velocity_mps": -54.0 } ],
//!   "seed": 7
//! }
//! ```

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::OptimizerConfig;
use crate::pda::{GridSpec, PdaConfig};
use crate::waveform::WaveformKind;
use crate::SPEED_OF_LIGHT;

/// Environment variable consulted for the seed when the scenario omits it.
pub const SEED_ENV: &str = "MPDD_SEED";
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfdmChirps {
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub sampling_rate_hz: f64,
    /// Frame length `N`.
    pub subcarrier_count: usize,
    /// `(N1, N2)`: OTFS Doppler-axis and delay-axis sizes.
    pub otfs_factors: (usize, usize),
    pub afdm_chirps: AfdmChirps,
    pub modulation: Modulation,
    /// Fixed noise variance; `None` derives it per realization from `snr_db`.
    pub noise_variance: Option<f64>,
    pub snr_db: f64,
    pub waveforms: Vec<WaveformKind>,
}

impl SystemParams {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Minimal parameter set for a frame of length `n`, mostly used in tests.
    pub fn with_frame(n: usize) -> Self {
        let (n1, n2) = default_otfs_factors(n);
        SystemParams {
            carrier_frequency_hz: 28e9,
            bandwidth_hz: 20e6,
            sampling_rate_hz: 20e6,
            subcarrier_count: n,
            otfs_factors: (n1, n2),
            afdm_chirps: AfdmChirps {
                c1: default_c1(1.0, n),
                c2: 0.0,
            },
            modulation: Modulation::Qpsk,
            noise_variance: None,
            snr_db: 20.0,
            waveforms: WaveformKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimRole {
    Transmit,
    Receive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimGeometrySpec {
    pub layers: usize,
    /// `(M_x, M_z)`.
    pub grid_dims: (usize, usize),
    pub atom_spacing_m: f64,
    pub layer_spacing_m: f64,
    pub atom_area_m2: f64,
    pub wavelength_m: f64,
    pub role: SimRole,
}

impl SimGeometrySpec {
    /// Geometry with the default λ-relative dimensions: atom spacing λ/2,
    /// stack thickness 5λ split evenly, atom area (λ/2)².
    pub fn with_defaults(layers: usize, grid_dims: (usize, usize), wavelength_m: f64, role: SimRole) -> Self {
        SimGeometrySpec {
            layers,
            grid_dims,
            atom_spacing_m: wavelength_m / 2.0,
            layer_spacing_m: 5.0 * wavelength_m / layers.max(1) as f64,
            atom_area_m2: (wavelength_m / 2.0).powi(2),
            wavelength_m,
            role,
        }
    }

    pub fn meta_atoms(&self) -> usize {
        self.grid_dims.0 * self.grid_dims.1
    }

    fn validate(&self, key: &str) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::validation(&format!("{key}.layers"), "must be at least 1"));
        }
        if self.grid_dims.0 == 0 || self.grid_dims.1 == 0 {
            return Err(Error::validation(
                &format!("{key}.grid_dims"),
                "both dimensions must be positive",
            ));
        }
        for (name, v) in [
            ("atom_spacing_m", self.atom_spacing_m),
            ("layer_spacing_m", self.layer_spacing_m),
            ("atom_area_m2", self.atom_area_m2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(
                    &format!("{key}.{name}"),
                    "must be finite and positive",
                ));
            }
        }
        Ok(())
    }
}

/// Azimuth and elevation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub range_m: f64,
    pub velocity_mps: f64,
    /// Departure angles; drawn at random per realization when absent.
    pub aod: Option<Angles>,
    /// Arrival angles; drawn at random per realization when absent.
    pub aoa: Option<Angles>,
    /// Path gain `h_p`; drawn at random per realization when absent.
    pub complex_gain: Option<Complex64>,
}

impl TargetTruth {
    pub fn new(range_m: f64, velocity_mps: f64) -> Self {
        TargetTruth {
            range_m,
            velocity_mps,
            aod: None,
            aoa: None,
            complex_gain: None,
        }
    }

    pub fn delay_s(&self) -> f64 {
        self.range_m / SPEED_OF_LIGHT
    }

    pub fn doppler_hz(&self, sys: &SystemParams) -> f64 {
        self.velocity_mps * sys.carrier_frequency_hz / SPEED_OF_LIGHT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModel {
    /// Unit-variance circularly-symmetric complex normal.
    ComplexNormal,
    /// Unit modulus with uniform random phase.
    UnitModulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub system: SystemParams,
    pub tx_sim: SimGeometrySpec,
    pub rx_sim: SimGeometrySpec,
    pub targets: Vec<TargetTruth>,
    /// Number of user paths `P_U` known to the estimator.
    pub user_paths: usize,
    pub gain_model: GainModel,
    pub grid: GridSpec,
    pub optimizer: OptimizerConfig,
    pub pda: PdaConfig,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Raw document

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    system: RawSystem,
    tx_sim: RawGeometry,
    rx_sim: RawGeometry,
    targets: Vec<RawTarget>,
    user_paths: Option<usize>,
    gain_model: Option<GainModel>,
    grid: Option<RawGrid>,
    optimizer: Option<RawOptimizer>,
    pda: Option<RawPda>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    carrier_frequency_hz: f64,
    bandwidth_hz: f64,
    /// Defaults to the bandwidth.
    sampling_rate_hz: Option<f64>,
    subcarrier_count: usize,
    /// Defaults to the most square factorization with `N1 <= N2`.
    otfs_factors: Option<(usize, usize)>,
    afdm_chirps: Option<RawChirps>,
    modulation: Option<Modulation>,
    noise_variance: Option<f64>,
    /// Defaults to 20 dB.
    snr_db: Option<f64>,
    /// `"ofdm" | "otfs" | "afdm" | "all"`, defaults to `"all"`.
    waveform: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChirps {
    c1: Option<f64>,
    c2: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    layers: usize,
    grid_dims: (usize, usize),
    atom_spacing_m: Option<f64>,
    layer_spacing_m: Option<f64>,
    atom_area_m2: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    range_m: f64,
    velocity_mps: f64,
    aod: Option<Angles>,
    aoa: Option<Angles>,
    /// `[re, im]`.
    complex_gain: Option<(f64, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    delay_bins: Option<usize>,
    doppler_bins: Option<usize>,
    tau_max_s: Option<f64>,
    nu_max_hz: Option<f64>,
    on_grid: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    inner_iterations: Option<usize>,
    outer_sweeps: Option<usize>,
    initial_rate: Option<f64>,
    decay: Option<f64>,
    tolerance: Option<f64>,
    reselect_each_step: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPda {
    max_iterations: Option<usize>,
    damping: Option<f64>,
    noise_variance: Option<f64>,
    assumed_paths: Option<usize>,
}

/// Read, default and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parse a scenario from its JSON text. Pure function of the input.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let raw: RawScenario = serde_json::from_str(text)?;
    let seed = match raw.seed {
        Some(s) => s,
        None => seed_from_env()?,
    };
    build(raw, seed)
}

fn seed_from_env() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::validation("seed", format!("{SEED_ENV}={v:?} is not a u64"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn parse_waveforms(s: Option<&str>) -> Result<Vec<WaveformKind>> {
    match s.map(|s| s.to_ascii_lowercase()) {
        None => Ok(WaveformKind::ALL.to_vec()),
        Some(s) if s == "all" => Ok(WaveformKind::ALL.to_vec()),
        Some(s) => s
            .parse::<WaveformKind>()
            .map(|k| vec![k])
            .map_err(|_| Error::validation("system.waveform", format!("unknown waveform {s:?}"))),
    }
}

/// Most square factorization `N1 * N2 = N` with `N1 <= N2`.
pub fn default_otfs_factors(n: usize) -> (usize, usize) {
    let mut best = 1;
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            best = d;
        }
        d += 1;
    }
    (best, n / best)
}

/// Chirp rate `(2⌈f_max⌉ + 1) / (2N)` for a maximum normalized Doppler `f_max`.
pub fn default_c1(f_max: f64, n: usize) -> f64 {
    (2.0 * f_max.abs().ceil() + 1.0) / (2.0 * n as f64)
}

fn finite_positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::validation(key, format!("must be finite and positive, got {v}")))
    }
}

fn build(raw: RawScenario, seed: u64) -> Result<ScenarioSpec> {
    let rs = raw.system;
    let carrier = finite_positive("system.carrier_frequency_hz", rs.carrier_frequency_hz)?;
    let bandwidth = finite_positive("system.bandwidth_hz", rs.bandwidth_hz)?;
    let fs = finite_positive("system.sampling_rate_hz", rs.sampling_rate_hz.unwrap_or(bandwidth))?;
    let n = rs.subcarrier_count;
    if n == 0 {
        return Err(Error::validation("system.subcarrier_count", "must be at least 1"));
    }
    let waveforms = parse_waveforms(rs.waveform.as_deref())?;
    let otfs_factors = rs.otfs_factors.unwrap_or_else(|| default_otfs_factors(n));
    if waveforms.contains(&WaveformKind::Otfs) && otfs_factors.0 * otfs_factors.1 != n {
        return Err(Error::validation(
            "system.otfs_factors",
            format!("{} x {} != N = {n}", otfs_factors.0, otfs_factors.1),
        ));
    }
    if let Some(nv) = rs.noise_variance {
        finite_positive("system.noise_variance", nv)?;
    }
    let snr_db = rs.snr_db.unwrap_or(20.0);
    if !snr_db.is_finite() {
        return Err(Error::validation("system.snr_db", "must be finite"));
    }

    let rg = raw.grid.unwrap_or(RawGrid {
        delay_bins: None,
        doppler_bins: None,
        tau_max_s: None,
        nu_max_hz: None,
        on_grid: None,
    });
    let grid = GridSpec {
        delay_bins: rg.delay_bins.unwrap_or(32),
        doppler_bins: rg.doppler_bins.unwrap_or(32),
        tau_max_s: rg.tau_max_s.unwrap_or(0.5e-6),
        nu_max_hz: rg.nu_max_hz.unwrap_or(6e3),
        on_grid: rg.on_grid.unwrap_or(false),
    };
    grid.validate()?;
    if grid.tau_max_s * fs >= n as f64 {
        return Err(Error::validation(
            "grid.tau_max_s",
            format!("maximum delay {} samples must be below N = {n}", grid.tau_max_s * fs),
        ));
    }

    let f_max = n as f64 * grid.nu_max_hz / fs;
    let chirps = rs.afdm_chirps.unwrap_or(RawChirps { c1: None, c2: None });
    let afdm_chirps = AfdmChirps {
        c1: chirps.c1.unwrap_or_else(|| default_c1(f_max, n)),
        c2: chirps.c2.unwrap_or(0.0),
    };
    if !(afdm_chirps.c1.is_finite() && afdm_chirps.c2.is_finite()) {
        return Err(Error::validation("system.afdm_chirps", "chirp rates must be finite"));
    }

    let system = SystemParams {
        carrier_frequency_hz: carrier,
        bandwidth_hz: bandwidth,
        sampling_rate_hz: fs,
        subcarrier_count: n,
        otfs_factors,
        afdm_chirps,
        modulation: rs.modulation.unwrap_or(Modulation::Qpsk),
        noise_variance: rs.noise_variance,
        snr_db,
        waveforms,
    };

    let lambda = system.wavelength_m();
    let geometry = |g: RawGeometry, role: SimRole, key: &str| -> Result<SimGeometrySpec> {
        let mut spec = SimGeometrySpec::with_defaults(g.layers, g.grid_dims, lambda, role);
        if let Some(v) = g.atom_spacing_m {
            spec.atom_spacing_m = v;
        }
        if let Some(v) = g.layer_spacing_m {
            spec.layer_spacing_m = v;
        }
        if let Some(v) = g.atom_area_m2 {
            spec.atom_area_m2 = v;
        }
        spec.validate(key)?;
        Ok(spec)
    };
    let tx_sim = geometry(raw.tx_sim, SimRole::Transmit, "tx_sim")?;
    let rx_sim = geometry(raw.rx_sim, SimRole::Receive, "rx_sim")?;

    if raw.targets.is_empty() {
        return Err(Error::validation("targets", "at least one target is required"));
    }
    let mut targets = Vec::with_capacity(raw.targets.len());
    for (i, t) in raw.targets.into_iter().enumerate() {
        let key = format!("targets[{i}]");
        if !(t.range_m.is_finite() && t.velocity_mps.is_finite()) {
            return Err(Error::validation(&key, "range and velocity must be finite"));
        }
        let mut truth = TargetTruth {
            range_m: t.range_m,
            velocity_mps: t.velocity_mps,
            aod: t.aod,
            aoa: t.aoa,
            complex_gain: t.complex_gain.map(|(re, im)| Complex64::new(re, im)),
        };
        let tau = truth.delay_s();
        let nu = truth.doppler_hz(&system);
        if !(0.0..=grid.tau_max_s * (1.0 + 1e-12)).contains(&tau) {
            return Err(Error::validation(
                &format!("{key}.range_m"),
                format!("delay {tau:e} s outside [0, {:e}]", grid.tau_max_s),
            ));
        }
        if nu.abs() > grid.nu_max_hz * (1.0 + 1e-12) {
            return Err(Error::validation(
                &format!("{key}.velocity_mps"),
                format!("Doppler {nu} Hz outside ±{}", grid.nu_max_hz),
            ));
        }
        if grid.on_grid {
            truth = grid.snap_target(&truth, &system);
        }
        targets.push(truth);
    }

    let user_paths = raw.user_paths.unwrap_or(targets.len());
    if user_paths == 0 || user_paths > targets.len() {
        return Err(Error::validation(
            "user_paths",
            format!("must lie in 1..={} (number of paths)", targets.len()),
        ));
    }

    let ro = raw.optimizer.unwrap_or(RawOptimizer {
        inner_iterations: None,
        outer_sweeps: None,
        initial_rate: None,
        decay: None,
        tolerance: None,
        reselect_each_step: None,
    });
    let defaults = OptimizerConfig::default();
    let optimizer = OptimizerConfig {
        inner_iterations: ro.inner_iterations.unwrap_or(defaults.inner_iterations),
        outer_sweeps: ro.outer_sweeps.unwrap_or(user_paths + 1),
        initial_rate: ro.initial_rate.unwrap_or(defaults.initial_rate),
        decay: ro.decay.unwrap_or(defaults.decay),
        tolerance: ro.tolerance.unwrap_or(defaults.tolerance),
        reselect_each_step: ro.reselect_each_step.unwrap_or(defaults.reselect_each_step),
    };
    optimizer.validate()?;

    let rp = raw.pda.unwrap_or(RawPda {
        max_iterations: None,
        damping: None,
        noise_variance: None,
        assumed_paths: None,
    });
    let pda_defaults = PdaConfig::default();
    let pda = PdaConfig {
        max_iterations: rp.max_iterations.unwrap_or(pda_defaults.max_iterations),
        damping: rp.damping.unwrap_or(pda_defaults.damping),
        noise_variance: rp
            .noise_variance
            .or(system.noise_variance)
            .unwrap_or(pda_defaults.noise_variance),
        assumed_paths: rp.assumed_paths.unwrap_or(user_paths),
    };
    pda.validate()?;
    if pda.assumed_paths > grid.size() {
        return Err(Error::validation("pda.assumed_paths", "exceeds the grid size"));
    }

    Ok(ScenarioSpec {
        system,
        tx_sim,
        rx_sim,
        targets,
        user_paths,
        gain_model: raw.gain_model.unwrap_or(GainModel::ComplexNormal),
        grid,
        optimizer,
        pda,
        seed,
    })
}

/// Normalized delay `ℓ = τ F_S` (samples) and Doppler `f = N ν / F_S`
/// (digital cycles per frame) of a target.
pub fn normalize_target(t: &TargetTruth, sys: &SystemParams) -> (f64, f64) {
    let delay = t.delay_s() * sys.sampling_rate_hz;
    let doppler = sys.subcarrier_count as f64 * t.doppler_hz(sys) / sys.sampling_rate_hz;
    (delay, doppler)
}

/// Inverse of [`normalize_target`]: `(range_m, velocity_mps)`.
pub fn denormalize(delay: f64, doppler: f64, sys: &SystemParams) -> (f64, f64) {
    let tau = delay / sys.sampling_rate_hz;
    let nu = doppler * sys.sampling_rate_hz / sys.subcarrier_count as f64;
    physical_from_delay_doppler(tau, nu, sys)
}

/// `(range_m, velocity_mps)` from a delay in seconds and a Doppler in Hz.
pub fn physical_from_delay_doppler(tau_s: f64, nu_hz: f64, sys: &SystemParams) -> (f64, f64) {
    (
        tau_s * SPEED_OF_LIGHT,
        nu_hz * SPEED_OF_LIGHT / sys.carrier_frequency_hz,
    )
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic random stream for `(seed, label)`. Distinct labels select
/// distinct ChaCha streams of the same key.
pub fn seeded_rng(seed: u64, stream_label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(stream_label));
    rng
}
