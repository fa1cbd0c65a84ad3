//! Experiment harness: optimizer convergence traces, sensing RMSE sweeps and
//! BER sweeps over waveforms and SIM modes, written as CSV.
//!
//! Every trial draws its paths, random SIM phases, data frame and noise
//! from streams keyed by the trial index, so all waveforms, SIM modes and
//! SNR points of one trial see the same realization.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use log::{debug, warn};
use mpdd::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use mpdd::channel::{bare_gain, effective_gain, end_to_end, path_matrices, sample_paths, PathBounds, PathSet};
use mpdd::config::{seeded_rng, ScenarioSpec};
use mpdd::detector::{detect, qpsk_map};
use mpdd::linalg::CVector;
use mpdd::metasurface::{complex_normal, SimStack};
use mpdd::optimizer::{optimize, ObjectiveTrace};
use mpdd::pda::{build_dictionary, estimation_rmse, extract_parameters, resolution_floor, run_pda, PdaConfig};
use mpdd::waveform::{WaveformEngine, WaveformKind};

pub mod checks;

pub const DESK_SCENARIO: &str = include_str!("../../../scenarios/desk.json");
pub const FULL_SCENARIO: &str = include_str!("../../../scenarios/full.json");
pub const RECOVERY_SCENARIO: &str = include_str!("../../../scenarios/recovery.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SimMode {
    None,
    Random,
    Optimized,
}

impl SimMode {
    pub const ALL: [SimMode; 3] = [SimMode::None, SimMode::Random, SimMode::Optimized];

    pub fn name(self) -> &'static str {
        match self {
            SimMode::None => "none",
            SimMode::Random => "random",
            SimMode::Optimized => "optimized",
        }
    }
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SimMode::None),
            "random" => Ok(SimMode::Random),
            "optimized" => Ok(SimMode::Optimized),
            other => bail!("unknown SIM mode '{other}' (expected none, random, optimized or all)"),
        }
    }
}

/// Parses `none|random|optimized|all` or a comma-separated list of modes.
pub fn parse_modes(s: &str) -> Result<Vec<SimMode>> {
    if s == "all" {
        Ok(SimMode::ALL.to_vec())
    } else {
        let mut modes = Vec::new();
        for t in s.split(',') {
            let m: SimMode = t.trim().parse()?;
            if !modes.contains(&m) {
                modes.push(m);
            }
        }
        Ok(modes)
    }
}

/// Parses `ofdm|otfs|afdm|all` or a comma-separated list of waveforms.
pub fn parse_waveforms(s: &str) -> Result<Vec<WaveformKind>> {
    if s == "all" {
        Ok(WaveformKind::ALL.to_vec())
    } else {
        let mut kinds = Vec::new();
        for t in s.split(',') {
            let k: WaveformKind = t.trim().parse().map_err(|e| anyhow::anyhow!("{e}"))?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        Ok(kinds)
    }
}

/// Parses a comma-separated list of SNR values in dB.
pub fn parse_snrs(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().with_context(|| format!("invalid SNR value '{t}'"))?;
            if !v.is_finite() {
                bail!("SNR value '{t}' is not finite");
            }
            Ok(v)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub waveforms: Vec<WaveformKind>,
    pub modes: Vec<SimMode>,
    pub snrs_db: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub waveform: &'static str,
    pub sim_mode: &'static str,
    pub snr_db: f64,
    pub trial: usize,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub waveform: &'static str,
    pub sim_mode: &'static str,
    pub trial: usize,
    pub snr_db: f64,
    pub index: usize,
    pub tau_s: f64,
    pub nu_hz: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub abs_h: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub estimates: Vec<EstimateRow>,
    /// Trials that failed, with the reason.
    pub failures: Vec<String>,
}

impl SweepResult {
    /// Values of one metric for one (waveform, mode, SNR) cell.
    pub fn values(&self, waveform: WaveformKind, mode: SimMode, snr_db: f64, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| {
                r.waveform == waveform.name() && r.sim_mode == mode.name() && r.snr_db == snr_db && r.metric == metric
            })
            .map(|r| r.value)
            .collect()
    }

    pub fn median(&self, waveform: WaveformKind, mode: SimMode, snr_db: f64, metric: &str) -> Option<f64> {
        median(&self.values(waveform, mode, snr_db, metric))
    }
}

/// Grid columns nearest to the scenario targets, ascending.
pub fn truth_indices(scenario: &ScenarioSpec) -> Vec<usize> {
    let mut idx: Vec<usize> = scenario
        .targets
        .iter()
        .map(|t| scenario.grid.nearest_index(t.delay_s(), t.doppler_hz(&scenario.system)))
        .collect();
    idx.sort_unstable();
    idx
}

/// Trials of one (waveform, mode, SNR) cell whose extracted column set
/// equals `truth`.
pub fn support_hits(
    result: &SweepResult,
    waveform: WaveformKind,
    mode: SimMode,
    snr_db: f64,
    truth: &[usize],
) -> usize {
    let mut found: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in result
        .estimates
        .iter()
        .filter(|e| e.waveform == waveform.name() && e.sim_mode == mode.name() && e.snr_db == snr_db)
    {
        found.entry(e.trial).or_default().push(e.index);
    }
    found
        .into_values()
        .filter(|idx| {
            let mut idx = idx.clone();
            idx.sort_unstable();
            idx == truth
        })
        .count()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// One trial's random draws, shared by every waveform, mode and SNR.
pub struct Realization {
    pub paths: PathSet,
    pub tx: SimStack,
    pub rx: SimStack,
    pub bits: Vec<u8>,
    pub frame: CVector,
    /// Unit-variance noise, scaled per SNR point.
    pub noise: CVector,
}

pub fn realize(scenario: &ScenarioSpec, trial: usize) -> Result<Realization> {
    let seed = scenario.seed;
    let n = scenario.system.subcarrier_count;
    let mut rng = seeded_rng(seed, &format!("paths/{trial}"));
    let bounds = PathBounds {
        tau_max_s: scenario.grid.tau_max_s,
        nu_max_hz: scenario.grid.nu_max_hz,
    };
    let paths = sample_paths(
        &mut rng,
        scenario.targets.len(),
        &scenario.system,
        bounds,
        &scenario.targets,
        scenario.gain_model,
        &scenario.tx_sim,
        &scenario.rx_sim,
    )?;
    let mut rng = seeded_rng(seed, &format!("sim/{trial}"));
    let tx = SimStack::random(scenario.tx_sim.clone(), &mut rng)?;
    let rx = SimStack::random(scenario.rx_sim.clone(), &mut rng)?;
    let mut rng = seeded_rng(seed, &format!("frame/{trial}"));
    let bits: Vec<u8> = (0..2 * n).map(|_| rng.random_range(0..2u8)).collect();
    let frame = qpsk_map(&bits)?;
    let mut rng = seeded_rng(seed, &format!("noise/{trial}"));
    let noise = CVector::from_fn(n, |_, _| complex_normal(&mut rng));
    Ok(Realization {
        paths,
        tx,
        rx,
        bits,
        frame,
        noise,
    })
}

/// Effective path gains for every SIM mode, plus the optimizer trace.
pub struct ModeGains {
    pub none: Vec<Complex64>,
    pub random: Vec<Complex64>,
    pub optimized: Option<(Vec<Complex64>, ObjectiveTrace)>,
}

impl ModeGains {
    pub fn get(&self, mode: SimMode) -> &[Complex64] {
        match mode {
            SimMode::None => &self.none,
            SimMode::Random => &self.random,
            SimMode::Optimized => &self.optimized.as_ref().expect("optimized gains computed").0,
        }
    }
}

pub fn mode_gains(scenario: &ScenarioSpec, real: &Realization, optimize_sim: bool) -> Result<ModeGains> {
    let p = real.paths.len();
    let none = real.paths.paths.iter().map(|path| bare_gain(path, p)).collect();
    let random = real
        .paths
        .paths
        .iter()
        .map(|path| effective_gain(path, p, &real.tx, &real.rx))
        .collect::<mpdd::Result<Vec<_>>>()?;
    let optimized = if optimize_sim {
        let (tx, rx, trace) = optimize(real.tx.clone(), real.rx.clone(), &real.paths, &scenario.optimizer)?;
        let gains = real
            .paths
            .paths
            .iter()
            .map(|path| effective_gain(path, p, &tx, &rx))
            .collect::<mpdd::Result<Vec<_>>>()?;
        Some((gains, trace))
    } else {
        None
    };
    Ok(ModeGains {
        none,
        random,
        optimized,
    })
}

/// `σ_w²` for an SNR given relative to the SIM-free channel of the same
/// realization.
pub fn noise_variance_for(reference: &CVector, snr_db: f64) -> f64 {
    let power = reference.norm_squared() / reference.len() as f64;
    power * 10f64.powf(-snr_db / 10.0)
}

struct TrialOutput {
    rows: Vec<SweepRow>,
    estimates: Vec<EstimateRow>,
}

fn waveform_engines(scenario: &ScenarioSpec, kinds: &[WaveformKind]) -> Result<Vec<WaveformEngine>> {
    kinds
        .iter()
        .map(|&k| WaveformEngine::new(k, &scenario.system).map_err(Into::into))
        .collect()
}

fn mse_trial(
    scenario: &ScenarioSpec,
    spec: &SweepSpec,
    engines: &[WaveformEngine],
    trial: usize,
) -> Result<TrialOutput> {
    let real = realize(scenario, trial)?;
    let gains = mode_gains(scenario, &real, spec.modes.contains(&SimMode::Optimized))?;
    let truth = &scenario.targets;
    let (floor_r, floor_v) = resolution_floor(&scenario.grid, truth, &scenario.system)?;
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for engine in engines {
        let kind = engine.kind();
        let matrices = path_matrices(&real.paths, engine)?;
        let reference = &end_to_end(&gains.none, matrices.clone())?.matrix * &real.frame;
        let dictionary = build_dictionary(&scenario.grid, &scenario.system, engine, &real.frame)?;
        for &mode in &spec.modes {
            let channel = end_to_end(gains.get(mode), matrices.clone())?;
            let clean = &channel.matrix * &real.frame;
            for &snr in &spec.snrs_db {
                let nv = noise_variance_for(&reference, snr);
                let y = &clean + real.noise.map(|z| z * nv.sqrt());
                let config = PdaConfig {
                    noise_variance: nv,
                    ..scenario.pda.clone()
                };
                let state = run_pda(&dictionary, &y, &config)?;
                let found = extract_parameters(&state, &scenario.grid, &scenario.system, config.assumed_paths)?;
                let points: Vec<(f64, f64)> = found.iter().map(|e| (e.range_m, e.velocity_mps)).collect();
                let (rr, vr) = estimation_rmse(&points, truth, &scenario.grid, &scenario.system)?;
                let base = |metric, value| SweepRow {
                    waveform: kind.name(),
                    sim_mode: mode.name(),
                    snr_db: snr,
                    trial,
                    metric,
                    value,
                };
                rows.push(base("range_rmse_m", rr));
                rows.push(base("velocity_rmse_mps", vr));
                rows.push(base("range_floor_m", floor_r));
                rows.push(base("velocity_floor_mps", floor_v));
                estimates.extend(found.iter().map(|e| EstimateRow {
                    waveform: kind.name(),
                    sim_mode: mode.name(),
                    trial,
                    snr_db: snr,
                    index: e.index,
                    tau_s: e.tau_s,
                    nu_hz: e.nu_hz,
                    range_m: e.range_m,
                    velocity_mps: e.velocity_mps,
                    abs_h: e.gain.norm(),
                    kappa: e.support,
                }));
            }
        }
    }
    Ok(TrialOutput { rows, estimates })
}

fn ber_trial(
    scenario: &ScenarioSpec,
    spec: &SweepSpec,
    engines: &[WaveformEngine],
    trial: usize,
) -> Result<TrialOutput> {
    let real = realize(scenario, trial)?;
    let gains = mode_gains(scenario, &real, spec.modes.contains(&SimMode::Optimized))?;
    let mut rows = Vec::new();
    for engine in engines {
        let kind = engine.kind();
        let matrices = path_matrices(&real.paths, engine)?;
        let reference = &end_to_end(&gains.none, matrices.clone())?.matrix * &real.frame;
        for &mode in &spec.modes {
            let channel = end_to_end(gains.get(mode), matrices.clone())?;
            let clean = &channel.matrix * &real.frame;
            for &snr in &spec.snrs_db {
                let nv = noise_variance_for(&reference, snr);
                let y = &clean + real.noise.map(|z| z * nv.sqrt());
                let result = detect(&channel.matrix, &y, nv, &real.bits)?;
                rows.push(SweepRow {
                    waveform: kind.name(),
                    sim_mode: mode.name(),
                    snr_db: snr,
                    trial,
                    metric: "ber",
                    value: result.ber(),
                });
            }
        }
    }
    Ok(TrialOutput {
        rows,
        estimates: Vec::new(),
    })
}

fn validate_spec(spec: &SweepSpec) -> Result<()> {
    if spec.trials == 0 {
        bail!("at least one trial is required");
    }
    if spec.waveforms.is_empty() || spec.modes.is_empty() || spec.snrs_db.is_empty() {
        bail!("waveform, SIM mode and SNR lists must be non-empty");
    }
    Ok(())
}

fn run_sweep(
    scenario: &ScenarioSpec,
    spec: &SweepSpec,
    trial_fn: fn(&ScenarioSpec, &SweepSpec, &[WaveformEngine], usize) -> Result<TrialOutput>,
) -> Result<SweepResult> {
    validate_spec(spec)?;
    let engines = waveform_engines(scenario, &spec.waveforms)?;
    let outputs: Vec<(usize, Result<TrialOutput>)> = (0..spec.trials)
        .into_par_iter()
        .map(|t| (t, trial_fn(scenario, spec, &engines, t)))
        .collect();
    let mut result = SweepResult::default();
    for (t, out) in outputs {
        match out {
            Ok(o) => {
                for row in o.rows {
                    if row.value.is_nan() {
                        warn!("trial {t}: NaN {} dropped", row.metric);
                        result.failures.push(format!("trial {t}: NaN {}", row.metric));
                    } else {
                        result.rows.push(row);
                    }
                }
                result.estimates.extend(o.estimates);
            }
            Err(e) => {
                warn!("trial {t} failed: {e:#}");
                result.failures.push(format!("trial {t}: {e:#}"));
            }
        }
    }
    sort_rows(&mut result, spec);
    debug!(
        "sweep finished with {} rows and {} failures",
        result.rows.len(),
        result.failures.len()
    );
    Ok(result)
}

fn sort_rows(result: &mut SweepResult, spec: &SweepSpec) {
    let wf = |name: &str| {
        spec.waveforms
            .iter()
            .position(|k| k.name() == name)
            .unwrap_or(usize::MAX)
    };
    let md = |name: &str| spec.modes.iter().position(|m| m.name() == name).unwrap_or(usize::MAX);
    result.rows.sort_by(|a, b| {
        (wf(a.waveform), md(a.sim_mode))
            .cmp(&(wf(b.waveform), md(b.sim_mode)))
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.trial.cmp(&b.trial))
            .then(a.metric.cmp(b.metric))
    });
    result.estimates.sort_by(|a, b| {
        (wf(a.waveform), md(a.sim_mode))
            .cmp(&(wf(b.waveform), md(b.sim_mode)))
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.trial.cmp(&b.trial))
            .then(a.index.cmp(&b.index))
    });
}

/// Range/velocity RMSE per (waveform, mode, SNR, trial), with the
/// resolution-limit floor of the scenario's targets.
pub fn run_mse_sweep(scenario: &ScenarioSpec, spec: &SweepSpec) -> Result<SweepResult> {
    run_sweep(scenario, spec, mse_trial)
}

/// Uncoded QPSK BER after LMMSE equalization.
pub fn run_ber_sweep(scenario: &ScenarioSpec, spec: &SweepSpec) -> Result<SweepResult> {
    run_sweep(scenario, spec, ber_trial)
}

/// Optimizer trace on the realization of trial 0.
pub fn run_convergence(scenario: &ScenarioSpec) -> Result<ObjectiveTrace> {
    let real = realize(scenario, 0)?;
    let (_, _, trace) = optimize(real.tx, real.rx, &real.paths, &scenario.optimizer)?;
    Ok(trace)
}

pub fn output_path(out: &FsPath, subcommand: &str, label: &str) -> Result<PathBuf> {
    let dir = out.join(subcommand);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.join(format!("{label}.csv")))
}

pub fn write_rows<T: Serialize>(path: &FsPath, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 6] = ["waveform", "sim_mode", "snr_db", "trial", "metric", "value"];
pub const ESTIMATE_HEADER: [&str; 11] = [
    "waveform",
    "sim_mode",
    "trial",
    "snr_db",
    "index",
    "tau_s",
    "nu_hz",
    "range_m",
    "velocity_mps",
    "abs_h",
    "kappa",
];

/// Convergence trace as `iteration, sweep, targeted_path, O_1..O_P`.
pub fn write_trace(path: &FsPath, trace: &ObjectiveTrace) -> Result<()> {
    let paths = trace.rows.first().map_or(0, |r| r.objectives.len());
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["iteration".to_string(), "sweep".into(), "targeted_path".into()];
    header.extend((1..=paths).map(|p| format!("O_{p}")));
    w.write_record(&header)?;
    for r in &trace.rows {
        let mut rec = vec![
            r.iteration.to_string(),
            r.sweep.to_string(),
            r.targeted_path.to_string(),
        ];
        rec.extend(r.objectives.iter().map(|o| o.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
