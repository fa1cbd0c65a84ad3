//! Self-checks shared by the `selftest` and `oracle-check` subcommands and
//! the acceptance suite.

use anyhow::Result;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use mpdd::channel::{sample_paths, PathBounds};
use mpdd::config::{seeded_rng, GainModel, SimGeometrySpec, SimRole, SystemParams};
use mpdd::linalg::{max_abs_diff, max_abs_diff_vec, unitarity_defect, CMatrix, CVector};
use mpdd::metasurface::{complex_normal, SimStack};
use mpdd::optimizer::{
    fd_gradient_oracle, optimize, rx_subgradient, tx_subgradient, OptimizerConfig, PathContext, PhaseCoordinate,
};
use mpdd::waveform::{time_domain_oracle, OraclePath, WaveformEngine, WaveformKind};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Largest error seen, in the check's own units.
    pub worst: f64,
}

impl CheckSummary {
    fn new(name: &'static str) -> Self {
        CheckSummary {
            name,
            passed: 0,
            total: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, ok: bool, err: f64) {
        self.total += 1;
        self.passed += usize::from(ok);
        if err.is_nan() {
            self.worst = f64::NAN;
        } else {
            self.worst = self.worst.max(err);
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total && self.total > 0
    }
}

/// `G_p` unitary within `1e-9` for random `(ℓ, f)`, and `G(0, 0) = I`
/// within `1e-12`.
pub fn unitarity_check(frame_sizes: &[usize], trials: usize, seed: u64) -> Result<CheckSummary> {
    let mut summary = CheckSummary::new("unitarity");
    for &n in frame_sizes {
        let sys = SystemParams::with_frame(n);
        for kind in WaveformKind::ALL {
            let engine = WaveformEngine::new(kind, &sys)?;
            let mut rng = seeded_rng(seed, &format!("unitarity/{kind}/{n}"));
            for t in 0..trials {
                let delay: f64 = rng.random_range(0.0..(n as f64 - 1.0));
                let delay = if t % 2 == 0 { delay.floor() } else { delay };
                let doppler = rng.random_range(-(n as f64) / 4.0..(n as f64) / 4.0);
                let g = engine.path_matrix(delay, doppler)?;
                let err = unitarity_defect(&g.matrix);
                summary.record(err < 1e-9, err);
            }
            let id = engine.path_matrix(0.0, 0.0)?;
            let err = max_abs_diff(&id.matrix, &CMatrix::identity(n, n));
            summary.record(err < 1e-12, err);
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub waveform: &'static str,
    pub n: usize,
    pub trial: usize,
    pub paths: usize,
    pub max_abs_error: f64,
}

/// Matrix model `Σ h_p G_p x` against the prefix-based time-domain
/// simulator for integer delays and real Dopplers.
pub fn oracle_check(frame_sizes: &[usize], trials: usize, seed: u64) -> Result<(CheckSummary, Vec<OracleRow>)> {
    let mut summary = CheckSummary::new("oracle");
    let mut rows = Vec::new();
    for &n in frame_sizes {
        let sys = SystemParams::with_frame(n);
        for kind in WaveformKind::ALL {
            let engine = WaveformEngine::new(kind, &sys)?;
            let mut rng = seeded_rng(seed, &format!("oracle/{kind}/{n}"));
            for trial in 0..trials {
                let count = rng.random_range(1..=4usize);
                let paths: Vec<OraclePath> = (0..count)
                    .map(|_| OraclePath {
                        gain: complex_normal(&mut rng),
                        delay: rng.random_range(0..(n / 4).max(1)),
                        doppler: rng.random_range(-2.0..2.0),
                    })
                    .collect();
                let x = CVector::from_fn(n, |_, _| complex_normal(&mut rng));
                let oracle = time_domain_oracle(kind, &sys, &paths, &x)?;
                let mut model = CVector::zeros(n);
                for p in &paths {
                    model += engine.apply_path(p.delay as f64, p.doppler, &x)? * p.gain;
                }
                let err = max_abs_diff_vec(&model, &oracle);
                summary.record(err < 1e-8, err);
                rows.push(OracleRow {
                    waveform: kind.name(),
                    n,
                    trial,
                    paths: count,
                    max_abs_error: err,
                });
            }
        }
    }
    Ok((summary, rows))
}

/// Closed-form TX/RX sub-gradients against central differences (step
/// `1e-5`) on random stacks with at most 3 layers and 2 to 16 atoms. An entry
/// passes at relative error `< 1e-5`, or absolute error `< 1e-8` of the
/// largest entry of the instance when the entry itself is near zero.
pub fn gradient_check(instances: usize, seed: u64) -> Result<CheckSummary> {
    let mut summary = CheckSummary::new("gradient");
    let sys = SystemParams::with_frame(16);
    let wavelength = sys.wavelength_m();
    for i in 0..instances {
        let mut rng = seeded_rng(seed, &format!("gradient/{i}"));
        let q_tx = rng.random_range(1..=3usize);
        let q_rx = rng.random_range(1..=3usize);
        let mut dims = || (rng.random_range(1..=4usize), rng.random_range(2..=4usize));
        let (d_tx, d_rx) = (dims(), dims());
        let tx_geom = SimGeometrySpec::with_defaults(q_tx, d_tx, wavelength, SimRole::Transmit);
        let rx_geom = SimGeometrySpec::with_defaults(q_rx, d_rx, wavelength, SimRole::Receive);
        let tx = SimStack::random(tx_geom.clone(), &mut rng)?;
        let rx = SimStack::random(rx_geom.clone(), &mut rng)?;
        let count = rng.random_range(1..=3usize);
        let bounds = PathBounds {
            tau_max_s: 0.0,
            nu_max_hz: 0.0,
        };
        let paths = sample_paths(
            &mut rng,
            count,
            &sys,
            bounds,
            &[],
            GainModel::ComplexNormal,
            &tx_geom,
            &rx_geom,
        )?;
        let ctx = PathContext::new(&paths.paths[rng.random_range(0..count)], count);
        let mut layers = Vec::new();
        for (role, count) in [(SimRole::Transmit, q_tx), (SimRole::Receive, q_rx)] {
            for layer in 1..=count {
                let g = match role {
                    SimRole::Transmit => tx_subgradient(layer, ctx, &tx, &rx)?,
                    SimRole::Receive => rx_subgradient(layer, ctx, &tx, &rx)?,
                };
                layers.push((role, layer, g));
            }
        }
        let scale = layers
            .iter()
            .flat_map(|(_, _, g)| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for (role, layer, g) in &layers {
            for (atom, gi) in g.iter().enumerate() {
                let coord = PhaseCoordinate {
                    role: *role,
                    layer: *layer,
                    atom,
                };
                let fd = fd_gradient_oracle(coord, ctx, &tx, &rx, 1e-5)?;
                let abs = (fd - gi).abs();
                let near_zero = abs < 1e-8 * scale;
                let rel = abs / gi.abs().max(f64::MIN_POSITIVE);
                summary.record(rel < 1e-5 || near_zero, rel.min(abs / scale));
            }
        }
    }
    Ok(summary)
}

/// Improved, switched, converged-at, iterations.
type InstanceOutcome = (bool, bool, Option<usize>, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerStudy {
    pub instances: usize,
    pub improved: usize,
    pub switched: usize,
    /// Instances whose trace met the tolerance within `iteration_budget`.
    pub converged: usize,
    pub iteration_budget: usize,
    pub mean_iterations: f64,
}

/// Runs the optimizer on seeded instances with `P` paths and square
/// `layers × side × side` stacks on both ends.
pub fn optimizer_study(
    instances: usize,
    paths: usize,
    layers: usize,
    side: usize,
    iteration_budget: usize,
    seed: u64,
) -> Result<OptimizerStudy> {
    let sys = SystemParams::with_frame(48);
    let wavelength = sys.wavelength_m();
    let config = OptimizerConfig {
        outer_sweeps: paths + 1,
        ..OptimizerConfig::default()
    };
    let bounds = PathBounds {
        tau_max_s: 0.5e-6,
        nu_max_hz: 6e3,
    };
    let outcomes: Vec<Result<InstanceOutcome>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(seed, &format!("optimizer/{i}"));
            let tx_geom = SimGeometrySpec::with_defaults(layers, (side, side), wavelength, SimRole::Transmit);
            let rx_geom = SimGeometrySpec::with_defaults(layers, (side, side), wavelength, SimRole::Receive);
            let tx = SimStack::random(tx_geom.clone(), &mut rng)?;
            let rx = SimStack::random(rx_geom.clone(), &mut rng)?;
            let set = sample_paths(
                &mut rng,
                paths,
                &sys,
                bounds,
                &[],
                GainModel::ComplexNormal,
                &tx_geom,
                &rx_geom,
            )?;
            let (_, _, trace) = optimize(tx, rx, &set, &config)?;
            Ok((
                trace.final_min() > trace.initial_min(),
                trace.switches() >= 1,
                trace.converged_at,
                trace.iterations(),
            ))
        })
        .collect();
    let mut study = OptimizerStudy {
        instances,
        improved: 0,
        switched: 0,
        converged: 0,
        iteration_budget,
        mean_iterations: 0.0,
    };
    for outcome in outcomes {
        let (improved, switched, converged_at, iterations) = outcome?;
        study.improved += usize::from(improved);
        study.switched += usize::from(switched);
        study.converged += usize::from(converged_at.is_some_and(|c| c <= iteration_budget));
        study.mean_iterations += iterations as f64 / instances as f64;
    }
    Ok(study)
}
