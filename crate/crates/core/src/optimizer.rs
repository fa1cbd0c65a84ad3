//! Min-max SIM phase optimization.
//!
//! The weakest path (smallest `|ȟ_p|²`) is selected at the start of every
//! outer sweep and its power is raised by steepest ascent on all TX and RX
//! layer phases. Steps are normalized so the largest phase increment is
//! `λ^(i) π`, with `λ^(i) = λ_0 ρ^i`.
//!
//! Both stacks share one gradient routine. The TX transfer is a chain
//! `v = Ψ_Q Γ_Q ⋯ Ψ_1 Γ_1`; the RX transfer transposes into the same shape,
//! `u^T = Δ_Q̃ Ξ_Q̃^T ⋯ Δ_1 Ξ_1^T`. The objective is `|a^H x|²` for the chain
//! output `x` and a fixed vector `a` that carries everything on the other
//! side of the link, so `Υ = a a^H`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{gain_prefactor, Path, PathSet};
use crate::config::SimRole;
use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector};
use crate::metasurface::SimStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Ascent iterations per outer sweep, `i_GD`.
    pub inner_iterations: usize,
    /// Number of weakest-path selections, `P̂ + 1` by default.
    pub outer_sweeps: usize,
    /// `λ_0`.
    pub initial_rate: f64,
    /// `ρ` in `λ^(i) = λ_0 ρ^i`.
    pub decay: f64,
    /// Relative change of the weakest-path objective that stops the ascent.
    pub tolerance: f64,
    /// Re-select the weakest path after every step instead of once per sweep.
    #[serde(default)]
    pub reselect_each_step: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            inner_iterations: 25,
            outer_sweeps: 3,
            initial_rate: 0.5,
            decay: 0.85,
            tolerance: 1e-6,
            reselect_each_step: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_iterations == 0 {
            return Err(Error::validation("optimizer.inner_iterations", "must be at least 1"));
        }
        if self.outer_sweeps == 0 {
            return Err(Error::validation("optimizer.outer_sweeps", "must be at least 1"));
        }
        if !(self.initial_rate > 0.0 && self.initial_rate < 1.0) {
            return Err(Error::validation("optimizer.initial_rate", "must lie in (0, 1)"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::validation("optimizer.decay", "must lie in (0, 1)"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::validation("optimizer.tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn rate(&self, iteration: usize) -> f64 {
        self.initial_rate * self.decay.powi(iteration as i32)
    }
}

/// Everything the objective needs about one path.
#[derive(Debug, Clone, Copy)]
pub struct PathContext<'a> {
    pub path: &'a Path,
    pub total_paths: usize,
}

impl<'a> PathContext<'a> {
    pub fn new(path: &'a Path, total_paths: usize) -> Self {
        PathContext { path, total_paths }
    }

    fn scaled_gain(&self, tx: &SimStack, rx: &SimStack) -> Complex64 {
        self.path.gain * gain_prefactor(tx.meta_atoms(), rx.meta_atoms(), self.total_paths)
    }
}

fn check_roles(tx: &SimStack, rx: &SimStack) -> Result<()> {
    if tx.role() != SimRole::Transmit {
        return Err(Error::RoleMismatch { expected: "transmit" });
    }
    if rx.role() != SimRole::Receive {
        return Err(Error::RoleMismatch { expected: "receive" });
    }
    Ok(())
}

/// `O_p = |h̃_p u R_RX^{1/2} B_p R_TX^{1/2} v|²`.
pub fn path_objective(ctx: PathContext<'_>, tx: &SimStack, rx: &SimStack) -> Result<f64> {
    check_roles(tx, rx)?;
    let v = tx.tx_transfer()?;
    let u = rx.rx_transfer()?;
    let inner = &rx.correlation().sqrt_complex() * &ctx.path.outer * (&tx.correlation().sqrt_complex() * v);
    Ok((ctx.scaled_gain(tx, rx) * (u * inner)[0]).norm_sqr())
}

pub fn path_objectives(paths: &PathSet, tx: &SimStack, rx: &SimStack) -> Result<Vec<f64>> {
    let total = paths.len();
    paths
        .paths
        .iter()
        .map(|p| path_objective(PathContext::new(p, total), tx, rx))
        .collect()
}

/// Index of the smallest objective; ties go to the lowest index.
pub fn weakest_index(objectives: &[f64]) -> usize {
    let mut best = 0;
    for (i, &o) in objectives.iter().enumerate() {
        if o < objectives[best] {
            best = i;
        }
    }
    best
}

pub fn weakest_path(paths: &PathSet, tx: &SimStack, rx: &SimStack) -> Result<usize> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no paths".into()));
    }
    Ok(weakest_index(&path_objectives(paths, tx, rx)?))
}

/// A stack flattened into chain form: `x = Ψ_Q C_Q ⋯ Ψ_1 C_1` with `C_1`
/// a column.
struct Chain<'a> {
    ops: Vec<std::borrow::Cow<'a, CMatrix>>,
    phases: &'a [Vec<f64>],
}

impl<'a> Chain<'a> {
    fn of(stack: &'a SimStack) -> Self {
        let ops = (1..=stack.layers())
            .map(|q| match stack.role() {
                SimRole::Transmit => std::borrow::Cow::Borrowed(stack.operator(q)),
                SimRole::Receive => std::borrow::Cow::Owned(stack.operator(q).transpose()),
            })
            .collect();
        Chain {
            ops,
            phases: stack.phases(),
        }
    }

    fn layers(&self) -> usize {
        self.ops.len()
    }

    fn psi(&self, q: usize) -> Vec<Complex64> {
        self.phases[q - 1].iter().map(|&z| cis(z)).collect()
    }

    /// `w_q = C_q Ψ_{q-1} C_{q-1} ⋯ Ψ_1 C_1`, i.e. the field arriving at layer `q`.
    fn inputs(&self) -> Vec<CVector> {
        let mut out = Vec::with_capacity(self.layers());
        let mut w: CVector = self.ops[0].column(0).into_owned();
        out.push(w.clone());
        for q in 2..=self.layers() {
            let prev = self.psi(q - 1);
            for (x, p) in w.iter_mut().zip(&prev) {
                *x *= p;
            }
            w = self.ops[q - 1].as_ref() * w;
            out.push(w.clone());
        }
        out
    }

    fn output(&self) -> CVector {
        let mut w = self.inputs().pop().expect("at least one layer");
        for (x, p) in w.iter_mut().zip(self.psi(self.layers())) {
            *x *= p;
        }
        w
    }

    /// `U_q = Ψ_Q C_Q ⋯ Ψ_{q+1} C_{q+1}`, identity for `q = Q`.
    fn suffix(&self, q: usize) -> CMatrix {
        let m = self.ops[0].nrows();
        let mut u = CMatrix::identity(m, m);
        for k in (q + 1..=self.layers()).rev() {
            let mut layer = self.ops[k - 1].as_ref().clone();
            for (r, p) in self.psi(k).iter().enumerate() {
                for c in 0..layer.ncols() {
                    layer[(r, c)] *= p;
                }
            }
            u *= layer;
        }
        u
    }

    /// `2 Im{Ψ_q^H f̃_q^H Υ x}` with `f̃_q = U_q diag(w_q)` and `Υ = a a^H`,
    /// every factor materialized.
    fn gradient_explicit(&self, q: usize, a: &CVector) -> Vec<f64> {
        let upsilon = a * a.adjoint();
        let x = self.output();
        let w = &self.inputs()[q - 1];
        let f = self.suffix(q) * CMatrix::from_diagonal(w);
        let g = f.adjoint() * (upsilon * x);
        g.iter()
            .zip(self.psi(q))
            .map(|(gi, p)| 2.0 * (p.conj() * gi).im)
            .collect()
    }

    /// Same gradient for every layer, computed with vector recursions.
    fn gradients(&self, a: &CVector) -> Vec<Vec<f64>> {
        let inputs = self.inputs();
        let x = self.output();
        let s = a.dotc(&x);
        // c_q = U_q^H a, built from the outermost layer inward
        let q_count = self.layers();
        let mut grads = vec![Vec::new(); q_count];
        let mut c = a.clone();
        for q in (1..=q_count).rev() {
            let psi = self.psi(q);
            grads[q - 1] = inputs[q - 1]
                .iter()
                .zip(c.iter())
                .zip(&psi)
                .map(|((w, ci), p)| 2.0 * (p.conj() * w.conj() * ci * s).im)
                .collect();
            if q > 1 {
                let scaled = CVector::from_iterator(c.len(), c.iter().zip(&psi).map(|(ci, p)| ci * p.conj()));
                c = self.ops[q - 1].ad_mul(&scaled);
            }
        }
        grads
    }
}

/// `a` such that `O = |a^H v|²` for the TX chain output `v`.
fn tx_probe(ctx: PathContext<'_>, tx: &SimStack, rx: &SimStack) -> Result<CVector> {
    let u = rx.rx_transfer()?;
    // a^H = h̃ u R_RX^{1/2} B_p R_TX^{1/2}
    let row = (u * rx.correlation().sqrt_complex() * &ctx.path.outer * tx.correlation().sqrt_complex())
        * ctx.scaled_gain(tx, rx);
    Ok(row.adjoint())
}

/// `a` such that `O = |a^H u^T|²` for the RX chain output `u^T`.
fn rx_probe(ctx: PathContext<'_>, tx: &SimStack, rx: &SimStack) -> Result<CVector> {
    let v = tx.tx_transfer()?;
    let b = (&rx.correlation().sqrt_complex() * &ctx.path.outer * (&tx.correlation().sqrt_complex() * v))
        * ctx.scaled_gain(tx, rx);
    Ok(b.map(|z| z.conj()))
}

/// Sub-gradients for every layer of both stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `tx[q-1]` is `∇_{ζ_q} O`.
    pub tx: Vec<Vec<f64>>,
    /// `rx[q-1]` is `∇_{ζ̃_q} O`.
    pub rx: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn tx_max_abs(&self) -> f64 {
        max_abs(&self.tx)
    }

    pub fn rx_max_abs(&self) -> f64 {
        max_abs(&self.rx)
    }

    pub fn is_finite(&self) -> bool {
        self.tx.iter().chain(&self.rx).flatten().all(|g| g.is_finite())
    }
}

fn max_abs(g: &[Vec<f64>]) -> f64 {
    g.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn gradients(ctx: PathContext<'_>, tx: &SimStack, rx: &SimStack) -> Result<GradientBundle> {
    check_roles(tx, rx)?;
    let a_tx = tx_probe(ctx, tx, rx)?;
    let a_rx = rx_probe(ctx, tx, rx)?;
    Ok(GradientBundle {
        tx: Chain::of(tx).gradients(&a_tx),
        rx: Chain::of(rx).gradients(&a_rx),
    })
}

/// `∇_{ζ_q} O` for TX layer `q` (1-based), in the closed form
/// `2 Im{Ψ_q^H f̃_{t:q,p}^H Υ_{q,p} v}`.
pub fn tx_subgradient(q: usize, ctx: PathContext<'_>, tx: &SimStack, rx: &SimStack) -> Result<Vec<f64>> {
    check_roles(tx, rx)?;
    if q == 0 || q > tx.layers() {
        return Err(Error::LayerOutOfRange {
            index: q,
            layers: tx.layers(),
        });
    }
    let a = tx_probe(ctx, tx, rx)?;
    Ok(Chain::of(tx).gradient_explicit(q, &a))
}

/// `∇_{ζ̃_q} O` for RX layer `q` (1-based), the transposed mirror of
/// [`tx_subgradient`].
pub fn rx_subgradient(q: usize, ctx: PathContext<'_>, tx: &SimStack, rx: &SimStack) -> Result<Vec<f64>> {
    check_roles(tx, rx)?;
    if q == 0 || q > rx.layers() {
        return Err(Error::LayerOutOfRange {
            index: q,
            layers: rx.layers(),
        });
    }
    let a = rx_probe(ctx, tx, rx)?;
    Ok(Chain::of(rx).gradient_explicit(q, &a))
}

/// One phase entry of one stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCoordinate {
    pub role: SimRole,
    /// 1-based layer.
    pub layer: usize,
    pub atom: usize,
}

/// Central difference `(O(ζ+h) - O(ζ-h)) / 2h` along one phase coordinate.
pub fn fd_gradient_oracle(
    coord: PhaseCoordinate,
    ctx: PathContext<'_>,
    tx: &SimStack,
    rx: &SimStack,
    step: f64,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let eval = |delta: f64| -> Result<f64> {
        let mut tx = tx.clone();
        let mut rx = rx.clone();
        let stack = match coord.role {
            SimRole::Transmit => &mut tx,
            SimRole::Receive => &mut rx,
        };
        let z = stack.phases()[coord.layer - 1][coord.atom];
        stack.set_phase_raw(coord.layer, coord.atom, z + delta);
        path_objective(ctx, &tx, &rx)
    };
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}

/// Result of one ascent step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Both gradients vanished; nothing was updated.
    pub converged: bool,
    /// Largest phase increment applied.
    pub max_increment: f64,
}

/// `ζ ← ζ + λ^(i) ϑ ∇O` on both stacks with `ϑ = π / max|∇|`, wrapped
/// into `(-π, π]`.
pub fn ascent_step(
    tx: &mut SimStack,
    rx: &mut SimStack,
    ctx: PathContext<'_>,
    iteration: usize,
    config: &OptimizerConfig,
) -> Result<StepOutcome> {
    let grads = gradients(ctx, tx, rx)?;
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite SIM gradient".into()));
    }
    let rate = config.rate(iteration);
    let mut max_increment: f64 = 0.0;
    let mut update = |stack: &mut SimStack, grad: &[Vec<f64>], peak: f64| -> Result<()> {
        if peak == 0.0 {
            return Ok(());
        }
        let scale = rate * PI / peak;
        for (q, g) in grad.iter().enumerate() {
            let next: Vec<f64> = stack.phases()[q].iter().zip(g).map(|(z, gi)| z + scale * gi).collect();
            max_increment = g.iter().fold(max_increment, |m, gi| m.max((scale * gi).abs()));
            stack.set_layer_phases(q + 1, &next)?;
        }
        Ok(())
    };
    let (tx_peak, rx_peak) = (grads.tx_max_abs(), grads.rx_max_abs());
    update(tx, &grads.tx, tx_peak)?;
    update(rx, &grads.rx, rx_peak)?;
    Ok(StepOutcome {
        converged: tx_peak == 0.0 && rx_peak == 0.0,
        max_increment,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 0 is the initial configuration.
    pub iteration: usize,
    pub sweep: usize,
    pub targeted_path: usize,
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectiveTrace {
    pub rows: Vec<TraceRow>,
    /// Iteration at which the targeted objective stopped changing.
    pub converged_at: Option<usize>,
}

impl ObjectiveTrace {
    pub fn min_objective(&self, row: usize) -> f64 {
        self.rows[row].objectives.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn initial_min(&self) -> f64 {
        self.min_objective(0)
    }

    pub fn final_min(&self) -> f64 {
        self.min_objective(self.rows.len() - 1)
    }

    /// Weakest-path index chosen at each sweep.
    pub fn targets_per_sweep(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        let mut last_sweep = None;
        for r in self.rows.iter().skip(1) {
            if last_sweep != Some(r.sweep) {
                out.push(r.targeted_path);
                last_sweep = Some(r.sweep);
            }
        }
        out
    }

    /// Number of times the targeted path changed.
    pub fn switches(&self) -> usize {
        let steps: Vec<usize> = self.rows.iter().skip(1).map(|r| r.targeted_path).collect();
        steps.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iteration)
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Greedy min-max ascent: each sweep re-selects the weakest path and runs
/// `inner_iterations` ascent steps on it. Stops early once the weakest-path
/// objective changes by less than `tolerance` (relative) in one step.
pub fn optimize(
    mut tx: SimStack,
    mut rx: SimStack,
    paths: &PathSet,
    config: &OptimizerConfig,
) -> Result<(SimStack, SimStack, ObjectiveTrace)> {
    config.validate()?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no paths to optimize".into()));
    }
    let total = paths.len();
    let mut objectives = path_objectives(paths, &tx, &rx)?;
    let mut trace = ObjectiveTrace {
        rows: vec![TraceRow {
            iteration: 0,
            sweep: 0,
            targeted_path: weakest_index(&objectives),
            objectives: objectives.clone(),
        }],
        converged_at: None,
    };
    let mut iteration = 0;
    'sweeps: for sweep in 0..config.outer_sweeps {
        let mut target = weakest_index(&objectives);
        for _ in 0..config.inner_iterations {
            if config.reselect_each_step {
                target = weakest_index(&objectives);
            }
            let ctx = PathContext::new(&paths.paths[target], total);
            let before = min_of(&objectives);
            let outcome = ascent_step(&mut tx, &mut rx, ctx, iteration, config)?;
            iteration += 1;
            objectives = path_objectives(paths, &tx, &rx)?;
            trace.rows.push(TraceRow {
                iteration,
                sweep,
                targeted_path: target,
                objectives: objectives.clone(),
            });
            let after = min_of(&objectives);
            let rel = (after - before).abs() / before.abs().max(f64::MIN_POSITIVE);
            if outcome.converged || rel < config.tolerance {
                trace.converged_at = Some(iteration);
                break 'sweeps;
            }
        }
    }
    Ok((tx, rx, trace))
}
