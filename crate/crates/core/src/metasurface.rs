//! Stacked intelligent metasurface model.
//!
//! Layers lie in the x-z plane and are stacked along y. Layer `q` (1-based)
//! sits at `y = (q-1)·L` and its atoms are centred on the stack axis; the
//! feed (TX) or receive antenna (RX) sits on the axis at `y = -L`. Atom
//! index `m = m_x·M_z + m_z`.
//!
//! The TX stack maps the feed signal to the outermost layer,
//! `v = Ψ_Q Γ_Q ⋯ Ψ_1 Γ_1`, where `Γ_1` (M×1) couples the feed to layer 1
//! and `Γ_q` (M×M) couples layer `q-1` to layer `q`. The RX stack is the
//! mirror image, `u = Ξ_1 Δ_1 ⋯ Ξ_Q̃ Δ_Q̃`, where `Ξ_1` (1×M̃) couples layer 1
//! to the antenna and `Ξ_q̃` couples layer `q̃` to layer `q̃-1`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, RowDVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::config::{SimGeometrySpec, SimRole};
use crate::error::{Error, Result};
use crate::linalg::{cis, diag, wrap_phase, CMatrix, CVector};

pub type CRow = RowDVector<Complex64>;

/// Position of atom `m` of `layer` (1-based); layer 0 is the feed/antenna.
fn atom_position(geom: &SimGeometrySpec, layer: usize, m: usize) -> [f64; 3] {
    if layer == 0 {
        return [0.0, -geom.layer_spacing_m, 0.0];
    }
    let (mx_count, mz_count) = geom.grid_dims;
    let (mx, mz) = (m / mz_count, m % mz_count);
    let s = geom.atom_spacing_m;
    [
        (mx as f64 - (mx_count as f64 - 1.0) / 2.0) * s,
        (layer - 1) as f64 * geom.layer_spacing_m,
        (mz as f64 - (mz_count as f64 - 1.0) / 2.0) * s,
    ]
}

fn layer_size(geom: &SimGeometrySpec, layer: usize) -> usize {
    if layer == 0 {
        1
    } else {
        geom.meta_atoms()
    }
}

/// Rayleigh-Sommerfeld coupling between two points separated by `delta`:
/// `(A cosχ / d)(1/(2πd) - j/λ) e^{j2πd/λ}`.
pub fn rayleigh_sommerfeld(delta: [f64; 3], area: f64, wavelength: f64) -> Result<Complex64> {
    let d = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
    if d == 0.0 {
        return Err(Error::ZeroDistance);
    }
    let cos_chi = delta[1].abs() / d;
    let radial = Complex64::new(1.0 / (2.0 * PI * d), -1.0 / wavelength);
    Ok(area * cos_chi / d * radial * cis(2.0 * PI * d / wavelength))
}

/// Coupling matrix from `source_layer` to the adjacent `dest_layer`
/// (layer 0 is the feed/antenna). Rows index destination atoms.
pub fn diffraction_operator(geom: &SimGeometrySpec, source_layer: usize, dest_layer: usize) -> Result<CMatrix> {
    if source_layer.abs_diff(dest_layer) != 1 {
        return Err(Error::InvalidArgument(format!(
            "layers {source_layer} and {dest_layer} are not adjacent"
        )));
    }
    if source_layer.max(dest_layer) > geom.layers {
        return Err(Error::LayerOutOfRange {
            index: source_layer.max(dest_layer),
            layers: geom.layers,
        });
    }
    let rows = layer_size(geom, dest_layer);
    let cols = layer_size(geom, source_layer);
    let mut out = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        let p = atom_position(geom, dest_layer, i);
        for k in 0..cols {
            let s = atom_position(geom, source_layer, k);
            out[(i, k)] = rayleigh_sommerfeld(
                [p[0] - s[0], p[1] - s[1], p[2] - s[2]],
                geom.atom_area_m2,
                geom.wavelength_m,
            )?;
        }
    }
    Ok(out)
}

/// `Ψ = diag(e^{jζ_1}, …, e^{jζ_M})`.
pub fn phase_matrix(phases: &[f64]) -> CMatrix {
    diag(&phase_vector(phases))
}

pub fn phase_vector(phases: &[f64]) -> Vec<Complex64> {
    phases.iter().map(|&z| cis(z)).collect()
}

/// Spatial correlation of the outermost layer and its principal square root.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationOperator {
    pub matrix: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
}

impl CorrelationOperator {
    pub fn sqrt_complex(&self) -> CMatrix {
        self.sqrt.map(|x| Complex64::new(x, 0.0))
    }
}

/// `sinc(a) = sin(πa)/(πa)`.
pub fn sinc(a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        (PI * a).sin() / (PI * a)
    }
}

/// `[R]_{m,m'} = sinc(2 d_{m,m'} / λ)` over one layer, with the square
/// root taken on the eigenvalues clamped at zero.
pub fn correlation_operator(geom: &SimGeometrySpec) -> CorrelationOperator {
    let m = geom.meta_atoms();
    let matrix = DMatrix::from_fn(m, m, |i, k| {
        let a = atom_position(geom, 1, i);
        let b = atom_position(geom, 1, k);
        let d = ((a[0] - b[0]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        sinc(2.0 * d / geom.wavelength_m)
    });
    let eig = SymmetricEigen::new(matrix.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    CorrelationOperator { matrix, sqrt }
}

/// UPA response, entry `(m_x, m_z)` = `e^{j(2π/λ)s(m_x sinθ cosφ + m_z cosθ)}`.
pub fn upa_steering(azimuth: f64, elevation: f64, grid_dims: (usize, usize), spacing: f64, wavelength: f64) -> CVector {
    let (mx_count, mz_count) = grid_dims;
    let k = 2.0 * PI / wavelength * spacing;
    let (ux, uz) = (elevation.sin() * azimuth.cos(), elevation.cos());
    CVector::from_fn(mx_count * mz_count, |m, _| {
        let (mx, mz) = ((m / mz_count) as f64, (m % mz_count) as f64);
        cis(k * (mx * ux + mz * uz))
    })
}

/// One SIM: geometry, per-layer phases and the cached coupling operators.
#[derive(Debug, Clone)]
pub struct SimStack {
    geometry: SimGeometrySpec,
    /// `phases[q]` holds layer `q+1`.
    phases: Vec<Vec<f64>>,
    /// `operators[q]` couples into layer `q+1` (TX: `Γ_{q+1}`) or out of
    /// layer `q+1` (RX: `Ξ_{q+1}`).
    operators: Vec<CMatrix>,
    correlation: CorrelationOperator,
}

impl SimStack {
    /// Stack with all phases zero.
    pub fn new(geometry: SimGeometrySpec) -> Result<Self> {
        let layers = geometry.layers;
        if layers == 0 {
            return Err(Error::validation("layers", "must be at least 1"));
        }
        let mut operators = Vec::with_capacity(layers);
        for q in 1..=layers {
            let op = match geometry.role {
                SimRole::Transmit => diffraction_operator(&geometry, q - 1, q)?,
                SimRole::Receive => diffraction_operator(&geometry, q, q - 1)?,
            };
            operators.push(op);
        }
        let correlation = correlation_operator(&geometry);
        let m = geometry.meta_atoms();
        Ok(SimStack {
            phases: vec![vec![0.0; m]; layers],
            geometry,
            operators,
            correlation,
        })
    }

    /// Stack with phases drawn uniformly in `(-π, π]`.
    pub fn random(geometry: SimGeometrySpec, rng: &mut impl Rng) -> Result<Self> {
        let mut stack = SimStack::new(geometry)?;
        for layer in &mut stack.phases {
            for z in layer.iter_mut() {
                *z = wrap_phase(rng.random_range(-PI..PI));
            }
        }
        Ok(stack)
    }

    pub fn geometry(&self) -> &SimGeometrySpec {
        &self.geometry
    }

    pub fn role(&self) -> SimRole {
        self.geometry.role
    }

    pub fn layers(&self) -> usize {
        self.geometry.layers
    }

    pub fn meta_atoms(&self) -> usize {
        self.geometry.meta_atoms()
    }

    pub fn phases(&self) -> &[Vec<f64>] {
        &self.phases
    }

    /// Operator of layer `q` (1-based): `Γ_q` for TX, `Ξ_q` for RX.
    pub fn operator(&self, q: usize) -> &CMatrix {
        &self.operators[q - 1]
    }

    pub fn correlation(&self) -> &CorrelationOperator {
        &self.correlation
    }

    /// Replace the phases of layer `q` (1-based); values are wrapped into `(-π, π]`.
    pub fn set_layer_phases(&mut self, q: usize, phases: &[f64]) -> Result<()> {
        if q == 0 || q > self.layers() {
            return Err(Error::LayerOutOfRange {
                index: q,
                layers: self.layers(),
            });
        }
        if phases.len() != self.meta_atoms() {
            return Err(Error::Dimension(format!(
                "{} phases for a layer of {} atoms",
                phases.len(),
                self.meta_atoms()
            )));
        }
        self.phases[q - 1] = phases.iter().map(|&z| wrap_phase(z)).collect();
        Ok(())
    }

    /// Set a single phase without wrapping (used by finite differences).
    pub fn set_phase_raw(&mut self, q: usize, m: usize, value: f64) {
        self.phases[q - 1][m] = value;
    }

    pub fn phase_matrix(&self, q: usize) -> CMatrix {
        phase_matrix(&self.phases[q - 1])
    }

    /// `v = Ψ_Q Γ_Q ⋯ Ψ_1 Γ_1` (M×1).
    pub fn tx_transfer(&self) -> Result<CVector> {
        if self.role() != SimRole::Transmit {
            return Err(Error::RoleMismatch { expected: "transmit" });
        }
        let mut w: CVector = self.operators[0].column(0).into_owned();
        for q in 1..=self.layers() {
            if q > 1 {
                w = &self.operators[q - 1] * w;
            }
            for (x, z) in w.iter_mut().zip(&self.phases[q - 1]) {
                *x *= cis(*z);
            }
        }
        Ok(w)
    }

    /// `u = Ξ_1 Δ_1 Ξ_2 Δ_2 ⋯ Ξ_Q̃ Δ_Q̃` (1×M̃).
    pub fn rx_transfer(&self) -> Result<CRow> {
        if self.role() != SimRole::Receive {
            return Err(Error::RoleMismatch { expected: "receive" });
        }
        let mut row: CRow = self.operators[0].row(0).into_owned();
        for q in 1..=self.layers() {
            if q > 1 {
                row *= &self.operators[q - 1];
            }
            for (x, z) in row.iter_mut().zip(&self.phases[q - 1]) {
                *x *= cis(*z);
            }
        }
        Ok(row)
    }
}

/// Complex normal draw `CN(0, 1)`.
pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    use rand_distr::StandardNormal;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
