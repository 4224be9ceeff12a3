//! Truncated TLS ⊗ Fock master-equation oracle.
//!
//! Basis ordering is TLS-index major: `index = s·N + n` with `s = 0` for `|g⟩`,
//! `s = 1` for `|e⟩` and `n < N = fock_dim`. `σz = diag(-1, +1)`, `σ₋ = |g⟩⟨e|`.
//! Density matrices are stored row-major.

mod generator;
mod observables;
mod propagate;

pub use generator::{build_generator, DriveAmplitudes, Generator, HilbertConfig};
pub use observables::{
    correlator_spectrum, ensemble_rabi, output_scale_correction, pinned_cavity_amplitudes, simulate_delta_v,
    two_time_correlator, DeltaV, RabiRun,
};
pub use propagate::{evolve, evolve_observe, steady_state, steady_state_relaxed, RelaxOptions, StepPlan};

pub use crate::qubit::dispersive_correction;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) const C0: Complex64 = Complex64::new(0.0, 0.0);

/// Density operator on the `2·fock_dim` dimensional product space.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    fock_dim: usize,
    data: Vec<Complex64>,
}

impl DensityOperator {
    /// Wraps a row-major matrix without validation.
    pub fn from_raw(fock_dim: usize, data: Vec<Complex64>) -> Result<Self> {
        let d = 2 * fock_dim;
        if data.len() != d * d {
            return Err(Error::Density(format!("expected {} entries, got {}", d * d, data.len())));
        }
        Ok(Self { fock_dim, data })
    }

    /// `|s, n⟩⟨s, n|`.
    pub fn basis(fock_dim: usize, s: usize, n: usize) -> Self {
        let d = 2 * fock_dim;
        let mut data = vec![C0; d * d];
        let i = s * fock_dim + n;
        data[i * d + i] = Complex64::new(1.0, 0.0);
        Self { fock_dim, data }
    }

    /// `|s⟩⟨s| ⊗ |α⟩⟨α|` with the coherent state truncated and renormalized.
    pub fn pinned_coherent(fock_dim: usize, s: usize, alpha: Complex64) -> Self {
        let amps = coherent_amplitudes(fock_dim, alpha);
        let d = 2 * fock_dim;
        let mut data = vec![C0; d * d];
        for (n, an) in amps.iter().enumerate() {
            for (m, am) in amps.iter().enumerate() {
                data[(s * fock_dim + n) * d + s * fock_dim + m] = an * am.conj();
            }
        }
        Self { fock_dim, data }
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn dim(&self) -> usize {
        2 * self.fock_dim
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim() + j]
    }

    pub fn trace(&self) -> Complex64 {
        let d = self.dim();
        (0..d).map(|i| self.data[i * d + i]).sum()
    }

    /// Largest `|ρ_ij - ρ_ji*|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.data[i * d + j] - self.data[j * d + i].conj()).norm());
            }
        }
        worst
    }

    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.data)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.to_matrix();
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Checks Hermiticity (1e-10), unit trace (1e-8) and the eigenvalue floor (-1e-8).
    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::Density(format!("not Hermitian (max deviation {herm:.2e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).norm() > 1e-8 {
            return Err(Error::Density(format!("trace {tr} differs from 1")));
        }
        let min = self.eigenvalues()[0];
        if min < -1e-8 {
            return Err(Error::Density(format!("negative eigenvalue {min:.2e}")));
        }
        Ok(())
    }

    /// `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)`.
    pub fn bloch_vector(&self) -> [f64; 3] {
        let (n, d) = (self.fock_dim, self.dim());
        let mut eg = C0;
        let mut z = 0.0;
        for k in 0..n {
            let (g, e) = (k, n + k);
            eg += self.data[e * d + g];
            z += self.data[e * d + e].re - self.data[g * d + g].re;
        }
        [2.0 * eg.re, -2.0 * eg.im, z]
    }

    pub fn excited_population(&self) -> f64 {
        let (n, d) = (self.fock_dim, self.dim());
        (n..2 * n).map(|i| self.data[i * d + i].re).sum()
    }

    pub fn photon_number(&self) -> f64 {
        let (n, d) = (self.fock_dim, self.dim());
        (0..d).map(|i| (i % n) as f64 * self.data[i * d + i].re).sum()
    }

    /// `⟨a⟩ = tr(aρ)`.
    pub fn expect_a(&self) -> Complex64 {
        let (n, d) = (self.fock_dim, self.dim());
        let mut acc = C0;
        for i in 0..d {
            if i % n + 1 < n {
                acc += ((i % n + 1) as f64).sqrt() * self.data[(i + 1) * d + i];
            }
        }
        acc
    }

    /// `‖ρ - σ‖₁ / 2`.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        if other.fock_dim != self.fock_dim {
            return Err(Error::Density("dimension mismatch".into()));
        }
        let diff = Self {
            fock_dim: self.fock_dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        };
        Ok(0.5 * diff.eigenvalues().iter().map(|v| v.abs()).sum::<f64>())
    }
}

/// Truncated, renormalized coherent-state amplitudes.
pub(crate) fn coherent_amplitudes(fock_dim: usize, alpha: Complex64) -> Vec<Complex64> {
    let mut amps = Vec::with_capacity(fock_dim);
    let mut c = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..fock_dim {
        amps.push(c);
        c = c * alpha / ((n + 1) as f64).sqrt();
    }
    let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter().map(|a| a / norm).collect()
}
