use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::C0;
use crate::error::{Error, Result};
use crate::qubit::{CavityParams, TlsParams};

/// Truncation and rotating-frame detunings (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HilbertConfig {
    pub fock_dim: usize,
    /// `ω_ge - ω_d`
    pub qubit_detuning: f64,
    /// `ω_c - ω_m`
    pub cavity_detuning: f64,
}

impl HilbertConfig {
    /// `ceil(n̄ + 5√n̄ + 5)`.
    pub fn required_fock_dim(nbar: f64) -> usize {
        (nbar + 5.0 * nbar.sqrt() + 5.0).ceil() as usize
    }

    /// Below this the truncation is rejected outright.
    pub fn minimum_fock_dim(nbar: f64) -> usize {
        ((nbar + 2.0 * nbar.sqrt() + 2.0).ceil() as usize).max(2)
    }

    /// Resonant measurement tone and a qubit drive on the Stark-shifted line.
    pub fn stark_compensated(nbar: f64, chi: f64) -> Self {
        Self {
            fock_dim: Self::required_fock_dim(nbar),
            qubit_detuning: -2.0 * chi * nbar,
            cavity_detuning: 0.0,
        }
    }
}

/// Drive amplitudes (rad/s): `V_m(a + a†) + V_d σx`, so `ω_R = 2V_d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveAmplitudes {
    pub eps_m: f64,
    pub eps_d: f64,
}

impl DriveAmplitudes {
    /// Empty-cavity relation `ε_m = κ√n̄/2` and `ε_d = ω_R/2`.
    pub fn from_nbar(nbar: f64, kappa: f64, omega_rabi: f64) -> Self {
        Self {
            eps_m: kappa * nbar.max(0.0).sqrt() / 2.0,
            eps_d: omega_rabi / 2.0,
        }
    }
}

/// Lindblad generator
/// `L ρ = -i[H, ρ] + κD[a]ρ + Γ₁D[σ₋]ρ + (Γφ/2)D[σz]ρ`,
/// `H = (Δq/2)σz + Δc a†a + χ a†aσz + ε_m(a + a†) + ε_d σx`,
/// applied matrix-free in `O(d²)`.
#[derive(Clone, Debug)]
pub struct Generator {
    n: usize,
    /// Diagonal of `H_eff = H - (i/2)ΣA†A`.
    heff_diag: Vec<Complex64>,
    zsign: Vec<f64>,
    sqrt_n: Vec<f64>,
    pub(crate) eps_m: f64,
    pub(crate) eps_d: f64,
    pub(crate) kappa: f64,
    pub(crate) gamma1: f64,
    pub(crate) gamma_phi: f64,
    pub(crate) chi: f64,
    pub(crate) hilbert: HilbertConfig,
}

/// Empty-cavity photon number for the TLS pinned in `z = ±1`.
pub(crate) fn pinned_photon_number(eps_m: f64, kappa: f64, cavity_detuning: f64, chi: f64, z: f64) -> f64 {
    let d = cavity_detuning + chi * z;
    eps_m * eps_m / (d * d + kappa * kappa / 4.0)
}

pub fn build_generator(
    tls: &TlsParams<f64>,
    cavity: &CavityParams<f64>,
    hilbert: &HilbertConfig,
    drives: &DriveAmplitudes,
) -> Result<Generator> {
    tls.validate()?;
    cavity.validate()?;
    crate::error::check_nonneg("eps_m", drives.eps_m)?;
    crate::error::check_nonneg("eps_d", drives.eps_d)?;
    if hilbert.fock_dim < 2 {
        return Err(Error::param("fock_dim", "must be >= 2"));
    }
    let n_free = drives.eps_m * drives.eps_m / (hilbert.cavity_detuning.powi(2) + cavity.kappa.powi(2) / 4.0);
    let chi = cavity.chi_at(n_free)?;
    let nbar = 0.5
        * (pinned_photon_number(drives.eps_m, cavity.kappa, hilbert.cavity_detuning, chi, -1.0)
            + pinned_photon_number(drives.eps_m, cavity.kappa, hilbert.cavity_detuning, chi, 1.0));
    let required = HilbertConfig::required_fock_dim(nbar);
    if hilbert.fock_dim < HilbertConfig::minimum_fock_dim(nbar) {
        return Err(Error::Truncation {
            fock_dim: hilbert.fock_dim,
            nbar,
            required,
        });
    }
    if hilbert.fock_dim < required {
        log::warn!("fock_dim {} below recommended {required} for n = {nbar:.3}", hilbert.fock_dim);
    }
    Ok(Generator::new(tls, cavity.kappa, chi, hilbert, drives))
}

impl Generator {
    fn new(tls: &TlsParams<f64>, kappa: f64, chi: f64, hilbert: &HilbertConfig, drives: &DriveAmplitudes) -> Self {
        let n = hilbert.fock_dim;
        let mut g = Self {
            n,
            heff_diag: Vec::new(),
            zsign: (0..2 * n).map(|i| if i < n { -1.0 } else { 1.0 }).collect(),
            sqrt_n: (0..=n).map(|k| (k as f64).sqrt()).collect(),
            eps_m: drives.eps_m,
            eps_d: drives.eps_d,
            kappa,
            gamma1: tls.gamma1,
            gamma_phi: tls.gamma_phi0,
            chi,
            hilbert: *hilbert,
        };
        g.refresh_diagonal();
        g
    }

    fn refresh_diagonal(&mut self) {
        let n = self.n;
        self.heff_diag = (0..2 * n)
            .map(|i| {
                let (z, k) = (self.zsign[i], (i % n) as f64);
                let h = 0.5 * self.hilbert.qubit_detuning * z + self.hilbert.cavity_detuning * k + self.chi * k * z;
                let loss = self.kappa * k + if i >= n { self.gamma1 } else { 0.0 } + 0.5 * self.gamma_phi;
                Complex64::new(h, -0.5 * loss)
            })
            .collect();
    }

    /// Same generator with the TLS rates replaced.
    pub fn with_tls_rates(&self, gamma1: f64, gamma_phi: f64) -> Self {
        let mut g = self.clone();
        g.gamma1 = gamma1;
        g.gamma_phi = gamma_phi;
        g.refresh_diagonal();
        g
    }

    pub fn fock_dim(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Dispersive shift actually used (after the `λ` correction).
    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn hilbert(&self) -> &HilbertConfig {
        &self.hilbert
    }

    /// Same generator with the qubit drive replaced.
    pub fn with_qubit_drive(&self, eps_d: f64) -> Self {
        let mut g = self.clone();
        g.eps_d = eps_d;
        g
    }

    /// Largest single-term Hamiltonian frequency scale, used for step control.
    pub fn omega_max(&self) -> f64 {
        let top = (self.n - 1) as f64;
        [
            self.hilbert.qubit_detuning.abs() + 2.0 * self.chi.abs() * top,
            self.hilbert.cavity_detuning.abs() * top,
            2.0 * self.eps_m * top.sqrt(),
            2.0 * self.eps_d,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Gershgorin-type bound on the spectral radius of `L`.
    pub fn spectral_bound(&self) -> f64 {
        let top = (self.n - 1) as f64;
        let h_norm = 0.5 * self.hilbert.qubit_detuning.abs()
            + (self.hilbert.cavity_detuning.abs() + self.chi.abs()) * top
            + 2.0 * self.eps_m * top.sqrt()
            + self.eps_d;
        2.0 * h_norm + 2.0 * self.kappa * top + 2.0 * self.gamma1 + self.gamma_phi
    }

    /// `out = L ρ` on row-major `d×d` storage.
    pub fn apply(&self, rho: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        let d = 2 * n;
        debug_assert_eq!(rho.len(), d * d);
        let mi = Complex64::new(0.0, -1.0);
        let (vm, vd) = (self.eps_m, self.eps_d);
        let sq = &self.sqrt_n;
        for i in 0..d {
            let ni = i % n;
            let fi = (i + n) % d;
            let row = &rho[i * d..(i + 1) * d];
            let row_up = if ni + 1 < n { Some(&rho[(i + 1) * d..(i + 2) * d]) } else { None };
            let row_dn = if ni > 0 { Some(&rho[(i - 1) * d..i * d]) } else { None };
            let row_flip = &rho[fi * d..(fi + 1) * d];
            let di = self.heff_diag[i];
            let zi = self.zsign[i];
            let decay_row = if i < n && self.gamma1 != 0.0 {
                Some(&rho[(i + n) * d..(i + n + 1) * d])
            } else {
                None
            };
            for j in 0..d {
                let nj = j % n;
                let fj = (j + n) % d;
                let r = row[j];
                // H_eff ρ - ρ H_eff†
                let mut comm = (di - self.heff_diag[j].conj()) * r;
                let mut hop = C0;
                if let Some(u) = row_up {
                    hop += sq[ni + 1] * u[j];
                }
                if let Some(dn) = row_dn {
                    hop += sq[ni] * dn[j];
                }
                if nj + 1 < n {
                    hop -= sq[nj + 1] * row[j + 1];
                }
                if nj > 0 {
                    hop -= sq[nj] * row[j - 1];
                }
                comm += vm * hop + vd * (row_flip[j] - row[fj]);
                let mut acc = mi * comm;
                if let Some(u) = row_up {
                    if nj + 1 < n {
                        acc += self.kappa * sq[ni + 1] * sq[nj + 1] * u[j + 1];
                    }
                }
                if let Some(e) = decay_row {
                    if j < n {
                        acc += self.gamma1 * e[j + n];
                    }
                }
                acc += 0.5 * self.gamma_phi * zi * self.zsign[j] * r;
                out[i * d + j] = acc;
            }
        }
    }

    /// Dense Liouvillian acting on row-major vectorized `ρ`.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let d2 = self.dim() * self.dim();
        let mut m = DMatrix::from_element(d2, d2, C0);
        let mut e = vec![C0; d2];
        let mut col = vec![C0; d2];
        for q in 0..d2 {
            e[q] = Complex64::new(1.0, 0.0);
            self.apply(&e, &mut col);
            for (p, v) in col.iter().enumerate() {
                if *v != C0 {
                    m[(p, q)] = *v;
                }
            }
            e[q] = C0;
        }
        m
    }
}
