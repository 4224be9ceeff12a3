use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::propagate::{evolve_observe, propagate_raw};
use super::{build_generator, DensityOperator, DriveAmplitudes, Generator, HilbertConfig, C0};
use crate::error::{Error, Result};
use crate::qubit::{CavityParams, SpinTrajectory, TlsParams};
use crate::spectrum::{spectrum_from_correlator, CorrelatorSeries, SpectrumRecord};

/// Closed-form coherent amplitudes `α_s = -iε/(κ/2 + i(Δc + χz_s))`.
pub(crate) fn closed_form_pinned(g: &Generator) -> (Complex64, Complex64) {
    let amp = |z: f64| {
        Complex64::new(0.0, -g.eps_m) / Complex64::new(g.kappa / 2.0, g.hilbert.cavity_detuning + g.chi * z)
    };
    (amp(-1.0), amp(1.0))
}

fn trace_a(y: &[Complex64], n: usize) -> Complex64 {
    let d = 2 * n;
    let mut acc = C0;
    for i in 0..d {
        if i % n + 1 < n {
            acc += ((i % n + 1) as f64).sqrt() * y[(i + 1) * d + i];
        }
    }
    acc
}

fn trace_adag(y: &[Complex64], n: usize) -> Complex64 {
    let d = 2 * n;
    let mut acc = C0;
    for i in 0..d {
        if i % n + 1 < n {
            acc += ((i % n + 1) as f64).sqrt() * y[i * d + i + 1];
        }
    }
    acc
}

/// `K'(τ) = κ Re tr[a† e^{Lτ}((a - ⟨a⟩)ρ_ss)]` on a uniform grid from 0.
pub fn two_time_correlator(steady: &DensityOperator, g: &Generator, taus: &[f64]) -> Result<CorrelatorSeries<f64>> {
    if steady.fock_dim() != g.fock_dim() {
        return Err(Error::Density("state and generator dimensions differ".into()));
    }
    if taus.first() != Some(&0.0) {
        return Err(Error::Grid("tau grid must start at 0".into()));
    }
    let n = g.fock_dim();
    let d = 2 * n;
    let rho = steady.as_slice();
    let mean = steady.expect_a();
    let mut x = vec![C0; d * d];
    for i in 0..d {
        let k = i % n;
        for j in 0..d {
            let lowered = if k + 1 < n {
                ((k + 1) as f64).sqrt() * rho[(i + 1) * d + j]
            } else {
                C0
            };
            x[i * d + j] = lowered - mean * rho[i * d + j];
        }
    }
    let mut values = Vec::with_capacity(taus.len());
    propagate_raw(g, &mut x, taus, |_, _, y| {
        values.push(g.kappa * trace_adag(y, n).re);
        Ok(())
    })?;
    let mut meta = crate::spectrum::Meta::new();
    meta.insert("units".into(), "field".into());
    meta.insert("fock_dim".into(), n.into());
    meta.insert("nbar_measured".into(), steady.photon_number().into());
    Ok(CorrelatorSeries {
        taus: taus.to_vec(),
        values,
        meta,
    })
}

/// One-sided spectrum in spin units: `K'` divided by `(δV/2)²` and transformed.
pub fn correlator_spectrum(corr: &CorrelatorSeries<f64>, delta_v: f64) -> Result<SpectrumRecord<f64>> {
    if !(delta_v > 0.0) {
        return Err(Error::param("delta_v", "must be > 0"));
    }
    let scale = 4.0 / (delta_v * delta_v);
    let spin = CorrelatorSeries {
        taus: corr.taus.clone(),
        values: corr.values.iter().map(|v| v * scale).collect(),
        meta: corr.meta.clone(),
    };
    let mut rec = spectrum_from_correlator(&spin)?;
    rec.meta.insert("units".into(), "spin".into());
    rec.meta.insert("delta_v".into(), delta_v.into());
    Ok(rec)
}

/// Steady intracavity amplitudes with the TLS frozen in `|g⟩` and `|e⟩`,
/// obtained by relaxing the pinned dynamics from the vacuum.
pub fn pinned_cavity_amplitudes(g: &Generator) -> Result<(Complex64, Complex64)> {
    let pinned = g.with_qubit_drive(0.0).with_tls_rates(0.0, 0.0);
    let t_end = 40.0 / g.kappa;
    let n = g.fock_dim();
    let mut out = [C0; 2];
    for (s, slot) in out.iter_mut().enumerate() {
        let mut y = DensityOperator::basis(n, s, 0).as_slice().to_vec();
        propagate_raw(&pinned, &mut y, &[0.0, t_end], |_, _, _| Ok(()))?;
        *slot = trace_a(&y, n);
    }
    Ok((out[0], out[1]))
}

/// Pointer-state separation in field units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaV {
    /// `√κ·|α_g - α_e|`, so that `(δV/2)²` is the output power per unit `⟨σz²⟩`
    pub delta_v: f64,
    /// `|arg α_g - arg α_e|` (rad)
    pub phase: f64,
    pub alpha_g: Complex64,
    pub alpha_e: Complex64,
}

pub fn simulate_delta_v(
    tls: &TlsParams<f64>,
    cavity: &CavityParams<f64>,
    hilbert: &HilbertConfig,
    eps_m: f64,
) -> Result<DeltaV> {
    let g = build_generator(tls, cavity, hilbert, &DriveAmplitudes { eps_m, eps_d: 0.0 })?;
    let (alpha_g, alpha_e) = pinned_cavity_amplitudes(&g)?;
    let mut phase = (alpha_g.arg() - alpha_e.arg()).abs();
    if phase > std::f64::consts::PI {
        phase = 2.0 * std::f64::consts::PI - phase;
    }
    if alpha_g.norm() < 1e-300 || alpha_e.norm() < 1e-300 {
        phase = 0.0;
    }
    Ok(DeltaV {
        delta_v: g.kappa.sqrt() * (alpha_g - alpha_e).norm(),
        phase,
        alpha_g,
        alpha_e,
    })
}

/// Output scale `δV(1 - λn̄)` accompanying `χ(n̄)`.
pub fn output_scale_correction(delta_v: f64, lambda: f64, nbar: f64) -> Result<f64> {
    let ln = lambda * nbar;
    if !(0.0..1.0).contains(&ln) {
        return Err(Error::OutOfValidity(format!("lambda*nbar = {ln} must lie in [0, 1)")));
    }
    Ok(delta_v * (1.0 - ln))
}

/// Ensemble Rabi trajectory plus the photon number it actually ran at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiRun {
    pub trajectory: SpinTrajectory<f64>,
    /// `⟨a†a⟩` of the initial pinned state
    pub nbar_measured: f64,
    pub fock_dim: usize,
}

/// Starts from `|g⟩⊗|α_g⟩` with the measurement tone on and switches on a
/// Stark-compensated qubit drive at `t = times[0]`.
pub fn ensemble_rabi(
    tls: &TlsParams<f64>,
    cavity: &CavityParams<f64>,
    nbar: f64,
    omega_rabi: f64,
    times: &[f64],
    fock_dim: Option<usize>,
) -> Result<RabiRun> {
    let chi = cavity.chi_at(nbar)?;
    let mut hilbert = HilbertConfig::stark_compensated(nbar, chi);
    if let Some(n) = fock_dim {
        hilbert.fock_dim = n;
    }
    let drives = DriveAmplitudes::from_nbar(nbar, cavity.kappa, omega_rabi);
    let g = build_generator(tls, cavity, &hilbert, &drives)?;
    let (alpha_g, _) = closed_form_pinned(&g);
    let rho0 = DensityOperator::pinned_coherent(hilbert.fock_dim, 0, alpha_g);
    let nbar_measured = rho0.photon_number();
    let mut xyz = Vec::with_capacity(times.len());
    evolve_observe(&rho0, &g, times, 16, |_, r| xyz.push(r.bloch_vector()))?;
    Ok(RabiRun {
        trajectory: SpinTrajectory {
            times: times.to_vec(),
            xyz,
        },
        nbar_measured,
        fock_dim: hilbert.fock_dim,
    })
}
