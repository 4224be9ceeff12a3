use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::periodogram::AcquiredSpectra;
use super::{ErrorBudget, LineResponse};
use crate::error::{Error, Result};
use crate::qubit::{cavity_filter, cavity_filter_unchecked};
use crate::spectrum::{
    correlator_from_spectrum, leggett_garg_curve, CorrelatorSeries, GridKind, LgCurve, SpectrumRecord, SpectrumUnits,
};

/// Smallest `C` accepted by [`deconvolve_cavity`].
pub const MIN_FILTER: f64 = 0.1;

/// Number of one-sided bins `floor(f_max/Δf)` kept for the inverse transform.
pub fn window_bins(df_hz: f64, f_max_hz: f64) -> usize {
    (f_max_hz / df_hz + 1e-9).floor() as usize
}

/// `S̃ = (S_on - S_off) / (R·(δV/2)²)`.
pub fn correct_and_normalize(
    on: &SpectrumRecord<f64>,
    off: &SpectrumRecord<f64>,
    line: &LineResponse,
    delta_v: f64,
) -> Result<SpectrumRecord<f64>> {
    line.validate()?;
    if !(delta_v > 0.0) {
        return Err(Error::param("delta_v", "must be > 0"));
    }
    if on.units != SpectrumUnits::VoltsSquared || off.units != SpectrumUnits::VoltsSquared {
        return Err(Error::Convention("ON/OFF spectra must be in volts²".into()));
    }
    if on.omegas != off.omegas || on.grid != off.grid || on.density.len() != off.density.len() {
        return Err(Error::Grid("ON and OFF grids differ".into()));
    }
    on.step()?;
    let v2 = 0.25 * delta_v * delta_v;
    let mut out = on.clone();
    out.units = SpectrumUnits::SpinUnits;
    for (k, d) in out.density.iter_mut().enumerate() {
        let f = on.omegas[k] / TAU;
        let r = line.r_at(f);
        if r < 1e-6 {
            return Err(Error::Data(format!("line response vanishes at {f} Hz")));
        }
        *d = (on.density[k] - off.density[k]) / (r * v2);
    }
    out.meta.insert("delta_v".into(), delta_v.into());
    out.meta.insert("stage".into(), "corrected".into());
    Ok(out)
}

/// `S = S̃ / C`, refusing windows where `C` drops below [`MIN_FILTER`].
pub fn deconvolve_cavity(spec: &SpectrumRecord<f64>, kappa: f64) -> Result<SpectrumRecord<f64>> {
    let w_max = spec.omegas.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let c_min = cavity_filter(w_max, kappa)?;
    if c_min < MIN_FILTER {
        return Err(Error::Data(format!(
            "cavity filter falls to {c_min:.3} at {:.3e} Hz; narrow the window",
            w_max / TAU
        )));
    }
    let mut out = spec.clone();
    for (d, w) in out.density.iter_mut().zip(&spec.omegas) {
        *d /= cavity_filter_unchecked(*w, kappa);
    }
    out.meta.insert("deconvolved_kappa".into(), kappa.into());
    Ok(out)
}

/// Sample standard deviation of the bins with `f_lo ≤ f ≤ f_hi`.
pub fn measure_sigma0(spec: &SpectrumRecord<f64>, f_lo_hz: f64, f_hi_hz: f64) -> Result<f64> {
    let vals: Vec<f64> = spec
        .omegas
        .iter()
        .zip(&spec.density)
        .filter(|(w, _)| (f_lo_hz..=f_hi_hz).contains(&(**w / TAU)))
        .map(|(_, d)| *d)
        .collect();
    if vals.len() < 2 {
        return Err(Error::Data(format!("fewer than two bins between {f_lo_hz} and {f_hi_hz} Hz")));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    Ok(var.sqrt())
}

/// Statistical σ of `f(τ_r)`, `r = 0..n_points`, for independent bins of
/// σ `σ₀/C(2πkΔf)` over an `M`-bin window (`N = 2M`):
/// `σ_r = Δf·sqrt(σ₀² + 4Σ_{k≥1} σ_k²[2cos(2πrk/N) - cos(4πrk/N)]²)`.
pub fn statistical_sigma(sigma0: f64, kappa: f64, df_hz: f64, n_bins: usize, n_points: usize) -> Result<Vec<f64>> {
    crate::error::check_nonneg("sigma0", sigma0)?;
    crate::error::check_pos("df_hz", df_hz)?;
    cavity_filter(0.0, kappa)?;
    let n = 2 * n_bins;
    let var: Vec<f64> = (0..n_bins)
        .map(|k| (sigma0 / cavity_filter_unchecked(TAU * df_hz * k as f64, kappa)).powi(2))
        .collect();
    Ok((0..n_points)
        .map(|r| {
            let mut acc = var.first().copied().unwrap_or(0.0);
            for (k, v) in var.iter().enumerate().skip(1) {
                let a = TAU * ((r * k) % n) as f64 / n as f64;
                let b = TAU * ((2 * r * k) % n) as f64 / n as f64;
                acc += 4.0 * v * (2.0 * a.cos() - b.cos()).powi(2);
            }
            df_hz * acc.sqrt()
        })
        .collect())
}

fn lg_from_corrected(corrected: &SpectrumRecord<f64>, kappa: f64) -> Result<(CorrelatorSeries<f64>, LgCurve<f64>)> {
    let s = deconvolve_cavity(corrected, kappa)?;
    let k = correlator_from_spectrum(&s)?;
    let curve = leggett_garg_curve(&k, None)?;
    Ok((k, curve))
}

/// Adds systematic bounds: `ΔR/R` and `Δ(δV/2)²/(δV/2)²` as flat relative
/// errors on `f`, and `Δκ/κ` propagated exactly by redoing the
/// deconvolution of `corrected` with `κ(1 ± Δκ/κ)`.
pub fn systematic_bounds(
    curve: &LgCurve<f64>,
    budget: &ErrorBudget,
    corrected: &SpectrumRecord<f64>,
    kappa: f64,
) -> Result<LgCurve<f64>> {
    budget.validate()?;
    let n = curve.f.len();
    let mut dk = vec![0.0; n];
    if budget.dkappa_over_kappa > 0.0 {
        for sign in [1.0, -1.0] {
            let (_, alt) = lg_from_corrected(corrected, kappa * (1.0 + sign * budget.dkappa_over_kappa))?;
            if alt.f.len() < n {
                return Err(Error::Grid("systematic curve shorter than the nominal one".into()));
            }
            for r in 0..n {
                dk[r] = f64::max(dk[r], (alt.f[r] - curve.f[r]).abs());
            }
        }
    }
    let flat = budget.dr_over_r + budget.dv2_over_v2;
    let mut out = curve.clone();
    for r in 0..n {
        let d = flat * curve.f[r].abs() + dk[r];
        out.sys_lo[r] = curve.f[r] - d;
        out.sys_hi[r] = curve.f[r] + d;
    }
    out.meta.insert("sys_kappa_part".into(), serde_json::to_value(&dk).unwrap_or_default());
    out.meta.insert("budget".into(), serde_json::to_value(budget).unwrap_or_default());
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgOptions {
    /// upper edge of the analysed window (Hz)
    pub f_max_hz: f64,
    /// signal-free band for measuring σ₀ (Hz)
    pub sigma_band_hz: (f64, f64),
    /// overrides the measured σ₀
    pub sigma0: Option<f64>,
    pub budget: ErrorBudget,
}

impl Default for LgOptions {
    fn default() -> Self {
        Self {
            f_max_hz: 30e6,
            sigma_band_hz: (22e6, 30e6),
            sigma0: None,
            budget: ErrorBudget::reference(),
        }
    }
}

/// Output of the full chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgAnalysis {
    /// `S̃` in the analysed window
    pub corrected: SpectrumRecord<f64>,
    /// `S̃/C`
    pub spectrum: SpectrumRecord<f64>,
    pub correlator: CorrelatorSeries<f64>,
    pub curve: LgCurve<f64>,
    pub sigma0: f64,
    pub budget: ErrorBudget,
    pub k0: f64,
    /// grid index of the largest `f` at `τ > 0`
    pub index_star: usize,
    pub tau_star: f64,
    pub f_star: f64,
    pub sigma_star: f64,
    /// `f* - 1 - systematic`, in units of `σ_r`
    pub significance: f64,
}

impl LgAnalysis {
    /// Chain starting from a corrected one-sided spectrum already limited to the window.
    pub fn from_corrected(corrected: SpectrumRecord<f64>, kappa: f64, opts: &LgOptions) -> Result<Self> {
        if corrected.grid != GridKind::OneSided || corrected.units != SpectrumUnits::SpinUnits {
            return Err(Error::Convention("expected a one-sided spectrum in spin units".into()));
        }
        let df = corrected.df_hz()?;
        let m = corrected.len();
        let sigma0 = match opts.sigma0 {
            Some(s) => s,
            None => measure_sigma0(&corrected, opts.sigma_band_hz.0, opts.sigma_band_hz.1)?,
        };
        let spectrum = deconvolve_cavity(&corrected, kappa)?;
        let correlator = correlator_from_spectrum(&spectrum)?;
        let bare = leggett_garg_curve(&correlator, None)?;
        let mut curve = systematic_bounds(&bare, &opts.budget, &corrected, kappa)?;
        curve.sigma_stat = statistical_sigma(sigma0, kappa, df, m, curve.f.len())?;
        curve.meta.insert("sigma0".into(), sigma0.into());
        let mut index_star = 1.min(curve.f.len() - 1);
        for r in 1..curve.f.len() {
            if curve.f[r] > curve.f[index_star] {
                index_star = r;
            }
        }
        let sigma_star = curve.sigma_stat[index_star];
        let significance = (curve.sys_lo[index_star] - 1.0) / sigma_star;
        let mut budget = opts.budget;
        budget.sigma0 = sigma0;
        Ok(Self {
            k0: correlator.values[0],
            tau_star: curve.taus[index_star],
            f_star: curve.f[index_star],
            sigma_star,
            index_star,
            significance,
            sigma0,
            budget,
            corrected,
            spectrum,
            correlator,
            curve,
        })
    }

    /// Total systematic half-width at the violation point, relative to `f*`.
    pub fn relative_systematic(&self) -> f64 {
        (self.f_star - self.curve.sys_lo[self.index_star]) / self.f_star.abs()
    }
}

/// ON/OFF spectra → corrected → windowed → deconvolved → `K` → `f` with both error bars.
pub fn run_lg_analysis(
    spectra: &AcquiredSpectra,
    line: &LineResponse,
    delta_v: f64,
    kappa: f64,
    opts: &LgOptions,
) -> Result<LgAnalysis> {
    let corrected = correct_and_normalize(&spectra.on, &spectra.off, line, delta_v)?;
    let df = corrected.df_hz()?;
    let m = window_bins(df, opts.f_max_hz);
    if m < 4 || m > corrected.len() {
        return Err(Error::Grid(format!("window of {m} bins does not fit the {} available", corrected.len())));
    }
    let mut windowed = corrected;
    windowed.omegas.truncate(m);
    windowed.density.truncate(m);
    LgAnalysis::from_corrected(windowed, kappa, opts)
}
