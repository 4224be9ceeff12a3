//! Analytic σz spectrum, its finite-bandwidth form, the discrete
//! spectrum ↔ correlator transform, and the Leggett-Garg functional.
//!
//! Fourier convention: `K(τ) = (1/2π)∫S(ω)e^{iωτ}dω`, `S(ω) = ∫K(τ)e^{-iωτ}dτ`,
//! so densities are two-sided and per unit angular frequency (numerically
//! equal to a per-Hz density integrated with `df`).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubit::cavity_filter_unchecked;
use crate::scalar::Real;

/// Free-form parameter provenance attached to records.
pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumUnits {
    SpinUnits,
    VoltsSquared,
}

/// Layout of the frequency grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `ω_k = kΔω`, `k = 0..M`; the spectrum is even and only `ω ≥ 0` is stored.
    OneSided,
    /// `ω_k = kΔω`, `k = -(M-1)..=(M-1)`.
    Symmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord<T> {
    /// rad/s
    pub omegas: Vec<T>,
    pub density: Vec<T>,
    pub units: SpectrumUnits,
    pub grid: GridKind,
    pub meta: Meta,
}

impl<T: Real> SpectrumRecord<T> {
    /// One-sided grid `ω_k = 2π·k·df_hz`, `k = 0..n_bins`, zero density.
    pub fn zeros_one_sided(df_hz: T, n_bins: usize, units: SpectrumUnits) -> Self {
        let dw = df_hz * T::TAU();
        Self {
            omegas: (0..n_bins).map(|k| dw * T::from_usize_lossy(k)).collect(),
            density: vec![T::zero(); n_bins],
            units,
            grid: GridKind::OneSided,
            meta: Meta::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// Grid step in rad/s after checking uniformity and layout.
    pub fn step(&self) -> Result<T> {
        let n = self.omegas.len();
        if n < 2 || self.density.len() != n {
            return Err(Error::Grid("need at least two points and matching density length".into()));
        }
        let dw = self.omegas[1] - self.omegas[0];
        if !(dw > T::zero()) {
            return Err(Error::Grid("grid must be increasing".into()));
        }
        let tol = T::lit(1e-9) * dw * T::from_usize_lossy(n);
        for (k, w) in self.omegas.iter().enumerate() {
            let expect = match self.grid {
                GridKind::OneSided => dw * T::from_usize_lossy(k),
                GridKind::Symmetric => dw * (T::from_usize_lossy(k) - T::from_usize_lossy(n / 2)),
            };
            if (*w - expect).abs() > tol {
                return Err(Error::Grid(format!("non-uniform or misaligned grid at index {k}")));
            }
        }
        if self.grid == GridKind::Symmetric && n % 2 == 0 {
            return Err(Error::Grid("symmetric grid needs an odd number of points".into()));
        }
        Ok(dw)
    }

    /// Bin spacing in Hz.
    pub fn df_hz(&self) -> Result<T> {
        Ok(self.step()? / T::TAU())
    }

    /// Keeps only bins with `|ω| ≤ omega_max`.
    pub fn band_limited(&self, omega_max: T) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&k| self.omegas[k].abs() <= omega_max).collect();
        Self {
            omegas: keep.iter().map(|&k| self.omegas[k]).collect(),
            density: keep.iter().map(|&k| self.density[k]).collect(),
            units: self.units,
            grid: self.grid,
            meta: self.meta.clone(),
        }
    }

    /// Appends zero bins so the one-sided record is `factor` times longer.
    pub fn zero_padded(&self, factor: usize) -> Result<Self> {
        if self.grid != GridKind::OneSided || factor == 0 {
            return Err(Error::Grid("zero padding needs a one-sided grid and factor >= 1".into()));
        }
        let dw = self.step()?;
        let n = self.len() * factor;
        let mut out = self.clone();
        out.omegas = (0..n).map(|k| dw * T::from_usize_lossy(k)).collect();
        out.density.resize(n, T::zero());
        Ok(out)
    }

    /// Total weight `(1/2π)∫S dω` on the grid (rectangle rule, even extension).
    pub fn total_weight(&self) -> Result<T> {
        let dw = self.step()?;
        let sum = match self.grid {
            GridKind::OneSided => {
                self.density[0] + T::lit(2.0) * self.density[1..].iter().copied().sum::<T>()
            }
            GridKind::Symmetric => self.density.iter().copied().sum::<T>(),
        };
        Ok(sum * dw / T::TAU())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorSeries<T> {
    /// seconds, uniform from 0
    pub taus: Vec<T>,
    pub values: Vec<T>,
    pub meta: Meta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgCurve<T> {
    /// seconds
    pub taus: Vec<T>,
    pub f: Vec<T>,
    pub sigma_stat: Vec<T>,
    pub sys_lo: Vec<T>,
    pub sys_hi: Vec<T>,
    /// Set when the requested τ range needed `2τ` beyond the correlator grid.
    pub truncated: bool,
    pub meta: Meta,
}

impl<T: Real> LgCurve<T> {
    /// Curve with zero statistical error and bounds collapsed onto `f`.
    pub fn bare(taus: Vec<T>, f: Vec<T>) -> Self {
        let n = f.len();
        Self {
            taus,
            sigma_stat: vec![T::zero(); n],
            sys_lo: f.clone(),
            sys_hi: f.clone(),
            f,
            truncated: false,
            meta: Meta::new(),
        }
    }
}

/// Exact σz spectrum of the resonantly driven, damped TLS:
///
/// `S(ω) = 2/D · { γ(1-z²)(γ²+ω̃²+ω²) + [(1-z²)(Γ₂-Γ₁)/2 + ω_R²z²/Γ₂](γ²+ω̃²-ω²) }`
///
/// with `D = (γ²+ω²+ω̃²)² - 4ω²ω̃²`, `ω̃² = ω_R² - (Γ₂-Γ₁)²/4` kept signed,
/// `γ = (Γ₁+Γ₂)/2` and `z = z_st = -1/(1+ω_R²/(Γ₁Γ₂))`.
/// The overdamped regime (`ω̃² < 0`) needs no special handling. For real `ω̃`
/// the denominator is evaluated as `(γ²+(ω-ω̃)²)(γ²+(ω+ω̃)²)`.
pub fn sigma_z_spectrum<T: Real>(omega: T, omega_rabi: T, gamma1: T, gamma2: T) -> Result<T> {
    check_rates(omega_rabi, gamma1, gamma2)?;
    Ok(sigma_z_spectrum_unchecked(omega, omega_rabi, gamma1, gamma2))
}

fn check_rates<T: Real>(omega_rabi: T, gamma1: T, gamma2: T) -> Result<()> {
    crate::error::check_nonneg("omega_rabi", omega_rabi.to_f64_lossy())?;
    crate::error::check_pos("gamma1", gamma1.to_f64_lossy())?;
    if gamma2 < gamma1 / T::lit(2.0) * (T::one() - T::working_eps()) {
        return Err(Error::UnphysicalRates(format!("gamma2 = {gamma2} below gamma1/2")));
    }
    Ok(())
}

pub(crate) fn sigma_z_spectrum_unchecked<T: Real>(omega: T, omega_rabi: T, gamma1: T, gamma2: T) -> T {
    let two = T::lit(2.0);
    let wr2 = omega_rabi * omega_rabi;
    let z = -T::one() / (T::one() + wr2 / (gamma1 * gamma2));
    let one_mz2 = T::one() - z * z;
    let g = (gamma1 + gamma2) / two;
    let h = (gamma2 - gamma1) / two;
    let wt2 = wr2 - h * h;
    let w2 = omega * omega;
    let a = g * g + wt2;
    let den = if wt2 > T::zero() {
        let wt = wt2.sqrt();
        let (lo, hi) = (omega - wt, omega + wt);
        (g * g + lo * lo) * (g * g + hi * hi)
    } else {
        (a + w2) * (a + w2) - T::lit(4.0) * w2 * wt2
    };
    let num = g * one_mz2 * (a + w2) + (one_mz2 * h + wr2 * z * z / gamma2) * (a - w2);
    two * num / den
}

/// `z_st` that enters [`sigma_z_spectrum`].
pub fn spectrum_z_st<T: Real>(omega_rabi: T, gamma1: T, gamma2: T) -> T {
    -T::one() / (T::one() + omega_rabi * omega_rabi / (gamma1 * gamma2))
}

/// Parameters of the bandwidth-limited detector spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteBandwidthModel<T> {
    pub omega_rabi: T,
    pub gamma1: T,
    /// Intrinsic pure dephasing (white, not filtered by the cavity).
    pub gamma_phi0: T,
    pub nbar: T,
    pub chi: T,
    pub kappa: T,
}

impl<T: Real> FiniteBandwidthModel<T> {
    pub fn validate(&self) -> Result<()> {
        check_rates(self.omega_rabi, self.gamma1, self.gamma1 / T::lit(2.0) + self.gamma_phi0)?;
        crate::error::check_nonneg("gamma_phi0", self.gamma_phi0.to_f64_lossy())?;
        crate::error::check_nonneg("nbar", self.nbar.to_f64_lossy())?;
        crate::error::check_pos("kappa", self.kappa.to_f64_lossy())?;
        Ok(())
    }

    /// Unfiltered measurement-induced dephasing `8n̄χ²/κ`.
    pub fn gamma_phi_meas(&self) -> T {
        T::lit(8.0) * self.nbar * self.chi * self.chi / self.kappa
    }

    /// `Γ₂(ω) = Γ₁/2 + Γφ⁰ + 8n̄χ²/κ·C(ω)`.
    pub fn gamma2_at(&self, omega: T) -> T {
        self.gamma1 / T::lit(2.0) + self.gamma_phi0 + self.gamma_phi_meas() * cavity_filter_unchecked(omega, self.kappa)
    }

    /// Chooses the intrinsic dephasing so that `Γ₂(ω_R)` equals `gamma2_rabi`.
    pub fn with_gamma2_at_rabi(mut self, gamma2_rabi: T) -> Result<Self> {
        self.gamma_phi0 = T::zero();
        let g0 = gamma2_rabi - self.gamma2_at(self.omega_rabi);
        if g0 < T::zero() {
            return Err(Error::UnphysicalRates(format!(
                "requested Γ₂(ω_R) = {gamma2_rabi} is below Γ₁/2 plus the measurement part"
            )));
        }
        self.gamma_phi0 = g0;
        Ok(self)
    }
}

/// `S̃(ω) = C(ω)·S(ω; ω_R, Γ₁, Γ₂(ω))`.
pub fn finite_bandwidth_spectrum<T: Real>(omega: T, model: &FiniteBandwidthModel<T>) -> Result<T> {
    model.validate()?;
    Ok(finite_bandwidth_unchecked(omega, model))
}

fn finite_bandwidth_unchecked<T: Real>(omega: T, m: &FiniteBandwidthModel<T>) -> T {
    let c = cavity_filter_unchecked(omega, m.kappa);
    c * sigma_z_spectrum_unchecked(omega, m.omega_rabi, m.gamma1, m.gamma2_at(omega))
}

/// Evaluates `f` on the given grid in parallel; output order is the grid order.
pub fn tabulate<T, F>(omegas: &[T], f: F) -> Vec<T>
where
    T: Real,
    F: Fn(T) -> T + Sync,
{
    omegas.par_iter().map(|&w| f(w)).collect()
}

/// Finite-bandwidth spectrum tabulated on a one-sided grid.
pub fn finite_bandwidth_record<T: Real>(model: &FiniteBandwidthModel<T>, df_hz: T, n_bins: usize) -> Result<SpectrumRecord<T>> {
    model.validate()?;
    let mut rec = SpectrumRecord::zeros_one_sided(df_hz, n_bins, SpectrumUnits::SpinUnits);
    rec.density = tabulate(&rec.omegas, |w| finite_bandwidth_unchecked(w, model));
    rec.meta.insert("model".into(), "finite_bandwidth".into());
    rec.meta.insert("omega_rabi".into(), model.omega_rabi.to_f64_lossy().into());
    rec.meta.insert("gamma1".into(), model.gamma1.to_f64_lossy().into());
    rec.meta.insert("gamma_phi0".into(), model.gamma_phi0.to_f64_lossy().into());
    rec.meta.insert("nbar".into(), model.nbar.to_f64_lossy().into());
    rec.meta.insert("chi".into(), model.chi.to_f64_lossy().into());
    rec.meta.insert("kappa".into(), model.kappa.to_f64_lossy().into());
    Ok(rec)
}

fn cos_table<T: Real>(n: usize) -> Vec<T> {
    (0..n)
        .map(|j| T::lit((std::f64::consts::TAU * j as f64 / n as f64).cos()))
        .collect()
}

/// Discrete inverse transform.
///
/// A one-sided record with `M` bins is treated as an even spectrum on an
/// `N = 2M` point DFT (Nyquist bin zero):
/// `K_r = Δf[S₀ + 2Σ_{k≥1} S_k cos(2πrk/N)]`, `τ_r = r/(NΔf)`, `r = 0..=N/2`.
/// Symmetric records use the full complex sum and must produce a real result.
pub fn correlator_from_spectrum<T: Real>(spec: &SpectrumRecord<T>) -> Result<CorrelatorSeries<T>> {
    if spec.units != SpectrumUnits::SpinUnits {
        return Err(Error::Convention("correlator needs a spectrum in spin units".into()));
    }
    let dw = spec.step()?;
    let df = dw / T::TAU();
    let (m, n) = match spec.grid {
        GridKind::OneSided => (spec.len(), 2 * spec.len()),
        GridKind::Symmetric => ((spec.len() + 1) / 2, spec.len() + 1),
    };
    let cos = cos_table::<T>(n);
    let dtau = T::one() / (T::from_usize_lossy(n) * df);
    let rs: Vec<usize> = (0..=n / 2).collect();
    let values: Vec<T> = match spec.grid {
        GridKind::OneSided => rs
            .par_iter()
            .map(|&r| {
                let mut acc = T::zero();
                for k in 1..m {
                    acc += spec.density[k] * cos[(r * k) % n];
                }
                df * (spec.density[0] + T::lit(2.0) * acc)
            })
            .collect(),
        GridKind::Symmetric => {
            let sin: Vec<T> = (0..n)
                .map(|j| T::lit((std::f64::consts::TAU * j as f64 / n as f64).sin()))
                .collect();
            let centre = m - 1;
            let parts: Vec<(T, T)> = rs
                .par_iter()
                .map(|&r| {
                    let (mut re, mut im) = (T::zero(), T::zero());
                    for (i, s) in spec.density.iter().enumerate() {
                        let k = (i as isize - centre as isize).rem_euclid(n as isize) as usize;
                        let j = (r * k) % n;
                        re += *s * cos[j];
                        im += *s * sin[j];
                    }
                    (df * re, df * im)
                })
                .collect();
            let scale = parts.iter().map(|p| p.0.abs()).fold(T::zero(), T::max);
            let worst = parts.iter().map(|p| p.1.abs()).fold(T::zero(), T::max);
            if worst > T::lit(1e-10) * scale.max(T::min_positive_value()) {
                return Err(Error::Convention(format!(
                    "inverse transform has imaginary residue {worst} (scale {scale}); spectrum is not even"
                )));
            }
            parts.into_iter().map(|p| p.0).collect()
        }
    };
    let mut meta = spec.meta.clone();
    meta.insert("transform".into(), "inverse_dft_even".into());
    meta.insert("dft_points".into(), n.into());
    Ok(CorrelatorSeries {
        taus: rs.iter().map(|&r| dtau * T::from_usize_lossy(r)).collect(),
        values,
        meta,
    })
}

/// Forward transform back to a one-sided record with `N/2` bins; inverse of
/// [`correlator_from_spectrum`] for one-sided input.
pub fn spectrum_from_correlator<T: Real>(corr: &CorrelatorSeries<T>) -> Result<SpectrumRecord<T>> {
    let len = corr.values.len();
    if len < 2 || corr.taus.len() != len {
        return Err(Error::Grid("correlator needs at least two points".into()));
    }
    let dtau = corr.taus[1] - corr.taus[0];
    if corr.taus[0] != T::zero() || !(dtau > T::zero()) {
        return Err(Error::Grid("correlator grid must start at 0 and increase".into()));
    }
    let n = 2 * (len - 1);
    let m = n / 2;
    let cos = cos_table::<T>(n);
    let df = T::one() / (T::from_usize_lossy(n) * dtau);
    let k_vals = &corr.values;
    let density: Vec<T> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut acc = k_vals[0] + k_vals[m] * cos[(m * k) % n];
            for r in 1..m {
                acc += T::lit(2.0) * k_vals[r] * cos[(r * k) % n];
            }
            acc * dtau
        })
        .collect();
    let mut rec = SpectrumRecord::zeros_one_sided(df, m, SpectrumUnits::SpinUnits);
    rec.density = density;
    rec.meta = corr.meta.clone();
    Ok(rec)
}

/// `f(τ_r) = 2K(τ_r) - K(τ_{2r})` for every `r` with `2r` on the grid, or up
/// to `tau_max` when given (flagging truncation if the grid is too short).
pub fn leggett_garg_curve<T: Real>(corr: &CorrelatorSeries<T>, tau_max: Option<T>) -> Result<LgCurve<T>> {
    let n = corr.values.len();
    if n == 0 || corr.taus.len() != n {
        return Err(Error::Grid("empty or inconsistent correlator".into()));
    }
    let mut r_end = (n - 1) / 2;
    let mut truncated = false;
    if let Some(tm) = tau_max {
        if n >= 2 {
            let dtau = corr.taus[1] - corr.taus[0];
            let want = (tm / dtau + T::lit(1e-9)).floor().to_usize().unwrap_or(usize::MAX);
            if want > r_end {
                truncated = true;
            } else {
                r_end = want;
            }
        }
    }
    let taus = corr.taus[..=r_end].to_vec();
    let f = (0..=r_end)
        .map(|r| T::lit(2.0) * corr.values[r] - corr.values[2 * r])
        .collect();
    let mut curve = LgCurve::bare(taus, f);
    curve.truncated = truncated;
    curve.meta = corr.meta.clone();
    Ok(curve)
}

/// `2cos(ω_Rτ) - cos(2ω_Rτ)`.
pub fn ideal_lg<T: Real>(tau: T, omega_rabi: T) -> Result<T> {
    if !(omega_rabi > T::zero()) {
        return Err(Error::param("omega_rabi", "must be > 0"));
    }
    let th = omega_rabi * tau;
    Ok(T::lit(2.0) * th.cos() - (T::lit(2.0) * th).cos())
}

/// Maximum of `f` over `τ > 0` with three-point parabolic refinement.
/// Ties (within working precision) go to the smallest `τ`; flat or convex neighbourhoods are not refined.
pub fn lg_max<T: Real>(curve: &LgCurve<T>) -> Result<(T, T)> {
    let n = curve.f.len();
    let mut best: Option<usize> = None;
    for i in 0..n {
        let better = |b: usize| curve.f[i] > curve.f[b] + T::working_eps() * curve.f[b].abs().max(T::one());
        if curve.taus[i] > T::zero() && curve.f[i].is_finite() && best.map_or(true, better) {
            best = Some(i);
        }
    }
    let i = best.ok_or_else(|| Error::Data("no finite f value at τ > 0".into()))?;
    let (t, f) = (curve.taus[i], curve.f[i]);
    if i == 0 || i + 1 >= n || !curve.f[i - 1].is_finite() || !curve.f[i + 1].is_finite() {
        return Ok((t, f));
    }
    let (fm, fp) = (curve.f[i - 1], curve.f[i + 1]);
    let d = fm - T::lit(2.0) * f + fp;
    if !(d < T::zero()) {
        return Ok((t, f));
    }
    let delta = (fm - fp) / (T::lit(2.0) * d);
    let step = curve.taus[i + 1] - curve.taus[i];
    Ok((t + delta * step, f - T::lit(0.25) * (fm - fp) * delta))
}
