//! Closed-form Bloch-equation layer for the resonantly driven, continuously
//! measured two-level system.
//!
//! Conventions: Bloch vector `(x, y, z)` with `z = -1` the ground state, drive
//! about `x` in the rotating frame, so that
//! `ẏ = -Γ₂y - ω_R z` and `ż = ω_R y - Γ₁(z - z_eq)` with `z_eq = 2p(e)₀ - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{affine_fit, golden_section, nelder_mead};
use crate::scalar::Real;

/// Qubit constants. Rates in 1/s, frequencies in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TlsParams<T> {
    pub omega_ge: T,
    pub gamma1: T,
    pub gamma_phi0: T,
    pub p_e_thermal: T,
}

impl<T: Real> TlsParams<T> {
    pub fn new(omega_ge: T, gamma1: T, gamma_phi0: T, p_e_thermal: T) -> Result<Self> {
        let p = Self {
            omega_ge,
            gamma1,
            gamma_phi0,
            p_e_thermal,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega_ge", self.omega_ge),
            ("gamma1", self.gamma1),
            ("gamma_phi0", self.gamma_phi0),
        ] {
            crate::error::check_nonneg(name, v.to_f64_lossy())?;
        }
        let p = self.p_e_thermal.to_f64_lossy();
        if !(0.0..=0.5).contains(&p) {
            return Err(Error::param("p_e_thermal", format!("must lie in [0, 0.5], got {p}")));
        }
        Ok(())
    }

    /// Intrinsic transverse rate `Γ₁/2 + Γφ⁰`.
    pub fn gamma2_intrinsic(&self) -> T {
        self.gamma1 / T::lit(2.0) + self.gamma_phi0
    }

    /// Thermal equilibrium `z = 2p(e)₀ - 1`.
    pub fn z_thermal(&self) -> T {
        T::lit(2.0) * self.p_e_thermal - T::one()
    }
}

/// Readout resonator constants (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavityParams<T> {
    pub omega_c: T,
    pub kappa: T,
    pub chi0: T,
    pub lambda: T,
    pub n_crit: T,
}

impl<T: Real> CavityParams<T> {
    pub fn validate(&self) -> Result<()> {
        crate::error::check_pos("kappa", self.kappa.to_f64_lossy())?;
        crate::error::check_pos("n_crit", self.n_crit.to_f64_lossy())?;
        let l = self.lambda.to_f64_lossy();
        if !(0.0..0.5).contains(&l) {
            return Err(Error::param("lambda", format!("must lie in [0, 0.5), got {l}")));
        }
        if !self.chi0.is_finite() {
            return Err(Error::param("chi0", "must be finite"));
        }
        Ok(())
    }

    /// Dispersive shift at mean photon number `nbar`.
    pub fn chi_at(&self, nbar: T) -> Result<T> {
        dispersive_correction(self.chi0, self.lambda, nbar)
    }
}

/// Drive settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveParams<T> {
    pub omega_rabi: T,
    pub detuning: T,
    pub nbar: T,
}

impl<T: Real> DriveParams<T> {
    pub fn resonant(omega_rabi: T, nbar: T) -> Self {
        Self {
            omega_rabi,
            detuning: T::zero(),
            nbar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::error::check_nonneg("omega_rabi", self.omega_rabi.to_f64_lossy())?;
        crate::error::check_nonneg("nbar", self.nbar.to_f64_lossy())?;
        if !self.detuning.is_finite() {
            return Err(Error::param("detuning", "must be finite"));
        }
        Ok(())
    }
}

/// Time series of Bloch components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinTrajectory<T> {
    pub times: Vec<T>,
    pub xyz: Vec<[T; 3]>,
}

impl<T: Real> SpinTrajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn z(&self) -> Vec<T> {
        self.xyz.iter().map(|v| v[2]).collect()
    }

    /// Checks monotone times and the Bloch-ball constraint with tolerance `tol`.
    pub fn validate(&self, tol: T) -> Result<()> {
        if self.times.len() != self.xyz.len() {
            return Err(Error::Data("times and xyz lengths differ".into()));
        }
        check_increasing(&self.times)?;
        for (i, v) in self.xyz.iter().enumerate() {
            let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            if !r2.is_finite() || r2 > T::one() + tol {
                return Err(Error::Data(format!("sample {i} leaves the Bloch ball (|r|² = {r2})")));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_increasing<T: Real>(times: &[T]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Grid("non-finite time".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Grid("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Lorentzian detector response `1/[1+(2ω/κ)²]`.
pub fn cavity_filter<T: Real>(omega: T, kappa: T) -> Result<T> {
    if !(kappa > T::zero()) || !kappa.is_finite() {
        return Err(Error::param("kappa", format!("must be > 0, got {kappa}")));
    }
    Ok(cavity_filter_unchecked(omega, kappa))
}

#[inline]
pub(crate) fn cavity_filter_unchecked<T: Real>(omega: T, kappa: T) -> T {
    let u = T::lit(2.0) * omega / kappa;
    T::one() / (T::one() + u * u)
}

/// Photon shot-noise dephasing `8n̄χ²/κ`.
pub fn measurement_dephasing_rate<T: Real>(nbar: T, chi: T, kappa: T) -> Result<T> {
    crate::error::check_nonneg("nbar", nbar.to_f64_lossy())?;
    if !(kappa > T::zero()) {
        return Err(Error::param("kappa", format!("must be > 0, got {kappa}")));
    }
    Ok(T::lit(8.0) * nbar * chi * chi / kappa)
}

/// Dephasing seen by Rabi oscillations at `ω_R`: `8n̄χ²/κ · C(ω_R)`.
pub fn rabi_dephasing_rate<T: Real>(omega_rabi: T, nbar: T, chi: T, kappa: T) -> Result<T> {
    Ok(measurement_dephasing_rate(nbar, chi, kappa)? * cavity_filter(omega_rabi, kappa)?)
}

/// Resonant Bloch solution from a state on the z axis.
///
/// The `(y, z)` block is propagated with
/// `e^{Mt} = e^{-γt}[cosh(st) I + sinh(st)/s (M + γI)]`, `s² = ((Γ₂-Γ₁)/2)² - ω_R²`,
/// which stays real across the under/over-damped boundary.
#[derive(Clone, Copy, Debug)]
pub struct BlochSolution<T> {
    gamma1: T,
    gamma2: T,
    omega: T,
    gamma: T,
    s2: T,
    y_st: T,
    z_st: T,
    dy0: T,
    dz0: T,
}

impl<T: Real> BlochSolution<T> {
    pub fn new(gamma1: T, gamma2: T, omega: T, z_eq: T, z0: T) -> Result<Self> {
        let two = T::lit(2.0);
        for (name, v) in [("gamma1", gamma1), ("gamma2", gamma2), ("omega_rabi", omega)] {
            crate::error::check_nonneg(name, v.to_f64_lossy())?;
        }
        if gamma2 < gamma1 / two * (T::one() - T::working_eps()) {
            return Err(Error::UnphysicalRates(format!(
                "gamma2 = {gamma2} is below gamma1/2 = {}",
                gamma1 / two
            )));
        }
        let det = gamma1 * gamma2 + omega * omega;
        let (y_st, z_st) = if det > T::zero() {
            (-omega * gamma1 * z_eq / det, gamma1 * gamma2 * z_eq / det)
        } else {
            (T::zero(), T::zero())
        };
        let half = (gamma2 - gamma1) / two;
        Ok(Self {
            gamma1,
            gamma2,
            omega,
            gamma: (gamma1 + gamma2) / two,
            s2: half * half - omega * omega,
            y_st,
            z_st,
            dy0: -y_st,
            dz0: z0 - z_st,
        })
    }

    /// `(e^{-γt}cosh(st), e^{-γt}sinh(st)/s)`.
    fn kernels(&self, t: T) -> (T, T) {
        let q = self.s2 * t * t;
        let decay = (-self.gamma * t).exp();
        if q.abs() < T::lit(1e-2) {
            let c = T::one() + q / T::lit(2.0) + q * q / T::lit(24.0) + q * q * q / T::lit(720.0);
            let sh = t * (T::one() + q / T::lit(6.0) + q * q / T::lit(120.0) + q * q * q / T::lit(5040.0));
            return (decay * c, decay * sh);
        }
        if self.s2 > T::zero() {
            let s = self.s2.sqrt();
            let ep = ((s - self.gamma) * t).exp();
            let em = (-(s + self.gamma) * t).exp();
            ((ep + em) / T::lit(2.0), (ep - em) / (T::lit(2.0) * s))
        } else {
            let w = (-self.s2).sqrt();
            (decay * (w * t).cos(), decay * (w * t).sin() / w)
        }
    }

    /// `(y, z)` at time `t ≥ 0`.
    pub fn at(&self, t: T) -> (T, T) {
        let (c, sh) = self.kernels(t);
        let h = (self.gamma2 - self.gamma1) / T::lit(2.0);
        // (M + γI) = [[-h, -ω], [ω, h]]
        let y = c * self.dy0 + sh * (-h * self.dy0 - self.omega * self.dz0);
        let z = c * self.dz0 + sh * (self.omega * self.dy0 + h * self.dz0);
        (self.y_st + y, self.z_st + z)
    }

    pub fn steady(&self) -> (T, T) {
        (self.y_st, self.z_st)
    }

    /// Slowest decay rate of the transient (`γ - Re s`).
    pub fn slowest_rate(&self) -> T {
        if self.s2 > T::zero() {
            self.gamma - self.s2.sqrt()
        } else {
            self.gamma
        }
    }
}

/// Damped Rabi trajectory from `(0, 0, z0)` at `t = 0` under resonant drive.
/// The drive detuning is not modelled here (see [`saturation_population`]).
pub fn bloch_evolve<T: Real>(
    tls: &TlsParams<T>,
    drive: &DriveParams<T>,
    gamma2: T,
    z0: T,
    times: &[T],
) -> Result<SpinTrajectory<T>> {
    tls.validate()?;
    drive.validate()?;
    if times.iter().any(|t| *t < T::zero()) {
        return Err(Error::Grid("times must be >= 0".into()));
    }
    check_increasing(times)?;
    if z0.abs() > T::one() {
        return Err(Error::param("z0", format!("|z0| must be <= 1, got {z0}")));
    }
    let sol = BlochSolution::new(tls.gamma1, gamma2, drive.omega_rabi, tls.z_thermal(), z0)?;
    let xyz = times
        .iter()
        .map(|&t| {
            let (y, z) = sol.at(t);
            [T::zero(), y, z]
        })
        .collect();
    Ok(SpinTrajectory {
        times: times.to_vec(),
        xyz,
    })
}

/// Steady-state `z_st = z_eq/(1 + ω_R²/(Γ₁Γ₂))`.
pub fn bloch_steady_state<T: Real>(tls: &TlsParams<T>, drive: &DriveParams<T>, gamma2: T) -> Result<T> {
    tls.validate()?;
    drive.validate()?;
    let w = drive.omega_rabi;
    if w > T::zero() && (tls.gamma1 <= T::zero() || gamma2 <= T::zero()) {
        return Err(Error::Singular("steady state needs gamma1 > 0 and gamma2 > 0 when driven".into()));
    }
    if w == T::zero() {
        return Ok(tls.z_thermal());
    }
    Ok(tls.z_thermal() / (T::one() + w * w / (tls.gamma1 * gamma2)))
}

/// Steady excited population under a possibly detuned drive.
pub fn saturation_population<T: Real>(p0: T, omega_rabi: T, gamma1: T, gamma2: T, detuning: T) -> Result<T> {
    let p = p0.to_f64_lossy();
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::param("p0", format!("must lie in [0, 0.5], got {p}")));
    }
    crate::error::check_nonneg("omega_rabi", omega_rabi.to_f64_lossy())?;
    crate::error::check_pos("gamma1", gamma1.to_f64_lossy())?;
    crate::error::check_pos("gamma2", gamma2.to_f64_lossy())?;
    if omega_rabi == T::zero() {
        return Ok(p0);
    }
    let half = T::lit(0.5);
    let d = detuning / gamma2;
    let lor = T::one() + d * d;
    let sat = omega_rabi * omega_rabi / (gamma1 * gamma2);
    if !lor.is_finite() {
        return Ok(p0);
    }
    Ok(half - (half - p0) * lor / (lor + sat))
}

/// Reflected-phase difference `δφ₀ = 2 arctan(2χ/κ)` between the qubit states.
pub fn dispersive_phase_shift<T: Real>(chi: T, kappa: T) -> Result<T> {
    if !(kappa > T::zero()) {
        return Err(Error::param("kappa", format!("must be > 0, got {kappa}")));
    }
    Ok(T::lit(2.0) * (T::lit(2.0) * chi / kappa).atan())
}

/// Inverse of [`dispersive_phase_shift`]: `χ = κ tan(δφ₀/2)/2`.
pub fn chi_from_phase_shift<T: Real>(phase: T, kappa: T) -> Result<T> {
    if !(kappa > T::zero()) {
        return Err(Error::param("kappa", format!("must be > 0, got {kappa}")));
    }
    Ok(kappa * (phase / T::lit(2.0)).tan() / T::lit(2.0))
}

/// `χ(n̄) = χ₀(1 - λn̄)`.
pub fn dispersive_correction<T: Real>(chi0: T, lambda: T, nbar: T) -> Result<T> {
    let ln = lambda * nbar;
    if ln >= T::one() || ln < T::zero() {
        return Err(Error::OutOfValidity(format!("lambda*nbar = {ln} must lie in [0, 1)")));
    }
    Ok(chi0 * (T::one() - ln))
}

/// Result of [`fit_rabi_decay`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiFit<T> {
    pub gamma2: T,
    pub omega_rabi: T,
    /// Damped oscillation frequency `√(ω_R² - ((Γ₂-Γ₁)/2)²)`, zero when overdamped.
    pub omega_tilde: T,
    pub scale: T,
    pub offset: T,
    pub rms_residual: T,
    pub iterations: usize,
}

/// Least-squares fit of `z(t) ≈ a·z_Bloch(t; Γ₂, ω_R) + b` with Γ₁ and the
/// initial state taken from `tls`. `a` and `b` are solved linearly; `(Γ₂, ω_R)`
/// by multistart simplex search in log coordinates.
pub fn fit_rabi_decay<T: Real>(traj: &SpinTrajectory<T>, tls: &TlsParams<T>) -> Result<RabiFit<T>> {
    tls.validate()?;
    if traj.len() < 8 {
        return Err(Error::Data("need at least 8 samples to fit".into()));
    }
    check_increasing(&traj.times)?;
    let t: Vec<f64> = traj.times.iter().map(|v| v.to_f64_lossy()).collect();
    let z: Vec<f64> = traj.xyz.iter().map(|v| v[2].to_f64_lossy()).collect();
    let g1 = tls.gamma1.to_f64_lossy();
    let z_eq = tls.z_thermal().to_f64_lossy();
    let z0 = z_eq;
    let t0 = t[0];

    let mut model = vec![0.0; t.len()];
    let mut ssr = |p: &[f64]| -> f64 {
        let g2 = g1 / 2.0 + p[0].exp();
        let w = p[1].exp();
        let Ok(sol) = BlochSolution::new(g1, g2, w, z_eq, z0) else {
            return f64::INFINITY;
        };
        for (m, &ti) in model.iter_mut().zip(&t) {
            *m = sol.at(ti - t0).1;
        }
        affine_fit(&model, &z).2
    };

    let span = t[t.len() - 1] - t0;
    let dt_min = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let w_lo = (std::f64::consts::PI / span).ln();
    let w_hi = (std::f64::consts::PI / dt_min).ln();
    let g_lo = (0.1 / span).ln();
    let g_hi = (1.0 / dt_min).ln();
    let (nw, ng) = (32, 16);
    let mut grid = Vec::with_capacity(nw * ng);
    for i in 0..nw {
        for j in 0..ng {
            let p = [
                g_lo + (g_hi - g_lo) * j as f64 / (ng - 1) as f64,
                w_lo + (w_hi - w_lo) * i as f64 / (nw - 1) as f64,
            ];
            grid.push((ssr(&p), p));
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<crate::optim::Minimum> = None;
    for (_, p0) in grid.iter().take(4) {
        let m = nelder_mead(&mut ssr, p0, &[0.3, 0.3], 1e-9, 1e-13, 6000);
        if best.as_ref().map_or(true, |b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    let rms = (best.value / t.len() as f64).sqrt();
    if !best.converged {
        return Err(Error::Fit {
            residual: rms,
            iterations: best.iterations,
        });
    }
    let g2 = g1 / 2.0 + best.x[0].exp();
    let w = best.x[1].exp();
    let sol = BlochSolution::new(g1, g2, w, z_eq, z0)?;
    let m: Vec<f64> = t.iter().map(|&ti| sol.at(ti - t0).1).collect();
    let (a, b, _) = affine_fit(&m, &z);
    let h = (g2 - g1) / 2.0;
    Ok(RabiFit {
        gamma2: T::lit(g2),
        omega_rabi: T::lit(w),
        omega_tilde: T::lit((w * w - h * h).max(0.0).sqrt()),
        scale: T::lit(a),
        offset: T::lit(b),
        rms_residual: T::lit(rms),
        iterations: best.iterations,
    })
}

/// Result of [`fit_exponential_decay`]: `y ≈ offset + amplitude·e^{-(t-t₀)/tau}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit<T> {
    pub tau: T,
    pub amplitude: T,
    pub offset: T,
    pub rms_residual: T,
}

/// Single-exponential fit with free offset; the rate is found by a log-grid
/// scan refined by golden-section search, amplitude and offset linearly.
pub fn fit_exponential_decay<T: Real>(times: &[T], values: &[T]) -> Result<ExpFit<T>> {
    if times.len() != values.len() || times.len() < 4 {
        return Err(Error::Data("need at least 4 paired samples".into()));
    }
    check_increasing(times)?;
    let t: Vec<f64> = times.iter().map(|v| v.to_f64_lossy() - times[0].to_f64_lossy()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.to_f64_lossy()).collect();
    let span = t[t.len() - 1];
    let dt_min = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let mut basis = vec![0.0; t.len()];
    let mut ssr = |lk: f64| -> f64 {
        let k = lk.exp();
        for (b, &ti) in basis.iter_mut().zip(&t) {
            *b = (-k * ti).exp();
        }
        affine_fit(&basis, &y).2
    };
    let (lo, hi) = ((0.05 / span).ln(), (1.0 / dt_min).ln());
    let n = 200;
    let step = (hi - lo) / (n - 1) as f64;
    let (ibest, _) = (0..n)
        .map(|i| (i, ssr(lo + step * i as f64)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let a = lo + step * (ibest.max(1) - 1) as f64;
    let b = lo + step * (ibest + 1).min(n - 1) as f64;
    let (lk, val) = golden_section(&mut ssr, a, b, 1e-10, 200);
    let k = lk.exp();
    let m: Vec<f64> = t.iter().map(|&ti| (-k * ti).exp()).collect();
    let (amp, off, _) = affine_fit(&m, &y);
    Ok(ExpFit {
        tau: T::lit(1.0 / k),
        amplitude: T::lit(amp),
        offset: T::lit(off),
        rms_residual: T::lit((val / t.len() as f64).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn mhz(f: f64) -> f64 {
        2.0 * PI * f * 1e6
    }

    fn tls(g1: f64, p0: f64) -> TlsParams<f64> {
        TlsParams::new(mhz(5304.0), g1, 0.0, p0).unwrap()
    }

    /// Plain RK4 on the full 3x3 Bloch equations, used as an oracle.
    fn rk4_bloch(g1: f64, g2: f64, w: f64, z_eq: f64, z0: f64, t_end: f64, n: usize) -> [f64; 3] {
        let f = |r: [f64; 3]| [-g2 * r[0], -g2 * r[1] - w * r[2], w * r[1] - g1 * (r[2] - z_eq)];
        let h = t_end / n as f64;
        let mut r = [0.0, 0.0, z0];
        let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
        for _ in 0..n {
            let k1 = f(r);
            let k2 = f(add(r, k1, h / 2.0));
            let k3 = f(add(r, k2, h / 2.0));
            let k4 = f(add(r, k3, h));
            for i in 0..3 {
                r[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        r
    }

    #[test]
    fn cavity_filter_values() {
        assert_eq!(cavity_filter(0.0, 3.0).unwrap(), 1.0);
        assert_relative_eq!(cavity_filter(1.5, 3.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(cavity_filter(mhz(10.0), mhz(30.3)).unwrap(), 0.696_530_586, epsilon = 1e-8);
        assert!(cavity_filter(1.0, 0.0).is_err());
        assert!(cavity_filter(1.0, -1.0).is_err());
    }

    #[test]
    fn dephasing_rates() {
        assert_eq!(measurement_dephasing_rate(0.0, mhz(1.75), mhz(30.3)).unwrap(), 0.0);
        let r1 = measurement_dephasing_rate(1.0, mhz(1.75), mhz(30.3)).unwrap();
        assert_relative_eq!(r1, 5.080_463e6, max_relative = 1e-6);
        let r2 = measurement_dephasing_rate(2.0, mhz(1.75), mhz(30.3)).unwrap();
        assert_relative_eq!(r2, 2.0 * r1, max_relative = 1e-15);
        assert!(measurement_dephasing_rate(1.0, 1.0, 0.0).is_err());
        assert_relative_eq!(rabi_dephasing_rate(0.0, 1.0, mhz(1.75), mhz(30.3)).unwrap(), r1);
        let k = mhz(30.3);
        assert_relative_eq!(rabi_dephasing_rate(k / 2.0, 1.0, mhz(1.75), k).unwrap(), r1 / 2.0, max_relative = 1e-14);
        let mut last = f64::INFINITY;
        for f in [2.5, 5.0, 10.0, 20.0] {
            let r = rabi_dephasing_rate(mhz(f), 1.0, mhz(1.75), k).unwrap();
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn undamped_rabi_is_cosine() {
        let w = mhz(10.0);
        let times: Vec<f64> = (0..500).map(|i| i as f64 * 1e-9).collect();
        let traj = bloch_evolve(&tls(0.0, 0.0), &DriveParams::resonant(w, 0.0), 0.0, -1.0, &times).unwrap();
        for (t, v) in times.iter().zip(&traj.xyz) {
            assert!((v[2] + (w * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn undriven_relaxation() {
        let g1 = 1.0 / 200e-9;
        let p = tls(g1, 0.02);
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 5e-9).collect();
        let traj = bloch_evolve(&p, &DriveParams::resonant(0.0, 0.0), g1, 1.0, &times).unwrap();
        for (t, v) in times.iter().zip(&traj.xyz) {
            let expect = -0.96 + (1.0 + 0.96) * (-g1 * t).exp();
            assert!((v[2] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_numerical_integration_in_all_regimes() {
        let g1 = 1.0 / 200e-9;
        for (g2, w) in [(1.0 / 150e-9, mhz(10.0)), (4e8, mhz(2.5)), (g1 / 2.0 + 2.0 * mhz(3.0), mhz(3.0))] {
            let h = (g2 - g1) / 2.0;
            // third case sits exactly at critical damping
            let sol = BlochSolution::new(g1, g2, w, -0.96, -1.0).unwrap();
            for t_end in [3e-9, 40e-9, 400e-9] {
                let r = rk4_bloch(g1, g2, w, -0.96, -1.0, t_end, 20_000);
                let (y, z) = sol.at(t_end);
                assert!((y - r[1]).abs() < 1e-9 && (z - r[2]).abs() < 1e-9, "g2={g2} w={w} h={h} t={t_end}");
            }
        }
    }

    #[test]
    fn zeno_rate_in_overdamped_limit() {
        let g1 = 1.0 / 200e-9;
        let w = mhz(2.5);
        let mut last = f64::INFINITY;
        for g2 in [5e8, 1e9, 2e9] {
            let sol = BlochSolution::new(g1, g2, w, -1.0, -1.0).unwrap();
            let rate = sol.slowest_rate() - g1;
            assert_relative_eq!(rate, w * w / (g2 - g1), max_relative = 0.005);
            assert_relative_eq!(rate, w * w / g2, max_relative = 0.02);
            assert!(rate < last);
            last = rate;
        }
    }

    #[test]
    fn steady_state_values() {
        let d = DriveParams::resonant(mhz(10.0), 0.0);
        let z = bloch_steady_state(&tls(1.0 / 200e-9, 0.0), &d, 1.0 / 150e-9).unwrap();
        assert_relative_eq!(z, -0.008375, max_relative = 1e-3);
        let z0 = bloch_steady_state(&tls(1.0 / 200e-9, 0.0), &DriveParams::resonant(0.0, 0.0), 1.0).unwrap();
        assert_eq!(z0, -1.0);
        let zinf = bloch_steady_state(&tls(1.0 / 200e-9, 0.0), &DriveParams::resonant(1e15, 0.0), 1e7).unwrap();
        assert!(zinf.abs() < 1e-9);
        assert!(matches!(bloch_steady_state(&tls(0.0, 0.0), &d, 1.0), Err(Error::Singular(_))));
    }

    #[test]
    fn evolve_converges_to_steady_state() {
        let p = tls(1.0 / 200e-9, 0.02);
        let d = DriveParams::resonant(mhz(4.0), 0.0);
        let g2 = 1.0 / 150e-9;
        let t_end = 20.0 * 200e-9;
        let traj = bloch_evolve(&p, &d, g2, -1.0, &[t_end]).unwrap();
        let z_st = bloch_steady_state(&p, &d, g2).unwrap();
        assert!((traj.xyz[0][2] - z_st).abs() < 1e-6);
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let p = tls(1e7, 0.0);
        let d = DriveParams::resonant(1e7, 0.0);
        assert!(matches!(bloch_evolve(&p, &d, 4e6, -1.0, &[0.0, 1e-9]), Err(Error::UnphysicalRates(_))));
        assert!(matches!(bloch_evolve(&p, &d, 1e7, -1.0, &[1e-9, 0.0]), Err(Error::Grid(_))));
    }

    #[test]
    fn single_precision_tracks_double() {
        let p32 = TlsParams::<f32>::new(3.3e10, 5e6, 0.0, 0.0).unwrap();
        let d32 = DriveParams::resonant(6.28e7f32, 0.0);
        let t32: Vec<f32> = (0..100).map(|i| i as f32 * 2e-9).collect();
        let a = bloch_evolve(&p32, &d32, 6.6e6, -1.0, &t32).unwrap();
        let p64 = TlsParams::<f64>::new(3.3e10, 5e6, 0.0, 0.0).unwrap();
        let t64: Vec<f64> = t32.iter().map(|&t| t as f64).collect();
        let b = bloch_evolve(&p64, &DriveParams::resonant(6.28e7f32 as f64, 0.0), 6.6e6, -1.0, &t64).unwrap();
        for (x, y) in a.xyz.iter().zip(&b.xyz) {
            assert!((x[2] as f64 - y[2]).abs() < 1e-4);
        }
    }

    #[test]
    fn saturation_values() {
        let p = saturation_population(0.02, mhz(10.0), 1.0 / 200e-9, 1.0 / 150e-9, 0.0).unwrap();
        assert!((p - 0.496).abs() < 1e-3, "{p}");
        assert_eq!(saturation_population(0.02, 0.0, 1e6, 1e6, 0.0).unwrap(), 0.02);
        let far = saturation_population(0.02, mhz(10.0), 1e6, 1e6, 1e30).unwrap();
        assert!((far - 0.02).abs() < 1e-9);
        assert!(saturation_population(0.7, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn phase_shift_values() {
        assert_eq!(dispersive_phase_shift(0.0, 1.0).unwrap(), 0.0);
        let phi = dispersive_phase_shift(mhz(1.75), mhz(30.3)).unwrap();
        assert_relative_eq!(phi, 0.230_003_7, max_relative = 1e-6);
        assert!((0.95 * phi.to_degrees() - 12.5).abs() < 0.2);
        let chi = chi_from_phase_shift(phi, mhz(30.3)).unwrap();
        assert_relative_eq!(chi / (2.0 * PI), 1.75e6, max_relative = 1e-12);
    }

    #[test]
    fn dispersive_correction_values() {
        assert_eq!(dispersive_correction(5.0, 7e-3, 0.0).unwrap(), 5.0);
        assert_relative_eq!(dispersive_correction(1.0, 7e-3, 15.0).unwrap(), 1.0 - 0.105, epsilon = 1e-15);
        assert_eq!(dispersive_correction(3.0, 0.0, 100.0).unwrap(), 3.0);
        assert!(matches!(dispersive_correction(1.0, 0.1, 10.0), Err(Error::OutOfValidity(_))));
    }

    #[test]
    fn rabi_fit_round_trip() {
        let g1 = 1.0 / 225e-9;
        let p = tls(g1, 0.0);
        let times: Vec<f64> = (0..1200).map(|i| i as f64 * 1e-9).collect();
        for (w, g2) in [(mhz(5.0), 1.0 / 150e-9), (mhz(10.0), 2.0e7), (mhz(2.5), 1.2e8)] {
            let traj = bloch_evolve(&p, &DriveParams::resonant(w, 0.0), g2, -1.0, &times).unwrap();
            let fit = fit_rabi_decay(&traj, &p).unwrap();
            assert_relative_eq!(fit.gamma2, g2, max_relative = 1e-6);
            assert_relative_eq!(fit.omega_rabi, w, max_relative = 1e-6);
            assert_relative_eq!(fit.scale, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn exponential_fit_round_trip() {
        let times: Vec<f64> = (0..600).map(|i| i as f64 * 2e-9).collect();
        let y: Vec<f64> = times.iter().map(|t| 0.1 - 0.9 * (-t / 85e-9).exp()).collect();
        let f = fit_exponential_decay(&times, &y).unwrap();
        assert_relative_eq!(f.tau, 85e-9, max_relative = 1e-6);
        assert_relative_eq!(f.amplitude, -0.9, max_relative = 1e-6);
    }

    proptest! {
        #[test]
        fn filter_even_bounded_monotone(w in -1e9f64..1e9, k in 1e5f64..1e9) {
            let c = cavity_filter(w, k).unwrap();
            prop_assert!(c > 0.0 && c <= 1.0);
            prop_assert_eq!(c, cavity_filter(-w, k).unwrap());
            prop_assert!(cavity_filter(w.abs() * 1.1 + 1.0, k).unwrap() <= c);
        }

        #[test]
        fn evolve_stays_in_bloch_ball(
            g1 in 0.0f64..2e7,
            extra in 0.0f64..5e8,
            w in 0.0f64..2e8,
            p0 in 0.0f64..0.5,
            z0 in -1.0f64..1.0,
        ) {
            let p = TlsParams::new(1e10, g1, 0.0, p0).unwrap();
            let times: Vec<f64> = (0..300).map(|i| i as f64 * 3e-9).collect();
            let traj = bloch_evolve(&p, &DriveParams::resonant(w, 0.0), g1 / 2.0 + extra, z0, &times).unwrap();
            prop_assert!(traj.validate(1e-9).is_ok());
        }

        #[test]
        fn saturation_monotone(
            p0 in 0.0f64..0.5,
            w in 1e5f64..1e8,
            g1 in 1e5f64..1e8,
            extra in 0.0f64..1e8,
            d in 0.0f64..1e8,
        ) {
            let g2 = g1 / 2.0 + extra;
            let p = saturation_population(p0, w, g1, g2, d).unwrap();
            prop_assert!(p >= p0 - 1e-15 && p <= 0.5 + 1e-15);
            prop_assert!(saturation_population(p0, w * 1.5, g1, g2, d).unwrap() >= p - 1e-15);
            prop_assert!(saturation_population(p0, w, g1, g2, d * 1.5 + 1.0).unwrap() <= p + 1e-15);
        }
    }
}
