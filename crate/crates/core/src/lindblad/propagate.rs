use nalgebra::DVector;
use num_complex::Complex64;

use super::{DensityOperator, Generator, C0};
use crate::error::{Error, Result};

/// Fixed RK4 step control:
/// `dt ≤ (1/40)·min(2π/ω_max, 1/κ, 1/Γ₁)` and `dt·ρ(L) ≤ 2.5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub dt_max: f64,
}

impl StepPlan {
    pub fn for_generator(g: &Generator) -> Self {
        let mut scales = vec![1.0 / g.kappa];
        let w = g.omega_max();
        if w > 0.0 {
            scales.push(std::f64::consts::TAU / w);
        }
        if g.gamma1 > 0.0 {
            scales.push(1.0 / g.gamma1);
        }
        let rule = scales.into_iter().fold(f64::INFINITY, f64::min) / 40.0;
        let stab = 2.5 / g.spectral_bound().max(1e-300);
        Self { dt_max: rule.min(stab) }
    }

    /// Number of equal substeps covering `interval`.
    pub fn substeps(&self, interval: f64) -> usize {
        ((interval / self.dt_max).ceil() as usize).max(1)
    }
}

struct Rk4 {
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    k3: Vec<Complex64>,
    k4: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Rk4 {
    fn new(len: usize) -> Self {
        Self {
            k1: vec![C0; len],
            k2: vec![C0; len],
            k3: vec![C0; len],
            k4: vec![C0; len],
            tmp: vec![C0; len],
        }
    }

    fn step(&mut self, g: &Generator, y: &mut [Complex64], h: f64) {
        g.apply(y, &mut self.k1);
        for ((t, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *t = y + 0.5 * h * k;
        }
        g.apply(&self.tmp, &mut self.k2);
        for ((t, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *t = y + 0.5 * h * k;
        }
        g.apply(&self.tmp, &mut self.k3);
        for ((t, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *t = y + h * k;
        }
        g.apply(&self.tmp, &mut self.k4);
        let c = h / 6.0;
        for i in 0..y.len() {
            y[i] += c * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Propagates an arbitrary operator `y` (row-major) across `t_grid`, calling
/// `observe` at every grid point, including the first.
pub(crate) fn propagate_raw<F>(g: &Generator, y: &mut [Complex64], t_grid: &[f64], mut observe: F) -> Result<()>
where
    F: FnMut(usize, f64, &[Complex64]) -> Result<()>,
{
    crate::qubit::check_increasing(t_grid)?;
    let plan = StepPlan::for_generator(g);
    let mut rk = Rk4::new(y.len());
    for (idx, &t) in t_grid.iter().enumerate() {
        if idx > 0 {
            let interval = t - t_grid[idx - 1];
            let m = plan.substeps(interval);
            let h = interval / m as f64;
            for _ in 0..m {
                rk.step(g, y, h);
            }
            if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Integration {
                    t,
                    reason: "non-finite state".into(),
                    dt_hint: h / 2.0,
                });
            }
        }
        observe(idx, t, y)?;
    }
    Ok(())
}

fn check_density(rho: &DensityOperator, t: f64, dt: f64, positivity: bool) -> Result<()> {
    let fail = |reason: String| Error::Integration {
        t,
        reason,
        dt_hint: dt / 2.0,
    };
    let tr = rho.trace();
    if (tr - 1.0).norm() > 1e-8 {
        return Err(fail(format!("trace drifted to {tr}")));
    }
    let herm = rho.hermiticity_error();
    if herm > 1e-10 {
        return Err(fail(format!("Hermiticity error {herm:.2e}")));
    }
    if positivity {
        let min = rho.eigenvalues()[0];
        if min < -1e-8 {
            return Err(fail(format!("negative eigenvalue {min:.2e}")));
        }
    }
    Ok(())
}

/// Evolves `rho0` (taken at `t_grid[0]`) and hands each sample to `observe`.
/// Trace and Hermiticity are checked at every sample, positivity at every
/// `positivity_stride`-th sample and at the last one.
pub fn evolve_observe<F>(
    rho0: &DensityOperator,
    g: &Generator,
    t_grid: &[f64],
    positivity_stride: usize,
    mut observe: F,
) -> Result<DensityOperator>
where
    F: FnMut(f64, &DensityOperator),
{
    if rho0.fock_dim() != g.fock_dim() {
        return Err(Error::Density("state and generator dimensions differ".into()));
    }
    rho0.validate()?;
    let dt = StepPlan::for_generator(g).dt_max;
    let mut state = rho0.clone();
    let last = t_grid.len().saturating_sub(1);
    let stride = positivity_stride.max(1);
    let mut buf = rho0.as_slice().to_vec();
    propagate_raw(g, &mut buf, t_grid, |idx, t, y| {
        state.as_mut_slice().copy_from_slice(y);
        check_density(&state, t, dt, idx % stride == 0 || idx == last)?;
        observe(t, &state);
        Ok(())
    })?;
    Ok(state)
}

/// Full trajectory with every invariant checked at every sample.
pub fn evolve(rho0: &DensityOperator, g: &Generator, t_grid: &[f64]) -> Result<Vec<DensityOperator>> {
    let mut out = Vec::with_capacity(t_grid.len());
    evolve_observe(rho0, g, t_grid, 1, |_, r| out.push(r.clone()))?;
    Ok(out)
}

/// Fock dimension up to which the steady state is found by a dense solve.
pub const DENSE_STEADY_MAX_FOCK: usize = 16;

/// Null vector of `L` normalized to unit trace: dense LU with one equation
/// replaced by the trace condition for small spaces, RK4 relaxation otherwise.
pub fn steady_state(g: &Generator) -> Result<DensityOperator> {
    if g.fock_dim() <= DENSE_STEADY_MAX_FOCK {
        steady_state_dense(g)
    } else {
        steady_state_relaxed(g, None, &RelaxOptions::default())
    }
}

fn steady_state_dense(g: &Generator) -> Result<DensityOperator> {
    let d = g.dim();
    let d2 = d * d;
    let mut m = g.dense();
    // the (0,0) equation is implied by the others through trace preservation
    for q in 0..d2 {
        m[(0, q)] = C0;
    }
    for k in 0..d {
        m[(0, k * d + k)] = Complex64::new(1.0, 0.0);
    }
    let mut b = DVector::from_element(d2, C0);
    b[0] = Complex64::new(1.0, 0.0);
    let lu = m.lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..d2).map(|i| u[(i, i)].norm()).collect();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pivot_ratio = lo / hi;
    if !(pivot_ratio > 1e-12) {
        return Err(Error::DegenerateNullSpace { pivot_ratio });
    }
    let x = lu
        .solve(&b)
        .ok_or(Error::DegenerateNullSpace { pivot_ratio })?;
    finish_state(g.fock_dim(), x.as_slice())
}

fn finish_state(fock_dim: usize, x: &[Complex64]) -> Result<DensityOperator> {
    let d = 2 * fock_dim;
    let mut data = vec![C0; d * d];
    for i in 0..d {
        for j in 0..d {
            data[i * d + j] = 0.5 * (x[i * d + j] + x[j * d + i].conj());
        }
    }
    let tr: Complex64 = (0..d).map(|i| data[i * d + i]).sum();
    for v in &mut data {
        *v /= tr.re;
    }
    let rho = DensityOperator::from_raw(fock_dim, data)?;
    rho.validate()?;
    Ok(rho)
}

/// Settings for [`steady_state_relaxed`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxOptions {
    /// Stop when `‖Lρ‖_F ≤ tol·Γ_ref` with `Γ_ref` the slowest bare rate.
    pub tol: f64,
    /// Give up after this much simulated time (s).
    pub max_time: f64,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_time: 200e-6,
        }
    }
}

/// Steady state by RK4 relaxation from `guess` (default: equal mixture of the
/// two pinned coherent states, or the ground-pinned state when undriven).
pub fn steady_state_relaxed(g: &Generator, guess: Option<DensityOperator>, opts: &RelaxOptions) -> Result<DensityOperator> {
    let n = g.fock_dim();
    let rho0 = match guess {
        Some(r) => r,
        None => {
            let (ag, ae) = super::observables::closed_form_pinned(g);
            let pg = DensityOperator::pinned_coherent(n, 0, ag);
            if g.eps_d == 0.0 {
                pg
            } else {
                let pe = DensityOperator::pinned_coherent(n, 1, ae);
                let data = pg.as_slice().iter().zip(pe.as_slice()).map(|(a, b)| 0.5 * (a + b)).collect();
                DensityOperator::from_raw(n, data)?
            }
        }
    };
    let rates = [g.gamma1, g.kappa, g.gamma_phi];
    let g_ref = rates.into_iter().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min);
    if !g_ref.is_finite() {
        return Err(Error::DegenerateNullSpace { pivot_ratio: 0.0 });
    }
    let chunk = 0.5 / g_ref;
    let mut y = rho0.as_slice().to_vec();
    let mut ly = vec![C0; y.len()];
    let mut t = 0.0;
    loop {
        g.apply(&y, &mut ly);
        let res = ly.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if res <= opts.tol * g_ref {
            break;
        }
        if t >= opts.max_time {
            return Err(Error::Integration {
                t,
                reason: format!("steady-state relaxation did not converge (residual {res:.3e})"),
                dt_hint: StepPlan::for_generator(g).dt_max,
            });
        }
        propagate_raw(g, &mut y, &[0.0, chunk], |_, _, _| Ok(()))?;
        t += chunk;
    }
    finish_state(n, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{build_generator, DriveAmplitudes, HilbertConfig};
    use crate::qubit::{saturation_population, CavityParams, TlsParams};
    use std::f64::consts::PI;

    fn mhz(f: f64) -> f64 {
        2.0 * PI * f * 1e6
    }

    fn cavity(chi: f64) -> CavityParams<f64> {
        CavityParams {
            omega_c: mhz(5796.0),
            kappa: mhz(30.3),
            chi0: chi,
            lambda: 0.0,
            n_crit: 100.0,
        }
    }

    fn gen(g1: f64, gphi: f64, chi: f64, n: usize, drives: DriveAmplitudes) -> (Generator, TlsParams<f64>) {
        let tls = TlsParams::new(mhz(5304.0), g1, gphi, 0.0).unwrap();
        let h = HilbertConfig {
            fock_dim: n,
            qubit_detuning: 0.0,
            cavity_detuning: 0.0,
        };
        (build_generator(&tls, &cavity(chi), &h, &drives).unwrap(), tls)
    }

    #[test]
    fn free_decay_from_excited_state() {
        let g1 = 1.0 / 200e-9;
        let (g, _) = gen(g1, 0.0, mhz(1.75), 3, DriveAmplitudes { eps_m: 0.0, eps_d: 0.0 });
        let times: Vec<f64> = (0..=50).map(|i| i as f64 * 20e-9).collect();
        let traj = evolve(&DensityOperator::basis(3, 1, 0), &g, &times).unwrap();
        for (t, r) in times.iter().zip(&traj) {
            assert!((r.excited_population() - (-g1 * t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn cavity_switch_on_relaxes_at_half_kappa() {
        let kappa = mhz(30.3);
        let eps = kappa * 0.5f64.sqrt() / 2.0;
        let (g, _) = gen(0.0, 0.0, 0.0, 14, DriveAmplitudes { eps_m: eps, eps_d: 0.0 });
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 2e-9).collect();
        let traj = evolve(&DensityOperator::basis(14, 0, 0), &g, &times).unwrap();
        let a_ss = Complex64::new(0.0, -2.0 * eps / kappa);
        for (t, r) in times.iter().zip(&traj) {
            let expect = a_ss * (1.0 - (-kappa * t / 2.0).exp());
            assert!((r.expect_a() - expect).norm() < 1e-6, "t={t} {} {}", r.expect_a(), expect);
        }
    }

    #[test]
    fn undriven_ground_state() {
        let (g, _) = gen(5e6, 1e6, mhz(1.75), 4, DriveAmplitudes { eps_m: 0.0, eps_d: 0.0 });
        let rho = steady_state(&g).unwrap();
        let expect = DensityOperator::basis(4, 0, 0);
        assert!(rho.trace_distance(&expect).unwrap() < 1e-10);
    }

    #[test]
    fn degenerate_null_space_detected() {
        let (g, _) = gen(0.0, 0.0, mhz(1.75), 3, DriveAmplitudes { eps_m: 1e7, eps_d: 0.0 });
        assert!(matches!(steady_state(&g), Err(Error::DegenerateNullSpace { .. })));
    }

    #[test]
    fn photon_number_closed_form() {
        let kappa = mhz(30.3);
        let nbar = 1.56;
        let (g, _) = gen(5e6, 0.0, mhz(1.75), 14, DriveAmplitudes::from_nbar(nbar, kappa, 0.0));
        let rho = steady_state(&g).unwrap();
        let chi = mhz(1.75);
        let eps = kappa * nbar.sqrt() / 2.0;
        let expect = eps * eps / (chi * chi + kappa * kappa / 4.0);
        assert!((rho.photon_number() - expect).abs() < 1e-6 * expect);
        let (g0, _) = gen(5e6, 0.0, 0.0, 14, DriveAmplitudes::from_nbar(nbar, kappa, 0.0));
        assert!((steady_state(&g0).unwrap().photon_number() - nbar).abs() < 1e-6);
    }

    #[test]
    fn saturation_matches_bloch_closed_form() {
        let (g1, gphi) = (1.0 / 200e-9, 2e6);
        let w = mhz(3.0);
        let (g, _) = gen(g1, gphi, 0.0, 2, DriveAmplitudes { eps_m: 0.0, eps_d: w / 2.0 });
        let rho = steady_state(&g).unwrap();
        let p = saturation_population(0.0, w, g1, g1 / 2.0 + gphi, 0.0).unwrap();
        assert!((rho.excited_population() - p).abs() < 0.01 * p);
    }

    #[test]
    fn long_evolution_reaches_steady_state() {
        let kappa = mhz(30.3);
        let mut drives = DriveAmplitudes::from_nbar(0.5, kappa, mhz(5.0));
        drives.eps_d = mhz(5.0) / 2.0;
        let (g, _) = gen(1.0 / 200e-9, 1e6, mhz(1.75), 9, drives);
        let ss = steady_state(&g).unwrap();
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1e-6).collect();
        let end = evolve_observe(&DensityOperator::basis(9, 0, 0), &g, &times, 8, |_, _| {}).unwrap();
        assert!(ss.trace_distance(&end).unwrap() < 1e-6);
        let relaxed = steady_state_relaxed(&g, None, &RelaxOptions::default()).unwrap();
        assert!(ss.trace_distance(&relaxed).unwrap() < 1e-6);
    }

    #[test]
    fn step_rule() {
        let (g, _) = gen(1.0 / 200e-9, 0.0, mhz(1.75), 10, DriveAmplitudes::from_nbar(1.0, mhz(30.3), mhz(10.0)));
        let plan = StepPlan::for_generator(&g);
        assert!(plan.dt_max <= 1.0 / mhz(30.3) / 40.0);
        assert!(plan.dt_max * g.spectral_bound() <= 2.5);
        assert_eq!(plan.substeps(plan.dt_max * 3.5), 4);
    }
}
