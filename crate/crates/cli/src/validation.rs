//! Acceptance suite. Each criterion returns a [`CriterionResult`]; errors
//! inside a criterion are reported as failures rather than aborting the run.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use lgtime_core::optim::golden_section;
use lgtime_core::qubit::saturation_population;
use lgtime_core::spectrum::{
    correlator_from_spectrum, ideal_lg, leggett_garg_curve, lg_max, sigma_z_spectrum, spectrum_z_st,
};
use lgtime_core::detector::deconvolve_cavity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, ModelName};
use crate::experiments::{analytic_lg, dephasing_slope, rabi_sweep, run_lg, spectrum_cell};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const ALL: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
/// Fast subset used by `validate --quick`.
pub const QUICK: [u32; 5] = [1, 2, 3, 6, 10];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub metrics: serde_json::Value,
    /// set when the criterion could not be evaluated
    pub error: Option<String>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("criterion {:>2} {verdict}: {} ({})", self.id, self.name, self.summary)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub quick: bool,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl Report {
    pub fn failed_ids(&self) -> Vec<u32> {
        self.criteria.iter().filter(|c| !c.passed).map(|c| c.id).collect()
    }
}

pub fn name(id: u32) -> &'static str {
    match id {
        1 => "ideal LG maximum",
        2 => "decohered LG prediction",
        3 => "saturation population",
        4 => "master-equation vs analytic spectrum",
        5 => "emergent measurement dephasing",
        6 => "Zeno monotonicity",
        7 => "end-to-end violation",
        8 => "classical controls",
        9 => "error-formula fidelity",
        10 => "normalization identity",
        _ => "unknown",
    }
}

struct Outcome {
    passed: bool,
    summary: String,
    metrics: serde_json::Value,
}

/// Runs one criterion; evaluation errors become a failed result.
pub fn run_criterion(id: u32, cfg: &ExperimentConfig) -> CriterionResult {
    let t0 = Instant::now();
    let out = match id {
        1 => ideal_maximum(cfg),
        2 => decohered_prediction(cfg),
        3 => saturation(cfg),
        4 => oracle_equivalence(cfg),
        5 => emergent_dephasing(cfg),
        6 => zeno(cfg),
        7 => end_to_end(cfg),
        8 => controls(cfg),
        9 => error_formula(cfg),
        10 => normalization(cfg),
        _ => Err(CliError::Config(format!("no criterion {id}"))),
    };
    log::info!("criterion {id} took {:.1} s", t0.elapsed().as_secs_f64());
    match out {
        Ok(o) => CriterionResult {
            id,
            name: name(id).into(),
            passed: o.passed,
            summary: o.summary,
            metrics: o.metrics,
            error: None,
        },
        Err(e) => CriterionResult {
            id,
            name: name(id).into(),
            passed: false,
            summary: format!("error: {e}"),
            metrics: serde_json::Value::Null,
            error: Some(e.to_string()),
        },
    }
}

pub fn run_suite(cfg: &ExperimentConfig, ids: &[u32], quick: bool, mut on_result: impl FnMut(&CriterionResult)) -> Report {
    let mut criteria = Vec::with_capacity(ids.len());
    for &id in ids {
        let r = run_criterion(id, cfg);
        on_result(&r);
        criteria.push(r);
    }
    Report {
        quick,
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    }
}

fn ideal_maximum(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = TAU * cfg.lg.rabi_hz;
    let tau0 = PI / (3.0 * w);
    let at_tau0 = ideal_lg(tau0, w)?;
    let (tau, neg) = golden_section(|t| -ideal_lg(t, w).unwrap_or(f64::NAN), 0.0, PI / w, 1e-15 * tau0, 500);
    let f = -neg;
    let tau_rel = (tau - tau0).abs() / tau0;
    let passed = (at_tau0 - 1.5).abs() <= 1e-9 && (f - 1.5).abs() <= 1e-9 && tau_rel <= 1e-6;
    Ok(Outcome {
        passed,
        summary: format!("max f = {f:.12} at tau = {:.6} ns (T_R/6 = {:.6} ns)", tau * 1e9, tau0 * 1e9),
        metrics: json!({"f_at_sixth_period": at_tau0, "f_max": f, "tau_max_s": tau, "tau_expected_s": tau0, "tau_relative_error": tau_rel}),
    })
}

fn decohered_prediction(cfg: &ExperimentConfig) -> Result<Outcome> {
    let a = analytic_lg(cfg)?;
    let s = deconvolve_cavity(&a.corrected, cfg.kappa())?;
    let curve = leggett_garg_curve(&correlator_from_spectrum(&s)?, None)?;
    let (tau_refined, f_refined) = lg_max(&curve)?;
    let passed = (a.f_star - 1.36).abs() <= 0.03 && (12e-9..=22e-9).contains(&a.tau_star);
    Ok(Outcome {
        passed,
        summary: format!("max f = {:.4} at tau = {:.2} ns (target 1.36 +/- 0.03 near 17 ns)", a.f_star, a.tau_star * 1e9),
        metrics: json!({
            "f_star": a.f_star, "tau_star_s": a.tau_star, "k0": a.k0,
            "f_refined": f_refined, "tau_refined_s": tau_refined,
            "bins": a.corrected.len(), "df_hz": a.corrected.df_hz()?,
        }),
    })
}

fn saturation(cfg: &ExperimentConfig) -> Result<Outcome> {
    let q = &cfg.qubit;
    let p = saturation_population(q.p_e0, TAU * 10e6, 1.0 / q.t1_s, 1.0 / q.t2_s, 0.0)?;
    Ok(Outcome {
        passed: (p - 0.496).abs() <= 1e-3,
        summary: format!("p_e = {p:.5} (target 0.496 +/- 0.001)"),
        metrics: json!({"p_e": p}),
    })
}

const ORACLE_NBARS: [f64; 4] = [0.23, 0.78, 1.56, 3.9];
const ORACLE_RABI_HZ: [f64; 4] = [2.5e6, 5e6, 10e6, 20e6];

fn oracle_equivalence(cfg: &ExperimentConfig) -> Result<Outcome> {
    let cells: Vec<(f64, f64)> = ORACLE_NBARS
        .iter()
        .flat_map(|&n| ORACLE_RABI_HZ.iter().map(move |&r| (n, r)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(n, r)| spectrum_cell(cfg, n, r, true))
        .collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    let mut table = Vec::new();
    let mut n_pass = 0;
    for c in &results {
        let e = c.l1_error.unwrap_or(f64::INFINITY);
        worst = worst.max(e);
        n_pass += usize::from(e < 0.03);
        table.push(json!({"nbar": c.nbar, "rabi_hz": c.rabi_hz, "nbar_measured": c.nbar_measured, "fock_dim": c.fock_dim, "l1_error": e}));
    }
    Ok(Outcome {
        passed: n_pass == results.len(),
        summary: format!("{n_pass}/{} cells below 3% L1, worst {:.2}%", results.len(), 100.0 * worst),
        metrics: json!({"cells": table, "worst": worst}),
    })
}

fn emergent_dephasing(cfg: &ExperimentConfig) -> Result<Outcome> {
    let nbars = [0.0, 1.0, 2.0, 5.0];
    let mut all_ok = true;
    let mut parts = Vec::new();
    let mut table = Vec::new();
    for &r in &ORACLE_RABI_HZ {
        let cells = rabi_sweep(cfg, &nbars, r)?;
        let s = dephasing_slope(cfg, &cells, 5.0)?;
        let ok = s.relative_error().abs() <= 0.10 && s.r_squared >= 0.98;
        all_ok &= ok;
        parts.push(format!("{}MHz {:+.1}%", r / 1e6, 100.0 * s.relative_error()));
        let gammas: Vec<Option<f64>> = cells.iter().map(|c| c.fit.map(|f| f.gamma2)).collect();
        table.push(json!({"rabi_hz": r, "slope": s.slope, "predicted": s.predicted, "relative_error": s.relative_error(),
            "r_squared": s.r_squared, "intercept": s.intercept, "gamma2_fits": gammas,
            "nbar_measured": cells.iter().map(|c| c.nbar_measured).collect::<Vec<_>>()}));
    }
    Ok(Outcome {
        passed: all_ok,
        summary: format!("slope error vs 8chi^2C/kappa: {}", parts.join(", ")),
        metrics: json!({"rabi": table}),
    })
}

fn zeno(cfg: &ExperimentConfig) -> Result<Outcome> {
    let nbars = [5.0, 10.0, 20.0];
    let cells = rabi_sweep(cfg, &nbars, 2.5e6)?;
    let taus = cells
        .iter()
        .map(|c| c.exp_fit.map(|f| f.tau).ok_or_else(|| CliError::Failed(format!("no exponential fit at n = {}", c.nbar))))
        .collect::<Result<Vec<f64>>>()?;
    let passed = taus.windows(2).all(|w| w[1] > w[0]);
    Ok(Outcome {
        passed,
        summary: format!(
            "decay times {} ns at n = 5, 10, 20",
            taus.iter().map(|t| format!("{:.1}", t * 1e9)).collect::<Vec<_>>().join(" < ")
        ),
        metrics: json!({"nbars": nbars, "tau_s": taus}),
    })
}

fn end_to_end(cfg: &ExperimentConfig) -> Result<Outcome> {
    let run = run_lg(cfg, ModelName::Quantum, cfg.lg.records_per_tag, cfg.seed)?;
    let a = &run.analysis;
    let sys = a.f_star - a.curve.sys_lo[a.index_star];
    let margin = a.f_star - 1.0 - sys - 3.0 * a.sigma_star;
    let sigma_17 = a.curve.sigma_stat[a.index_star];
    let passed = margin > 0.0 && (a.k0 - 1.0).abs() <= 0.1 && sigma_17 <= 0.1;
    Ok(Outcome {
        passed,
        summary: format!(
            "f* = {:.3} at {:.1} ns, sys {:.3}, sigma {:.3}, K(0) = {:.3}, {:.1} sigma above 1 after systematics",
            a.f_star,
            a.tau_star * 1e9,
            sys,
            a.sigma_star,
            a.k0,
            a.significance
        ),
        metrics: json!({"f_star": a.f_star, "tau_star_s": a.tau_star, "systematic": sys, "sigma": a.sigma_star,
            "k0": a.k0, "significance": a.significance, "sigma0": a.sigma0, "n_on": run.n_on, "n_off": run.n_off}),
    })
}

fn control_seed(cfg: &ExperimentConfig, k: u64) -> u64 {
    cfg.seed.wrapping_mul(1_000_003).wrapping_add(1_000 + k)
}

fn controls(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n = cfg.validate.control_seeds;
    let per_tag = cfg.lg.controls.records_per_tag;
    let mut macro_rows = Vec::new();
    let mut tele_rows = Vec::new();
    let (mut macro_ok, mut tele_ok) = (0, 0);
    let (mut k0_lo, mut k0_hi, mut worst) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..n {
        let m = run_lg(cfg, ModelName::Macrospin, per_tag, control_seed(cfg, k))?.analysis;
        let ok = (m.k0 - 0.5).abs() <= 0.05 && m.f_star <= 1.0 + 2.0 * m.sigma_star;
        macro_ok += usize::from(ok);
        k0_lo = k0_lo.min(m.k0);
        k0_hi = k0_hi.max(m.k0);
        worst = worst.max((m.f_star - 1.0) / m.sigma_star);
        macro_rows.push(json!({"seed": control_seed(cfg, k), "k0": m.k0, "f_star": m.f_star, "sigma": m.sigma_star}));

        let t = run_lg(cfg, ModelName::Telegraph, per_tag, control_seed(cfg, k + n))?.analysis;
        let ok = t.f_star <= 1.0 + 2.0 * t.sigma_star;
        tele_ok += usize::from(ok);
        worst = worst.max((t.f_star - 1.0) / t.sigma_star);
        tele_rows.push(json!({"seed": control_seed(cfg, k + n), "k0": t.k0, "f_star": t.f_star, "sigma": t.sigma_star}));
    }
    Ok(Outcome {
        passed: macro_ok as u64 == n && tele_ok as u64 == n,
        summary: format!(
            "macrospin {macro_ok}/{n}, telegraph {tele_ok}/{n}; macrospin K(0) in [{k0_lo:.3}, {k0_hi:.3}], largest (f*-1)/sigma {worst:.2}"
        ),
        metrics: json!({"macrospin": macro_rows, "telegraph": tele_rows}),
    })
}

fn error_formula(cfg: &ExperimentConfig) -> Result<Outcome> {
    let nominal = analytic_lg(cfg)?;
    let r = nominal.index_star;
    let rel_sys = nominal.relative_systematic();

    let reps = cfg.validate.mc_repetitions;
    let mut f = Vec::with_capacity(reps as usize);
    let mut s = Vec::with_capacity(reps as usize);
    for k in 0..reps {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(100_000 + k);
        let a = run_lg(cfg, ModelName::Quantum, cfg.validate.mc_records_per_tag, seed)?.analysis;
        f.push(a.curve.f[r]);
        s.push(a.curve.sigma_stat[r]);
    }
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let mc = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let formula = s.iter().sum::<f64>() / n;
    let ratio = formula / mc;
    let v = &cfg.validate;
    let stat_ok = (ratio - 1.0).abs() <= 0.10;
    let sys_ok = (rel_sys - v.systematic_target).abs() <= v.systematic_tolerance;
    Ok(Outcome {
        passed: stat_ok && sys_ok,
        summary: format!(
            "sigma formula/MC = {ratio:.3} over {reps} runs ({}); systematic at violation point {:.2}% vs {:.1}% ({})",
            if stat_ok { "ok" } else { "off" },
            100.0 * rel_sys,
            100.0 * v.systematic_target,
            if sys_ok { "ok" } else { "off" }
        ),
        metrics: json!({"index": r, "tau_s": nominal.tau_star, "sigma_formula": formula, "sigma_mc": mc, "ratio": ratio,
            "f_mean": mean, "relative_systematic": rel_sys, "f_star_analytic": nominal.f_star,
            "kappa_part": nominal.curve.meta.get("sys_kappa_part").and_then(|v| v.get(r)).cloned()}),
    })
}

fn normalization(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e6f726d);
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for _ in 0..cfg.validate.normalization_sets {
        let wr = TAU * 10f64.powf(rng.gen_range(5.0..7.7));
        let g1 = 10f64.powf(rng.gen_range(4.0..8.0));
        let g2 = 0.5 * g1 + 10f64.powf(rng.gen_range(3.0..9.0));
        let z = spectrum_z_st(wr, g1, g2);
        let breaks = spectrum_breaks(wr, g1, g2);
        let integral = spectral_weight(|w| sigma_z_spectrum(w, wr, g1, g2).unwrap_or(f64::NAN), &breaks)?;
        let rel = (integral - (1.0 - z * z)).abs() / (1.0 - z * z);
        worst = worst.max(rel);
        rows.push(json!({"omega_rabi": wr, "gamma1": g1, "gamma2": g2, "relative_error": rel}));
    }
    Ok(Outcome {
        passed: worst <= 1e-4,
        summary: format!("worst relative error {worst:.2e} over {} sets", cfg.validate.normalization_sets),
        metrics: json!({"worst": worst, "sets": rows}),
    })
}

/// `(1/π)∫₀^∞ S(ω)dω` for an even density by adaptive Gauss-Kronrod
/// quadrature. Finite panels are split at `breaks` (positive, any order);
/// the tail beyond the last break `b` uses `ω = b/t`.
pub fn spectral_weight(s: impl Fn(f64) -> f64, breaks: &[f64]) -> Result<f64> {
    let mut edges: Vec<f64> = breaks.iter().copied().filter(|b| *b > 0.0 && b.is_finite()).collect();
    edges.push(0.0);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    if edges.len() < 2 {
        return Err(CliError::Failed("need at least one positive break point".into()));
    }
    let last = edges[edges.len() - 1];
    let tail = |t: f64| if t > 0.0 { s(last / t) * last / (t * t) } else { 0.0 };
    let mut panels: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
    let finite = adaptive_gk(&s, &panels, 1e-10, 100_000)?;
    panels = vec![(0.0, 1.0)];
    let rest = adaptive_gk(tail, &panels, 1e-10, 100_000)?;
    Ok((finite + rest) / PI)
}

/// Break points resolving the zero-frequency and `±ω_R` features of the
/// spin spectrum: geometric ladders around each feature.
pub fn spectrum_breaks(omega_rabi: f64, gamma1: f64, gamma2: f64) -> Vec<f64> {
    let lo = 0.01 * gamma1.min(gamma2).min(omega_rabi);
    let hi = 100.0 * omega_rabi.max(gamma2).max(gamma1);
    let mut out = Vec::new();
    let mut w = lo;
    while w < hi {
        out.push(w);
        w *= 2.0;
    }
    out.push(hi);
    out.push(omega_rabi);
    let mut d = 0.01 * gamma1.min(gamma2);
    while d < omega_rabi {
        out.push(omega_rabi + d);
        out.push(omega_rabi - d);
        d *= 2.0;
    }
    out
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let fs = f(c - h * XGK[j]) + f(c + h * XGK[j]);
        k += WGK[j] * fs;
        if j % 2 == 1 {
            g += WG[j / 2] * fs;
        }
    }
    (k * h, (k - g).abs() * h)
}

#[derive(PartialEq)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive 7/15-point Gauss-Kronrod over the given panels, bisecting the
/// worst panel until the summed error estimate is below `rel_tol·|I|`.
/// Panel errors are floored at the rounding level of the panel value.
pub fn adaptive_gk(f: impl Fn(f64) -> f64, panels: &[(f64, f64)], rel_tol: f64, max_panels: usize) -> Result<f64> {
    let eval = |lo: f64, hi: f64| {
        let (value, e) = gk15(&f, lo, hi);
        let error = if e <= 50.0 * f64::EPSILON * value.abs() { 0.0 } else { e };
        Panel { lo, hi, value, error }
    };
    let mut heap: std::collections::BinaryHeap<Panel> = panels.iter().map(|&(lo, hi)| eval(lo, hi)).collect();
    let mut total: f64 = heap.iter().map(|p| p.value).sum();
    let mut err: f64 = heap.iter().map(|p| p.error).sum();
    loop {
        if !total.is_finite() || !err.is_finite() {
            return Err(CliError::Failed("non-finite integrand".into()));
        }
        if err <= rel_tol * total.abs() {
            let exact: f64 = heap.iter().map(|p| p.value).sum();
            return Ok(exact);
        }
        if heap.len() >= max_panels {
            return Err(CliError::Failed(format!("quadrature did not converge (error {err:.2e} on {total:.6e})")));
        }
        let worst = heap.pop().expect("panels are non-empty");
        total -= worst.value;
        err -= worst.error;
        let mid = 0.5 * (worst.lo + worst.hi);
        for p in [eval(worst.lo, mid), eval(mid, worst.hi)] {
            total += p.value;
            err += p.error;
            heap.push(p);
        }
        if heap.len() % 1024 == 0 {
            total = heap.iter().map(|p| p.value).sum();
            err = heap.iter().map(|p| p.error).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_lorentzian() {
        let v = adaptive_gk(|x| x.powi(5) - 3.0 * x * x, &[(0.0, 2.0)], 1e-13, 100).unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-12);
        let w = spectral_weight(|w| 2.0 * 3.0 / (9.0 + w * w), &[3.0]).unwrap();
        assert!((w - 1.0).abs() < 1e-11, "{w}");
    }

    #[test]
    fn narrow_peak_is_resolved() {
        let (c, g) = (1e7, 1e3);
        let w = spectral_weight(|w| g / ((w - c).powi(2) + g * g) + g / ((w + c).powi(2) + g * g), &spectrum_breaks(c, g, g)).unwrap();
        assert!((w - 1.0).abs() < 1e-6, "{w}");
    }

    #[test]
    fn cheap_criteria_pass_on_defaults() {
        let cfg = ExperimentConfig::default();
        for id in [1, 3, 10] {
            let r = run_criterion(id, &cfg);
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn perturbed_t2_fails_named_criterion() {
        let mut cfg = ExperimentConfig::default();
        cfg.qubit.t2_s = 100e-9;
        let r = run_criterion(3, &cfg);
        assert!(!r.passed);
        assert!(r.line().contains("saturation population"));
        assert!(r.line().contains("FAIL"));
    }

    #[test]
    fn unknown_criterion_is_an_error() {
        let r = run_criterion(42, &ExperimentConfig::default());
        assert!(!r.passed && r.error.is_some());
    }
}
