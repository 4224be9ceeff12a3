//! Experiment drivers shared by the subcommands and the validation suite.

use std::f64::consts::{PI, TAU};

use lgtime_core::detector::{
    acquire_spectra, run_lg_analysis, synthesize_macrospin_trace, synthesize_quantum_trace, synthesize_telegraph_trace,
    window_bins, AcquisitionConfig, LgAnalysis, LgOptions, LineResponse, RecordStream,
};
use lgtime_core::lindblad::{
    build_generator, correlator_spectrum, ensemble_rabi, simulate_delta_v, steady_state, two_time_correlator,
    DriveAmplitudes, HilbertConfig,
};
use lgtime_core::optim::golden_section;
use lgtime_core::qubit::{cavity_filter, fit_exponential_decay, fit_rabi_decay, ExpFit, RabiFit};
use lgtime_core::spectrum::{finite_bandwidth_record, ideal_lg, tabulate};
use lgtime_core::{FiniteBandwidthModel, LgCurve, SpectrumRecord, SpinTrajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelName};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// One ensemble Rabi run with its fits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RabiCell {
    pub nbar: f64,
    pub rabi_hz: f64,
    pub nbar_measured: f64,
    pub fock_dim: usize,
    pub trajectory: SpinTrajectory,
    pub fit: Option<RabiFit<f64>>,
    pub exp_fit: Option<ExpFit<f64>>,
}

pub fn rabi_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let n = (cfg.rabi.duration_s / cfg.rabi.step_s).round() as usize;
    (0..=n).map(|i| i as f64 * cfg.rabi.step_s).collect()
}

pub fn rabi_cell(cfg: &ExperimentConfig, nbar: f64, rabi_hz: f64) -> Result<RabiCell> {
    let tls = cfg.rabi_tls()?;
    let times = rabi_times(cfg);
    let run = ensemble_rabi(&tls, &cfg.lindblad_cavity(), nbar, TAU * rabi_hz, &times, cfg.rabi.fock_dim)?;
    let fit = match fit_rabi_decay(&run.trajectory, &tls) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("Rabi fit failed at n = {nbar}, {rabi_hz} Hz: {e}");
            None
        }
    };
    let z = run.trajectory.z();
    let exp_fit = match fit_exponential_decay(&run.trajectory.times, &z) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("exponential fit failed at n = {nbar}, {rabi_hz} Hz: {e}");
            None
        }
    };
    Ok(RabiCell {
        nbar,
        rabi_hz,
        nbar_measured: run.nbar_measured,
        fock_dim: run.fock_dim,
        trajectory: run.trajectory,
        fit,
        exp_fit,
    })
}

pub fn rabi_sweep(cfg: &ExperimentConfig, nbars: &[f64], rabi_hz: f64) -> Result<Vec<RabiCell>> {
    nbars.par_iter().map(|&n| rabi_cell(cfg, n, rabi_hz)).collect()
}

/// Linear fit of the fitted `Γ₂` against the measured photon number.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DephasingSlope {
    pub rabi_hz: f64,
    /// `dΓφ/dn̄` (1/s)
    pub slope: f64,
    /// `Γ₂` at zero photons (1/s)
    pub intercept: f64,
    pub r_squared: f64,
    /// `8χ²C(ω_R)/κ`
    pub predicted: f64,
}

impl DephasingSlope {
    pub fn relative_error(&self) -> f64 {
        self.slope / self.predicted - 1.0
    }
}

pub fn predicted_slope(cfg: &ExperimentConfig, rabi_hz: f64) -> Result<f64> {
    let chi = cfg.chi0();
    let kappa = cfg.kappa();
    Ok(8.0 * chi * chi * cavity_filter(TAU * rabi_hz, kappa)? / kappa)
}

pub fn dephasing_slope(cfg: &ExperimentConfig, cells: &[RabiCell], nbar_max: f64) -> Result<DephasingSlope> {
    let pts: Vec<(f64, f64)> = cells
        .iter()
        .filter(|c| c.nbar <= nbar_max)
        .filter_map(|c| c.fit.map(|f| (c.nbar_measured, f.gamma2)))
        .collect();
    if pts.len() < 3 {
        return Err(CliError::Failed(format!("only {} usable Rabi fits for the slope", pts.len())));
    }
    let rabi_hz = cells[0].rabi_hz;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(DephasingSlope {
        rabi_hz,
        slope,
        intercept: my - slope * mx,
        r_squared: if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 },
        predicted: predicted_slope(cfg, rabi_hz)?,
    })
}

/// Analytic and (optionally) master-equation spectra for one grid cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumCell {
    pub nbar: f64,
    pub rabi_hz: f64,
    pub nbar_measured: Option<f64>,
    pub fock_dim: Option<usize>,
    pub delta_v: Option<f64>,
    /// `Σ|S_num - S_an| / Σ|S_an|` up to `compare_max_hz`
    pub l1_error: Option<f64>,
    pub analytic: SpectrumRecord,
    pub numeric: Option<SpectrumRecord>,
}

fn spectra_model(cfg: &ExperimentConfig, nbar: f64, rabi_hz: f64) -> Result<FiniteBandwidthModel> {
    let tls = cfg.spectra_tls()?;
    Ok(FiniteBandwidthModel {
        omega_rabi: TAU * rabi_hz,
        gamma1: tls.gamma1,
        gamma_phi0: tls.gamma_phi0,
        nbar,
        chi: cfg.chi0(),
        kappa: cfg.kappa(),
    })
}

pub fn relative_l1(numeric: &[f64], analytic: &[f64]) -> f64 {
    let num: f64 = numeric.iter().zip(analytic).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = analytic.iter().map(|v| v.abs()).sum();
    num / den
}

pub fn spectrum_cell(cfg: &ExperimentConfig, nbar: f64, rabi_hz: f64, numeric: bool) -> Result<SpectrumCell> {
    let s = &cfg.spectra;
    let n_tau = (s.tau_max_s / s.tau_step_s).round() as usize;
    if !numeric {
        let model = spectra_model(cfg, nbar, rabi_hz)?;
        let df = 1.0 / (2.0 * n_tau as f64 * s.tau_step_s);
        let analytic = finite_bandwidth_record(&model, df, n_tau)?;
        return Ok(SpectrumCell {
            nbar,
            rabi_hz,
            nbar_measured: None,
            fock_dim: None,
            delta_v: None,
            l1_error: None,
            analytic,
            numeric: None,
        });
    }
    let tls = cfg.spectra_tls()?;
    let cavity = cfg.lindblad_cavity();
    let omega_rabi = TAU * rabi_hz;
    let hilbert = HilbertConfig::stark_compensated(nbar, cavity.chi0);
    let drives = DriveAmplitudes::from_nbar(nbar, cavity.kappa, omega_rabi);
    let g = build_generator(&tls, &cavity, &hilbert, &drives)?;
    let rho = steady_state(&g)?;
    let nbar_measured = rho.photon_number();
    let taus: Vec<f64> = (0..=n_tau).map(|i| i as f64 * s.tau_step_s).collect();
    let corr = two_time_correlator(&rho, &g, &taus)?;
    let dv = simulate_delta_v(&tls, &cavity, &hilbert, drives.eps_m)?;
    let num = correlator_spectrum(&corr, dv.delta_v)?;
    let model = spectra_model(cfg, nbar_measured, rabi_hz)?;
    let mut analytic = num.clone();
    analytic.density = tabulate(&num.omegas, |w| lgtime_core::spectrum::finite_bandwidth_spectrum(w, &model).unwrap_or(f64::NAN));
    analytic.meta = Default::default();
    analytic.meta.insert("model".into(), "finite_bandwidth".into());
    analytic.meta.insert("nbar".into(), nbar_measured.into());
    let m = num.omegas.iter().take_while(|w| **w / TAU <= s.compare_max_hz).count();
    let l1 = relative_l1(&num.density[..m], &analytic.density[..m]);
    Ok(SpectrumCell {
        nbar,
        rabi_hz,
        nbar_measured: Some(nbar_measured),
        fock_dim: Some(g.fock_dim()),
        delta_v: Some(dv.delta_v),
        l1_error: Some(l1),
        analytic,
        numeric: Some(num),
    })
}

/// Flat line response, or the configured table.
pub fn line_response(cfg: &ExperimentConfig) -> Result<LineResponse> {
    match &cfg.lg.line_response {
        None => Ok(LineResponse::flat(cfg.lg.budget.dr_over_r)),
        Some(p) => lgtime_core::io::read_line_response_csv(p)
            .map_err(|e| CliError::Config(format!("line response {}: {e}", p.display()))),
    }
}

pub fn lg_options(cfg: &ExperimentConfig, line: &LineResponse) -> LgOptions {
    let mut budget = cfg.lg.budget;
    if cfg.lg.line_response.is_some() {
        budget.dr_over_r = line.max_dr_over_r(cfg.lg.f_max_hz);
    }
    LgOptions {
        f_max_hz: cfg.lg.f_max_hz,
        sigma_band_hz: (cfg.lg.sigma_band_hz[0], cfg.lg.sigma_band_hz[1]),
        sigma0: None,
        budget,
    }
}

/// Acquisition settings for `records_per_tag` records of each tag.
pub fn acquisition(cfg: &ExperimentConfig, model: ModelName, records_per_tag: u64, seed: u64) -> AcquisitionConfig {
    let mut acq = cfg.lg.acquisition;
    acq.seed = seed;
    acq.n_records = acq.records_for_per_tag(records_per_tag);
    if model != ModelName::Quantum {
        acq.noise_to_peak = cfg.lg.controls.noise_to_peak;
    }
    acq
}

pub fn record_stream(
    cfg: &ExperimentConfig,
    model: ModelName,
    acq: &AcquisitionConfig,
    line: &LineResponse,
) -> Result<RecordStream> {
    let kappa = cfg.kappa();
    let dv = cfg.lg.delta_v;
    let c = &cfg.lg.controls;
    let stream = match model {
        ModelName::Quantum => {
            let target = finite_bandwidth_record(&cfg.lg_model()?, acq.df_hz(), acq.record_len / 2)?;
            synthesize_quantum_trace(&target, dv, acq, line)?
        }
        ModelName::Macrospin => {
            synthesize_macrospin_trace(TAU * cfg.lg.rabi_hz, TAU * c.macrospin_diffusion_hz, dv, kappa, acq)?
        }
        ModelName::Telegraph => synthesize_telegraph_trace(TAU * c.telegraph_rate_hz, dv, kappa, acq)?,
    };
    Ok(stream)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LgRun {
    pub model: ModelName,
    pub seed: u64,
    pub n_on: u64,
    pub n_off: u64,
    pub noise_to_peak: f64,
    pub analysis: LgAnalysis,
}

/// Synthesis, acquisition and analysis in one call.
pub fn run_lg(cfg: &ExperimentConfig, model: ModelName, records_per_tag: u64, seed: u64) -> Result<LgRun> {
    let line = line_response(cfg)?;
    let acq = acquisition(cfg, model, records_per_tag, seed);
    let stream = record_stream(cfg, model, &acq, &line)?;
    let spectra = acquire_spectra(&stream)?;
    let analysis = run_lg_analysis(&spectra, &line, cfg.lg.delta_v, cfg.kappa(), &lg_options(cfg, &line))?;
    Ok(LgRun {
        model,
        seed,
        n_on: spectra.n_on,
        n_off: spectra.n_off,
        noise_to_peak: acq.noise_to_peak,
        analysis,
    })
}

/// Noise-free analysis of the analytic detector spectrum on the record grid.
pub fn analytic_lg(cfg: &ExperimentConfig) -> Result<LgAnalysis> {
    let acq = &cfg.lg.acquisition;
    let df = acq.df_hz();
    let m = window_bins(df, cfg.lg.f_max_hz);
    let corrected = finite_bandwidth_record(&cfg.lg_model()?, df, m)?;
    let line = line_response(cfg)?;
    let mut opts = lg_options(cfg, &line);
    opts.sigma0 = Some(0.0);
    Ok(LgAnalysis::from_corrected(corrected, cfg.kappa(), &opts)?)
}

/// `f(τ) = 2cos(ω_Rτ) - cos(2ω_Rτ)` on a fine grid over half a period, with
/// the maximum located by golden-section search.
pub struct IdealLg {
    pub curve: LgCurve,
    pub tau_star: f64,
    pub f_star: f64,
}

pub fn ideal_curve(rabi_hz: f64, n: usize) -> Result<IdealLg> {
    let w = TAU * rabi_hz;
    let half = PI / w;
    let taus: Vec<f64> = (0..=n).map(|i| half * i as f64 / n as f64).collect();
    let f = taus.iter().map(|&t| ideal_lg(t, w)).collect::<lgtime_core::Result<Vec<f64>>>()?;
    let (tau_star, neg) = golden_section(|t| -ideal_lg(t, w).unwrap_or(f64::NAN), 0.0, 2.0 * half / 3.0, 1e-15 * half, 500);
    Ok(IdealLg {
        curve: LgCurve::bare(taus, f),
        tau_star,
        f_star: -neg,
    })
}
