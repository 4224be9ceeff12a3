//! Subcommands: run an experiment and write its files into the output directory.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use lgtime_core::io::{
    write_csv, write_json, write_lg_csv, write_line_response_csv, write_raw_records, write_spectrum_csv,
    write_trajectory_csv, Provenance,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, ModelName};
use crate::experiments::{
    acquisition, dephasing_slope, ideal_curve, line_response, rabi_sweep, record_stream, run_lg, spectrum_cell, DephasingSlope,
    RabiCell,
};
use crate::plot::{LinePlot, Series};
use crate::validation::{run_suite, Report, ALL, QUICK};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelName>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = self.model {
            cfg.lg.model = m;
        }
    }
}

fn provenance(cfg: &ExperimentConfig, command: &str, extra: serde_json::Value) -> Provenance {
    Provenance::new(command, Some(cfg.seed), json!({"config": cfg.provenance_parameters(), "run": extra}))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Failed(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok(cfg.out.clone())
}

fn tag(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RabiRow {
    pub nbar: f64,
    pub nbar_measured: f64,
    pub fock_dim: usize,
    pub gamma2_fit: Option<f64>,
    /// `Γ₂(n̄) - Γ₂(0)`
    pub gamma_phi_ph: Option<f64>,
    pub omega_tilde: Option<f64>,
    pub tau_exp: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RabiSummary {
    pub rabi_hz: f64,
    pub rows: Vec<RabiRow>,
    /// fit over `n̄ ≤ 5`
    pub slope: Option<DephasingSlope>,
    pub files: Vec<PathBuf>,
}

pub fn cmd_rabi(cfg: &ExperimentConfig, quick: bool) -> Result<RabiSummary> {
    let dir = out_dir(cfg)?;
    let nbars: Vec<f64> = if quick {
        cfg.rabi.nbars.iter().copied().filter(|n| *n <= 5.0).collect()
    } else {
        cfg.rabi.nbars.clone()
    };
    let rabi_hz = cfg.rabi.rabi_hz;
    let cells = rabi_sweep(cfg, &nbars, rabi_hz)?;
    let prov = provenance(cfg, "rabi", json!({"nbars": nbars, "rabi_hz": rabi_hz, "quick": quick}));
    let mut files = Vec::new();
    for c in &cells {
        let p = dir.join(format!("rabi_nbar{}.csv", tag(c.nbar)));
        write_trajectory_csv(&p, &c.trajectory, &prov)?;
        files.push(p);
    }
    let slope = match dephasing_slope(cfg, &cells, 5.0) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("no dephasing slope: {e}");
            None
        }
    };
    let baseline = cells
        .iter()
        .find(|c| c.nbar == 0.0)
        .and_then(|c| c.fit.map(|f| f.gamma2))
        .or(slope.map(|s| s.intercept));
    let rows: Vec<RabiRow> = cells
        .iter()
        .map(|c| RabiRow {
            nbar: c.nbar,
            nbar_measured: c.nbar_measured,
            fock_dim: c.fock_dim,
            gamma2_fit: c.fit.map(|f| f.gamma2),
            gamma_phi_ph: c.fit.and_then(|f| baseline.map(|b| f.gamma2 - b)),
            omega_tilde: c.fit.map(|f| f.omega_tilde),
            tau_exp: c.exp_fit.map(|f| f.tau),
        })
        .collect();
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let o = |v: Option<f64>| v.unwrap_or(f64::NAN);
            vec![
                r.nbar,
                r.nbar_measured,
                r.fock_dim as f64,
                o(r.gamma2_fit),
                o(r.gamma_phi_ph),
                o(r.omega_tilde),
                o(r.tau_exp),
            ]
        })
        .collect();
    let p = dir.join("rabi_fits.csv");
    write_csv(
        &p,
        &["nbar", "nbar_measured", "fock_dim", "gamma2_fit", "gamma_phi_ph", "omega_tilde", "tau_exp_s"],
        &table,
        &prov,
    )?;
    files.push(p);
    let summary = RabiSummary {
        rabi_hz,
        rows,
        slope,
        files: Vec::new(),
    };
    let p = dir.join("rabi.json");
    write_json(&p, &summary, &prov)?;
    files.push(p);
    plot_rabi(&cells, &dir.join("rabi.svg"));
    Ok(RabiSummary { files, ..summary })
}

fn plot_rabi(cells: &[RabiCell], path: &Path) {
    LinePlot {
        title: "ensemble Rabi oscillations".into(),
        x_label: "t (s)".into(),
        y_label: "z".into(),
        series: cells
            .iter()
            .map(|c| Series::new(format!("n = {}", c.nbar), c.trajectory.times.clone(), c.trajectory.z()))
            .collect(),
        hline: None,
    }
    .save(path);
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgreementRow {
    pub nbar: f64,
    pub rabi_hz: f64,
    pub nbar_measured: Option<f64>,
    pub fock_dim: Option<usize>,
    pub l1_error: Option<f64>,
}

pub fn cmd_spectra(cfg: &ExperimentConfig, quick: bool) -> Result<Vec<AgreementRow>> {
    let dir = out_dir(cfg)?;
    let s = &cfg.spectra;
    let (nbars, rabis): (Vec<f64>, Vec<f64>) = if quick {
        (
            s.nbars.iter().copied().filter(|n| *n <= 1.56).collect(),
            s.rabi_hz.iter().copied().filter(|r| (5e6..=10e6).contains(r)).collect(),
        )
    } else {
        (s.nbars.clone(), s.rabi_hz.clone())
    };
    let grid: Vec<(f64, f64)> = nbars.iter().flat_map(|&n| rabis.iter().map(move |&r| (n, r))).collect();
    let cells = grid
        .par_iter()
        .map(|&(n, r)| spectrum_cell(cfg, n, r, n <= s.numeric_max_nbar))
        .collect::<Result<Vec<_>>>()?;
    let prov = provenance(cfg, "spectra", json!({"nbars": nbars, "rabi_hz": rabis, "quick": quick}));
    let mut rows = Vec::new();
    for c in &cells {
        let stem = format!("spectrum_n{}_r{}MHz", tag(c.nbar), tag(c.rabi_hz / 1e6));
        write_spectrum_csv(&dir.join(format!("{stem}_analytic.csv")), &c.analytic, &prov)?;
        let mut series = vec![Series::new("analytic", hz(&c.analytic.omegas), c.analytic.density.clone())];
        if let Some(num) = &c.numeric {
            write_spectrum_csv(&dir.join(format!("{stem}_numeric.csv")), num, &prov)?;
            series.push(Series::new("master equation", hz(&num.omegas), num.density.clone()).dashed());
        }
        LinePlot {
            title: format!("n = {}, rabi = {} MHz", c.nbar, c.rabi_hz / 1e6),
            x_label: "f (Hz)".into(),
            y_label: "S (1/Hz, spin units)".into(),
            series: clip(series, cfg.spectra.compare_max_hz),
            hline: None,
        }
        .save(&dir.join(format!("{stem}_overlay.svg")));
        rows.push(AgreementRow {
            nbar: c.nbar,
            rabi_hz: c.rabi_hz,
            nbar_measured: c.nbar_measured,
            fock_dim: c.fock_dim,
            l1_error: c.l1_error,
        });
    }
    for &r in &rabis {
        for (kind, pick) in [("analytic", true), ("numeric", false)] {
            let series: Vec<Series> = cells
                .iter()
                .filter(|c| c.rabi_hz == r)
                .filter_map(|c| {
                    let rec = if pick { Some(&c.analytic) } else { c.numeric.as_ref() }?;
                    Some(Series::new(format!("n = {}", c.nbar), hz(&rec.omegas), rec.density.clone()))
                })
                .collect();
            if !series.is_empty() {
                LinePlot {
                    title: format!("{kind} spectra, rabi = {} MHz", r / 1e6),
                    x_label: "f (Hz)".into(),
                    y_label: "S (1/Hz, spin units)".into(),
                    series: clip(series, cfg.spectra.compare_max_hz),
                    hline: None,
                }
                .save(&dir.join(format!("spectra_{kind}_r{}MHz.svg", tag(r / 1e6))));
            }
        }
    }
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            vec![
                r.nbar,
                r.rabi_hz,
                r.nbar_measured.unwrap_or(f64::NAN),
                r.fock_dim.map_or(f64::NAN, |d| d as f64),
                r.l1_error.unwrap_or(f64::NAN),
            ]
        })
        .collect();
    write_csv(
        &dir.join("spectra_agreement.csv"),
        &["nbar", "rabi_hz", "nbar_measured", "fock_dim", "l1_error"],
        &table,
        &prov,
    )?;
    write_json(&dir.join("spectra.json"), &rows, &prov)?;
    Ok(rows)
}

fn hz(omegas: &[f64]) -> Vec<f64> {
    omegas.iter().map(|w| w / TAU).collect()
}

fn clip(series: Vec<Series>, f_max: f64) -> Vec<Series> {
    series
        .into_iter()
        .map(|mut s| {
            let n = s.x.iter().take_while(|f| **f <= f_max).count();
            s.x.truncate(n);
            s.y.truncate(n);
            s
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LgSummary {
    pub model: String,
    pub seed: u64,
    pub n_on: u64,
    pub n_off: u64,
    pub noise_to_peak: f64,
    pub k0: f64,
    pub tau_star_s: f64,
    pub f_star: f64,
    pub sigma_star: f64,
    pub systematic: f64,
    pub significance: f64,
    pub sigma0: f64,
    /// `f*` exceeds 1 after subtracting the systematic bound
    pub violation: bool,
}

pub fn cmd_lg(cfg: &ExperimentConfig, ideal: bool, quick: bool) -> Result<LgSummary> {
    let dir = out_dir(cfg)?;
    let model = cfg.lg.model;
    if ideal {
        if model != ModelName::Quantum {
            return Err(CliError::Config("--ideal applies to the quantum model only".into()));
        }
        return lg_ideal(cfg, &dir);
    }
    let per_tag = match (model, quick) {
        (ModelName::Quantum, false) => cfg.lg.records_per_tag,
        (ModelName::Quantum, true) => cfg.lg.quick_records_per_tag,
        (_, false) => cfg.lg.controls.records_per_tag,
        (_, true) => cfg.lg.controls.records_per_tag.min(cfg.lg.quick_records_per_tag),
    };
    let prefix = model.as_str();
    let prov = provenance(cfg, "lg", json!({"model": prefix, "records_per_tag": per_tag, "quick": quick}));
    let line = line_response(cfg)?;
    write_line_response_csv(&dir.join("line_response.csv"), &line, &prov)?;
    if cfg.lg.raw_records > 0 {
        let acq = acquisition(cfg, model, per_tag, cfg.seed);
        let stream = record_stream(cfg, model, &acq, &line)?;
        let n = cfg.lg.raw_records.min(acq.n_records);
        write_raw_records(&dir.join(format!("{prefix}_raw.bin")), (0..n).map(|i| stream.record(i)), acq.dt, &prov)?;
    }
    let run = run_lg(cfg, model, per_tag, cfg.seed)?;
    let a = &run.analysis;
    write_spectrum_csv(&dir.join(format!("{prefix}_spectrum_corrected.csv")), &a.corrected, &prov)?;
    write_spectrum_csv(&dir.join(format!("{prefix}_spectrum_sz.csv")), &a.spectrum, &prov)?;
    let krows: Vec<Vec<f64>> = a.correlator.taus.iter().zip(&a.correlator.values).map(|(t, k)| vec![*t, *k]).collect();
    write_csv(&dir.join(format!("{prefix}_correlator.csv")), &["tau_s", "K"], &krows, &prov)?;
    write_lg_csv(&dir.join(format!("{prefix}_lg.csv")), &a.curve, &prov)?;
    let summary = LgSummary {
        model: prefix.into(),
        seed: run.seed,
        n_on: run.n_on,
        n_off: run.n_off,
        noise_to_peak: run.noise_to_peak,
        k0: a.k0,
        tau_star_s: a.tau_star,
        f_star: a.f_star,
        sigma_star: a.sigma_star,
        systematic: a.f_star - a.curve.sys_lo[a.index_star],
        significance: a.significance,
        sigma0: a.sigma0,
        violation: a.curve.sys_lo[a.index_star] > 1.0,
    };
    write_json(&dir.join(format!("{prefix}_lg.json")), &json!({"summary": summary, "analysis": a}), &prov)?;
    let taus_ns: Vec<f64> = a.curve.taus.iter().map(|t| t * 1e9).collect();
    LinePlot {
        title: format!("{prefix}: f(tau)"),
        x_label: "tau (ns)".into(),
        y_label: "f".into(),
        series: vec![
            Series::new("f", taus_ns.clone(), a.curve.f.clone()),
            Series::new("f - sigma", taus_ns.clone(), a.curve.f.iter().zip(&a.curve.sigma_stat).map(|(f, s)| f - s).collect()).dashed(),
            Series::new("f + sigma", taus_ns.clone(), a.curve.f.iter().zip(&a.curve.sigma_stat).map(|(f, s)| f + s).collect()).dashed(),
            Series::new("systematic low", taus_ns, a.curve.sys_lo.clone()).dashed(),
        ],
        hline: Some(1.0),
    }
    .save(&dir.join(format!("{prefix}_lg.svg")));
    Ok(summary)
}

fn lg_ideal(cfg: &ExperimentConfig, dir: &Path) -> Result<LgSummary> {
    let r = ideal_curve(cfg.lg.rabi_hz, 2000)?;
    let prov = provenance(cfg, "lg", json!({"model": "ideal"}));
    write_lg_csv(&dir.join("ideal_lg.csv"), &r.curve, &prov)?;
    let summary = LgSummary {
        model: "ideal".into(),
        seed: cfg.seed,
        n_on: 0,
        n_off: 0,
        noise_to_peak: 0.0,
        k0: 1.0,
        tau_star_s: r.tau_star,
        f_star: r.f_star,
        sigma_star: 0.0,
        systematic: 0.0,
        significance: f64::INFINITY,
        sigma0: 0.0,
        violation: r.f_star > 1.0,
    };
    write_json(&dir.join("ideal_lg.json"), &summary, &prov)?;
    LinePlot {
        title: "ideal f(tau)".into(),
        x_label: "tau (ns)".into(),
        y_label: "f".into(),
        series: vec![Series::new("f", r.curve.taus.iter().map(|t| t * 1e9).collect(), r.curve.f.clone())],
        hline: Some(1.0),
    }
    .save(&dir.join("ideal_lg.svg"));
    Ok(summary)
}

/// Runs the suite, printing one line per criterion, and writes `validation.json`.
pub fn cmd_validate(cfg: &ExperimentConfig, quick: bool) -> Result<Report> {
    let dir = out_dir(cfg)?;
    let ids: &[u32] = if quick { &QUICK } else { &ALL };
    let report = run_suite(cfg, ids, quick, |r| println!("{}", r.line()));
    let prov = provenance(cfg, "validate", json!({"quick": quick, "criteria": ids}));
    write_json(&dir.join("validation.json"), &report, &prov)?;
    Ok(report)
}
