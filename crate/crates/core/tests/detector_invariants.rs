use std::f64::consts::{PI, TAU};

use lgtime_core::detector::*;
use lgtime_core::spectrum::*;
use proptest::prelude::*;

fn mhz(f: f64) -> f64 {
    TAU * f * 1e6
}

fn fig4_target(cfg: &AcquisitionConfig) -> SpectrumRecord<f64> {
    let model = FiniteBandwidthModel {
        omega_rabi: mhz(10.6),
        gamma1: 1.0 / 200e-9,
        gamma_phi0: 0.0,
        nbar: 0.78,
        chi: mhz(1.75),
        kappa: mhz(30.3),
    }
    .with_gamma2_at_rabi(1.0 / 150e-9)
    .unwrap();
    finite_bandwidth_record(&model, cfg.df_hz(), cfg.record_len / 2).unwrap()
}

#[test]
fn on_off_residual_is_unbiased_over_seeds() {
    let line = LineResponse::flat(0.0);
    let mut means = Vec::new();
    for seed in 0..24 {
        let cfg = AcquisitionConfig {
            n_records: 2 * 243,
            seed,
            noise_to_peak: 1.0,
            ..Default::default()
        };
        let mut target = SpectrumRecord::zeros_one_sided(cfg.df_hz(), cfg.record_len / 2, SpectrumUnits::SpinUnits);
        target.density[100] = 1e-7;
        let stream = synthesize_quantum_trace(&target, 1.0, &cfg, &line).unwrap();
        let s = acquire_spectra(&stream).unwrap();
        let c = correct_and_normalize(&s.on, &s.off, &line, 1.0).unwrap();
        let rest: Vec<f64> = c
            .density
            .iter()
            .enumerate()
            .filter(|(k, _)| (*k as i64 - 100).abs() > 1 && *k > 0)
            .map(|(_, v)| *v)
            .collect();
        means.push(rest.iter().sum::<f64>() / rest.len() as f64);
    }
    let n = means.len() as f64;
    let m = means.iter().sum::<f64>() / n;
    let se = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(m.abs() < 3.0 * se, "mean residual {m:e} vs standard error {se:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn amplitude_scaling_leaves_lg_invariant(alpha in 0.1f64..10.0, seed in 0u64..1000) {
        let cfg = AcquisitionConfig {
            n_records: 4 * 486,
            seed,
            ..Default::default()
        };
        let line = LineResponse::flat(0.015);
        let target = fig4_target(&cfg);
        let kappa = mhz(30.3);
        let run = |dv: f64| {
            let stream = synthesize_quantum_trace(&target, dv, &cfg, &line).unwrap();
            let s = acquire_spectra(&stream).unwrap();
            (s.clone(), run_lg_analysis(&s, &line, dv, kappa, &LgOptions::default()).unwrap())
        };
        let (s1, a1) = run(1.0);
        let (s2, a2) = run(alpha);
        for k in 1..s1.on.len() {
            let r = s2.on.density[k] / s1.on.density[k];
            prop_assert!((r / (alpha * alpha) - 1.0).abs() < 1e-9, "bin {}: ratio {}", k, r);
        }
        for (x, y) in a1.curve.f.iter().zip(&a2.curve.f) {
            prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
        }
        for (x, y) in a1.corrected.density.iter().zip(&a2.corrected.density) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-12));
        }
    }
}

#[test]
fn grids_are_consistent() {
    let cfg = AcquisitionConfig {
        n_records: 486,
        ..Default::default()
    };
    let line = LineResponse::flat(0.015);
    let stream = synthesize_quantum_trace(&fig4_target(&cfg), 1.0, &cfg, &line).unwrap();
    let s = acquire_spectra(&stream).unwrap();
    let df = 1.0 / (cfg.dt * cfg.record_len as f64);
    assert!((s.on.df_hz().unwrap() - df).abs() < 1e-9 * df);
    assert_eq!(s.on.len(), cfg.record_len / 2);
    let a = run_lg_analysis(&s, &line, 1.0, mhz(30.3), &LgOptions::default()).unwrap();
    let m = a.corrected.len();
    assert_eq!(m, window_bins(df, 30e6));
    let dtau = a.correlator.taus[1] - a.correlator.taus[0];
    assert!((dtau - cfg.dt * cfg.record_len as f64 / (2 * m) as f64).abs() < 1e-12 * dtau);
}

#[test]
fn classical_controls_never_violate() {
    let kappa = mhz(30.3);
    let line = LineResponse::flat(0.015);
    let mut worst: f64 = f64::NEG_INFINITY;
    for seed in 0..50 {
        let cfg = AcquisitionConfig {
            n_records: 2 * 243 * 4,
            seed: 1000 + seed,
            noise_to_peak: 1.0,
            ..Default::default()
        };
        let streams = [
            synthesize_macrospin_trace(mhz(10.6), PI * 1e6, 1.0, kappa, &cfg).unwrap(),
            synthesize_telegraph_trace(mhz(2.0), 1.0, kappa, &cfg).unwrap(),
        ];
        for stream in &streams {
            let s = acquire_spectra(stream).unwrap();
            let a = run_lg_analysis(&s, &line, 1.0, kappa, &LgOptions::default()).unwrap();
            assert!(
                a.f_star <= 1.0 + 2.0 * a.sigma_star,
                "seed {seed}: f* = {} with sigma {}",
                a.f_star,
                a.sigma_star
            );
            worst = worst.max((a.f_star - 1.0) / a.sigma_star);
        }
    }
    assert!(worst < 2.0);
}

#[test]
fn quantum_surrogate_recovers_windowed_variance() {
    let cfg = AcquisitionConfig {
        n_records: 40 * 486,
        seed: 3,
        noise_to_peak: 1.0,
        ..Default::default()
    };
    let kappa = mhz(30.3);
    let line = LineResponse::flat(0.015);
    let target = fig4_target(&cfg);
    let stream = synthesize_quantum_trace(&target, 1.0, &cfg, &line).unwrap();
    let s = acquire_spectra(&stream).unwrap();
    let a = run_lg_analysis(&s, &line, 1.0, kappa, &LgOptions::default()).unwrap();
    let df = cfg.df_hz();
    let m = window_bins(df, 30e6);
    let unfiltered = |k: usize| target.density[k] / lgtime_core::qubit::cavity_filter(target.omegas[k], kappa).unwrap();
    let expect = df * (unfiltered(0) + 2.0 * (1..m).map(unfiltered).sum::<f64>());
    let sd = a.curve.sigma_stat[0];
    assert!((a.k0 - expect).abs() < 4.0 * sd, "K(0) = {} vs {expect} (sd {sd})", a.k0);
    assert!((expect - 1.0).abs() < 0.1);
}
