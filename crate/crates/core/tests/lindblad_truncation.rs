use std::f64::consts::TAU;

use lgtime_core::lindblad::*;
use proptest::prelude::*;
use lgtime_core::qubit::{CavityParams, TlsParams};

fn mhz(f: f64) -> f64 {
    TAU * f * 1e6
}

fn setup() -> (TlsParams<f64>, CavityParams<f64>) {
    let tls = TlsParams::new(mhz(5304.0), 1.0 / 200e-9, 1.0 / 150e-9 - 0.5 / 200e-9, 0.0).unwrap();
    let cavity = CavityParams {
        omega_c: mhz(5796.0),
        kappa: mhz(30.3),
        chi0: mhz(1.75),
        lambda: 0.0,
        n_crit: 70.0,
    };
    (tls, cavity)
}

fn spectrum_at(fock_dim: usize, nbar: f64) -> (f64, Vec<f64>) {
    let (tls, cavity) = setup();
    let mut hilbert = HilbertConfig::stark_compensated(nbar, cavity.chi0);
    hilbert.fock_dim = fock_dim;
    let drives = DriveAmplitudes::from_nbar(nbar, cavity.kappa, mhz(5.0));
    let g = build_generator(&tls, &cavity, &hilbert, &drives).unwrap();
    let rho = steady_state(&g).unwrap();
    let taus: Vec<f64> = (0..=400).map(|i| i as f64 * 5e-9).collect();
    let corr = two_time_correlator(&rho, &g, &taus).unwrap();
    let dv = simulate_delta_v(&tls, &cavity, &hilbert, drives.eps_m).unwrap();
    let s = correlator_spectrum(&corr, dv.delta_v).unwrap();
    (rho.photon_number(), s.density)
}

#[test]
fn doubling_truncation_leaves_spectrum_unchanged() {
    let nbar = 3.9;
    let n = HilbertConfig::required_fock_dim(nbar);
    let (n_a, a) = spectrum_at(n, nbar);
    let (n_b, b) = spectrum_at(2 * n, nbar);
    let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / b.iter().map(|y| y.abs()).sum::<f64>();
    assert!(l1 < 5e-3, "relative L1 change {l1:e} between {n} and {} levels", 2 * n);
    assert!((n_a - n_b).abs() < 5e-3 * n_b);
    assert!((n_b - nbar).abs() < 0.05 * nbar, "photon number {n_b}");
}

#[test]
fn too_small_truncation_is_rejected() {
    let (tls, cavity) = setup();
    let mut hilbert = HilbertConfig::stark_compensated(3.9, cavity.chi0);
    hilbert.fock_dim = HilbertConfig::minimum_fock_dim(3.9) - 1;
    let drives = DriveAmplitudes::from_nbar(3.9, cavity.kappa, mhz(5.0));
    assert!(matches!(
        build_generator(&tls, &cavity, &hilbert, &drives),
        Err(lgtime_core::Error::Truncation { .. })
    ));
}

#[test]
fn steady_state_is_a_valid_density_operator() {
    let (tls, cavity) = setup();
    let hilbert = HilbertConfig::stark_compensated(1.56, cavity.chi0);
    let drives = DriveAmplitudes::from_nbar(1.56, cavity.kappa, mhz(10.0));
    let g = build_generator(&tls, &cavity, &hilbert, &drives).unwrap();
    let rho = steady_state(&g).unwrap();
    rho.validate().unwrap();
    let mut out = vec![num_complex::Complex64::new(0.0, 0.0); g.dim() * g.dim()];
    g.apply(rho.as_slice(), &mut out);
    let resid = out.iter().map(|c| c.norm()).fold(0.0, f64::max);
    assert!(resid < 1e-6 * g.spectral_bound(), "residual {resid:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn trajectories_stay_physical(
        nbar in 0.0f64..2.0,
        rabi_mhz in 0.5f64..20.0,
        t1_ns in 50.0f64..500.0,
        phi_rate in 0.0f64..2e7,
        chi_mhz in -3.0f64..3.0,
        start in 0usize..2,
    ) {
        let tls = TlsParams::new(mhz(5304.0), 1e9 / t1_ns, 0.5e9 / t1_ns + phi_rate, 0.0).unwrap();
        let cavity = CavityParams { omega_c: mhz(5796.0), kappa: mhz(30.3), chi0: mhz(chi_mhz), lambda: 0.0, n_crit: 70.0 };
        let hilbert = HilbertConfig::stark_compensated(nbar, cavity.chi0);
        let drives = DriveAmplitudes::from_nbar(nbar, cavity.kappa, mhz(rabi_mhz));
        let g = build_generator(&tls, &cavity, &hilbert, &drives).unwrap();
        let rho0 = DensityOperator::basis(hilbert.fock_dim, start, 0);
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 10e-9).collect();
        for (i, rho) in evolve(&rho0, &g, &times).unwrap().iter().enumerate() {
            prop_assert!(rho.validate().is_ok(), "step {}: {:?}", i, rho.validate());
        }
    }
}
