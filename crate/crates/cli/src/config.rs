//! Experiment configuration. Frequencies are in Hz and times in seconds;
//! conversion to angular units happens in the accessor methods.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use lgtime_core::detector::{AcquisitionConfig, ErrorBudget};
use lgtime_core::FiniteBandwidthModel;
use lgtime_core::{CavityParams, TlsParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QubitConfig {
    pub f_ge_hz: f64,
    pub t1_s: f64,
    pub t2_s: f64,
    /// thermal excited-state population
    pub p_e0: f64,
}

impl Default for QubitConfig {
    fn default() -> Self {
        Self {
            f_ge_hz: 5.304e9,
            t1_s: 200e-9,
            t2_s: 150e-9,
            p_e0: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavityConfig {
    pub f_c_hz: f64,
    pub kappa_hz: f64,
    pub chi_hz: f64,
    /// `χ(n̄) = χ₀(1 - λn̄)`
    pub lambda: f64,
}

impl Default for CavityConfig {
    fn default() -> Self {
        Self {
            f_c_hz: 5.796e9,
            kappa_hz: 30.3e6,
            chi_hz: 1.75e6,
            lambda: 7e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RabiConfig {
    /// T₁ used for the Rabi runs
    pub t1_s: f64,
    pub rabi_hz: f64,
    pub nbars: Vec<f64>,
    pub duration_s: f64,
    pub step_s: f64,
    /// overrides the truncation rule
    pub fock_dim: Option<usize>,
}

impl Default for RabiConfig {
    fn default() -> Self {
        Self {
            t1_s: 225e-9,
            rabi_hz: 2.5e6,
            nbars: vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0],
            duration_s: 2e-6,
            step_s: 1e-9,
            fock_dim: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraConfig {
    pub nbars: Vec<f64>,
    pub rabi_hz: Vec<f64>,
    pub tau_step_s: f64,
    pub tau_max_s: f64,
    /// upper frequency of the agreement metric
    pub compare_max_hz: f64,
    /// cells above this photon number get the analytic spectrum only
    pub numeric_max_nbar: f64,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        Self {
            nbars: vec![0.23, 0.78, 1.56, 3.9, 7.8, 15.6],
            rabi_hz: vec![2.5e6, 5e6, 10e6, 20e6],
            tau_step_s: 4e-9,
            tau_max_s: 4e-6,
            compare_max_hz: 60e6,
            numeric_max_nbar: 15.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Quantum,
    Macrospin,
    Telegraph,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Quantum => "quantum",
            ModelName::Macrospin => "macrospin",
            ModelName::Telegraph => "telegraph",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub noise_to_peak: f64,
    pub records_per_tag: u64,
    /// macrospin phase diffusion `D/2π`
    pub macrospin_diffusion_hz: f64,
    /// telegraph flip rate `r/2π`
    pub telegraph_rate_hz: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            noise_to_peak: 1.0,
            records_per_tag: 20_000,
            macrospin_diffusion_hz: 0.5e6,
            telegraph_rate_hz: 2e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgConfig {
    pub nbar: f64,
    pub rabi_hz: f64,
    /// `Γ₂(ω_R)⁻¹`
    pub t2_at_rabi_s: f64,
    pub f_max_hz: f64,
    pub sigma_band_hz: [f64; 2],
    /// `δV` in volts
    pub delta_v: f64,
    pub model: ModelName,
    pub records_per_tag: u64,
    pub quick_records_per_tag: u64,
    pub acquisition: AcquisitionConfig,
    pub budget: ErrorBudget,
    /// `freq_Hz,R,dR_over_R` table; flat response when absent
    pub line_response: Option<PathBuf>,
    /// records dumped to `raw_records.bin`
    pub raw_records: u64,
    pub controls: ControlConfig,
}

impl Default for LgConfig {
    fn default() -> Self {
        Self {
            nbar: 0.78,
            rabi_hz: 10.6e6,
            t2_at_rabi_s: 150e-9,
            f_max_hz: 30e6,
            sigma_band_hz: [22e6, 30e6],
            delta_v: 1.0,
            model: ModelName::Quantum,
            records_per_tag: 4_500_000,
            quick_records_per_tag: 100_000,
            acquisition: AcquisitionConfig::default(),
            budget: ErrorBudget::reference(),
            line_response: None,
            raw_records: 0,
            controls: ControlConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub control_seeds: u64,
    pub mc_repetitions: u64,
    pub mc_records_per_tag: u64,
    pub normalization_sets: u64,
    /// relative systematic expected at the violation point
    pub systematic_target: f64,
    pub systematic_tolerance: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            control_seeds: 20,
            mc_repetitions: 400,
            mc_records_per_tag: 2_000,
            normalization_sets: 50,
            systematic_target: 0.084,
            systematic_tolerance: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub qubit: QubitConfig,
    pub cavity: CavityConfig,
    pub rabi: RabiConfig,
    pub spectra: SpectraConfig,
    pub lg: LgConfig,
    pub validate: ValidateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            qubit: QubitConfig::default(),
            cavity: CavityConfig::default(),
            rabi: RabiConfig::default(),
            spectra: SpectraConfig::default(),
            lg: LgConfig::default(),
            validate: ValidateConfig::default(),
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(format!("`{name}` must be positive and finite, got {v}")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(format!("`{name}` must be non-negative and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
    }

    /// Checks every section by building the physics parameter sets.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: lgtime_core::Error| cfg_err(e.to_string());
        self.tls().map_err(wrap)?;
        self.rabi_tls().map_err(wrap)?;
        self.cavity_params().validate().map_err(wrap)?;
        positive("qubit.t2_s", self.qubit.t2_s)?;
        if self.qubit.t2_s > 2.0 * self.qubit.t1_s {
            return Err(cfg_err("qubit.t2_s must not exceed 2·qubit.t1_s"));
        }
        if self.qubit.t2_s > 2.0 * self.rabi.t1_s {
            return Err(cfg_err("qubit.t2_s must not exceed 2·rabi.t1_s"));
        }

        let r = &self.rabi;
        positive("rabi.rabi_hz", r.rabi_hz)?;
        positive("rabi.step_s", r.step_s)?;
        if r.duration_s < 8.0 * r.step_s {
            return Err(cfg_err("rabi.duration_s must span at least 8 steps"));
        }
        if r.nbars.is_empty() {
            return Err(cfg_err("rabi.nbars is empty"));
        }
        for &n in &r.nbars {
            nonneg("rabi.nbars", n)?;
            self.cavity_params().chi_at(n).map_err(wrap)?;
        }

        let s = &self.spectra;
        if s.nbars.is_empty() || s.rabi_hz.is_empty() {
            return Err(cfg_err("spectra grids must be non-empty"));
        }
        for &n in &s.nbars {
            nonneg("spectra.nbars", n)?;
            self.cavity_params().chi_at(n).map_err(wrap)?;
        }
        for &f in &s.rabi_hz {
            positive("spectra.rabi_hz", f)?;
        }
        positive("spectra.tau_step_s", s.tau_step_s)?;
        if s.tau_max_s < 16.0 * s.tau_step_s {
            return Err(cfg_err("spectra.tau_max_s must span at least 16 steps"));
        }
        positive("spectra.compare_max_hz", s.compare_max_hz)?;

        let l = &self.lg;
        positive("lg.rabi_hz", l.rabi_hz)?;
        nonneg("lg.nbar", l.nbar)?;
        positive("lg.t2_at_rabi_s", l.t2_at_rabi_s)?;
        positive("lg.f_max_hz", l.f_max_hz)?;
        positive("lg.delta_v", l.delta_v)?;
        let [lo, hi] = l.sigma_band_hz;
        if !(0.0 <= lo && lo < hi && hi <= l.f_max_hz) {
            return Err(cfg_err("lg.sigma_band_hz must be an increasing pair inside [0, f_max_hz]"));
        }
        if l.records_per_tag == 0 || l.quick_records_per_tag == 0 {
            return Err(cfg_err("lg record counts must be positive"));
        }
        l.acquisition.validate().map_err(wrap)?;
        if l.f_max_hz > 0.5 / l.acquisition.dt {
            return Err(cfg_err("lg.f_max_hz exceeds the Nyquist frequency"));
        }
        l.budget.validate().map_err(wrap)?;
        self.lg_model().map_err(wrap)?;
        let c = &l.controls;
        positive("lg.controls.noise_to_peak", c.noise_to_peak)?;
        nonneg("lg.controls.macrospin_diffusion_hz", c.macrospin_diffusion_hz)?;
        positive("lg.controls.telegraph_rate_hz", c.telegraph_rate_hz)?;
        if c.records_per_tag == 0 {
            return Err(cfg_err("lg.controls.records_per_tag must be positive"));
        }

        let v = &self.validate;
        if v.control_seeds == 0 || v.mc_repetitions < 2 || v.mc_records_per_tag == 0 || v.normalization_sets == 0 {
            return Err(cfg_err("validate counts must be positive (mc_repetitions >= 2)"));
        }
        nonneg("validate.systematic_tolerance", v.systematic_tolerance)?;
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        TAU * self.cavity.kappa_hz
    }

    pub fn chi0(&self) -> f64 {
        TAU * self.cavity.chi_hz
    }

    /// Qubit with the default T₁.
    pub fn tls(&self) -> lgtime_core::Result<TlsParams> {
        self.tls_with_t1(self.qubit.t1_s, self.qubit.p_e0)
    }

    /// Qubit for the master-equation runs: Rabi T₁, no thermal population.
    pub fn rabi_tls(&self) -> lgtime_core::Result<TlsParams> {
        self.tls_with_t1(self.rabi.t1_s, 0.0)
    }

    /// Qubit for the spectral comparison: default T₁, no thermal population.
    pub fn spectra_tls(&self) -> lgtime_core::Result<TlsParams> {
        self.tls_with_t1(self.qubit.t1_s, 0.0)
    }

    fn tls_with_t1(&self, t1: f64, p: f64) -> lgtime_core::Result<TlsParams> {
        if !(t1 > 0.0) || !(self.qubit.t2_s > 0.0) {
            return Err(lgtime_core::Error::Parameter {
                name: "t1_s/t2_s",
                reason: "must be > 0".into(),
            });
        }
        let g1 = 1.0 / t1;
        let gphi = 1.0 / self.qubit.t2_s - 0.5 * g1;
        if gphi < 0.0 {
            return Err(lgtime_core::Error::UnphysicalRates(format!("T2 = {} s exceeds 2T1 = {} s", self.qubit.t2_s, 2.0 * t1)));
        }
        TlsParams::new(TAU * self.qubit.f_ge_hz, g1, gphi, p)
    }

    /// `n_crit = |Δ|/(4χ)` from the qubit-cavity detuning.
    pub fn cavity_params(&self) -> CavityParams {
        let detuning = (self.cavity.f_c_hz - self.qubit.f_ge_hz).abs();
        CavityParams {
            omega_c: TAU * self.cavity.f_c_hz,
            kappa: self.kappa(),
            chi0: self.chi0(),
            lambda: self.cavity.lambda,
            n_crit: detuning / (4.0 * self.cavity.chi_hz.abs().max(f64::MIN_POSITIVE)),
        }
    }

    /// Cavity for the master-equation runs (constant `χ`).
    pub fn lindblad_cavity(&self) -> CavityParams {
        CavityParams {
            lambda: 0.0,
            ..self.cavity_params()
        }
    }

    /// Detector-spectrum model of the `lg` section with `Γ₂(ω_R)` pinned.
    pub fn lg_model(&self) -> lgtime_core::Result<FiniteBandwidthModel> {
        let chi = self.cavity_params().chi_at(self.lg.nbar)?;
        FiniteBandwidthModel {
            omega_rabi: TAU * self.lg.rabi_hz,
            gamma1: 1.0 / self.qubit.t1_s,
            gamma_phi0: 0.0,
            nbar: self.lg.nbar,
            chi,
            kappa: self.kappa(),
        }
        .with_gamma2_at_rabi(1.0 / self.lg.t2_at_rabi_s)
    }

    /// Parameters recorded in file provenance; excludes the output directory.
    pub fn provenance_parameters(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"seed": 7, "lg": {"nbar": 0.5}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.lg.nbar, 0.5);
        assert_eq!(c.lg.rabi_hz, 10.6e6);
        assert_eq!(c.cavity.kappa_hz, 30.3e6);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn unphysical_t2_is_config_error() {
        let mut c = ExperimentConfig::default();
        c.qubit.t2_s = 1e-6;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = ExperimentConfig::default();
        c.lg.t2_at_rabi_s = 1e-6;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn critical_photon_number_from_detuning() {
        let c = ExperimentConfig::default().cavity_params();
        assert!((c.n_crit - 492e6 / 7e6).abs() < 1e-9);
    }

    #[test]
    fn provenance_drops_out_dir() {
        let mut a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        a.out = "x".into();
        b.out = "y".into();
        assert_eq!(a.provenance_parameters(), b.provenance_parameters());
    }
}
