//! Acquisition emulation and the ON/OFF spectral analysis chain.
//!
//! Periodogram densities use `|FFT|²·dt/L` summed over I and Q, which puts
//! them on the same two-sided convention as [`crate::spectrum`].

mod analysis;
mod periodogram;
mod synth;

pub use analysis::{
    correct_and_normalize, deconvolve_cavity, measure_sigma0, run_lg_analysis, statistical_sigma,
    systematic_bounds, window_bins, LgAnalysis, LgOptions,
};
pub use periodogram::{acquire_spectra, accumulate_periodograms, AcquiredSpectra, PeriodogramAccumulator};
pub use synth::{
    synthesize_macrospin_trace, synthesize_quantum_trace, synthesize_telegraph_trace, RecordStream, TraceModel,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// sample spacing (s)
    pub dt: f64,
    pub record_len: usize,
    /// total records, both tags
    pub n_records: u64,
    pub t_on: f64,
    pub t_off: f64,
    /// samples discarded after each switch (s)
    pub t_ss: f64,
    /// white-noise density over the peak signal density
    pub noise_to_peak: f64,
    pub seed: u64,
    /// angle of the signal axis in the I/Q plane (rad)
    pub iq_angle: f64,
    /// relative gain error of the Q channel
    pub iq_imbalance: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            dt: 10e-9,
            record_len: 1024,
            n_records: 200_000,
            t_on: 2.5e-3,
            t_off: 2.5e-3,
            t_ss: 5e-6,
            noise_to_peak: 60.0,
            seed: 1,
            iq_angle: 0.0,
            iq_imbalance: 0.0,
        }
    }
}

/// Largest I/Q gain mismatch accepted without a warning.
pub const IQ_GAIN_TOLERANCE: f64 = 5e-3;

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param("dt", "must be > 0"));
        }
        if self.record_len < 4 || !self.record_len.is_power_of_two() {
            return Err(Error::param("record_len", "must be a power of two >= 4"));
        }
        if !(self.noise_to_peak >= 0.0) {
            return Err(Error::param("noise_to_peak", "must be >= 0"));
        }
        if !(self.t_ss >= 0.0) {
            return Err(Error::param("t_ss", "must be >= 0"));
        }
        if !(self.iq_imbalance > -1.0) || !self.iq_imbalance.is_finite() {
            return Err(Error::param("iq_imbalance", "must be > -1"));
        }
        if self.iq_imbalance.abs() > IQ_GAIN_TOLERANCE {
            log::warn!("I/Q gain imbalance {} exceeds {IQ_GAIN_TOLERANCE}", self.iq_imbalance);
        }
        let (on, off) = self.records_per_period();
        if on == 0 || off == 0 {
            return Err(Error::param("t_on/t_off", "periods shorter than t_ss plus one record"));
        }
        Ok(())
    }

    /// Bin spacing `1/(dt·record_len)` (Hz).
    pub fn df_hz(&self) -> f64 {
        1.0 / (self.dt * self.record_len as f64)
    }

    pub fn record_duration(&self) -> f64 {
        self.dt * self.record_len as f64
    }

    /// Whole records fitting in each period after the settling samples.
    pub fn records_per_period(&self) -> (u64, u64) {
        let settle = (self.t_ss / self.dt).ceil() * self.dt;
        let fit = |t: f64| ((t - settle) / self.record_duration() + 1e-9).floor().max(0.0) as u64;
        (fit(self.t_on), fit(self.t_off))
    }

    /// Periods alternate ON, OFF, ON, ...
    pub fn tag_of(&self, index: u64) -> Tag {
        let (on, off) = self.records_per_period();
        if index % (on + off) < on {
            Tag::On
        } else {
            Tag::Off
        }
    }

    /// `(n_on, n_off)` among the first `n_records`.
    pub fn tag_counts(&self) -> (u64, u64) {
        let (on, off) = self.records_per_period();
        let cycle = on + off;
        let full = self.n_records / cycle;
        let rest = self.n_records % cycle;
        let n_on = full * on + rest.min(on);
        (n_on, self.n_records - n_on)
    }

    /// Smallest `n_records` giving at least `per_tag` records of each tag.
    pub fn records_for_per_tag(&self, per_tag: u64) -> u64 {
        let (on, off) = self.records_per_period();
        let cycles = per_tag.div_ceil(on.min(off));
        cycles * (on + off)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub index: u64,
    pub tag: Tag,
    pub i: Vec<f64>,
    pub q: Vec<f64>,
}

impl RawRecord {
    pub fn validate(&self) -> Result<()> {
        if self.i.len() != self.q.len() {
            return Err(Error::Data(format!("record {}: I/Q lengths differ", self.index)));
        }
        if self.i.iter().chain(&self.q).any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("record {}: non-finite sample", self.index)));
        }
        Ok(())
    }
}

/// Measured line response, linearly interpolated and held constant outside
/// the tabulated range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineResponse {
    pub freqs_hz: Vec<f64>,
    pub r: Vec<f64>,
    pub dr_over_r: Vec<f64>,
}

impl LineResponse {
    /// `R ≡ 1` with a constant relative uncertainty.
    pub fn flat(dr_over_r: f64) -> Self {
        Self {
            freqs_hz: vec![0.0],
            r: vec![1.0],
            dr_over_r: vec![dr_over_r],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.freqs_hz.len();
        if n == 0 || self.r.len() != n || self.dr_over_r.len() != n {
            return Err(Error::Data("line response columns must be non-empty and equally long".into()));
        }
        if self.freqs_hz[0] != 0.0 {
            return Err(Error::Data("line response must start at 0 Hz".into()));
        }
        if self.freqs_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("line response frequencies must increase".into()));
        }
        if (self.r[0] - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("R(0) must be 1, got {}", self.r[0])));
        }
        if self.r.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Data("R must be positive".into()));
        }
        if self.dr_over_r.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Data("dR/R must be >= 0".into()));
        }
        Ok(())
    }

    fn interp(&self, col: &[f64], f_hz: f64) -> f64 {
        let f = f_hz.abs();
        let n = self.freqs_hz.len();
        if n == 1 || f <= self.freqs_hz[0] {
            return col[0];
        }
        if f >= self.freqs_hz[n - 1] {
            return col[n - 1];
        }
        let j = self.freqs_hz.partition_point(|x| *x <= f);
        let (f0, f1) = (self.freqs_hz[j - 1], self.freqs_hz[j]);
        let w = (f - f0) / (f1 - f0);
        col[j - 1] * (1.0 - w) + col[j] * w
    }

    pub fn r_at(&self, f_hz: f64) -> f64 {
        self.interp(&self.r, f_hz)
    }

    pub fn dr_at(&self, f_hz: f64) -> f64 {
        self.interp(&self.dr_over_r, f_hz)
    }

    /// Largest tabulated `ΔR/R` up to `f_max_hz`.
    pub fn max_dr_over_r(&self, f_max_hz: f64) -> f64 {
        let mut worst = self.dr_at(f_max_hz);
        for (f, d) in self.freqs_hz.iter().zip(&self.dr_over_r) {
            if *f <= f_max_hz {
                worst = worst.max(*d);
            }
        }
        worst
    }
}

/// Relative systematic budget; missing fields take the reference values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorBudget {
    pub dr_over_r: f64,
    pub dv2_over_v2: f64,
    pub dkappa_over_kappa: f64,
    /// per-bin statistical σ of the corrected spectrum
    pub sigma0: f64,
}

impl Default for ErrorBudget {
    fn default() -> Self {
        Self::reference()
    }
}

impl ErrorBudget {
    pub fn zero() -> Self {
        Self {
            dr_over_r: 0.0,
            dv2_over_v2: 0.0,
            dkappa_over_kappa: 0.0,
            sigma0: 0.0,
        }
    }

    /// `ΔR/R = 1.5%`, `Δ(δV/2)²/(δV/2)² = 6.1%`, `Δκ/κ = 2.6%`.
    pub fn reference() -> Self {
        Self {
            dr_over_r: 0.015,
            dv2_over_v2: 0.061,
            dkappa_over_kappa: 0.026,
            sigma0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dr_over_r", self.dr_over_r),
            ("dv2_over_v2", self.dv2_over_v2),
            ("dkappa_over_kappa", self.dkappa_over_kappa),
            ("sigma0", self.sigma0),
        ] {
            crate::error::check_nonneg(name, v)?;
        }
        if self.dkappa_over_kappa >= 1.0 {
            return Err(Error::param("dkappa_over_kappa", "must be < 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_bookkeeping() {
        let c = AcquisitionConfig::default();
        assert!((c.df_hz() - 97_656.25).abs() < 1e-9);
        let (on, off) = c.records_per_period();
        assert_eq!((on, off), (243, 243));
        assert_eq!(c.tag_of(0), Tag::On);
        assert_eq!(c.tag_of(242), Tag::On);
        assert_eq!(c.tag_of(243), Tag::Off);
        assert_eq!(c.tag_of(486), Tag::On);
        let c2 = AcquisitionConfig { n_records: 500, ..c };
        assert_eq!(c2.tag_counts(), (257, 243));
        let n = c.records_for_per_tag(1000);
        let c3 = AcquisitionConfig { n_records: n, ..c };
        let (a, b) = c3.tag_counts();
        assert!(a >= 1000 && b >= 1000);
    }

    #[test]
    fn config_validation() {
        assert!(AcquisitionConfig::default().validate().is_ok());
        let bad = AcquisitionConfig {
            record_len: 1000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let short = AcquisitionConfig {
            t_on: 4e-6,
            ..Default::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn line_response_interpolation() {
        let line = LineResponse {
            freqs_hz: vec![0.0, 10e6, 20e6],
            r: vec![1.0, 0.8, 0.6],
            dr_over_r: vec![0.01, 0.02, 0.03],
        };
        line.validate().unwrap();
        assert!((line.r_at(5e6) - 0.9).abs() < 1e-12);
        assert!((line.r_at(-15e6) - 0.7).abs() < 1e-12);
        assert_eq!(line.r_at(40e6), 0.6);
        assert!((line.max_dr_over_r(15e6) - 0.025).abs() < 1e-12);
        let mut bad = line.clone();
        bad.r[0] = 0.9;
        assert!(bad.validate().is_err());
        assert_eq!(LineResponse::flat(0.015).r_at(3e7), 1.0);
    }
}
