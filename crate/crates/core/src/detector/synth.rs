use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::{Exp, StandardNormal};
use rustfft::{Fft, FftPlanner};

use super::{AcquisitionConfig, LineResponse, RawRecord, Tag};
use crate::error::{Error, Result};
use crate::qubit::{cavity_filter, cavity_filter_unchecked};
use crate::spectrum::{GridKind, SpectrumRecord, SpectrumUnits};

/// Signal generator behind a [`RecordStream`].
#[derive(Clone, Debug)]
pub enum TraceModel {
    /// Circular Gaussian process; `power[k]` is the two-sided density (V²·s)
    /// at FFT bin `k = 0..L`.
    Quantum { power: Vec<f64> },
    /// `z = cos(ω_R t + φ)` with `⟨(φ(t)-φ(0))²⟩ = 2Dt`, cavity filtered.
    Macrospin {
        omega_rabi: f64,
        diffusion: f64,
        amplitude: f64,
        kappa: f64,
    },
    /// Symmetric ±1 telegraph flipping at `rate`, cavity filtered.
    Telegraph { rate: f64, amplitude: f64, kappa: f64 },
}

/// Deterministic, randomly addressable record source.
#[derive(Clone)]
pub struct RecordStream {
    model: TraceModel,
    config: AcquisitionConfig,
    noise_sigma: f64,
    peak_density: f64,
    ifft: Arc<dyn Fft<f64>>,
    cursor: u64,
}

impl std::fmt::Debug for RecordStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordStream")
            .field("model", &self.model)
            .field("config", &self.config)
            .field("noise_sigma", &self.noise_sigma)
            .field("cursor", &self.cursor)
            .finish()
    }
}

type Fast = Xoshiro256PlusPlus;

/// Independent generator for `(seed, stream)`: a ChaCha8 stream supplies the
/// seed of a fast generator used for the bulk draws.
fn stream_rng(seed: u64, stream: u64) -> Fast {
    let mut key = ChaCha8Rng::seed_from_u64(seed);
    key.set_stream(stream);
    Fast::from_rng(&mut key).expect("ChaCha8 never fails")
}

fn normal(rng: &mut Fast) -> f64 {
    rng.sample(StandardNormal)
}

/// Gaussian-process surrogate with density `(δV/2)²·S̃(f)·R(f)` split over
/// I/Q along `config.iq_angle`. `target` is one-sided, in spin units, on the
/// record grid and covers at least `record_len/2` bins.
pub fn synthesize_quantum_trace(
    target: &SpectrumRecord<f64>,
    delta_v: f64,
    config: &AcquisitionConfig,
    line: &LineResponse,
) -> Result<RecordStream> {
    config.validate()?;
    line.validate()?;
    crate::error::check_nonneg("delta_v", delta_v)?;
    if target.units != SpectrumUnits::SpinUnits || target.grid != GridKind::OneSided {
        return Err(Error::Convention("target must be one-sided and in spin units".into()));
    }
    let df = target.df_hz()?;
    let want = config.df_hz();
    if (df - want).abs() > 1e-9 * want {
        return Err(Error::Grid(format!("target bin {df} Hz does not match record bin {want} Hz; resample first")));
    }
    let l = config.record_len;
    if target.len() < l / 2 {
        return Err(Error::Grid(format!("target has {} bins, records need {}", target.len(), l / 2)));
    }
    if target.density.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Data("target density must be non-negative".into()));
    }
    let scale = 0.25 * delta_v * delta_v;
    let one_sided = |k: usize| {
        let s = target.density.get(k).copied().unwrap_or(0.0);
        scale * s * line.r_at(k as f64 * df)
    };
    let power: Vec<f64> = (0..l).map(|k| one_sided(k.min(l - k))).collect();
    let peak = power.iter().copied().fold(0.0, f64::max);
    Ok(RecordStream::new(TraceModel::Quantum { power }, *config, peak))
}

/// Macrorealistic control: classical spin precessing at `ω_R` with phase
/// diffusion, read through the same cavity filter.
pub fn synthesize_macrospin_trace(
    omega_rabi: f64,
    phase_diffusion_rate: f64,
    delta_v: f64,
    kappa: f64,
    config: &AcquisitionConfig,
) -> Result<RecordStream> {
    config.validate()?;
    crate::error::check_nonneg("omega_rabi", omega_rabi)?;
    crate::error::check_nonneg("phase_diffusion_rate", phase_diffusion_rate)?;
    crate::error::check_nonneg("delta_v", delta_v)?;
    let c = cavity_filter(omega_rabi, kappa)?;
    let df = config.df_hz();
    let half_bin = PI * df;
    let line_peak = if phase_diffusion_rate > 0.0 {
        (half_bin / phase_diffusion_rate).atan() / (TAU * df)
    } else {
        0.25 / df
    };
    let amplitude = delta_v / 2.0;
    let peak = amplitude * amplitude * c * line_peak;
    let model = TraceModel::Macrospin {
        omega_rabi,
        diffusion: phase_diffusion_rate,
        amplitude,
        kappa,
    };
    Ok(RecordStream::new(model, *config, peak))
}

/// Macrorealistic control: incoherent ±1 telegraph with flip rate `switch_rate`.
pub fn synthesize_telegraph_trace(
    switch_rate: f64,
    delta_v: f64,
    kappa: f64,
    config: &AcquisitionConfig,
) -> Result<RecordStream> {
    config.validate()?;
    crate::error::check_pos("switch_rate", switch_rate)?;
    crate::error::check_nonneg("delta_v", delta_v)?;
    cavity_filter(0.0, kappa)?;
    let df = config.df_hz();
    let amplitude = delta_v / 2.0;
    let peak = amplitude * amplitude * (PI * df / (2.0 * switch_rate)).atan() / (PI * df);
    Ok(RecordStream::new(
        TraceModel::Telegraph {
            rate: switch_rate,
            amplitude,
            kappa,
        },
        *config,
        peak,
    ))
}

impl RecordStream {
    fn new(model: TraceModel, config: AcquisitionConfig, peak_density: f64) -> Self {
        let density = config.noise_to_peak * peak_density;
        let noise_sigma = (density / (2.0 * config.dt)).sqrt();
        let ifft = FftPlanner::new().plan_fft_inverse(config.record_len);
        Self {
            model,
            config,
            noise_sigma,
            peak_density,
            ifft,
            cursor: 0,
        }
    }

    pub fn config(&self) -> &AcquisitionConfig {
        &self.config
    }

    pub fn model(&self) -> &TraceModel {
        &self.model
    }

    /// Peak signal density (V²·s) the noise level is referred to.
    pub fn peak_density(&self) -> f64 {
        self.peak_density
    }

    /// White-noise density summed over I and Q (V²·s).
    pub fn noise_density(&self) -> f64 {
        2.0 * self.noise_sigma * self.noise_sigma * self.config.dt
    }

    pub fn len(&self) -> u64 {
        self.config.n_records
    }

    pub fn is_empty(&self) -> bool {
        self.config.n_records == 0
    }

    /// Record `index`, identical however the stream is traversed.
    pub fn record(&self, index: u64) -> RawRecord {
        let mut out = Vec::with_capacity(2);
        let first = match self.model {
            TraceModel::Quantum { .. } => index & !1,
            _ => index,
        };
        self.fill(first, if first == index { 1 } else { 2 }, &mut out);
        out.pop().expect("at least one record")
    }

    /// Appends records `start..start + count` to `out`.
    pub fn fill(&self, start: u64, count: u64, out: &mut Vec<RawRecord>) {
        let end = start + count;
        let mut idx = start;
        match &self.model {
            TraceModel::Quantum { power } => {
                if idx % 2 == 1 {
                    let pair = self.quantum_pair(power, idx - 1);
                    out.push(pair.1);
                    idx += 1;
                }
                while idx < end {
                    let (a, b) = self.quantum_pair(power, idx);
                    out.push(a);
                    if idx + 1 < end {
                        out.push(b);
                    }
                    idx += 2;
                }
            }
            _ => {
                while idx < end {
                    out.push(self.control_record(idx));
                    idx += 1;
                }
            }
        }
    }

    fn finish_record(&self, index: u64, signal: Option<&[f64]>, rng: &mut Fast) -> RawRecord {
        let l = self.config.record_len;
        let (s, c) = self.config.iq_angle.sin_cos();
        let gain_q = 1.0 + self.config.iq_imbalance;
        let sigma = self.noise_sigma;
        let mut i = Vec::with_capacity(l);
        let mut q = Vec::with_capacity(l);
        for t in 0..l {
            let x = signal.map_or(0.0, |v| v[t]);
            i.push(c * x + sigma * normal(rng));
            q.push(gain_q * (s * x + sigma * normal(rng)));
        }
        RawRecord {
            index,
            tag: self.config.tag_of(index),
            i,
            q,
        }
    }

    fn quantum_pair(&self, power: &[f64], first: u64) -> (RawRecord, RawRecord) {
        let l = self.config.record_len;
        let tags = (self.config.tag_of(first), self.config.tag_of(first + 1));
        let pair = first / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        if tags.0 == Tag::On || tags.1 == Tag::On {
            let mut rng = stream_rng(self.config.seed, 2 * pair);
            let norm = 1.0 / (l as f64 * self.config.dt);
            for (b, p) in buf.iter_mut().zip(power) {
                let amp = (p * norm).sqrt();
                *b = Complex64::new(amp * normal(&mut rng), amp * normal(&mut rng));
            }
            self.ifft.process(&mut buf);
        }
        let re: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let im: Vec<f64> = buf.iter().map(|c| c.im).collect();
        let mut rng = stream_rng(self.config.seed, 2 * pair + 1);
        let a = self.finish_record(first, (tags.0 == Tag::On).then_some(&re[..]), &mut rng);
        let b = self.finish_record(first + 1, (tags.1 == Tag::On).then_some(&im[..]), &mut rng);
        (a, b)
    }

    fn control_record(&self, index: u64) -> RawRecord {
        let tag = self.config.tag_of(index);
        let signal = (tag == Tag::On).then(|| {
            let mut rng = stream_rng(self.config.seed, 2 * index);
            match self.model {
                TraceModel::Macrospin {
                    omega_rabi,
                    diffusion,
                    amplitude,
                    kappa,
                } => self.macrospin_signal(omega_rabi, diffusion, amplitude, kappa, &mut rng),
                TraceModel::Telegraph { rate, amplitude, kappa } => {
                    self.telegraph_signal(rate, amplitude, kappa, &mut rng)
                }
                TraceModel::Quantum { .. } => unreachable!("quantum records are generated in pairs"),
            }
        });
        let mut rng = stream_rng(self.config.seed, 2 * index + 1);
        self.finish_record(index, signal.as_deref(), &mut rng)
    }

    fn burn_in_samples(&self, kappa: f64) -> usize {
        (40.0 / (kappa * self.config.dt)).ceil() as usize
    }

    /// Per sample the phase advances at the constant rate `ω_R + Δφ/dt`;
    /// the one-pole filter is integrated exactly for that rotating input.
    fn macrospin_signal(&self, w: f64, d: f64, amp: f64, kappa: f64, rng: &mut Fast) -> Vec<f64> {
        let l = self.config.record_len;
        let dt = self.config.dt;
        let half = 0.5 * kappa;
        let decay = (-half * dt).exp();
        let kick = (2.0 * d * dt).sqrt();
        let burn = self.burn_in_samples(kappa);
        let mut theta: f64 = rng.gen::<f64>() * TAU;
        let mut y = theta.cos() * cavity_filter_unchecked(w, kappa).sqrt();
        let mut out = Vec::with_capacity(l);
        for n in 0..burn + l {
            let dphi = if d > 0.0 { kick * normal(rng) } else { 0.0 };
            let rate = w + dphi / dt;
            let gain = Complex64::new(half, 0.0) / Complex64::new(half, rate);
            let phasor = Complex64::from_polar(1.0, theta);
            let step = Complex64::from_polar(1.0, rate * dt);
            y = y * decay + (phasor * gain * (step - decay)).re;
            theta = (theta + rate * dt) % TAU;
            if n >= burn {
                out.push(amp * y);
            }
        }
        out
    }

    fn telegraph_signal(&self, rate: f64, amp: f64, kappa: f64, rng: &mut Fast) -> Vec<f64> {
        let l = self.config.record_len;
        let waits = Exp::new(rate).expect("rate checked positive");
        let burn = self.burn_in_samples(kappa);
        let mut z: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let mut y = z;
        let mut next = rng.sample(waits);
        let mut out = Vec::with_capacity(l);
        let dt = self.config.dt;
        for n in 0..burn + l {
            let mut left = dt;
            while next < left {
                y = z + (y - z) * (-0.5 * kappa * next).exp();
                left -= next;
                z = -z;
                next = rng.sample(waits);
            }
            y = z + (y - z) * (-0.5 * kappa * left).exp();
            next -= left;
            if n >= burn {
                out.push(amp * y);
            }
        }
        out
    }
}

impl Iterator for RecordStream {
    type Item = RawRecord;

    fn next(&mut self) -> Option<RawRecord> {
        if self.cursor >= self.config.n_records {
            return None;
        }
        let r = self.record(self.cursor);
        self.cursor += 1;
        Some(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u64, noise: f64) -> AcquisitionConfig {
        AcquisitionConfig {
            n_records: n,
            noise_to_peak: noise,
            t_on: 50e-6,
            t_off: 50e-6,
            ..Default::default()
        }
    }

    fn flat_target(c: &AcquisitionConfig, level: f64) -> SpectrumRecord<f64> {
        let mut t = SpectrumRecord::zeros_one_sided(c.df_hz(), c.record_len / 2 + 1, SpectrumUnits::SpinUnits);
        t.density.iter_mut().for_each(|d| *d = level);
        t
    }

    #[test]
    fn random_access_matches_iteration() {
        let c = cfg(9, 1.0);
        let s = synthesize_quantum_trace(&flat_target(&c, 1e-7), 2.0, &c, &LineResponse::flat(0.0)).unwrap();
        let all: Vec<RawRecord> = s.clone().collect();
        assert_eq!(all.len(), 9);
        for k in [0u64, 3, 4, 8] {
            assert_eq!(s.record(k), all[k as usize]);
        }
        let m = synthesize_macrospin_trace(1e7, 1e6, 1.0, 1.9e8, &c).unwrap();
        let all: Vec<RawRecord> = m.clone().collect();
        assert_eq!(m.record(5), all[5]);
    }

    #[test]
    fn signal_variance_matches_spectral_weight() {
        let c = cfg(400, 0.0);
        let level = 2e-7;
        let dv = 3.0;
        let s = synthesize_quantum_trace(&flat_target(&c, level), dv, &c, &LineResponse::flat(0.0)).unwrap();
        let mut acc = 0.0;
        let mut n = 0usize;
        for r in s.filter(|r| r.tag == Tag::On) {
            acc += r.i.iter().map(|x| x * x).sum::<f64>();
            n += r.i.len();
        }
        let var = acc / n as f64;
        let expect = 0.25 * dv * dv * level / c.dt;
        assert!((var / expect - 1.0).abs() < 0.02, "{var} vs {expect}");
    }

    #[test]
    fn off_records_are_noise_only() {
        let c = cfg(20, 0.0);
        let s = synthesize_quantum_trace(&flat_target(&c, 1e-7), 1.0, &c, &LineResponse::flat(0.0)).unwrap();
        for r in s.filter(|r| r.tag == Tag::Off) {
            assert!(r.i.iter().chain(&r.q).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn controls_stay_bounded_and_have_expected_variance() {
        let c = cfg(200, 0.0);
        let m = synthesize_macrospin_trace(2.0 * PI * 5e6, 0.0, 2.0, 2.0 * PI * 30.3e6, &c).unwrap();
        let (mut acc, mut n) = (0.0, 0usize);
        for r in m.filter(|r| r.tag == Tag::On) {
            assert!(r.i.iter().all(|v| v.abs() <= 1.0 + 1e-12));
            acc += r.i.iter().map(|x| x * x).sum::<f64>();
            n += r.i.len();
        }
        let cf = cavity_filter(2.0 * PI * 5e6, 2.0 * PI * 30.3e6).unwrap();
        assert!((acc / n as f64 - 0.5 * cf).abs() < 0.01, "{}", acc / n as f64);
        let t = synthesize_telegraph_trace(2.0 * PI * 1e6, 2.0, 2.0 * PI * 30.3e6, &c).unwrap();
        for r in t.filter(|r| r.tag == Tag::On) {
            assert!(r.i.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let c = cfg(4, 1.0);
        let t = SpectrumRecord::zeros_one_sided(1e5, 600, SpectrumUnits::SpinUnits);
        assert!(matches!(
            synthesize_quantum_trace(&t, 1.0, &c, &LineResponse::flat(0.0)),
            Err(Error::Grid(_))
        ));
    }
}
