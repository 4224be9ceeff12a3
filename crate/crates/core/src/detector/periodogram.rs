use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::synth::RecordStream;
use super::{RawRecord, Tag};
use crate::error::{Error, Result};
use crate::spectrum::{SpectrumRecord, SpectrumUnits};

/// Running ON/OFF periodogram sums over `record_len/2` one-sided bins.
#[derive(Clone)]
pub struct PeriodogramAccumulator {
    dt: f64,
    record_len: usize,
    sum_on: Vec<f64>,
    sum_off: Vec<f64>,
    n_on: u64,
    n_off: u64,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl PeriodogramAccumulator {
    pub fn new(dt: f64, record_len: usize) -> Result<Self> {
        if record_len < 2 || record_len % 2 != 0 {
            return Err(Error::param("record_len", "must be even and >= 2"));
        }
        crate::error::check_pos("dt", dt)?;
        Ok(Self::with_plan(dt, record_len, FftPlanner::new().plan_fft_forward(record_len)))
    }

    fn with_plan(dt: f64, record_len: usize, fft: Arc<dyn Fft<f64>>) -> Self {
        Self {
            dt,
            record_len,
            sum_on: vec![0.0; record_len / 2],
            sum_off: vec![0.0; record_len / 2],
            n_on: 0,
            n_off: 0,
            fft,
            buf: vec![Complex64::new(0.0, 0.0); record_len],
        }
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.n_on, self.n_off)
    }

    /// Adds `(|FFT I|² + |FFT Q|²)·dt/L`, from one complex FFT of `I + iQ`.
    pub fn push(&mut self, rec: &RawRecord) -> Result<()> {
        let l = self.record_len;
        if rec.i.len() != l || rec.q.len() != l {
            return Err(Error::Data(format!(
                "record {} has length {}, expected {l}",
                rec.index,
                rec.i.len()
            )));
        }
        for (b, (i, q)) in self.buf.iter_mut().zip(rec.i.iter().zip(&rec.q)) {
            *b = Complex64::new(*i, *q);
        }
        self.fft.process(&mut self.buf);
        let norm = 0.5 * self.dt / l as f64;
        let sum = match rec.tag {
            Tag::On => {
                self.n_on += 1;
                &mut self.sum_on
            }
            Tag::Off => {
                self.n_off += 1;
                &mut self.sum_off
            }
        };
        for (k, s) in sum.iter_mut().enumerate() {
            let neg = (l - k) % l;
            *s += norm * (self.buf[k].norm_sqr() + self.buf[neg].norm_sqr());
        }
        Ok(())
    }

    /// Adds another accumulator's sums (fixed order keeps results reproducible).
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.record_len != self.record_len || other.dt != self.dt {
            return Err(Error::Data("cannot merge accumulators with different grids".into()));
        }
        for (a, b) in self.sum_on.iter_mut().zip(&other.sum_on) {
            *a += b;
        }
        for (a, b) in self.sum_off.iter_mut().zip(&other.sum_off) {
            *a += b;
        }
        self.n_on += other.n_on;
        self.n_off += other.n_off;
        Ok(())
    }

    fn clear(&mut self) {
        self.sum_on.iter_mut().for_each(|v| *v = 0.0);
        self.sum_off.iter_mut().for_each(|v| *v = 0.0);
        self.n_on = 0;
        self.n_off = 0;
    }

    pub fn finish(&self) -> Result<AcquiredSpectra> {
        if self.n_on == 0 || self.n_off == 0 {
            return Err(Error::Data(format!(
                "need records of both tags (ON {}, OFF {})",
                self.n_on, self.n_off
            )));
        }
        let df = 1.0 / (self.dt * self.record_len as f64);
        let make = |sum: &[f64], n: u64, tag: &str| {
            let mut rec = SpectrumRecord::zeros_one_sided(df, sum.len(), SpectrumUnits::VoltsSquared);
            rec.density = sum.iter().map(|s| s / n as f64).collect();
            rec.meta.insert("tag".into(), tag.into());
            rec.meta.insert("records".into(), n.into());
            rec.meta.insert("dt".into(), self.dt.into());
            rec.meta.insert("record_len".into(), self.record_len.into());
            rec
        };
        Ok(AcquiredSpectra {
            on: make(&self.sum_on, self.n_on, "on"),
            off: make(&self.sum_off, self.n_off, "off"),
            n_on: self.n_on,
            n_off: self.n_off,
        })
    }
}

/// Per-tag averaged periodograms (V²·s).
#[derive(Clone, Debug, PartialEq)]
pub struct AcquiredSpectra {
    pub on: SpectrumRecord<f64>,
    pub off: SpectrumRecord<f64>,
    pub n_on: u64,
    pub n_off: u64,
}

/// Single pass over any record stream in constant memory.
pub fn accumulate_periodograms<I>(records: I, dt: f64) -> Result<AcquiredSpectra>
where
    I: IntoIterator<Item = RawRecord>,
{
    let mut it = records.into_iter().peekable();
    let len = it
        .peek()
        .map(|r| r.i.len())
        .ok_or_else(|| Error::Data("no records".into()))?;
    let mut acc = PeriodogramAccumulator::new(dt, len)?;
    for r in it {
        acc.push(&r)?;
    }
    acc.finish()
}

const BLOCK: u64 = 64;
const BLOCKS_PER_WAVE: usize = 256;

/// Synthesizes and accumulates the whole stream in parallel. Records are
/// summed in fixed blocks merged in index order, so the result does not
/// depend on the thread count.
pub fn acquire_spectra(stream: &RecordStream) -> Result<AcquiredSpectra> {
    let cfg = *stream.config();
    let n = cfg.n_records;
    let fft = FftPlanner::new().plan_fft_forward(cfg.record_len);
    let template = PeriodogramAccumulator::with_plan(cfg.dt, cfg.record_len, fft);
    let mut total = template.clone();
    let n_blocks = n.div_ceil(BLOCK);
    let mut b0 = 0u64;
    while b0 < n_blocks {
        let b1 = (b0 + BLOCKS_PER_WAVE as u64).min(n_blocks);
        let parts: Vec<Result<PeriodogramAccumulator>> = (b0..b1)
            .into_par_iter()
            .map(|b| {
                let mut acc = template.clone();
                acc.clear();
                let start = b * BLOCK;
                let count = BLOCK.min(n - start);
                let mut recs = Vec::with_capacity(count as usize);
                stream.fill(start, count, &mut recs);
                for r in &recs {
                    acc.push(r)?;
                }
                Ok(acc)
            })
            .collect();
        for p in parts {
            total.merge(&p?)?;
        }
        b0 = b1;
    }
    total.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{synthesize_quantum_trace, AcquisitionConfig, LineResponse};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white(index: u64, tag: Tag, l: usize, v: f64, rng: &mut ChaCha8Rng) -> RawRecord {
        let mut draw = || (0..l).map(|_| v * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
        RawRecord {
            index,
            tag,
            i: draw(),
            q: draw(),
        }
    }

    #[test]
    fn white_noise_density() {
        let (l, v, dt) = (256, 0.7, 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<RawRecord> = (0..4000)
            .map(|k| white(k, if k % 2 == 0 { Tag::On } else { Tag::Off }, l, v, &mut rng))
            .collect();
        let s = accumulate_periodograms(recs, dt).unwrap();
        let expect = 2.0 * v * v * dt;
        let mean = s.on.density.iter().sum::<f64>() / s.on.len() as f64;
        assert!((mean / expect - 1.0).abs() < 0.01, "{mean} vs {expect}");
        for d in &s.on.density[1..] {
            assert!((d / expect - 1.0).abs() < 0.15);
        }
    }

    #[test]
    fn tone_lands_in_one_bin() {
        let (l, dt, a) = (128usize, 1e-8, 0.3);
        let k0 = 9usize;
        let tone: Vec<f64> = (0..l)
            .map(|t| a * (std::f64::consts::TAU * (k0 * t) as f64 / l as f64).cos())
            .collect();
        let rec = |tag| RawRecord {
            index: 0,
            tag,
            i: tone.clone(),
            q: vec![0.0; l],
        };
        let s = accumulate_periodograms([rec(Tag::On), rec(Tag::Off)], dt).unwrap();
        let expect = a * a * l as f64 * dt / 4.0;
        for (k, d) in s.on.density.iter().enumerate() {
            if k == k0 {
                assert!((d - expect).abs() < 1e-12 * expect);
            } else {
                assert!(d.abs() < 1e-12 * expect);
            }
        }
        let var = a * a / 2.0;
        let weight = s.on.total_weight().unwrap();
        assert!((weight - var).abs() < 1e-9 * var);
    }

    #[test]
    fn on_off_residual_shrinks() {
        let (l, v, dt) = (64, 1.0, 1e-8);
        let resid = |n: u64, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let recs: Vec<RawRecord> = (0..2 * n)
                .map(|k| white(k, if k < n { Tag::On } else { Tag::Off }, l, v, &mut rng))
                .collect();
            let s = accumulate_periodograms(recs, dt).unwrap();
            let d: Vec<f64> = s.on.density.iter().zip(&s.off.density).map(|(a, b)| a - b).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
            (mean, rms)
        };
        let (m1, r1) = resid(100, 1);
        let (_, r2) = resid(1600, 2);
        let scale = 2.0 * v * v * dt;
        assert!(m1.abs() < 3.0 * r1 / (32f64).sqrt());
        assert!((r1 / r2 - 4.0).abs() < 0.8, "{r1} {r2}");
        assert!(r1 < scale);
    }

    #[test]
    fn mixed_lengths_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let recs = vec![white(0, Tag::On, 32, 1.0, &mut rng), white(1, Tag::Off, 64, 1.0, &mut rng)];
        assert!(accumulate_periodograms(recs, 1e-8).is_err());
    }

    #[test]
    fn parallel_acquisition_is_deterministic() {
        let c = AcquisitionConfig {
            n_records: 700,
            record_len: 128,
            t_on: 20e-6,
            t_off: 20e-6,
            ..Default::default()
        };
        let mut t = SpectrumRecord::zeros_one_sided(c.df_hz(), 65, SpectrumUnits::SpinUnits);
        t.density[10] = 1e-7;
        let s = synthesize_quantum_trace(&t, 1.0, &c, &LineResponse::flat(0.0)).unwrap();
        let a = acquire_spectra(&s).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| acquire_spectra(&s)).unwrap();
        assert_eq!(a, b);
        let serial = accumulate_periodograms(s.clone(), c.dt).unwrap();
        assert_eq!(serial.n_on, a.n_on);
        for (x, y) in serial.on.density.iter().zip(&a.on.density) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }
}
