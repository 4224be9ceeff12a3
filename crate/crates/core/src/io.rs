//! File formats: CSV tables with `#`-prefixed provenance lines, JSON
//! envelopes, raw interleaved I/Q records with a JSON sidecar, and the
//! line-response table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{LineResponse, RawRecord, Tag};
use crate::error::{Error, Result};
use crate::qubit::SpinTrajectory;
use crate::spectrum::{LgCurve, SpectrumRecord};

/// Parameters and context attached to every emitted file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub program: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, seed: Option<u64>, parameters: serde_json::Value) -> Self {
        Self {
            program: "lgtime".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            parameters,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_table(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "# provenance: {}", serde_json::to_string(prov)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV table, skipping `#` lines; returns the header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?);
    }
    Ok((header, rows))
}

/// Provenance line of a CSV written by this module.
pub fn read_csv_provenance(path: &Path) -> Result<Provenance> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix("# provenance: "))
        .ok_or_else(|| Error::Data(format!("{}: no provenance line", path.display())))?;
    Ok(serde_json::from_str(line)?)
}

/// `t_s,x,y,z`
pub fn write_trajectory_csv(path: &Path, traj: &SpinTrajectory<f64>, prov: &Provenance) -> Result<()> {
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.xyz)
        .map(|(t, v)| vec![*t, v[0], v[1], v[2]])
        .collect();
    write_table(path, prov, &["t_s", "x", "y", "z"], &rows)
}

/// `freq_Hz,density`
pub fn write_spectrum_csv(path: &Path, rec: &SpectrumRecord<f64>, prov: &Provenance) -> Result<()> {
    let rows: Vec<Vec<f64>> = rec
        .omegas
        .iter()
        .zip(&rec.density)
        .map(|(w, d)| vec![w / std::f64::consts::TAU, *d])
        .collect();
    write_table(path, prov, &["freq_Hz", "density"], &rows)
}

/// `tau_ns,f,sigma,sys_lo,sys_hi`
pub fn write_lg_csv(path: &Path, curve: &LgCurve<f64>, prov: &Provenance) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..curve.f.len())
        .map(|r| {
            vec![
                curve.taus[r] * 1e9,
                curve.f[r],
                curve.sigma_stat[r],
                curve.sys_lo[r],
                curve.sys_hi[r],
            ]
        })
        .collect();
    write_table(path, prov, &["tau_ns", "f", "sigma", "sys_lo", "sys_hi"], &rows)
}

/// Arbitrary numeric table with a caller-chosen header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>], prov: &Provenance) -> Result<()> {
    if rows.iter().any(|r| r.len() != header.len()) {
        return Err(Error::Data("row width differs from header".into()));
    }
    write_table(path, prov, header, rows)
}

/// `freq_Hz,R,dR_over_R`
pub fn write_line_response_csv(path: &Path, line: &LineResponse, prov: &Provenance) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..line.freqs_hz.len())
        .map(|k| vec![line.freqs_hz[k], line.r[k], line.dr_over_r[k]])
        .collect();
    write_table(path, prov, &["freq_Hz", "R", "dR_over_R"], &rows)
}

pub fn read_line_response_csv(path: &Path) -> Result<LineResponse> {
    let (header, rows) = read_table(path)?;
    if header != ["freq_Hz", "R", "dR_over_R"] {
        return Err(Error::Data(format!(
            "{}: expected header freq_Hz,R,dR_over_R, got {}",
            path.display(),
            header.join(",")
        )));
    }
    let line = LineResponse {
        freqs_hz: rows.iter().map(|r| r[0]).collect(),
        r: rows.iter().map(|r| r[1]).collect(),
        dr_over_r: rows.iter().map(|r| r[2]).collect(),
    };
    line.validate()?;
    Ok(line)
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T: Serialize> {
    provenance: &'a Provenance,
    data: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    provenance: Provenance,
    data: T,
}

/// `{"provenance": ..., "data": ...}`
pub fn write_json<T: Serialize>(path: &Path, data: &T, prov: &Provenance) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &EnvelopeOut { provenance: prov, data })?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Provenance, T)> {
    let env: EnvelopeIn<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    Ok((env.provenance, env.data))
}

/// Run of consecutive records sharing a tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRun {
    pub tag: Tag,
    pub count: u64,
}

/// Sidecar describing a raw record file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub dt: f64,
    pub record_len: usize,
    pub n_records: u64,
    /// always `"interleaved_iq_f64_le"`
    pub layout: String,
    pub tags: Vec<TagRun>,
    pub provenance: Provenance,
}

pub const RAW_LAYOUT: &str = "interleaved_iq_f64_le";

/// Sidecar path: `<file>.json`.
pub fn sidecar_path(bin: &Path) -> std::path::PathBuf {
    let mut s = bin.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Streams records to `bin` as `I₀ Q₀ I₁ Q₁ ...` little-endian f64 and writes the sidecar.
pub fn write_raw_records<I>(bin: &Path, records: I, dt: f64, prov: &Provenance) -> Result<RawSidecar>
where
    I: IntoIterator<Item = RawRecord>,
{
    let mut out = create(bin)?;
    let mut tags: Vec<TagRun> = Vec::new();
    let mut record_len = None;
    let mut n = 0u64;
    for rec in records {
        rec.validate()?;
        match record_len {
            None => record_len = Some(rec.i.len()),
            Some(l) if l != rec.i.len() => return Err(Error::Data("mixed record lengths".into())),
            _ => {}
        }
        for (i, q) in rec.i.iter().zip(&rec.q) {
            out.write_all(&i.to_le_bytes())?;
            out.write_all(&q.to_le_bytes())?;
        }
        match tags.last_mut() {
            Some(run) if run.tag == rec.tag => run.count += 1,
            _ => tags.push(TagRun { tag: rec.tag, count: 1 }),
        }
        n += 1;
    }
    out.flush()?;
    let side = RawSidecar {
        dt,
        record_len: record_len.unwrap_or(0),
        n_records: n,
        layout: RAW_LAYOUT.into(),
        tags,
        provenance: prov.clone(),
    };
    let mut js = create(&sidecar_path(bin))?;
    serde_json::to_writer_pretty(&mut js, &side)?;
    writeln!(js)?;
    js.flush()?;
    Ok(side)
}

/// Reads the sidecar and returns a streaming iterator over the records.
pub fn read_raw_records(bin: &Path) -> Result<(RawSidecar, RawReader)> {
    let side: RawSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(bin))?))?;
    if side.layout != RAW_LAYOUT {
        return Err(Error::Data(format!("unsupported layout {}", side.layout)));
    }
    let total: u64 = side.tags.iter().map(|r| r.count).sum();
    if total != side.n_records {
        return Err(Error::Data("sidecar tag runs do not add up to n_records".into()));
    }
    let expect = side.n_records * side.record_len as u64 * 16;
    let actual = std::fs::metadata(bin)?.len();
    if actual != expect {
        return Err(Error::Data(format!("{}: {actual} bytes, sidecar implies {expect}", bin.display())));
    }
    let reader = RawReader {
        file: BufReader::new(File::open(bin)?),
        record_len: side.record_len,
        tags: side.tags.clone(),
        run: 0,
        used: 0,
        index: 0,
    };
    Ok((side, reader))
}

pub struct RawReader {
    file: BufReader<File>,
    record_len: usize,
    tags: Vec<TagRun>,
    run: usize,
    used: u64,
    index: u64,
}

impl Iterator for RawReader {
    type Item = Result<RawRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.run < self.tags.len() && self.used >= self.tags[self.run].count {
            self.run += 1;
            self.used = 0;
        }
        let tag = self.tags.get(self.run)?.tag;
        let mut bytes = vec![0u8; self.record_len * 16];
        if let Err(e) = self.file.read_exact(&mut bytes) {
            return Some(Err(e.into()));
        }
        let val = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
        let i = (0..self.record_len).map(|t| val(2 * t)).collect();
        let q = (0..self.record_len).map(|t| val(2 * t + 1)).collect();
        let rec = RawRecord {
            index: self.index,
            tag,
            i,
            q,
        };
        self.used += 1;
        self.index += 1;
        Some(Ok(rec))
    }
}
