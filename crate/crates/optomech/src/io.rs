//! File formats.
//!
//! * Spectra, filters, transfer measurements and controller tables are CSV
//!   with a header row. Complex columns are split into `re_*`/`im_*`.
//! * Time series are either CSV (one sample per line, `# key = value` comment
//!   lines for metadata, `sample_rate` required) or raw little-endian `f32`.
//! * Trajectories are CSV `t,q,p,y` or raw little-endian `f64` rows `q,p,y`.
//! * Reports are JSON. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::controller::ControllerResponse;
use crate::error::{Error, Result};
use crate::factorization::CausalFilter;
use crate::pipeline::{MeasuredSpectrum, TimeSeriesRecord, Units};
use crate::spectra::SpectrumSet;
use crate::sysid::TransferMeasurement;
use crate::validation::SimOutput;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse(format!("{}: {e}", path.display()))
}

fn write_columns(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_columns(path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let idx: Vec<usize> = expected
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Parse(format!("{}: missing column `{name}`", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); expected.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        for (c, &i) in idx.iter().enumerate() {
            let field = rec.get(i).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}: row {}: bad number `{field}`",
                    path.display(),
                    line + 2
                ))
            })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

/// Writes any serializable report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_json(value)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_spectrum_set(path: &Path, s: &SpectrumSet) -> Result<()> {
    let header = [
        "freq_hz", "s_yy", "s_qq", "s_pp", "re_s_qy", "im_s_qy", "re_s_py", "im_s_py", "re_s_qp",
        "im_s_qp",
    ];
    let rows = (0..s.grid.len()).map(|i| {
        vec![
            s.grid.freq(i),
            s.s_yy[i],
            s.s_qq[i],
            s.s_pp[i],
            s.s_qy[i].re,
            s.s_qy[i].im,
            s.s_py[i].re,
            s.s_py[i].im,
            s.s_qp[i].re,
            s.s_qp[i].im,
        ]
    });
    write_columns(path, &header, rows)
}

/// Frequency response of a filter on its grid.
pub fn write_filter_response(path: &Path, f: &CausalFilter) -> Result<()> {
    let resp = f.response();
    let rows = resp
        .iter()
        .enumerate()
        .map(|(i, h)| vec![f.grid.freq(i), h.re, h.im]);
    write_columns(path, &["freq_hz", "re", "im"], rows)
}

/// Causal half of a filter's impulse response.
pub fn write_filter_impulse(path: &Path, f: &CausalFilter) -> Result<()> {
    let dt = f.grid.dt();
    let rows = f
        .causal_taps()
        .iter()
        .enumerate()
        .map(|(n, h)| vec![n as f64 * dt, *h]);
    write_columns(path, &["t", "h"], rows)
}

pub fn write_measured_spectrum(path: &Path, m: &MeasuredSpectrum) -> Result<()> {
    let rows = m.freq_hz.iter().zip(&m.psd).map(|(f, p)| vec![*f, *p]);
    write_columns(path, &["freq_hz", "psd"], rows)
}

/// Reads a `freq_hz,psd` CSV. `n_averages` is taken from a `# n_averages = N`
/// comment if present, else 1.
pub fn read_measured_spectrum(path: &Path, units: Units) -> Result<MeasuredSpectrum> {
    let meta = read_comment_metadata(path)?;
    let n_averages = match meta.get("n_averages") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad n_averages `{v}`", path.display())))?,
        None => 1,
    };
    let mut cols = read_columns(path, &["freq_hz", "psd"])?;
    let psd = cols.pop().unwrap_or_default();
    let freq_hz = cols.pop().unwrap_or_default();
    Ok(MeasuredSpectrum {
        freq_hz,
        psd,
        units,
        n_averages,
    })
}

pub fn read_transfer_measurement(path: &Path) -> Result<TransferMeasurement> {
    let cols = read_columns(path, &["freq_hz", "re_a", "im_a", "re_b", "im_b"])?;
    let zip = |r: &[f64], i: &[f64]| {
        r.iter()
            .zip(i)
            .map(|(a, b)| Complex64::new(*a, *b))
            .collect()
    };
    Ok(TransferMeasurement {
        freq_hz: cols[0].clone(),
        a: zip(&cols[1], &cols[2]),
        b: zip(&cols[3], &cols[4]),
    })
}

pub fn read_controller_table(path: &Path) -> Result<ControllerResponse> {
    let mut cols = read_columns(path, &["freq_hz", "re", "im"])?;
    let im = cols.pop().unwrap_or_default();
    let re = cols.pop().unwrap_or_default();
    let freq_hz = cols.pop().unwrap_or_default();
    let c = ControllerResponse::Table { freq_hz, re, im };
    c.validate()?;
    Ok(c)
}

fn read_comment_metadata(path: &Path) -> Result<BTreeMap<String, String>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut meta = BTreeMap::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err(path))?;
        let Some(rest) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        if let Some((k, v)) = rest.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(meta)
}

/// One sample per line; `# sample_rate = <Hz>` is required, other `# k = v`
/// lines become metadata. A single non-numeric header line is skipped.
pub fn read_time_series_csv(path: &Path) -> Result<TimeSeriesRecord> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut meta = BTreeMap::new();
    let mut samples = Vec::new();
    let mut header_seen = false;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let field = t.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) => samples.push(v),
            Err(_) if !header_seen && samples.is_empty() => header_seen = true,
            Err(_) => {
                return Err(Error::Parse(format!(
                    "{}: line {}: bad sample `{field}`",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    let rate = meta
        .remove("sample_rate")
        .ok_or_else(|| Error::config("sample_rate", "missing from time-series header"))?;
    let sample_rate: f64 = rate
        .parse()
        .map_err(|_| Error::config("sample_rate", "not a number"))?;
    let mut rec = TimeSeriesRecord::new(samples, sample_rate)?;
    rec.metadata = meta;
    Ok(rec)
}

pub fn write_time_series_csv(path: &Path, rec: &TimeSeriesRecord) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut out = || -> std::io::Result<()> {
        writeln!(w, "# sample_rate = {}", rec.sample_rate)?;
        for (k, v) in &rec.metadata {
            writeln!(w, "# {k} = {v}")?;
        }
        writeln!(w, "value")?;
        for s in &rec.samples {
            writeln!(w, "{s}")?;
        }
        w.flush()
    };
    out().map_err(io_err(path))
}

/// Raw little-endian `f32` samples.
pub fn read_time_series_f32(path: &Path, sample_rate: f64) -> Result<TimeSeriesRecord> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse(format!(
            "{}: length is not a multiple of 4 bytes",
            path.display()
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    TimeSeriesRecord::new(samples, sample_rate)
}

pub fn write_trajectory_csv(path: &Path, sim: &SimOutput) -> Result<()> {
    let rows = (0..sim.q.len()).map(|k| vec![k as f64 * sim.dt, sim.q[k], sim.p[k], sim.y[k]]);
    write_columns(path, &["t", "q", "p", "y"], rows)
}

/// Rows of little-endian `f64` `q, p, y`.
pub fn write_trajectory_bin(path: &Path, sim: &SimOutput) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut out = || -> std::io::Result<()> {
        for k in 0..sim.q.len() {
            for v in [sim.q[k], sim.p[k], sim.y[k]] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    out().map_err(io_err(path))
}
