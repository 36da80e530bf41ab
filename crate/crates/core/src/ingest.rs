//! Receiver log ingestion: CSV parsing, phase unwrapping and conversion of
//! windowed carrier-phase variance to TOA variance.
//!
//! Measurement CSV schema:
//!
//! ```text
//! timestamp,station_id,phase_rad,snr_db
//! 0.0,Palmi,1.234,18.5
//! ```
//!
//! Lines starting with `#` and blank lines are skipped. Timestamps must be
//! strictly increasing per station.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geodesy::wrap_pi;

pub const MEASUREMENT_HEADER: &str = "timestamp,station_id,phase_rad,snr_db";
pub const SAMPLES_HEADER: &str = "station_id,snr_linear,toa_var_m2";
pub const SAMPLES_HEADER_WEIGHTED: &str = "station_id,snr_linear,toa_var_m2,weight";

/// Default number of phase samples per variance window.
pub const DEFAULT_WINDOW_LEN: usize = 100;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at row {row}: {reason}")]
    ParseError { row: usize, reason: String },
    #[error("empty input")]
    EmptyInput,
    #[error("window length {0} too short")]
    InvalidWindow(usize),
    #[error("insufficient data: need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("records from more than one station ({0} and {1})")]
    MixedStations(String, String),
}

/// One logged receiver observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub timestamp: f64,
    pub station_id: String,
    /// Wrapped carrier phase as logged, radians.
    pub phase_rad: f64,
    pub snr_db: f64,
}

/// One `(SNR, σ²)` observation for the variance model.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSample {
    pub station_id: String,
    /// Linear power ratio.
    pub snr_linear: f64,
    /// TOA variance, m².
    pub toa_var_m2: f64,
    /// Fit weight; only used when weighting is enabled.
    pub weight: f64,
}

impl VarianceSample {
    pub fn new(station_id: impl Into<String>, snr_linear: f64, toa_var_m2: f64) -> Self {
        VarianceSample { station_id: station_id.into(), snr_linear, toa_var_m2, weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Detrend {
    #[default]
    None,
    /// Remove a least-squares line (phase vs. timestamp) from each window.
    Linear,
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::FileNotFound(path.to_path_buf())
        } else {
            IngestError::Io { path: path.to_path_buf(), source: e }
        }
    })
}

/// Data lines after the header as `(row_number, line)`; rows are 1-based file lines.
fn data_lines<'a>(text: &'a str, headers: &[&str]) -> Result<(usize, Vec<(usize, &'a str)>), IngestError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (row, header) = lines.next().ok_or(IngestError::ParseError { row: 1, reason: "missing header".into() })?;
    let which = headers
        .iter()
        .position(|h| header.trim() == *h)
        .ok_or_else(|| IngestError::ParseError { row, reason: format!("expected header `{}`, found `{header}`", headers[0]) })?;
    Ok((which, lines.collect()))
}

fn field_f64(row: usize, name: &str, raw: &str) -> Result<f64, IngestError> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| IngestError::ParseError { row, reason: format!("{name}: `{raw}` is not a number") })?;
    if !v.is_finite() {
        return Err(IngestError::ParseError { row, reason: format!("{name}: non-finite value") });
    }
    Ok(v)
}

/// Parse measurement CSV text.
pub fn parse_measurements(text: &str) -> Result<Vec<PhaseRecord>, IngestError> {
    let (_, lines) = data_lines(text, &[MEASUREMENT_HEADER])?;
    let mut last_ts: HashMap<String, f64> = HashMap::new();
    let mut out = Vec::with_capacity(lines.len());
    for (row, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(IngestError::ParseError { row, reason: format!("expected 4 columns, found {}", cols.len()) });
        }
        let station_id = cols[1].trim();
        if station_id.is_empty() {
            return Err(IngestError::ParseError { row, reason: "empty station_id".into() });
        }
        let rec = PhaseRecord {
            timestamp: field_f64(row, "timestamp", cols[0])?,
            station_id: station_id.to_string(),
            phase_rad: field_f64(row, "phase_rad", cols[2])?,
            snr_db: field_f64(row, "snr_db", cols[3])?,
        };
        if let Some(prev) = last_ts.get(&rec.station_id) {
            if rec.timestamp <= *prev {
                return Err(IngestError::ParseError {
                    row,
                    reason: format!("timestamp {} not increasing for station {}", rec.timestamp, rec.station_id),
                });
            }
        }
        last_ts.insert(rec.station_id.clone(), rec.timestamp);
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_measurement_file(path: &Path) -> Result<Vec<PhaseRecord>, IngestError> {
    parse_measurements(&read_text(path)?)
}

pub fn write_measurements(path: &Path, records: &[PhaseRecord]) -> Result<(), IngestError> {
    let io = |e| IngestError::Io { path: path.to_path_buf(), source: e };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(f, "{MEASUREMENT_HEADER}").map_err(io)?;
    for r in records {
        // `{}` on f64 prints the shortest string that parses back to the same value
        writeln!(f, "{},{},{},{}", r.timestamp, r.station_id, r.phase_rad, r.snr_db).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Parse a pre-computed variance sample CSV (optionally with a `weight` column).
pub fn parse_samples(text: &str) -> Result<Vec<VarianceSample>, IngestError> {
    let (which, lines) = data_lines(text, &[SAMPLES_HEADER, SAMPLES_HEADER_WEIGHTED])?;
    let ncols = if which == 0 { 3 } else { 4 };
    let mut out = Vec::with_capacity(lines.len());
    for (row, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != ncols {
            return Err(IngestError::ParseError { row, reason: format!("expected {ncols} columns, found {}", cols.len()) });
        }
        let snr_linear = field_f64(row, "snr_linear", cols[1])?;
        let toa_var_m2 = field_f64(row, "toa_var_m2", cols[2])?;
        if snr_linear <= 0.0 {
            return Err(IngestError::ParseError { row, reason: "snr_linear must be > 0".into() });
        }
        if toa_var_m2 < 0.0 {
            return Err(IngestError::ParseError { row, reason: "toa_var_m2 must be >= 0".into() });
        }
        let weight = if ncols == 4 { field_f64(row, "weight", cols[3])? } else { 1.0 };
        if weight <= 0.0 {
            return Err(IngestError::ParseError { row, reason: "weight must be > 0".into() });
        }
        out.push(VarianceSample { station_id: cols[0].trim().to_string(), snr_linear, toa_var_m2, weight });
    }
    Ok(out)
}

pub fn parse_samples_file(path: &Path) -> Result<Vec<VarianceSample>, IngestError> {
    parse_samples(&read_text(path)?)
}

/// True when the file's first non-comment line is the variance-sample header.
pub fn is_samples_file(path: &Path) -> Result<bool, IngestError> {
    let text = read_text(path)?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    Ok(matches!(first, Some(h) if h == SAMPLES_HEADER || h == SAMPLES_HEADER_WEIGHTED))
}

/// Remove 2π jumps so that every step lies in `(-π, π]`.
///
/// Each output is the input plus an integer multiple of 2π, so the result is
/// congruent to the input elementwise.
pub fn unwrap_phase(wrapped: &[f64]) -> Result<Vec<f64>, IngestError> {
    let (&first, rest) = wrapped.split_first().ok_or(IngestError::EmptyInput)?;
    let mut out = Vec::with_capacity(wrapped.len());
    out.push(first);
    let mut turns = 0.0_f64;
    let mut prev_raw = first;
    for &x in rest {
        let step = x - prev_raw;
        turns += ((wrap_pi(step) - step) / TAU).round();
        let mut y = x + TAU * turns;
        // guard the half-open boundary against rounding in the sum above
        let last = *out.last().unwrap();
        if y - last > PI {
            turns -= 1.0;
            y = x + TAU * turns;
        } else if y - last <= -PI {
            turns += 1.0;
            y = x + TAU * turns;
        }
        out.push(y);
        prev_raw = x;
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Residual variance after a least-squares line fit against `t` (denominator n − 2).
fn detrended_variance(t: &[f64], y: &[f64]) -> f64 {
    let tm = mean(t);
    let ym = mean(y);
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let rss: f64 = t.iter().zip(y).map(|(a, b)| (b - ym - slope * (a - tm)).powi(2)).sum();
    rss / (y.len() as f64 - 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowOptions {
    pub window_len: usize,
    pub wavelength_m: f64,
    pub detrend: Detrend,
}

/// Non-overlapping windowed TOA variance for a single station, no detrending.
pub fn window_variance(records: &[PhaseRecord], window_len: usize, wavelength_m: f64) -> Result<Vec<VarianceSample>, IngestError> {
    window_variance_with(records, &WindowOptions { window_len, wavelength_m, detrend: Detrend::None })
}

/// Phase is unwrapped once over the whole series, then split into consecutive
/// windows of `window_len` (a trailing partial window is dropped). Each window
/// yields `σ² = (λ/2π)² · Var(φ)` and `SNR = 10^(mean(snr_db)/10)`.
pub fn window_variance_with(records: &[PhaseRecord], opts: &WindowOptions) -> Result<Vec<VarianceSample>, IngestError> {
    let min_len = if opts.detrend == Detrend::Linear { 3 } else { 2 };
    if opts.window_len < min_len {
        return Err(IngestError::InvalidWindow(opts.window_len));
    }
    if records.len() < opts.window_len {
        return Err(IngestError::InsufficientData { needed: opts.window_len, got: records.len() });
    }
    let station = &records[0].station_id;
    if let Some(other) = records.iter().find(|r| &r.station_id != station) {
        return Err(IngestError::MixedStations(station.clone(), other.station_id.clone()));
    }
    let phases: Vec<f64> = records.iter().map(|r| r.phase_rad).collect();
    let cont = unwrap_phase(&phases)?;
    let scale = (opts.wavelength_m / TAU).powi(2);

    let samples = cont
        .chunks_exact(opts.window_len)
        .zip(records.chunks_exact(opts.window_len))
        .map(|(phi, recs)| {
            let var = match opts.detrend {
                Detrend::None => sample_variance(phi),
                Detrend::Linear => {
                    let t: Vec<f64> = recs.iter().map(|r| r.timestamp).collect();
                    detrended_variance(&t, phi)
                }
            };
            let snr_db = recs.iter().map(|r| r.snr_db).sum::<f64>() / recs.len() as f64;
            VarianceSample::new(station.clone(), 10f64.powf(snr_db / 10.0), scale * var)
        })
        .collect();
    Ok(samples)
}

/// Split mixed-station records and window each station with its own wavelength.
/// Stations are visited in sorted id order.
pub fn samples_by_station<F>(records: &[PhaseRecord], window_len: usize, detrend: Detrend, wavelength_for: F) -> Result<Vec<VarianceSample>, IngestError>
where
    F: Fn(&str) -> f64,
{
    let mut groups: BTreeMap<&str, Vec<PhaseRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.station_id.as_str()).or_default().push(r.clone());
    }
    let mut out = Vec::new();
    for (id, recs) in groups {
        let opts = WindowOptions { window_len, wavelength_m: wavelength_for(id), detrend };
        out.extend(window_variance_with(&recs, &opts)?);
    }
    Ok(out)
}
