//! Field strength and SNR at arbitrary points.
//!
//! Two field-strength sources are supported: a parametric groundwave-style
//! model (inverse-distance spreading plus linear excess attenuation) and
//! externally computed per-station lattices read from CSV. Noise is either a
//! scalar level or a lattice in the same format.
//!
//! Lattice CSV schema: header `lat_deg,lon_deg,value_dbuv_m`, rows ordered by
//! latitude ascending then longitude ascending, forming a complete rectangle.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geodesy::{geodesic_distance, GeoPoint};

pub const GRID_HEADER: &str = "lat_deg,lon_deg,value_dbuv_m";

/// Config default, not a measured value: field at 1 km for 1 kW radiated.
pub const DEFAULT_REF_FIELD_DBUV_M: f64 = 109.5;
/// Config default, not a measured value.
pub const DEFAULT_ATTEN_DB_PER_KM: f64 = 0.03;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("point coincides with transmitter `{0}`")]
    ZeroDistance(String),
    #[error("point ({lat}, {lon}) outside lattice bounds")]
    OutOfGridBounds { lat: f64, lon: f64 },
    #[error("no field-strength lattice for station `{0}`")]
    MissingGrid(String),
    #[error("{}: parse error at row {row}: {reason}", path.display())]
    ParseError { path: PathBuf, row: usize, reason: String },
    #[error("{}: lattice axes are not strictly increasing", .0.display())]
    NonMonotonicAxes(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmitterStation {
    pub station_id: String,
    pub position: GeoPoint,
    pub power_w: f64,
    pub carrier_hz: f64,
    pub jitter_m: f64,
}

impl TransmitterStation {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |what: &str| PropagationError::Invalid(format!("station `{}`: {what}", self.station_id));
        self.position.validate().map_err(|e| bad(&e.to_string()))?;
        if !(self.power_w.is_finite() && self.power_w > 0.0) {
            return Err(bad("power_w must be > 0"));
        }
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(bad("carrier_hz must be > 0"));
        }
        if !(self.jitter_m.is_finite() && self.jitter_m >= 0.0) {
            return Err(bad("jitter_m must be >= 0"));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        crate::wavelength_m(self.carrier_hz)
    }
}

/// Rectangular lat/lon lattice of dBμV/m values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLattice {
    lats: Vec<f64>,
    lons: Vec<f64>,
    /// Row-major: `values[i * lons.len() + j]` at `(lats[i], lons[j])`.
    values: Vec<f64>,
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Index `i` such that `axis[i] <= x <= axis[i+1]`, with the fractional offset.
fn bracket(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    let (first, last) = (axis[0], *axis.last().unwrap());
    if !(x >= first && x <= last) {
        return None;
    }
    let i = axis.partition_point(|&a| a <= x).saturating_sub(1).min(axis.len() - 2);
    let t = (x - axis[i]) / (axis[i + 1] - axis[i]);
    Some((i, t))
}

impl GridLattice {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>, values: Vec<f64>) -> Result<Self, PropagationError> {
        if lats.len() < 2 || lons.len() < 2 {
            return Err(PropagationError::Invalid("lattice needs at least 2 nodes per axis".into()));
        }
        if values.len() != lats.len() * lons.len() {
            return Err(PropagationError::Invalid("lattice value count does not match axes".into()));
        }
        if !strictly_increasing(&lats) || !strictly_increasing(&lons) {
            return Err(PropagationError::NonMonotonicAxes(PathBuf::new()));
        }
        Ok(GridLattice { lats, lons, values })
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.lons.len() + j]
    }

    /// True when the closed rectangle lies inside the lattice.
    pub fn covers(&self, lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> bool {
        lat_min >= self.lats[0] && lat_max <= *self.lats.last().unwrap() && lon_min >= self.lons[0] && lon_max <= *self.lons.last().unwrap()
    }

    /// Bilinear interpolation; node values are returned exactly.
    pub fn interpolate(&self, p: GeoPoint) -> Result<f64, PropagationError> {
        let oob = || PropagationError::OutOfGridBounds { lat: p.lat_deg, lon: p.lon_deg };
        let (i, ty) = bracket(&self.lats, p.lat_deg).ok_or_else(oob)?;
        let (j, tx) = bracket(&self.lons, p.lon_deg).ok_or_else(oob)?;
        let v00 = self.node(i, j);
        let v01 = self.node(i, j + 1);
        let v10 = self.node(i + 1, j);
        let v11 = self.node(i + 1, j + 1);
        // written so t = 0 and t = 1 reproduce the endpoints exactly
        let lerp = |a: f64, b: f64, t: f64| if t == 1.0 { b } else { a + t * (b - a) };
        Ok(lerp(lerp(v00, v01, tx), lerp(v10, v11, tx), ty))
    }

    pub fn load(path: &Path) -> Result<Self, PropagationError> {
        let text = fs::read_to_string(path).map_err(|e| PropagationError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, PropagationError> {
        let perr = |row: usize, reason: String| PropagationError::ParseError { path: path.to_path_buf(), row, reason };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h == GRID_HEADER => {}
            Some((row, h)) => return Err(perr(row, format!("expected header `{GRID_HEADER}`, found `{h}`"))),
            None => return Err(perr(1, "missing header".into())),
        }
        let mut rows: Vec<(usize, f64, f64, f64)> = Vec::new();
        for (row, line) in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(perr(row, format!("expected 3 columns, found {}", cols.len())));
            }
            let mut vals = [0.0f64; 3];
            for (k, c) in cols.iter().enumerate() {
                vals[k] = c.trim().parse().map_err(|_| perr(row, format!("`{c}` is not a number")))?;
                if !vals[k].is_finite() {
                    return Err(perr(row, "non-finite value".into()));
                }
            }
            rows.push((row, vals[0], vals[1], vals[2]));
        }
        if rows.is_empty() {
            return Err(perr(1, "no lattice rows".into()));
        }
        let first_lat = rows[0].1;
        let lons: Vec<f64> = rows.iter().take_while(|r| r.1 == first_lat).map(|r| r.2).collect();
        let nlon = lons.len();
        if rows.len() % nlon != 0 {
            return Err(perr(rows.last().unwrap().0, "rows do not form a complete rectangular lattice".into()));
        }
        let mut lats = Vec::with_capacity(rows.len() / nlon);
        for block in rows.chunks(nlon) {
            let lat = block[0].1;
            for (k, r) in block.iter().enumerate() {
                if r.1 != lat || r.2 != lons[k] {
                    if r.2 != lons[k] && r.1 == lat {
                        return Err(PropagationError::NonMonotonicAxes(path.to_path_buf()));
                    }
                    return Err(perr(r.0, "rows do not form a complete rectangular lattice".into()));
                }
            }
            lats.push(lat);
        }
        if !strictly_increasing(&lats) || !strictly_increasing(&lons) {
            return Err(PropagationError::NonMonotonicAxes(path.to_path_buf()));
        }
        if lats.len() < 2 || nlon < 2 {
            return Err(perr(1, "lattice needs at least 2 nodes per axis".into()));
        }
        Ok(GridLattice { lats, lons, values: rows.iter().map(|r| r.3).collect() })
    }

    /// Shortest round-trip float formatting, so reading back is bit-exact.
    pub fn write(&self, path: &Path) -> Result<(), PropagationError> {
        let io = |e| PropagationError::Io { path: path.to_path_buf(), source: e };
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
        writeln!(f, "{GRID_HEADER}").map_err(io)?;
        for (i, lat) in self.lats.iter().enumerate() {
            for (j, lon) in self.lons.iter().enumerate() {
                writeln!(f, "{lat},{lon},{}", self.node(i, j)).map_err(io)?;
            }
        }
        f.flush().map_err(io)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropagationSpec {
    Parametric { ref_field_dbuv_m: f64, atten_db_per_km: f64 },
    /// Imported lattices keyed by station id; values are used as-is.
    Grid { fields: BTreeMap<String, GridLattice> },
}

impl Default for PropagationSpec {
    fn default() -> Self {
        PropagationSpec::Parametric { ref_field_dbuv_m: DEFAULT_REF_FIELD_DBUV_M, atten_db_per_km: DEFAULT_ATTEN_DB_PER_KM }
    }
}

impl PropagationSpec {
    pub fn validate(&self) -> Result<(), PropagationError> {
        match self {
            PropagationSpec::Parametric { ref_field_dbuv_m, atten_db_per_km } => {
                if !ref_field_dbuv_m.is_finite() {
                    return Err(PropagationError::Invalid("ref_field_dbuv_m must be finite".into()));
                }
                if !(atten_db_per_km.is_finite() && *atten_db_per_km >= 0.0) {
                    return Err(PropagationError::Invalid("atten_db_per_km must be >= 0".into()));
                }
                Ok(())
            }
            PropagationSpec::Grid { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseLevel {
    Scalar(f64),
    Grid(GridLattice),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub season_label: String,
    /// Noise percentile the level represents, in (0, 1).
    pub percentile: f64,
    pub level: NoiseLevel,
}

impl NoiseSpec {
    pub fn scalar(season_label: impl Into<String>, percentile: f64, noise_dbuv_m: f64) -> Self {
        NoiseSpec { season_label: season_label.into(), percentile, level: NoiseLevel::Scalar(noise_dbuv_m) }
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(PropagationError::Invalid(format!("noise percentile {} outside (0, 1)", self.percentile)));
        }
        if let NoiseLevel::Scalar(v) = self.level {
            if !v.is_finite() {
                return Err(PropagationError::Invalid("noise level must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn noise_at(&self, p: GeoPoint) -> Result<f64, PropagationError> {
        match &self.level {
            NoiseLevel::Scalar(v) => Ok(*v),
            NoiseLevel::Grid(g) => g.interpolate(p),
        }
    }
}

/// Field strength in dB(μV/m) from `tx` at `p`.
pub fn field_strength(tx: &TransmitterStation, p: GeoPoint, spec: &PropagationSpec) -> Result<f64, PropagationError> {
    match spec {
        PropagationSpec::Parametric { ref_field_dbuv_m, atten_db_per_km } => {
            let d_km = geodesic_distance(tx.position, p) / 1000.0;
            if d_km <= 0.0 {
                return Err(PropagationError::ZeroDistance(tx.station_id.clone()));
            }
            Ok(ref_field_dbuv_m + 10.0 * (tx.power_w / 1000.0).log10() - 20.0 * d_km.log10() - atten_db_per_km * d_km)
        }
        PropagationSpec::Grid { fields } => fields
            .get(&tx.station_id)
            .ok_or_else(|| PropagationError::MissingGrid(tx.station_id.clone()))?
            .interpolate(p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr {
    pub snr_db: f64,
    pub snr_linear: f64,
}

impl Snr {
    pub fn from_db(snr_db: f64) -> Self {
        Snr { snr_db, snr_linear: 10f64.powf(snr_db / 10.0) }
    }
}

pub fn snr_at(tx: &TransmitterStation, p: GeoPoint, prop: &PropagationSpec, noise: &NoiseSpec) -> Result<Snr, PropagationError> {
    let field = field_strength(tx, p, prop)?;
    Ok(Snr::from_db(field - noise.noise_at(p)?))
}
