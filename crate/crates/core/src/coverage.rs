//! Coverage sweeps over a plate-carrée lat/lon lattice and their CSV/PGM output.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accuracy::{accuracy_at, AccuracyError, MaskReason};
use crate::geodesy::GeoPoint;
use crate::propagation::{NoiseSpec, PropagationSpec, TransmitterStation};
use crate::variance_model::ModelParams;

pub const COVERAGE_HEADER: &str = "lat_deg,lon_deg,accuracy_m,usable_count,mask";
pub const DEFAULT_MAX_CELLS: usize = 10_000_000;
pub const DEFAULT_STEP_DEG: f64 = 0.05;
/// Display threshold for the optional binary contour; a config default only.
pub const DEFAULT_CONTOUR_LIMIT_M: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("grid has {cells} cells, limit is {limit}")]
    GridTooLarge { cells: usize, limit: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Accuracy(#[from] AccuracyError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: row {row}: {reason}", path.display())]
    Parse { path: PathBuf, row: usize, reason: String },
}

fn default_max_cells() -> usize {
    DEFAULT_MAX_CELLS
}

fn default_step() -> f64 {
    DEFAULT_STEP_DEG
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    #[serde(default = "default_step")]
    pub step_deg: f64,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
}

impl GridSpec {
    fn axis_len(min: f64, max: f64, step: f64) -> usize {
        // tolerance absorbs decimal steps such as 0.05 that are not exact in binary
        ((max - min) / step + 1e-9).floor() as usize + 1
    }

    pub fn n_lat(&self) -> usize {
        Self::axis_len(self.lat_min, self.lat_max, self.step_deg)
    }

    pub fn n_lon(&self) -> usize {
        Self::axis_len(self.lon_min, self.lon_max, self.step_deg)
    }

    pub fn cell_count(&self) -> usize {
        self.n_lat().saturating_mul(self.n_lon())
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat_min + i as f64 * self.step_deg
    }

    pub fn lon(&self, j: usize) -> f64 {
        self.lon_min + j as f64 * self.step_deg
    }

    /// Largest latitude actually on the lattice.
    pub fn lat_last(&self) -> f64 {
        self.lat(self.n_lat() - 1)
    }

    pub fn lon_last(&self) -> f64 {
        self.lon(self.n_lon() - 1)
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        let all_finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.step_deg].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(CoverageError::InvalidGrid("non-finite bound or step".into()));
        }
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return Err(CoverageError::InvalidGrid("min must be below max on both axes".into()));
        }
        if !(self.step_deg > 0.0) {
            return Err(CoverageError::InvalidGrid("step_deg must be > 0".into()));
        }
        if self.lat_min < -90.0 || self.lat_max > 90.0 || self.lon_min < -180.0 || self.lon_max > 180.0 {
            return Err(CoverageError::InvalidGrid("bounds outside valid lat/lon range".into()));
        }
        let cells_f = ((self.lat_max - self.lat_min) / self.step_deg + 1.0) * ((self.lon_max - self.lon_min) / self.step_deg + 1.0);
        if cells_f > self.max_cells as f64 * 1.01 || self.cell_count() > self.max_cells {
            return Err(CoverageError::GridTooLarge { cells: cells_f.min(usize::MAX as f64) as usize, limit: self.max_cells });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCell {
    pub accuracy: Result<f64, MaskReason>,
    pub usable_count: usize,
    /// Per configured station, in station order; `None` on top of a transmitter.
    pub snr_db: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrid {
    pub spec: GridSpec,
    /// Latitude-major: `cells[i * n_lon + j]`.
    pub cells: Vec<CoverageCell>,
}

impl CoverageGrid {
    pub fn cell(&self, i: usize, j: usize) -> &CoverageCell {
        &self.cells[i * self.spec.n_lon() + j]
    }

    pub fn summary(&self) -> CoverageSummary {
        let mut acc: Vec<f64> = self.cells.iter().filter_map(|c| c.accuracy.ok()).collect();
        acc.sort_by(f64::total_cmp);
        let median = match acc.len() {
            0 => None,
            n if n % 2 == 1 => Some(acc[n / 2]),
            n => Some(0.5 * (acc[n / 2 - 1] + acc[n / 2])),
        };
        CoverageSummary { cells_total: self.cells.len(), cells_unmasked: acc.len(), min_accuracy_m: acc.first().copied(), median_accuracy_m: median }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub cells_total: usize,
    pub cells_unmasked: usize,
    pub min_accuracy_m: Option<f64>,
    pub median_accuracy_m: Option<f64>,
}

/// Everything a sweep needs apart from the lattice.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub stations: &'a [TransmitterStation],
    pub params: &'a ModelParams,
    pub prop: &'a PropagationSpec,
    pub noise: &'a NoiseSpec,
    pub snr_threshold_db: f64,
}

impl Scenario<'_> {
    pub fn validate(&self) -> Result<(), CoverageError> {
        if self.stations.len() < 3 {
            return Err(CoverageError::Config(format!("need at least 3 stations, got {}", self.stations.len())));
        }
        let mut seen = BTreeSet::new();
        for s in self.stations {
            s.validate().map_err(|e| CoverageError::Config(e.to_string()))?;
            if !seen.insert(s.station_id.as_str()) {
                return Err(CoverageError::Config(format!("duplicate station id `{}`", s.station_id)));
            }
            if !self.params.jitter_m.contains_key(&s.station_id) {
                return Err(CoverageError::Config(format!("no model parameters for station `{}`", s.station_id)));
            }
        }
        self.params.validate().map_err(|e| CoverageError::Config(e.to_string()))?;
        self.prop.validate().map_err(|e| CoverageError::Config(e.to_string()))?;
        self.noise.validate().map_err(|e| CoverageError::Config(e.to_string()))?;
        if !self.snr_threshold_db.is_finite() {
            return Err(CoverageError::Config("snr_threshold_db must be finite".into()));
        }
        Ok(())
    }

    fn evaluate(&self, p: GeoPoint) -> Result<CoverageCell, AccuracyError> {
        let r = accuracy_at(p, self.stations, self.params, self.prop, self.noise, self.snr_threshold_db)?;
        Ok(CoverageCell {
            accuracy: r.accuracy,
            usable_count: r.usable_count,
            snr_db: r.stations.iter().map(|s| s.snr.map(|x| x.snr_db)).collect(),
        })
    }
}

/// Evaluate every lattice cell. `threads = 0` uses rayon's default pool size.
/// Cells are computed independently and stored by index, so the result does
/// not depend on the thread count.
pub fn compute_coverage(spec: &GridSpec, scenario: &Scenario<'_>, threads: usize) -> Result<CoverageGrid, CoverageError> {
    spec.validate()?;
    scenario.validate()?;
    let n_lon = spec.n_lon();
    let n = spec.cell_count();
    let eval = |idx: usize| {
        let p = GeoPoint { lat_deg: spec.lat(idx / n_lon), lon_deg: spec.lon(idx % n_lon) };
        scenario.evaluate(p)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CoverageError::Config(format!("thread pool: {e}")))?;
    let cells: Result<Vec<CoverageCell>, AccuracyError> = pool.install(|| (0..n).into_par_iter().map(eval).collect());
    Ok(CoverageGrid { spec: *spec, cells: cells? })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CoverageError + '_ {
    move |e| CoverageError::Io { path: path.to_path_buf(), source: e }
}

/// Coverage CSV. Coordinates and accuracy use 6 fractional digits; masked
/// cells leave `accuracy_m` empty and name the reason in `mask`.
pub fn write_coverage_csv(grid: &CoverageGrid, path: &Path) -> Result<(), CoverageError> {
    let mut f = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    writeln!(f, "{COVERAGE_HEADER}").map_err(io_err(path))?;
    let n_lon = grid.spec.n_lon();
    for (idx, cell) in grid.cells.iter().enumerate() {
        let lat = grid.spec.lat(idx / n_lon);
        let lon = grid.spec.lon(idx % n_lon);
        let (acc, mask) = match cell.accuracy {
            Ok(a) => (format!("{a:.6}"), ""),
            Err(m) => (String::new(), m.as_str()),
        };
        writeln!(f, "{lat:.6},{lon:.6},{acc},{},{mask}", cell.usable_count).map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub accuracy: Result<f64, MaskReason>,
    pub usable_count: usize,
}

pub fn read_coverage_csv(path: &Path) -> Result<Vec<CoverageRow>, CoverageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let perr = |row: usize, reason: String| CoverageError::Parse { path: path.to_path_buf(), row, reason };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == COVERAGE_HEADER => {}
        _ => return Err(perr(1, "bad header".into())),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let row = i + 1;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(perr(row, format!("expected 5 columns, found {}", cols.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(row, format!("`{s}` is not a number")));
            let accuracy = match (cols[2], cols[4]) {
                (a, "") => Ok(num(a)?),
                ("", m) => Err(m.parse::<MaskReason>().map_err(|e| perr(row, e))?),
                _ => return Err(perr(row, "both accuracy and mask set".into())),
            };
            Ok(CoverageRow {
                lat_deg: num(cols[0])?,
                lon_deg: num(cols[1])?,
                accuracy,
                usable_count: cols[3].parse().map_err(|_| perr(row, format!("`{}` is not a count", cols[3])))?,
            })
        })
        .collect()
}

/// Gray level for one cell: 0 when masked, otherwise
/// `round_half_up(255 · (1 − min(acc, clip) / clip))`.
pub fn pixel_value(accuracy: Result<f64, MaskReason>, clip_m: f64) -> u8 {
    match accuracy {
        Err(_) => 0,
        Ok(a) => {
            let v = 255.0 * (1.0 - a.min(clip_m) / clip_m);
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        }
    }
}

/// Plain (P2) PGM, maxval 255, northernmost row first.
pub fn write_coverage_pgm(grid: &CoverageGrid, path: &Path, accuracy_clip_m: f64) -> Result<(), CoverageError> {
    if !(accuracy_clip_m.is_finite() && accuracy_clip_m > 0.0) {
        return Err(CoverageError::Config(format!("accuracy_clip_m {accuracy_clip_m} must be > 0")));
    }
    let (n_lat, n_lon) = (grid.spec.n_lat(), grid.spec.n_lon());
    let mut f = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    writeln!(f, "P2\n{n_lon} {n_lat}\n255").map_err(io_err(path))?;
    for i in (0..n_lat).rev() {
        let row: Vec<String> = (0..n_lon).map(|j| pixel_value(grid.cell(i, j).accuracy, accuracy_clip_m).to_string()).collect();
        writeln!(f, "{}", row.join(" ")).map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

/// Cells meeting `accuracy ≤ limit` that touch (4-neighbourhood) a cell that
/// does not, or the lattice edge.
pub fn contour_cells(grid: &CoverageGrid, limit_m: f64) -> Vec<(f64, f64)> {
    let (n_lat, n_lon) = (grid.spec.n_lat(), grid.spec.n_lon());
    let inside = |i: usize, j: usize| matches!(grid.cell(i, j).accuracy, Ok(a) if a <= limit_m);
    let mut out = Vec::new();
    for i in 0..n_lat {
        for j in 0..n_lon {
            if !inside(i, j) {
                continue;
            }
            let edge = i == 0 || j == 0 || i + 1 == n_lat || j + 1 == n_lon;
            if edge || !inside(i - 1, j) || !inside(i + 1, j) || !inside(i, j - 1) || !inside(i, j + 1) {
                out.push((grid.spec.lat(i), grid.spec.lon(j)));
            }
        }
    }
    out
}

pub fn write_contour_csv(grid: &CoverageGrid, path: &Path, limit_m: f64) -> Result<(), CoverageError> {
    let mut f = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    writeln!(f, "lat_deg,lon_deg").map_err(io_err(path))?;
    for (lat, lon) in contour_cells(grid, limit_m) {
        writeln!(f, "{lat:.6},{lon:.6}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(step: f64) -> GridSpec {
        GridSpec { lat_min: 33.0, lat_max: 39.0, lon_min: 124.0, lon_max: 131.0, step_deg: step, max_cells: DEFAULT_MAX_CELLS }
    }

    fn grid_from(accs: &[Result<f64, MaskReason>], n_lat: usize, n_lon: usize) -> CoverageGrid {
        let spec = GridSpec { lat_min: 0.0, lat_max: (n_lat - 1) as f64, lon_min: 0.0, lon_max: (n_lon - 1) as f64, step_deg: 1.0, max_cells: 100 };
        CoverageGrid { spec, cells: accs.iter().map(|&a| CoverageCell { accuracy: a, usable_count: 3, snr_db: vec![] }).collect() }
    }

    #[test]
    fn lattice_dimensions() {
        let s = spec(0.05);
        assert_eq!((s.n_lat(), s.n_lon()), (121, 141));
        let half = spec(0.025);
        assert_eq!((half.n_lat(), half.n_lon()), (241, 281));
        assert_eq!(half.cell_count(), (2 * 120 + 1) * (2 * 140 + 1));
        assert_eq!(s.lat(120), 33.0 + 120.0 * 0.05);
        let uneven = GridSpec { lat_max: 33.12, ..s };
        assert_eq!(uneven.n_lat(), 3);
    }

    #[test]
    fn grid_validation() {
        assert!(spec(0.05).validate().is_ok());
        assert!(matches!(GridSpec { step_deg: 0.0, ..spec(0.05) }.validate(), Err(CoverageError::InvalidGrid(_))));
        assert!(matches!(GridSpec { lat_min: 40.0, ..spec(0.05) }.validate(), Err(CoverageError::InvalidGrid(_))));
        assert!(matches!(GridSpec { max_cells: 1000, ..spec(0.05) }.validate(), Err(CoverageError::GridTooLarge { .. })));
        assert!(matches!(spec(1e-9).validate(), Err(CoverageError::GridTooLarge { .. })));
    }

    #[test]
    fn pixel_formula() {
        assert_eq!(pixel_value(Err(MaskReason::TooFewStations), 20.0), 0);
        assert_eq!(pixel_value(Ok(0.0), 20.0), 255);
        assert_eq!(pixel_value(Ok(10.0), 20.0), 128);
        assert_eq!(pixel_value(Ok(50.0), 20.0), 0);
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let g = grid_from(&[Ok(1.25), Err(MaskReason::TooFewStations), Ok(3.1234567), Err(MaskReason::SingularGeometry)], 2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_coverage_csv(&g, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], COVERAGE_HEADER);
        assert_eq!(lines[1], "0.000000,0.000000,1.250000,3,");
        assert_eq!(lines[2], "0.000000,1.000000,,3,TooFewStations");
        assert_eq!(lines[3], "1.000000,0.000000,3.123457,3,");
        let rows = read_coverage_csv(&path).unwrap();
        assert_eq!(rows[2].accuracy, Ok(3.123457));
        assert_eq!(rows[3].accuracy, Err(MaskReason::SingularGeometry));
        // re-serializing the parsed values reproduces the file
        let reread = grid_from(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>(), 2, 2);
        let path2 = dir.path().join("c2.csv");
        write_coverage_csv(&reread, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn pgm_north_up() {
        let g = grid_from(&[Ok(0.0), Ok(0.0), Err(MaskReason::TooFewStations), Ok(10.0)], 2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        write_coverage_pgm(&g, &path, 20.0).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "P2\n2 2\n255\n0 128\n255 255\n");
        assert!(write_coverage_pgm(&g, &path, 0.0).is_err());
    }

    #[test]
    fn contour_boundary() {
        let ok = Ok(1.0);
        let bad = Ok(50.0);
        let accs = [ok, ok, ok, ok, ok, ok, ok, ok, bad];
        let g = grid_from(&accs, 3, 3);
        let cells = contour_cells(&g, 10.0);
        // every inside cell of a 3x3 touches the edge except the centre, which touches nothing outside
        assert_eq!(cells.len(), 7);
        assert!(!cells.contains(&(1.0, 1.0)));
    }

    #[test]
    fn summary_stats() {
        let g = grid_from(&[Ok(4.0), Err(MaskReason::TooFewStations), Ok(2.0), Ok(3.0)], 2, 2);
        let s = g.summary();
        assert_eq!((s.cells_total, s.cells_unmasked), (4, 3));
        assert_eq!(s.min_accuracy_m, Some(2.0));
        assert_eq!(s.median_accuracy_m, Some(3.0));
    }
}
