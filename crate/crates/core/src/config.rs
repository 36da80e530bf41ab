//! TOML run configuration.
//!
//! Relative input paths (lattices, params files) resolve against the config
//! file's directory. See `configs/three_station.toml` for an annotated example.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::coverage::{CoverageError, GridSpec, DEFAULT_CONTOUR_LIMIT_M};
use crate::geodesy::GeoPoint;
use crate::ingest::{Detrend, DEFAULT_WINDOW_LEN};
use crate::propagation::{
    GridLattice, NoiseLevel, NoiseSpec, PropagationSpec, TransmitterStation, DEFAULT_ATTEN_DB_PER_KM, DEFAULT_REF_FIELD_DBUV_M,
};
use crate::variance_model::{FitOptions, ModelParams};

pub const DEFAULT_CARRIER_HZ: f64 = 300_000.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {}: {message}", path.display())]
    Syntax { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    snr_threshold_db: f64,
    #[serde(default)]
    seed: u64,
    model: RawModel,
    stations: Vec<RawStation>,
    #[serde(default)]
    propagation: RawPropagation,
    noise: RawNoise,
    grid: GridSpec,
    #[serde(default)]
    fit: RawFit,
    #[serde(default)]
    output: OutputPaths,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    c_m: Option<f64>,
    params_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStation {
    id: String,
    lat_deg: f64,
    lon_deg: f64,
    power_w: f64,
    #[serde(default = "default_carrier")]
    carrier_hz: f64,
    #[serde(default)]
    jitter_m: f64,
}

fn default_carrier() -> f64 {
    DEFAULT_CARRIER_HZ
}

#[derive(Debug, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
enum RawPropagation {
    Parametric {
        #[serde(default = "default_ref_field")]
        ref_field_dbuv_m: f64,
        #[serde(default = "default_atten")]
        atten_db_per_km: f64,
    },
    Grid {
        grids: BTreeMap<String, PathBuf>,
    },
}

fn default_ref_field() -> f64 {
    DEFAULT_REF_FIELD_DBUV_M
}

fn default_atten() -> f64 {
    DEFAULT_ATTEN_DB_PER_KM
}

impl Default for RawPropagation {
    fn default() -> Self {
        RawPropagation::Parametric { ref_field_dbuv_m: DEFAULT_REF_FIELD_DBUV_M, atten_db_per_km: DEFAULT_ATTEN_DB_PER_KM }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    season: String,
    percentile: f64,
    levels: Vec<RawNoiseLevel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoiseLevel {
    season: String,
    percentile: f64,
    noise_dbuv_m: Option<f64>,
    grid: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    #[serde(default = "default_window")]
    window_len: usize,
    #[serde(default)]
    trim_fraction: f64,
    #[serde(default)]
    detrend: Detrend,
    #[serde(default)]
    use_weights: bool,
}

fn default_window() -> usize {
    DEFAULT_WINDOW_LEN
}

impl Default for RawFit {
    fn default() -> Self {
        RawFit { window_len: DEFAULT_WINDOW_LEN, trim_fraction: 0.0, detrend: Detrend::None, use_weights: false }
    }
}

/// Output file names; relative paths resolve against the output directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub fit_report: PathBuf,
    pub params: PathBuf,
    pub coverage_csv: PathBuf,
    pub coverage_pgm: PathBuf,
    pub contour_csv: Option<PathBuf>,
    /// Accuracy mapped to black in the PGM.
    pub accuracy_clip_m: f64,
    /// Accuracy limit for the optional contour; display default, not a requirement.
    pub contour_limit_m: f64,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            fit_report: "fit_report.csv".into(),
            params: "params.toml".into(),
            coverage_csv: "coverage.csv".into(),
            coverage_pgm: "coverage.pgm".into(),
            contour_csv: None,
            accuracy_clip_m: 50.0,
            contour_limit_m: DEFAULT_CONTOUR_LIMIT_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub window_len: usize,
    pub detrend: Detrend,
    pub options: FitOptions,
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub stations: Vec<TransmitterStation>,
    pub params: ModelParams,
    pub propagation: PropagationSpec,
    pub noise: NoiseSpec,
    pub snr_threshold_db: f64,
    pub grid: GridSpec,
    pub fit: FitSettings,
    pub output: OutputPaths,
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            ConfigError::Syntax { message, .. } => ConfigError::Syntax { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax { path: PathBuf::new(), message: e.to_string() })?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };

        let mut ids = BTreeSet::new();
        let mut stations = Vec::with_capacity(raw.stations.len());
        for s in &raw.stations {
            if s.id.trim().is_empty() || s.id.contains(',') {
                return Err(invalid(format!("station id `{}` must be non-empty and contain no commas", s.id)));
            }
            if !ids.insert(s.id.clone()) {
                return Err(invalid(format!("duplicate station id `{}`", s.id)));
            }
            let position = GeoPoint::new(s.lat_deg, s.lon_deg).map_err(|e| invalid(format!("station `{}`: {e}", s.id)))?;
            let st = TransmitterStation {
                station_id: s.id.clone(),
                position,
                power_w: s.power_w,
                carrier_hz: s.carrier_hz,
                jitter_m: s.jitter_m,
            };
            st.validate().map_err(|e| invalid(e.to_string()))?;
            stations.push(st);
        }
        if stations.is_empty() {
            return Err(invalid("no stations configured"));
        }

        let mut params = ModelParams {
            c_m: raw.model.c_m.unwrap_or(f64::NAN),
            jitter_m: stations.iter().map(|s| (s.station_id.clone(), s.jitter_m)).collect(),
        };
        if let Some(pf) = &raw.model.params_file {
            let loaded = ModelParams::load(&resolve(pf)).map_err(invalid)?;
            params.c_m = loaded.c_m;
            params.jitter_m.extend(loaded.jitter_m);
        }
        if params.c_m.is_nan() {
            return Err(invalid("model.c_m or model.params_file is required"));
        }
        params.validate().map_err(|e| invalid(e.to_string()))?;

        match raw.grid.validate() {
            Ok(()) | Err(CoverageError::GridTooLarge { .. }) => {}
            Err(e) => return Err(invalid(e.to_string())),
        }
        let grid = raw.grid;
        let check_cover = |g: &GridLattice, what: &str| {
            if g.covers(grid.lat_min, grid.lat_last(), grid.lon_min, grid.lon_last()) {
                Ok(())
            } else {
                Err(invalid(format!("{what} lattice does not cover the simulation grid")))
            }
        };

        let propagation = match raw.propagation {
            RawPropagation::Parametric { ref_field_dbuv_m, atten_db_per_km } => PropagationSpec::Parametric { ref_field_dbuv_m, atten_db_per_km },
            RawPropagation::Grid { grids } => {
                let mut fields = BTreeMap::new();
                for s in &stations {
                    let p = grids.get(&s.station_id).ok_or_else(|| invalid(format!("no field grid for station `{}`", s.station_id)))?;
                    let g = GridLattice::load(&resolve(p)).map_err(|e| invalid(e.to_string()))?;
                    check_cover(&g, &format!("field grid for `{}`", s.station_id))?;
                    fields.insert(s.station_id.clone(), g);
                }
                PropagationSpec::Grid { fields }
            }
        };
        propagation.validate().map_err(|e| invalid(e.to_string()))?;

        let level = raw
            .noise
            .levels
            .iter()
            .find(|l| l.season == raw.noise.season && (l.percentile - raw.noise.percentile).abs() < 1e-9)
            .ok_or_else(|| invalid(format!("no noise level for season `{}` at percentile {}", raw.noise.season, raw.noise.percentile)))?;
        let level = match (level.noise_dbuv_m, &level.grid) {
            (Some(v), None) => NoiseLevel::Scalar(v),
            (None, Some(p)) => {
                let g = GridLattice::load(&resolve(p)).map_err(|e| invalid(e.to_string()))?;
                check_cover(&g, "noise")?;
                NoiseLevel::Grid(g)
            }
            _ => return Err(invalid("noise level needs exactly one of noise_dbuv_m or grid")),
        };
        let noise = NoiseSpec { season_label: raw.noise.season, percentile: raw.noise.percentile, level };
        noise.validate().map_err(|e| invalid(e.to_string()))?;

        if !raw.snr_threshold_db.is_finite() {
            return Err(invalid("snr_threshold_db must be finite"));
        }
        let min_window = if raw.fit.detrend == Detrend::Linear { 3 } else { 2 };
        if raw.fit.window_len < min_window {
            return Err(invalid(format!("fit.window_len must be >= {min_window}")));
        }
        if !(0.0..0.5).contains(&raw.fit.trim_fraction) {
            return Err(invalid("fit.trim_fraction must be in [0, 0.5)"));
        }
        if !(raw.output.accuracy_clip_m.is_finite() && raw.output.accuracy_clip_m > 0.0) {
            return Err(invalid("output.accuracy_clip_m must be > 0"));
        }

        Ok(RunConfig {
            stations,
            params,
            propagation,
            noise,
            snr_threshold_db: raw.snr_threshold_db,
            grid,
            fit: FitSettings {
                window_len: raw.fit.window_len,
                detrend: raw.fit.detrend,
                options: FitOptions { use_weights: raw.fit.use_weights, trim_fraction: raw.fit.trim_fraction },
            },
            output: raw.output,
            seed: raw.seed,
        })
    }

    pub fn station(&self, id: &str) -> Option<&TransmitterStation> {
        self.stations.iter().find(|s| s.station_id == id)
    }

    pub fn scenario(&self) -> crate::coverage::Scenario<'_> {
        crate::coverage::Scenario {
            stations: &self.stations,
            params: &self.params,
            prop: &self.propagation,
            noise: &self.noise,
            snr_threshold_db: self.snr_threshold_db,
        }
    }
}
