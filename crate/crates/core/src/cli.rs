//! `rmode` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure while writing outputs, 2 validation
//! or parse error, 3 fit degeneracy or too few samples, 4 resource limits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::accuracy::{accuracy_at, AccuracyError};
use crate::config::RunConfig;
use crate::coverage::{compute_coverage, write_contour_csv, write_coverage_csv, write_coverage_pgm, CoverageError};
use crate::geodesy::GeoPoint;
use crate::ingest::{self, IngestError, VarianceSample};
use crate::synth::{phase_records, SynthOptions};
use crate::variance_model::{fit_params_with, ModelError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "rmode", version, about = "MF R-Mode TOA variance fitting and accuracy coverage simulation")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Worker threads for coverage sweeps; 0 picks automatically.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files (default: current directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit station jitters and C from measurement logs or variance-sample files.
    Fit {
        #[arg(required = false)]
        files: Vec<PathBuf>,
    },
    /// 95 % accuracy at one point.
    Accuracy {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
    },
    /// Sweep the configured grid and write coverage CSV and PGM.
    Coverage,
    /// Write synthetic phase logs from the configured model parameters.
    #[command(hide = true)]
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        windows: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        snr_min_db: f64,
        #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
        snr_max_db: f64,
        #[arg(long)]
        noiseless: bool,
    },
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let code = match e {
            IngestError::InsufficientData { .. } => EXIT_FIT,
            _ => EXIT_INVALID,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::InsufficientSamples { .. } | ModelError::DegenerateDesign(_) | ModelError::Solver(_) => EXIT_FIT,
            _ => EXIT_INVALID,
        };
        let name = match e {
            ModelError::InsufficientSamples { .. } => "InsufficientSamples: ",
            ModelError::DegenerateDesign(_) => "DegenerateDesign: ",
            _ => "",
        };
        CliError::new(code, format!("{name}{e}"))
    }
}

impl From<CoverageError> for CliError {
    fn from(e: CoverageError) -> Self {
        let code = match e {
            CoverageError::GridTooLarge { .. } => EXIT_RESOURCE,
            CoverageError::Io { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<AccuracyError> for CliError {
    fn from(e: AccuracyError) -> Self {
        CliError::new(EXIT_INVALID, e.to_string())
    }
}

fn out_path(cli: &Cli, p: &Path) -> PathBuf {
    match &cli.out_dir {
        Some(d) if !p.is_absolute() => d.join(p),
        _ => p.to_path_buf(),
    }
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

/// Run a parsed command; returns what should go to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let config_path = cli.config.as_ref().ok_or_else(|| CliError::new(EXIT_INVALID, "--config <path> is required"))?;
    let cfg = RunConfig::load(config_path).map_err(|e| CliError::new(EXIT_INVALID, e.to_string()))?;
    if let Some(d) = &cli.out_dir {
        std::fs::create_dir_all(d).map_err(write_err(d))?;
    }
    match &cli.command {
        Command::Fit { files } => cmd_fit(cli, &cfg, files),
        Command::Accuracy { lat, lon } => cmd_accuracy(cli, &cfg, *lat, *lon),
        Command::Coverage => cmd_coverage(cli, &cfg),
        Command::Synth { out, windows, snr_min_db, snr_max_db, noiseless } => {
            let opts = SynthOptions {
                windows_per_station: *windows,
                window_len: cfg.fit.window_len,
                snr_min_linear: 10f64.powf(snr_min_db / 10.0),
                snr_max_linear: 10f64.powf(snr_max_db / 10.0),
                noiseless: *noiseless,
                seed: cli.seed.unwrap_or(cfg.seed),
            };
            if *windows == 0 || !(snr_max_db >= snr_min_db) {
                return Err(CliError::new(EXIT_INVALID, "need windows > 0 and snr_max_db >= snr_min_db"));
            }
            let stations: Vec<(String, f64)> = cfg.stations.iter().map(|s| (s.station_id.clone(), s.wavelength_m())).collect();
            let recs = phase_records(&cfg.params, &stations, &opts)?;
            let path = out_path(cli, out);
            ingest::write_measurements(&path, &recs)?;
            Ok(format!("wrote {} records to {}\n", recs.len(), path.display()))
        }
    }
}

fn cmd_fit(cli: &Cli, cfg: &RunConfig, files: &[PathBuf]) -> Result<String, CliError> {
    let mut samples: Vec<VarianceSample> = Vec::new();
    for f in files {
        if !f.exists() {
            return Err(CliError::new(EXIT_INVALID, format!("file not found: {}", f.display())));
        }
        let context = |e: IngestError| {
            let mut c = CliError::from(e);
            c.message = format!("{}: {}", f.display(), c.message);
            c
        };
        if ingest::is_samples_file(f).map_err(context)? {
            samples.extend(ingest::parse_samples_file(f).map_err(context)?);
            continue;
        }
        let records = ingest::parse_measurement_file(f).map_err(context)?;
        if let Some(r) = records.iter().find(|r| cfg.station(&r.station_id).is_none()) {
            return Err(CliError::new(EXIT_INVALID, format!("{}: station `{}` not in config", f.display(), r.station_id)));
        }
        let wavelength = |id: &str| cfg.station(id).map(|s| s.wavelength_m()).unwrap_or(f64::NAN);
        samples.extend(ingest::samples_by_station(&records, cfg.fit.window_len, cfg.fit.detrend, wavelength).map_err(context)?);
    }
    let (params, report) = fit_params_with(&samples, &cfg.fit.options)?;

    let report_path = out_path(cli, &cfg.output.fit_report);
    report.write_csv(&report_path).map_err(write_err(&report_path))?;
    let params_path = out_path(cli, &cfg.output.params);
    params.save(&params_path).map_err(write_err(&params_path))?;

    let mut out = String::new();
    match cli.format {
        Format::Csv => out.push_str(&report.to_csv()),
        Format::Text => {
            for s in &report.stations {
                let _ = writeln!(out, "J[{}] = {:.6} m  ({} samples)", s.station_id, s.jitter_m, s.n_samples);
            }
            let _ = writeln!(out, "C = {:.6} m", params.c_m);
            let _ = writeln!(out, "RSS = {:.6e} m^4", report.rss);
            if report.n_trimmed > 0 {
                let _ = writeln!(out, "trimmed {} samples", report.n_trimmed);
            }
        }
    }
    Ok(out)
}

fn cmd_accuracy(cli: &Cli, cfg: &RunConfig, lat: f64, lon: f64) -> Result<String, CliError> {
    let p = GeoPoint::new(lat, lon).map_err(|e| CliError::new(EXIT_INVALID, e.to_string()))?;
    let r = accuracy_at(p, &cfg.stations, &cfg.params, &cfg.propagation, &cfg.noise, cfg.snr_threshold_db)?;
    let fmt_opt = |v: Option<f64>, digits: usize| v.map(|x| format!("{x:.digits$}")).unwrap_or_default();
    let mut out = String::new();
    match cli.format {
        Format::Csv => {
            out.push_str("station_id,snr_db,sigma2_m2,azimuth_deg,usable\n");
            for s in &r.stations {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    s.station_id,
                    fmt_opt(s.snr.map(|x| x.snr_db), 6),
                    fmt_opt(s.sigma2_m2, 6),
                    fmt_opt(s.azimuth_rad.map(f64::to_degrees), 6),
                    s.usable
                );
            }
            match r.accuracy {
                Ok(a) => {
                    let _ = writeln!(out, "accuracy,{a:.6}");
                }
                Err(m) => {
                    let _ = writeln!(out, "masked,{m}");
                }
            }
        }
        Format::Text => {
            let _ = writeln!(out, "point {lat:.6} {lon:.6}  threshold {} dB", cfg.snr_threshold_db);
            let _ = writeln!(out, "{:<12} {:>10} {:>14} {:>12} {:>7}", "station", "snr_db", "sigma2_m2", "azimuth_deg", "usable");
            for s in &r.stations {
                let _ = writeln!(
                    out,
                    "{:<12} {:>10} {:>14} {:>12} {:>7}",
                    s.station_id,
                    fmt_opt(s.snr.map(|x| x.snr_db), 2),
                    fmt_opt(s.sigma2_m2, 4),
                    fmt_opt(s.azimuth_rad.map(f64::to_degrees), 2),
                    if s.usable { "yes" } else { "no" }
                );
            }
            match r.accuracy {
                Ok(a) => {
                    let _ = writeln!(out, "95% horizontal accuracy: {a:.6} m ({} stations)", r.usable_count);
                }
                Err(m) => {
                    let _ = writeln!(out, "masked: {m} ({} usable stations)", r.usable_count);
                }
            }
        }
    }
    Ok(out)
}

fn cmd_coverage(cli: &Cli, cfg: &RunConfig) -> Result<String, CliError> {
    let started = Instant::now();
    let grid = compute_coverage(&cfg.grid, &cfg.scenario(), cli.threads)?;
    let csv_path = out_path(cli, &cfg.output.coverage_csv);
    write_coverage_csv(&grid, &csv_path)?;
    let pgm_path = out_path(cli, &cfg.output.coverage_pgm);
    write_coverage_pgm(&grid, &pgm_path, cfg.output.accuracy_clip_m)?;
    if let Some(c) = &cfg.output.contour_csv {
        write_contour_csv(&grid, &out_path(cli, c), cfg.output.contour_limit_m)?;
    }
    let s = grid.summary();
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    let mut out = String::new();
    match cli.format {
        Format::Csv => {
            out.push_str("cells_total,cells_unmasked,min_accuracy_m,median_accuracy_m\n");
            let _ = writeln!(out, "{},{},{},{}", s.cells_total, s.cells_unmasked, fmt_opt(s.min_accuracy_m), fmt_opt(s.median_accuracy_m));
        }
        Format::Text => {
            let _ = writeln!(out, "grid {} x {} ({} cells), {} unmasked", grid.spec.n_lat(), grid.spec.n_lon(), s.cells_total, s.cells_unmasked);
            let _ = writeln!(out, "min accuracy {} m, median {} m", fmt_opt(s.min_accuracy_m), fmt_opt(s.median_accuracy_m));
            let _ = writeln!(out, "wrote {} and {} in {:.2?}", csv_path.display(), pgm_path.display(), started.elapsed());
        }
    }
    Ok(out)
}

/// Parse arguments, run, print, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
