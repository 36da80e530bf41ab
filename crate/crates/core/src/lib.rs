//! Simulation toolkit for medium-frequency R-Mode ranging.
//!
//! The crate covers two pipelines:
//!
//! * measurement logs (wrapped CW phase + SNR) → windowed TOA variance samples →
//!   non-negative least-squares fit of the model `σ² = J_i² + C² / SNR`;
//! * transmitter geometry, power and noise → per-point SNR → weighted
//!   least-squares error covariance → 95 % horizontal accuracy, swept over a
//!   lat/lon lattice to produce coverage maps.

pub mod accuracy;
pub mod cli;
pub mod config;
pub mod coverage;
pub mod geodesy;
pub mod ingest;
pub mod nnls;
pub mod propagation;
pub mod synth;
pub mod variance_model;

pub use accuracy::{accuracy95, accuracy_at, covariance, geometry_matrix, ErrorCovariance, GeometrySet, PointAccuracy, MaskReason};
pub use geodesy::{azimuth, geodesic_distance, GeoPoint};
pub use ingest::{PhaseRecord, VarianceSample};
pub use propagation::{NoiseSpec, PropagationSpec, TransmitterStation};
pub use variance_model::{fit_params, predict_sigma2, residual_rss, FitReport, ModelParams};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Carrier wavelength in meters for a frequency in hertz.
pub fn wavelength_m(carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT / carrier_hz
}
