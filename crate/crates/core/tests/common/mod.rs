#![allow(dead_code)]

use std::f64::consts::TAU;

use rmode_sim::geodesy::EARTH_RADIUS_M;
use rmode_sim::{GeoPoint, ModelParams, NoiseSpec, PropagationSpec, TransmitterStation};

/// Point reached from `a` along initial bearing `brg` after `meters`.
pub fn destination(a: GeoPoint, brg: f64, meters: f64) -> GeoPoint {
    let ang = meters / EARTH_RADIUS_M;
    let (la, lo) = (a.lat_deg.to_radians(), a.lon_deg.to_radians());
    let la2 = (la.sin() * ang.cos() + la.cos() * ang.sin() * brg.cos()).asin();
    let lo2 = lo + (brg.sin() * ang.sin() * la.cos()).atan2(ang.cos() - la.sin() * la2.sin());
    GeoPoint { lat_deg: la2.to_degrees(), lon_deg: lo2.to_degrees() }
}

pub fn station(id: &str, position: GeoPoint, power_w: f64, jitter_m: f64) -> TransmitterStation {
    TransmitterStation { station_id: id.into(), position, power_w, carrier_hz: 300e3, jitter_m }
}

pub fn params_for(stations: &[TransmitterStation], c_m: f64) -> ModelParams {
    ModelParams::new(c_m, stations.iter().map(|s| (s.station_id.clone(), s.jitter_m))).unwrap()
}

/// Three equal-power stations at bearings 0°, 120°, 240° and range `range_m` from `center`.
pub fn equiangular_stations(center: GeoPoint, range_m: f64) -> Vec<TransmitterStation> {
    (0..3)
        .map(|k| station(&format!("S{k}"), destination(center, k as f64 * TAU / 3.0, range_m), 300.0, 0.0))
        .collect()
}

pub fn three_station_stations() -> Vec<TransmitterStation> {
    vec![
        station("Eocheong", GeoPoint { lat_deg: 36.12, lon_deg: 125.98 }, 300.0, 0.0),
        station("Palmi", GeoPoint { lat_deg: 37.36, lon_deg: 126.51 }, 300.0, 0.0),
        station("Chungju", GeoPoint { lat_deg: 36.99, lon_deg: 127.93 }, 500.0, 1.41),
    ]
}

pub fn default_prop() -> PropagationSpec {
    PropagationSpec::default()
}

pub fn averaged_noise(level: f64) -> NoiseSpec {
    NoiseSpec::scalar("Averaged", 0.95, level)
}

/// Path of the shipped example config.
pub fn three_station_config() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/three_station.toml")
}
