//! Spherical-earth distances and bearings.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius used for every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("azimuth undefined for coincident points")]
    CoincidentPoints,
}

/// Geodetic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    /// Validated constructor.
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat_deg, lon_deg };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(GeoError::InvalidLatitude(self.lat_deg));
        }
        if !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(GeoError::InvalidLongitude(self.lon_deg));
        }
        Ok(())
    }

    fn radians(&self) -> (f64, f64) {
        (self.lat_deg.to_radians(), self.lon_deg.to_radians())
    }
}

/// Great-circle distance in meters (haversine).
pub fn geodesic_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, lam1) = a.radians();
    let (phi2, lam2) = b.radians();
    let dphi = phi2 - phi1;
    let dlam = lam2 - lam1;
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlam / 2.0).sin().powi(2);
    // clamp guards asin against h creeping past 1 near antipodes
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial bearing from `user` towards `tx`, clockwise from true north, in `[0, 2π)`.
pub fn azimuth(user: GeoPoint, tx: GeoPoint) -> Result<f64, GeoError> {
    if user.lat_deg == tx.lat_deg && user.lon_deg == tx.lon_deg {
        return Err(GeoError::CoincidentPoints);
    }
    let (phi1, lam1) = user.radians();
    let (phi2, lam2) = tx.radians();
    let dlam = lam2 - lam1;
    let y = dlam.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlam.cos();
    if x == 0.0 && y == 0.0 {
        // same point expressed with a different longitude at a pole
        return Err(GeoError::CoincidentPoints);
    }
    let theta = y.atan2(x);
    let wrapped = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    Ok(if wrapped >= TAU { 0.0 } else { wrapped })
}

/// Normalize an angle to `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wrap an angle difference into `(-π, π]`.
pub fn wrap_pi(delta: f64) -> f64 {
    let mut d = delta.rem_euclid(TAU);
    if d > PI {
        d -= TAU;
    }
    d
}
