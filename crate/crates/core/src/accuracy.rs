//! Weighted least-squares position error covariance and 95 % horizontal
//! accuracy from user-to-transmitter azimuths and TOA variances.
//!
//! State order is (north, east, clock): with azimuths measured clockwise from
//! north, each geometry row is `[cos θ, sin θ, 1]`.

use std::fmt;

use thiserror::Error;

use crate::geodesy::{azimuth, GeoPoint};
use crate::propagation::{snr_at, NoiseSpec, PropagationError, PropagationSpec, Snr, TransmitterStation};
use crate::variance_model::{predict_sigma2, ModelError, ModelParams};

/// Normal matrices with 2-norm condition number above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum AccuracyError {
    #[error("at least 3 stations required, got {0}")]
    TooFewStations(usize),
    #[error("{azimuths} azimuths but {variances} variances")]
    LengthMismatch { azimuths: usize, variances: usize },
    #[error("variance {0} must be finite and > 0")]
    NonpositiveVariance(f64),
    #[error("azimuth {0} is not finite")]
    NonFiniteAzimuth(f64),
    #[error("singular geometry (condition number {0:.3e})")]
    SingularGeometry(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySet {
    pub azimuths_rad: Vec<f64>,
}

impl GeometrySet {
    pub fn new(azimuths_rad: Vec<f64>) -> Result<Self, AccuracyError> {
        if azimuths_rad.len() < 3 {
            return Err(AccuracyError::TooFewStations(azimuths_rad.len()));
        }
        if let Some(&bad) = azimuths_rad.iter().find(|a| !a.is_finite()) {
            return Err(AccuracyError::NonFiniteAzimuth(bad));
        }
        Ok(GeometrySet { azimuths_rad })
    }

    pub fn len(&self) -> usize {
        self.azimuths_rad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuths_rad.is_empty()
    }
}

/// 3×3 position/clock covariance in m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCovariance {
    pub k: [[f64; 3]; 3],
}

impl ErrorCovariance {
    pub fn horizontal(&self) -> [[f64; 2]; 2] {
        [[self.k[0][0], self.k[0][1]], [self.k[1][0], self.k[1][1]]]
    }
}

/// Rows `[cos θ_i, sin θ_i, 1]`.
pub fn geometry_matrix(g: &GeometrySet) -> Result<Vec<[f64; 3]>, AccuracyError> {
    if g.len() < 3 {
        return Err(AccuracyError::TooFewStations(g.len()));
    }
    Ok(g.azimuths_rad.iter().map(|t| [t.cos(), t.sin(), 1.0]).collect())
}

/// Eigenvalues of a symmetric 3×3 matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut a = *m;
    for _ in 0..50 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let diag = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2);
        if off <= 1e-32 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    [a[0][0], a[1][1], a[2][2]]
}

/// Largest power of two not above `x` (normal, positive `x`).
fn binade(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & 0x7ff0_0000_0000_0000)
}

/// `K = (Gᵀ R⁻¹ G)⁻¹` with `R = diag(sigma2)`.
///
/// Works on the whitened rows `g_i / σ_i` through a Householder QR, so the
/// rounding error grows with the condition number of the whitened matrix
/// rather than its square. Variances are first divided by the power of two of
/// the largest one, which keeps `K(2ᵏ σ²) = 2ᵏ K(σ²)` exact.
pub fn covariance(g: &GeometrySet, sigma2: &[f64]) -> Result<ErrorCovariance, AccuracyError> {
    let rows = geometry_matrix(g)?;
    if sigma2.len() != rows.len() {
        return Err(AccuracyError::LengthMismatch { azimuths: rows.len(), variances: sigma2.len() });
    }
    if let Some(&s2) = sigma2.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(AccuracyError::NonpositiveVariance(s2));
    }
    let scale = match binade(sigma2.iter().copied().fold(0.0, f64::max)) {
        b if b > 0.0 => b,
        _ => 1.0,
    };
    let mut a: Vec<[f64; 3]> = rows
        .iter()
        .zip(sigma2)
        .map(|(row, &s2)| {
            let w = (s2 / scale).sqrt();
            [row[0] / w, row[1] / w, row[2] / w]
        })
        .collect();

    let mut r = [[0.0; 3]; 3];
    for k in 0..3 {
        let norm = a[k..].iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(AccuracyError::SingularGeometry(f64::INFINITY));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k..].iter().map(|row| row[k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for c in k..3 {
            let dot: f64 = v.iter().zip(&a[k..]).map(|(vi, row)| vi * row[c]).sum();
            let f = 2.0 * dot / vv;
            for (vi, row) in v.iter().zip(a[k..].iter_mut()) {
                row[c] -= f * vi;
            }
        }
        r[k][k..3].copy_from_slice(&a[k][k..3]);
    }

    // condition of GᵀR⁻¹G is that of RᵀR
    let mut normal = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            normal[i][j] = (0..3).map(|k| r[k][i] * r[k][j]).sum();
        }
    }
    let eig = symmetric_eigenvalues(&normal);
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond.is_finite() && cond <= MAX_CONDITION) {
        return Err(AccuracyError::SingularGeometry(cond));
    }

    // K = R⁻¹ R⁻ᵀ
    let mut inv = [[0.0; 3]; 3];
    for c in 0..3 {
        for i in (0..=c).rev() {
            let mut x = if i == c { 1.0 } else { 0.0 };
            for k in i + 1..=c {
                x -= r[i][k] * inv[k][c];
            }
            inv[i][c] = x / r[i][i];
        }
    }
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = scale * (0..3).map(|m| inv[i][m] * inv[j][m]).sum::<f64>();
        }
    }
    Ok(ErrorCovariance { k })
}

/// `2 √(K₁₁ + K₂₂)` in meters.
pub fn accuracy95(k: &ErrorCovariance) -> f64 {
    2.0 * (k.k[0][0] + k.k[1][1]).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskReason {
    TooFewStations,
    SingularGeometry,
}

impl MaskReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskReason::TooFewStations => "TooFewStations",
            MaskReason::SingularGeometry => "SingularGeometry",
        }
    }
}

impl fmt::Display for MaskReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MaskReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TooFewStations" => Ok(MaskReason::TooFewStations),
            "SingularGeometry" => Ok(MaskReason::SingularGeometry),
            other => Err(format!("unknown mask reason `{other}`")),
        }
    }
}

/// Per-station detail behind a point evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StationEval {
    pub station_id: String,
    /// `None` when the point coincides with the transmitter.
    pub snr: Option<Snr>,
    pub sigma2_m2: Option<f64>,
    pub azimuth_rad: Option<f64>,
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointAccuracy {
    pub accuracy: Result<f64, MaskReason>,
    pub usable_count: usize,
    pub stations: Vec<StationEval>,
}

/// Evaluate 95 % accuracy at `p`. Stations below `snr_threshold_db` are
/// dropped; fewer than 3 survivors or a singular geometry mask the point.
pub fn accuracy_at(
    p: GeoPoint,
    stations: &[TransmitterStation],
    params: &ModelParams,
    prop: &PropagationSpec,
    noise: &NoiseSpec,
    snr_threshold_db: f64,
) -> Result<PointAccuracy, AccuracyError> {
    let mut evals = Vec::with_capacity(stations.len());
    for tx in stations {
        let snr = match snr_at(tx, p, prop, noise) {
            Ok(s) => Some(s),
            // azimuth is undefined on top of a transmitter
            Err(PropagationError::ZeroDistance(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let azimuth_rad = azimuth(p, tx.position).ok();
        let sigma2_m2 = snr.map(|s| predict_sigma2(params, &tx.station_id, s.snr_linear)).transpose()?;
        let usable = matches!((snr, azimuth_rad, sigma2_m2), (Some(s), Some(_), Some(v)) if s.snr_db >= snr_threshold_db && v > 0.0);
        evals.push(StationEval { station_id: tx.station_id.clone(), snr, sigma2_m2, azimuth_rad, usable });
    }
    let usable: Vec<&StationEval> = evals.iter().filter(|e| e.usable).collect();
    let usable_count = usable.len();
    let accuracy = if usable_count < 3 {
        Err(MaskReason::TooFewStations)
    } else {
        let geom = GeometrySet::new(usable.iter().map(|e| e.azimuth_rad.unwrap()).collect())?;
        let sigma2: Vec<f64> = usable.iter().map(|e| e.sigma2_m2.unwrap()).collect();
        match covariance(&geom, &sigma2) {
            Ok(k) => Ok(accuracy95(&k)),
            Err(AccuracyError::SingularGeometry(_)) => Err(MaskReason::SingularGeometry),
            Err(e) => return Err(e),
        }
    };
    Ok(PointAccuracy { accuracy, usable_count, stations: evals })
}
