//! Synthetic receiver logs and variance samples drawn from known model
//! parameters. Test tooling for exercising the fitting pipeline.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{PhaseRecord, VarianceSample};
use crate::variance_model::{predict_sigma2, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub windows_per_station: usize,
    pub window_len: usize,
    pub snr_min_linear: f64,
    pub snr_max_linear: f64,
    /// Each window's phase pattern has sample variance exactly equal to the model.
    pub noiseless: bool,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { windows_per_station: 200, window_len: 100, snr_min_linear: 1.0, snr_max_linear: 1000.0, noiseless: false, seed: 0 }
    }
}

/// `n` SNR values log-spaced over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)).collect()
}

fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}

/// Phase logs for each `(station_id, wavelength_m)`; stations are written
/// one after another with 1 s sample spacing.
pub fn phase_records(params: &ModelParams, stations: &[(String, f64)], opts: &SynthOptions) -> Result<Vec<PhaseRecord>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.window_len;
    let snrs = log_spaced(opts.snr_min_linear, opts.snr_max_linear, opts.windows_per_station);
    // zero-mean ±1 pattern with unit unbiased variance
    let pattern: Vec<f64> = {
        let raw: Vec<f64> = (0..n).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = raw.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = raw.iter().map(|v| v - m).collect();
        let var = centered.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0);
        centered.iter().map(|v| v / var.sqrt()).collect()
    };
    let mut out = Vec::with_capacity(stations.len() * snrs.len() * n);
    for (id, wavelength) in stations {
        let phase_scale = TAU / wavelength;
        let offset: f64 = rng.random_range(-PI..PI);
        let mut t = 0.0;
        for &snr in &snrs {
            let sigma_phase = predict_sigma2(params, id, snr)?.sqrt() * phase_scale;
            let snr_db = 10.0 * snr.log10();
            let normal = Normal::new(0.0, sigma_phase.max(f64::MIN_POSITIVE)).expect("finite sigma");
            for p in &pattern {
                let dev = if opts.noiseless { sigma_phase * p } else { normal.sample(&mut rng) };
                out.push(PhaseRecord { timestamp: t, station_id: id.clone(), phase_rad: wrap(offset + dev), snr_db });
                t += 1.0;
            }
        }
    }
    Ok(out)
}

/// Variance samples at log-spaced SNR with multiplicative Gaussian noise of
/// relative standard deviation `rel_noise` (0 for exact model values).
pub fn variance_samples(params: &ModelParams, n_per_station: usize, snr_lo: f64, snr_hi: f64, rel_noise: f64, seed: u64) -> Result<Vec<VarianceSample>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snrs = log_spaced(snr_lo, snr_hi, n_per_station);
    let mut out = Vec::with_capacity(params.jitter_m.len() * n_per_station);
    for id in params.jitter_m.keys() {
        for &snr in &snrs {
            let clean = predict_sigma2(params, id, snr)?;
            let v = if rel_noise > 0.0 {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                (clean * (1.0 + rel_noise * e)).max(0.0)
            } else {
                clean
            };
            out.push(VarianceSample::new(id.clone(), snr, v));
        }
    }
    Ok(out)
}
