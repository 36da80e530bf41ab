//! TOA variance model `σ_i² = J_i² + C² / SNR_i` and its estimation.
//!
//! The model is linear in `a_i = J_i²` and `b = C²`, so the fit is a
//! non-negative least-squares problem with one indicator column per station
//! and one shared `1/SNR` column. SNR is a linear power ratio throughout.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::VarianceSample;
use crate::nnls::{nnls, DenseMatrix, NnlsError};

/// Station id used for the footer row holding `C` in fit reports.
pub const FIT_REPORT_C_ROW: &str = "(C)";
pub const FIT_REPORT_HEADER: &str = "station_id,jitter_m,n_samples,rss_contribution";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("SNR must be positive, got {0}")]
    NonpositiveSnr(f64),
    #[error("insufficient samples{}", station.as_ref().map(|s| format!(" for station `{s}`")).unwrap_or_default())]
    InsufficientSamples { station: Option<String> },
    #[error("degenerate design: all samples for station `{0}` share one SNR")]
    DegenerateDesign(String),
    #[error("invalid sample for station `{station}`: {reason}")]
    InvalidSample { station: String, reason: String },
    #[error("invalid fit option: {0}")]
    InvalidOption(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Solver(#[from] NnlsError),
}

/// Per-station jitter `J_i` and shared constant `C`, both in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub c_m: f64,
    pub jitter_m: BTreeMap<String, f64>,
}

impl ModelParams {
    pub fn new(c_m: f64, jitter_m: impl IntoIterator<Item = (String, f64)>) -> Result<Self, ModelError> {
        let p = ModelParams { c_m, jitter_m: jitter_m.into_iter().collect() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.c_m.is_finite() && self.c_m >= 0.0) {
            return Err(ModelError::InvalidParams(format!("C = {} must be finite and >= 0", self.c_m)));
        }
        for (id, j) in &self.jitter_m {
            if !(j.is_finite() && *j >= 0.0) {
                return Err(ModelError::InvalidParams(format!("jitter for `{id}` = {j} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let p: ModelParams = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        p.validate().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = toml::to_string(self).map_err(std::io::Error::other)?;
        fs::write(path, text)
    }
}

/// `J_i² + C² / snr_linear`, in m².
pub fn predict_sigma2(params: &ModelParams, station: &str, snr_linear: f64) -> Result<f64, ModelError> {
    let j = params.jitter_m.get(station).ok_or_else(|| ModelError::UnknownStation(station.to_string()))?;
    if !(snr_linear > 0.0) {
        return Err(ModelError::NonpositiveSnr(snr_linear));
    }
    Ok(j * j + params.c_m * params.c_m / snr_linear)
}

/// Unweighted `Σ (σ²_obs − σ²_model)²`, in m⁴.
pub fn residual_rss(params: &ModelParams, samples: &[VarianceSample]) -> Result<f64, ModelError> {
    samples.iter().try_fold(0.0, |acc, s| {
        let r = s.toa_var_m2 - predict_sigma2(params, &s.station_id, s.snr_linear)?;
        Ok(acc + r * r)
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOptions {
    /// Scale each squared residual by the sample's `weight`.
    pub use_weights: bool,
    /// Fraction of samples dropped from each end of every station's residual
    /// distribution before a second fit. `0` disables trimming.
    pub trim_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationFit {
    pub station_id: String,
    pub jitter_m: f64,
    pub n_samples: usize,
    pub rss_contribution: f64,
    /// Observed minus predicted, in the order samples were used (sorted by SNR).
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub c_m: f64,
    pub rss: f64,
    pub stations: Vec<StationFit>,
    pub n_trimmed: usize,
}

impl FitReport {
    pub fn n_samples(&self) -> usize {
        self.stations.iter().map(|s| s.n_samples).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(FIT_REPORT_HEADER);
        out.push('\n');
        for s in &self.stations {
            out.push_str(&format!("{},{:.6},{},{:.6}\n", s.station_id, s.jitter_m, s.n_samples, s.rss_contribution));
        }
        out.push_str(&format!("{FIT_REPORT_C_ROW},{:.6},{},{:.6}\n", self.c_m, self.n_samples(), self.rss));
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())
    }
}

type Grouped<'a> = BTreeMap<&'a str, Vec<&'a VarianceSample>>;

fn group_and_validate(samples: &[VarianceSample]) -> Result<Grouped<'_>, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::InsufficientSamples { station: None });
    }
    let mut groups: Grouped = BTreeMap::new();
    for s in samples {
        let bad = |reason: &str| ModelError::InvalidSample { station: s.station_id.clone(), reason: reason.to_string() };
        if !(s.snr_linear.is_finite() && s.snr_linear > 0.0) {
            return Err(bad("snr_linear must be finite and > 0"));
        }
        if !(s.toa_var_m2.is_finite() && s.toa_var_m2 >= 0.0) {
            return Err(bad("toa_var_m2 must be finite and >= 0"));
        }
        if !(s.weight.is_finite() && s.weight > 0.0) {
            return Err(bad("weight must be finite and > 0"));
        }
        groups.entry(s.station_id.as_str()).or_default().push(s);
    }
    for (id, group) in groups.iter_mut() {
        if group.len() < 2 {
            return Err(ModelError::InsufficientSamples { station: Some(id.to_string()) });
        }
        // canonical order makes the fit independent of input ordering
        group.sort_by(|a, b| {
            a.snr_linear
                .total_cmp(&b.snr_linear)
                .then(a.toa_var_m2.total_cmp(&b.toa_var_m2))
                .then(a.weight.total_cmp(&b.weight))
        });
        let lo = group.first().unwrap().snr_linear;
        let hi = group.last().unwrap().snr_linear;
        if hi - lo <= 1e-12 * hi {
            return Err(ModelError::DegenerateDesign(id.to_string()));
        }
    }
    Ok(groups)
}

fn solve(groups: &Grouped, use_weights: bool) -> Result<(ModelParams, FitReport), ModelError> {
    let n_st = groups.len();
    let m: usize = groups.values().map(Vec::len).sum();
    let mut a = DenseMatrix::zeros(m, n_st + 1);
    let mut y = Vec::with_capacity(m);
    let mut row = 0;
    for (col, group) in groups.values().enumerate() {
        for s in group {
            let w = if use_weights { s.weight.sqrt() } else { 1.0 };
            a.set(row, col, w);
            a.set(row, n_st, w / s.snr_linear);
            y.push(w * s.toa_var_m2);
            row += 1;
        }
    }
    let sol = nnls(&a, &y)?;
    let c_m = sol.x[n_st].sqrt();
    let jitter_m: BTreeMap<String, f64> = groups.keys().zip(&sol.x).map(|(id, a_i)| (id.to_string(), a_i.sqrt())).collect();
    let params = ModelParams { c_m, jitter_m };

    let mut stations = Vec::with_capacity(n_st);
    let mut rss = 0.0;
    for ((id, group), a_i) in groups.iter().zip(&sol.x) {
        let residuals: Vec<f64> = group.iter().map(|s| s.toa_var_m2 - (a_i + sol.x[n_st] / s.snr_linear)).collect();
        let contrib: f64 = group
            .iter()
            .zip(&residuals)
            .map(|(s, r)| if use_weights { s.weight * r * r } else { r * r })
            .sum();
        rss += contrib;
        stations.push(StationFit {
            station_id: id.to_string(),
            jitter_m: a_i.sqrt(),
            n_samples: group.len(),
            rss_contribution: contrib,
            residuals,
        });
    }
    Ok((params, FitReport { c_m, rss, stations, n_trimmed: 0 }))
}

/// Joint fit of all station jitters and the shared `C` (unweighted, no trimming).
pub fn fit_params(samples: &[VarianceSample]) -> Result<(ModelParams, FitReport), ModelError> {
    fit_params_with(samples, &FitOptions::default())
}

pub fn fit_params_with(samples: &[VarianceSample], opts: &FitOptions) -> Result<(ModelParams, FitReport), ModelError> {
    if !(0.0..0.5).contains(&opts.trim_fraction) {
        return Err(ModelError::InvalidOption(format!("trim_fraction {} outside [0, 0.5)", opts.trim_fraction)));
    }
    let groups = group_and_validate(samples)?;
    let (params, report) = solve(&groups, opts.use_weights)?;
    if opts.trim_fraction == 0.0 {
        return Ok((params, report));
    }

    let mut kept: Vec<VarianceSample> = Vec::with_capacity(samples.len());
    let mut n_trimmed = 0;
    for (group, fit) in groups.values().zip(&report.stations) {
        let k = (opts.trim_fraction * group.len() as f64).floor() as usize;
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.sort_by(|&i, &j| fit.residuals[i].total_cmp(&fit.residuals[j]).then(i.cmp(&j)));
        kept.extend(order[k..group.len() - k].iter().map(|&i| group[i].clone()));
        n_trimmed += 2 * k;
    }
    let regrouped = group_and_validate(&kept)?;
    let (params, mut report) = solve(&regrouped, opts.use_weights)?;
    report.n_trimmed = n_trimmed;
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(j: &[(&str, f64)], c: f64) -> ModelParams {
        ModelParams::new(c, j.iter().map(|(k, v)| (k.to_string(), *v))).unwrap()
    }

    fn synth(p: &ModelParams, n: usize) -> Vec<VarianceSample> {
        let mut out = Vec::new();
        for id in p.jitter_m.keys() {
            for k in 0..n {
                let snr = 10f64.powf(3.0 * k as f64 / (n - 1) as f64);
                out.push(VarianceSample::new(id.clone(), snr, predict_sigma2(p, id, snr).unwrap()));
            }
        }
        out
    }

    #[test]
    fn predict_examples() {
        let p = params(&[("Chungju", 1.41), ("Palmi", 0.0)], 22.15);
        assert!((predict_sigma2(&p, "Chungju", 100.0).unwrap() - 6.8943).abs() < 1e-4);
        assert!((predict_sigma2(&p, "Palmi", 1.0).unwrap() - 490.62).abs() < 0.01);
        assert!(predict_sigma2(&p, "Palmi", 1e300).unwrap() < 1e-290);
        assert_eq!(predict_sigma2(&p, "Nowhere", 1.0), Err(ModelError::UnknownStation("Nowhere".into())));
        assert_eq!(predict_sigma2(&p, "Palmi", 0.0), Err(ModelError::NonpositiveSnr(0.0)));
    }

    #[test]
    fn negative_params_rejected() {
        assert!(ModelParams::new(-1.0, []).is_err());
        assert!(ModelParams::new(1.0, [("A".to_string(), -0.1)]).is_err());
    }

    #[test]
    fn single_station_exact() {
        let s: Vec<_> = [1.0, 2.0, 5.0, 10.0, 50.0]
            .iter()
            .map(|&snr| VarianceSample::new("A", snr, 5.0 + 100.0 / snr))
            .collect();
        let (p, rep) = fit_params(&s).unwrap();
        assert!((p.jitter_m["A"] - 5f64.sqrt()).abs() < 1e-9);
        assert!((p.c_m - 10.0).abs() < 1e-9);
        assert!(rep.rss < 1e-18);
    }

    #[test]
    fn below_curve_gives_zero_jitter() {
        // unconstrained intercept is -3; the constrained optimum pins J = 0
        let s: Vec<_> = [1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&snr| VarianceSample::new("A", snr, -3.0 + 400.0 / snr))
            .filter(|s| s.toa_var_m2 >= 0.0)
            .collect();
        let (p, _) = fit_params(&s).unwrap();
        assert_eq!(p.jitter_m["A"], 0.0);
        assert!(p.c_m > 0.0);
    }

    #[test]
    fn reference_values_round_trip() {
        let truth = params(&[("Eocheong", 0.0), ("Chungju", 1.41), ("Palmi", 0.0)], 22.15);
        let (p, rep) = fit_params(&synth(&truth, 50)).unwrap();
        assert_eq!(p.jitter_m["Eocheong"], 0.0);
        assert_eq!(p.jitter_m["Palmi"], 0.0);
        assert!((p.jitter_m["Chungju"] / 1.41 - 1.0).abs() < 1e-6);
        assert!((p.c_m / 22.15 - 1.0).abs() < 1e-6);
        assert_eq!(rep.n_samples(), 150);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(fit_params(&[]), Err(ModelError::InsufficientSamples { station: None }));
        let one = vec![VarianceSample::new("A", 1.0, 1.0)];
        assert_eq!(fit_params(&one), Err(ModelError::InsufficientSamples { station: Some("A".into()) }));
        let same = vec![VarianceSample::new("A", 3.0, 1.0), VarianceSample::new("A", 3.0, 2.0)];
        assert_eq!(fit_params(&same), Err(ModelError::DegenerateDesign("A".into())));
        let neg = vec![VarianceSample::new("A", 3.0, -1.0), VarianceSample::new("A", 4.0, 2.0)];
        assert!(matches!(fit_params(&neg), Err(ModelError::InvalidSample { .. })));
    }

    #[test]
    fn rss_examples() {
        let p = params(&[("A", 1.0)], 10.0);
        let mut s = synth(&p, 10);
        assert!(residual_rss(&p, &s).unwrap() < 1e-20);
        s[3].toa_var_m2 += 1.0;
        assert!((residual_rss(&p, &s).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fitted_rss_not_beaten_by_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = params(&[("A", 0.5), ("B", 2.0)], 20.0);
        let s: Vec<_> = synth(&truth, 40)
            .into_iter()
            .map(|mut x| {
                x.toa_var_m2 *= 1.0 + 0.1 * rng.random_range(-1.0..1.0);
                x
            })
            .collect();
        let (p, rep) = fit_params(&s).unwrap();
        let best = residual_rss(&p, &s).unwrap();
        assert!((best - rep.rss).abs() <= 1e-9 * best);
        for _ in 0..100 {
            let mut q = p.clone();
            q.c_m = (q.c_m + rng.random_range(-0.5..0.5)).max(0.0);
            for v in q.jitter_m.values_mut() {
                *v = (*v + rng.random_range(-0.2..0.2)).max(0.0);
            }
            assert!(residual_rss(&q, &s).unwrap() >= best * (1.0 - 1e-12));
        }
    }

    #[test]
    fn weights_change_fit_only_when_enabled() {
        let mut s: Vec<_> = [1.0, 2.0, 4.0, 8.0].iter().map(|&snr| VarianceSample::new("A", snr, 1.0 + 4.0 / snr)).collect();
        s[0].toa_var_m2 += 2.0;
        s[0].weight = 1e-6;
        let (plain, _) = fit_params(&s).unwrap();
        let (weighted, _) = fit_params_with(&s, &FitOptions { use_weights: true, trim_fraction: 0.0 }).unwrap();
        assert!((weighted.c_m - 2.0).abs() < 1e-3);
        assert!((plain.c_m - 2.0).abs() > 1e-2);
    }

    #[test]
    fn trimming_drops_outliers() {
        let truth = params(&[("A", 1.0)], 10.0);
        let mut s = synth(&truth, 20);
        s[5].toa_var_m2 += 500.0;
        let (trimmed, rep) = fit_params_with(&s, &FitOptions { use_weights: false, trim_fraction: 0.05 }).unwrap();
        assert_eq!(rep.n_trimmed, 2);
        assert_eq!(rep.n_samples(), 18);
        assert!((trimmed.c_m - 10.0).abs() < 1e-6);
        assert!(fit_params_with(&s, &FitOptions { use_weights: false, trim_fraction: 0.5 }).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let truth = params(&[("A", 1.0), ("B", 0.0)], 10.0);
        let (_, rep) = fit_params(&synth(&truth, 5)).unwrap();
        let csv = rep.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], FIT_REPORT_HEADER);
        assert!(lines[1].starts_with("A,1.000000,5,"));
        assert!(lines[2].starts_with("B,0.000000,5,"));
        assert!(lines[3].starts_with("(C),10.000000,10,"));
    }

    #[test]
    fn params_toml_round_trip() {
        let p = params(&[("A", 1.25), ("B", 0.0)], 22.15);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        p.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), p);
    }

    /// RSS as a function of the raw (J², C²) parameter vector.
    fn rss_raw(x: &[f64], ids: &[String], s: &[VarianceSample]) -> f64 {
        let n = ids.len();
        s.iter()
            .map(|v| {
                let i = ids.iter().position(|id| *id == v.station_id).unwrap();
                (v.toa_var_m2 - x[i] - x[n] / v.snr_linear).powi(2)
            })
            .sum()
    }

    fn noisy_problem(seed: u64) -> Vec<VarianceSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for id in ["A", "B", "C"] {
            let j2: f64 = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..4.0) };
            let c2: f64 = 490.0;
            for _ in 0..rng.random_range(3..30) {
                let snr = 10f64.powf(rng.random_range(0.0..3.0));
                let v = (j2 + c2 / snr) * (1.0 + 0.3 * rng.random_range(-1.0..1.0)) - rng.random_range(0.0..1.0);
                out.push(VarianceSample::new(id, snr, v.max(0.0)));
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kkt_conditions_hold(seed in any::<u64>()) {
            let s = noisy_problem(seed);
            let (p, rep) = fit_params(&s).unwrap();
            let ids: Vec<String> = p.jitter_m.keys().cloned().collect();
            let mut x: Vec<f64> = ids.iter().map(|id| p.jitter_m[id].powi(2)).collect();
            x.push(p.c_m.powi(2));
            let scale = rep.rss.max(1.0);
            for k in 0..x.len() {
                // central difference of a quadratic is exact up to rounding
                let h = 1e-3;
                let mut up = x.clone();
                up[k] += h;
                let mut dn = x.clone();
                dn[k] -= h;
                let grad = (rss_raw(&up, &ids, &s) - rss_raw(&dn, &ids, &s)) / (2.0 * h);
                if x[k] > 0.0 {
                    prop_assert!(grad.abs() <= 1e-6 * scale, "inactive grad {} at {}", grad, k);
                } else {
                    prop_assert!(grad >= -1e-6 * scale, "active grad {} at {}", grad, k);
                }
            }
        }

        #[test]
        fn permutation_invariant(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let s = noisy_problem(seed);
            let mut t = s.clone();
            t.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            prop_assert_eq!(fit_params(&s).unwrap().0, fit_params(&t).unwrap().0);
        }

        #[test]
        fn single_station_matches_grid_search(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j2 = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..3.0) };
            let s: Vec<_> = (0..12)
                .map(|_| {
                    let snr = 10f64.powf(rng.random_range(0.0..2.5));
                    let v: f64 = (j2 + 100.0 / snr) * (1.0 + 0.2 * rng.random_range(-1.0..1.0)) - 0.5;
                    VarianceSample::new("A", snr, v.max(0.0))
                })
                .collect();
            let (p, _) = fit_params(&s).unwrap();
            let fitted = residual_rss(&p, &s).unwrap();
            // coarse-to-fine grid over J >= 0, C >= 0
            let (mut jc, mut cc, mut span_j, mut span_c) = (1.5, 10.0, 1.5, 10.0);
            let mut best = f64::INFINITY;
            for _ in 0..12 {
                let mut arg = (jc, cc);
                for a in 0..=40 {
                    for b in 0..=40 {
                        let j = (jc - span_j + span_j * a as f64 / 20.0).max(0.0);
                        let c = (cc - span_c + span_c * b as f64 / 20.0).max(0.0);
                        let q = ModelParams::new(c, [("A".to_string(), j)]).unwrap();
                        let r = residual_rss(&q, &s).unwrap();
                        if r < best {
                            best = r;
                            arg = (j, c);
                        }
                    }
                }
                jc = arg.0;
                cc = arg.1;
                span_j /= 4.0;
                span_c /= 4.0;
            }
            prop_assert!(fitted <= best * (1.0 + 1e-9) + 1e-12, "fit {} grid {}", fitted, best);
        }

        #[test]
        fn predict_monotone_in_snr(c in 0.1..50.0f64, j in 0.0..5.0f64, s1 in 0.01..1e4f64, k in 1.001..10.0f64) {
            let p = params(&[("A", j)], c);
            prop_assert!(predict_sigma2(&p, "A", s1 * k).unwrap() < predict_sigma2(&p, "A", s1).unwrap());
            let flat = params(&[("A", j)], 0.0);
            prop_assert_eq!(predict_sigma2(&flat, "A", s1).unwrap(), predict_sigma2(&flat, "A", s1 * k).unwrap());
        }
    }
}
