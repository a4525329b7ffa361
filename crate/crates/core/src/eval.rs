//! Two-target success criterion and Monte Carlo sweeps.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fft_profile, hqs_profile, music_profile, omp_profile, Dictionary, HqsConfig, RangeProfile};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::network::DssrNet;
use crate::seed;
use crate::signal::{apply_awgn, synthesize_echo, Echo, RadarConfig, Scene, Target};

/// Trials are generated and estimated in chunks of this size. Fixed so that
/// batched inference sees the same batches whatever the worker count.
pub const TRIAL_CHUNK: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessCriteria {
    pub peak_frac: f64,
    pub tol_bins: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self {
            peak_frac: 0.1,
            tol_bins: 4.0,
        }
    }
}

impl SuccessCriteria {
    /// Tolerance of a quarter Rayleigh cell on the grid of `cfg`.
    pub fn for_grid(cfg: &RadarConfig) -> Self {
        Self {
            tol_bins: (cfg.oversample as f64 / 4.0).max(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_frac > 0.0 && self.peak_frac < 1.0) {
            return Err(Error::invalid("SuccessCriteria", format!("peak_frac {} outside (0, 1)", self.peak_frac)));
        }
        if !(self.tol_bins >= 1.0) {
            return Err(Error::invalid("SuccessCriteria", format!("tol_bins {} < 1", self.tol_bins)));
        }
        Ok(())
    }
}

/// Strict interior local maxima above `peak_frac · max`.
pub fn extract_peaks(values: &[f64], criteria: &SuccessCriteria) -> Vec<(usize, f64)> {
    if values.len() < 3 {
        return Vec::new();
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = criteria.peak_frac * max;
    (1..values.len() - 1)
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1] && values[i] > floor)
        .map(|i| (i, values[i]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoTargetTrial {
    pub rho_d: f64,
    pub snr_db: f64,
    pub amp2: f64,
    pub seed: u64,
    /// Exact grid positions; the second is generally fractional.
    pub true_bins: (f64, f64),
    pub phases: (f64, f64),
}

impl TwoTargetTrial {
    /// First target on a grid bin at least two Rayleigh cells from either
    /// edge, second `rho_d` cells above it, independent uniform phases.
    pub fn draw(rho_d: f64, snr_db: f64, amp2: f64, seed: u64, cfg: &RadarConfig) -> Result<Self> {
        if !(rho_d > 0.0 && rho_d.is_finite()) {
            return Err(Error::invalid("TwoTargetTrial", format!("rho_d {rho_d} must be > 0")));
        }
        if !(amp2 > 0.0) {
            return Err(Error::invalid("TwoTargetTrial", format!("amp2 {amp2} must be > 0")));
        }
        let g = cfg.oversample as f64;
        let m = cfg.grid_size();
        let sep = rho_d * g;
        let lo = 2 * cfg.oversample;
        let hi = m as f64 - 2.0 * g - sep;
        if hi < lo as f64 {
            return Err(Error::invalid("TwoTargetTrial", format!("rho_d {rho_d} too large for the grid")));
        }
        let mut rng = seed::rng(seed, "trial-scene", 0);
        let first = rng.random_range(lo..=hi.floor() as usize) as f64;
        let tau = std::f64::consts::TAU;
        let phases = (rng.random_range(0.0..tau), rng.random_range(0.0..tau));
        Ok(Self {
            rho_d,
            snr_db,
            amp2,
            seed,
            true_bins: (first, first + sep),
            phases,
        })
    }

    pub fn scene(&self, cfg: &RadarConfig) -> Result<Scene> {
        let m = cfg.grid_size() as f64;
        Ok(Scene::new(vec![
            Target::new(1.0, self.true_bins.0 / m, self.phases.0)?,
            Target::new(self.amp2, self.true_bins.1 / m, self.phases.1)?,
        ]))
    }

    pub fn echo(&self, cfg: &RadarConfig) -> Result<Echo> {
        let clean = synthesize_echo(&self.scene(cfg)?, cfg)?;
        apply_awgn(&clean, self.snr_db, self.seed)
    }
}

/// Exactly two peaks, separation within tolerance of the true separation,
/// and each peak within tolerance of its own true position.
pub fn check_success(values: &[f64], trial: &TwoTargetTrial, criteria: &SuccessCriteria) -> bool {
    let peaks = extract_peaks(values, criteria);
    if peaks.len() != 2 {
        return false;
    }
    let tol = criteria.tol_bins;
    let (p1, p2) = (peaks[0].0 as f64, peaks[1].0 as f64);
    let (t1, t2) = if trial.true_bins.0 <= trial.true_bins.1 {
        trial.true_bins
    } else {
        (trial.true_bins.1, trial.true_bins.0)
    };
    let separation_ok = ((p2 - p1) - (t2 - t1)).abs() < tol;
    // For two points on a line the order-preserving pairing is the
    // minimum-cost assignment.
    let position_ok = (p1 - t1).abs() < tol && (p2 - t2).abs() < tol;
    separation_ok && position_ok
}

/// A named estimator ready to run.
#[derive(Clone)]
pub enum Estimator {
    Fft,
    Music { subarray_len: Option<usize> },
    Omp,
    Hqs(HqsConfig),
    Dssr(Arc<DssrNet<f32>>),
}

impl std::fmt::Debug for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Estimator {
    pub const NAMES: [&'static str; 5] = ["fft", "music", "omp", "hqs", "dssr"];

    /// `checkpoint` is required for `dssr` and ignored otherwise.
    pub fn from_name(name: &str, checkpoint_path: Option<&Path>, hqs: HqsConfig) -> Result<Self> {
        Ok(match name {
            "fft" => Estimator::Fft,
            "music" => Estimator::Music { subarray_len: None },
            "omp" => Estimator::Omp,
            "hqs" => Estimator::Hqs(hqs),
            "dssr" => {
                let path = checkpoint_path.ok_or_else(|| {
                    Error::invalid("estimator", "dssr needs a trained checkpoint (pass --checkpoint <file>)")
                })?;
                Estimator::Dssr(Arc::new(checkpoint::load(path)?))
            }
            other => return Err(Error::UnknownEstimator(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Fft => "fft",
            Estimator::Music { .. } => "music",
            Estimator::Omp => "omp",
            Estimator::Hqs(_) => "hqs",
            Estimator::Dssr(_) => "dssr",
        }
    }

    /// Profiles for a batch of echoes. `n_targets` is the model order given
    /// to MUSIC and OMP.
    pub fn profiles(
        &self,
        echoes: &[Echo],
        n_targets: usize,
        cfg: &RadarConfig,
        dict: &Dictionary,
    ) -> Result<Vec<RangeProfile>> {
        match self {
            Estimator::Dssr(net) => {
                let arch = net.arch();
                if arch.n_samples != cfg.n_samples || arch.oversample != cfg.oversample {
                    return Err(Error::invalid(
                        "dssr",
                        format!(
                            "checkpoint was built for N={}, G={} but the radar config has N={}, G={}",
                            arch.n_samples, arch.oversample, cfg.n_samples, cfg.oversample
                        ),
                    ));
                }
                net.infer(echoes)
            }
            _ => echoes.iter().map(|e| self.profile(e, n_targets, cfg, dict)).collect(),
        }
    }

    fn profile(&self, echo: &Echo, n_targets: usize, cfg: &RadarConfig, dict: &Dictionary) -> Result<RangeProfile> {
        match self {
            Estimator::Fft => fft_profile(echo, cfg),
            Estimator::Music { subarray_len } => {
                music_profile(echo, cfg, n_targets, subarray_len.unwrap_or(cfg.n_samples / 2))
            }
            Estimator::Omp => omp_profile(echo, dict, n_targets),
            Estimator::Hqs(h) => hqs_profile(echo, dict, h),
            Estimator::Dssr(_) => Ok(self.profiles(std::slice::from_ref(echo), n_targets, cfg, dict)?.remove(0)),
        }
    }
}

/// Everything a Monte Carlo run needs besides the estimator.
#[derive(Clone, Debug)]
pub struct Harness {
    pub cfg: RadarConfig,
    pub criteria: SuccessCriteria,
    pub dict: Arc<Dictionary>,
    pub base_seed: u64,
}

impl Harness {
    pub fn new(cfg: RadarConfig, criteria: SuccessCriteria, base_seed: u64) -> Result<Self> {
        criteria.validate()?;
        Ok(Self {
            dict: Arc::new(Dictionary::new(&cfg)?),
            cfg,
            criteria,
            base_seed,
        })
    }

    /// Seed of trial `index` in sweep cell `cell`.
    pub fn trial_seed(&self, cell: u64, index: u64) -> u64 {
        seed::derive(seed::derive(self.base_seed, "cell", cell), "trial", index)
    }

    pub fn run_trial(&self, estimator: &Estimator, trial: &TwoTargetTrial) -> Result<bool> {
        let echo = trial.echo(&self.cfg)?;
        let profile = estimator.profiles(std::slice::from_ref(&echo), 2, &self.cfg, &self.dict)?;
        Ok(check_success(&profile[0].values, trial, &self.criteria))
    }

    /// Per-trial outcomes for one cell, in trial order.
    pub fn outcomes(
        &self,
        estimator: &Estimator,
        cell: u64,
        rho_d: f64,
        snr_db: f64,
        amp2: f64,
        trials: usize,
    ) -> Result<Vec<bool>> {
        let indices: Vec<u64> = (0..trials as u64).collect();
        let chunks: Vec<Vec<bool>> = indices
            .par_chunks(TRIAL_CHUNK)
            .map(|chunk| -> Result<Vec<bool>> {
                let drawn = chunk
                    .iter()
                    .map(|&i| TwoTargetTrial::draw(rho_d, snr_db, amp2, self.trial_seed(cell, i), &self.cfg))
                    .collect::<Result<Vec<_>>>()?;
                let echoes = drawn.iter().map(|t| t.echo(&self.cfg)).collect::<Result<Vec<_>>>()?;
                let profiles = estimator.profiles(&echoes, 2, &self.cfg, &self.dict)?;
                Ok(drawn
                    .iter()
                    .zip(&profiles)
                    .map(|(t, p)| check_success(&p.values, t, &self.criteria))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn success_rate(
        &self,
        estimator: &Estimator,
        cell: u64,
        rho_d: f64,
        snr_db: f64,
        amp2: f64,
        trials: usize,
    ) -> Result<f64> {
        if trials == 0 {
            return Err(Error::invalid("success_rate", "trials must be >= 1"));
        }
        let hits = self
            .outcomes(estimator, cell, rho_d, snr_db, amp2, trials)?
            .into_iter()
            .filter(|&b| b)
            .count();
        Ok(hits as f64 / trials as f64)
    }

    /// Success rates over an SNR × ρ_d grid; `rates[i][j]` is at
    /// `(snr_axis[i], rho_axis[j])`.
    pub fn phase_map(
        &self,
        estimator: &Estimator,
        snr_axis: &[f64],
        rho_axis: &[f64],
        amp2: f64,
        trials: usize,
    ) -> Result<PhaseMap> {
        let mut rates = Vec::with_capacity(snr_axis.len());
        for (i, &snr) in snr_axis.iter().enumerate() {
            let row = rho_axis
                .iter()
                .enumerate()
                .map(|(j, &rho)| self.success_rate(estimator, (i * rho_axis.len() + j) as u64, rho, snr, amp2, trials))
                .collect::<Result<Vec<_>>>()?;
            rates.push(row);
        }
        Ok(PhaseMap {
            estimator: estimator.name().to_string(),
            snr_axis: snr_axis.to_vec(),
            rho_axis: rho_axis.to_vec(),
            amp2,
            rates,
            trials,
            seed: self.base_seed,
            config_hash: self.config_hash(),
        })
    }

    pub fn sweep_curve(&self, estimator: &Estimator, sweep: &Sweep, trials: usize) -> Result<Curve> {
        let points = sweep
            .points()
            .into_iter()
            .enumerate()
            .map(|(cell, (rho_d, snr_db, amp2))| {
                Ok(CurvePoint {
                    snr_db,
                    rho_d,
                    amp2,
                    rate: self.success_rate(estimator, cell as u64, rho_d, snr_db, amp2, trials)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Curve {
            estimator: estimator.name().to_string(),
            trials,
            seed: self.base_seed,
            config_hash: self.config_hash(),
            points,
        })
    }

    /// FNV-1a of the radar config and criteria as JSON.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(&(&self.cfg, &self.criteria)).expect("plain data serializes");
        format!("{:016x}", checkpoint::checksum(json.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMap {
    pub estimator: String,
    pub snr_axis: Vec<f64>,
    pub rho_axis: Vec<f64>,
    pub amp2: f64,
    pub rates: Vec<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl PhaseMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,rho_d,rate\n");
        for (i, snr) in self.snr_axis.iter().enumerate() {
            for (j, rho) in self.rho_axis.iter().enumerate() {
                let _ = writeln!(out, "{snr},{rho},{}", self.rates[i][j]);
            }
        }
        out
    }
}

/// One swept variable with the other two held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "vary", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    Snr { rho_d: f64, amp2: f64, values: Vec<f64> },
    Rho { snr_db: f64, amp2: f64, values: Vec<f64> },
    Amp { rho_d: f64, snr_db: f64, values: Vec<f64> },
}

impl Sweep {
    /// `(rho_d, snr_db, amp2)` per grid value.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        match self {
            Sweep::Snr { rho_d, amp2, values } => values.iter().map(|&s| (*rho_d, s, *amp2)).collect(),
            Sweep::Rho { snr_db, amp2, values } => values.iter().map(|&r| (r, *snr_db, *amp2)).collect(),
            Sweep::Amp { rho_d, snr_db, values } => values.iter().map(|&a| (*rho_d, *snr_db, a)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub snr_db: f64,
    pub rho_d: f64,
    pub amp2: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub estimator: String,
    pub trials: usize,
    pub seed: u64,
    pub config_hash: String,
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,rho_d,amp2,rate\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.snr_db, p.rho_d, p.amp2, p.rate);
        }
        out
    }
}

/// `lo, lo + step, …` up to and including `hi` (within rounding).
pub fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| lo + i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaks_examples() {
        let c = SuccessCriteria::default();
        assert_eq!(extract_peaks(&[0.0, 1.0, 0.0, 0.05, 0.0], &c), vec![(1, 1.0)]);
        assert!(extract_peaks(&[2.0; 10], &c).is_empty());
        assert!(extract_peaks(&[3.0, 1.0, 2.0], &c).is_empty());
    }

    #[test]
    fn success_examples() {
        let c = SuccessCriteria::default();
        let trial = TwoTargetTrial {
            rho_d: 1.0,
            snr_db: f64::INFINITY,
            amp2: 1.0,
            seed: 0,
            true_bins: (100.0, 116.0),
            phases: (0.0, 0.0),
        };
        let spikes = |bins: &[usize]| {
            let mut v = vec![0.0; 256];
            for &b in bins {
                v[b] = 1.0;
            }
            v
        };
        assert!(check_success(&spikes(&[100, 116]), &trial, &c));
        assert!(!check_success(&spikes(&[100, 116, 200]), &trial, &c));
        assert!(!check_success(&spikes(&[105, 121]), &trial, &c));
        assert!(check_success(&spikes(&[103, 119]), &trial, &c));
    }

    #[test]
    fn trial_geometry() {
        let cfg = RadarConfig::default();
        for s in 0..200 {
            let t = TwoTargetTrial::draw(0.8, 10.0, 1.0, s, &cfg).unwrap();
            assert!(t.true_bins.0 >= 32.0 && t.true_bins.1 <= 1024.0 - 32.0);
            assert_eq!(t.true_bins.0.fract(), 0.0);
            assert!((t.true_bins.1 - t.true_bins.0 - 12.8).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_is_inclusive() {
        assert_eq!(axis(0.0, 26.0, 2.0).len(), 14);
        assert_eq!(axis(0.5, 1.1, 0.1).len(), 7);
    }
}
