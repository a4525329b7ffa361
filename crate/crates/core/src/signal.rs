//! Echo synthesis, noise injection, training-set generation and
//! Gaussian-blurred label construction.
//!
//! Frequencies are normalized: a target at range `R` with sampling interval
//! `Δf` sits at `u = 2ΔfR/c ∈ [0, 1)`, and the echo is a sum of complex
//! sinusoids `σ·exp(j(φ − 2πnu))` under a rectangular spectral window. The
//! carrier phase is folded into `φ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_OVERSAMPLE: usize = 16;
pub const MAX_TRAINING_TARGETS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarConfig {
    pub n_samples: usize,
    pub oversample: usize,
    pub rng_seed: u64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            oversample: DEFAULT_OVERSAMPLE,
            rng_seed: 0,
        }
    }
}

impl RadarConfig {
    pub fn new(n_samples: usize, oversample: usize, rng_seed: u64) -> Result<Self> {
        let cfg = Self {
            n_samples,
            oversample,
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 8 {
            return Err(Error::invalid("RadarConfig", format!("n_samples {} < 8", self.n_samples)));
        }
        if self.oversample < 1 {
            return Err(Error::invalid("RadarConfig", "oversample must be >= 1"));
        }
        Ok(())
    }

    /// `M = oversample · n_samples`.
    pub fn grid_size(&self) -> usize {
        self.oversample * self.n_samples
    }

    /// Default label width `0.2 / N` in normalized frequency.
    pub fn default_label_sigma(&self) -> f64 {
        0.2 / self.n_samples as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub amplitude: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Target {
    pub fn new(amplitude: f64, freq: f64, phase: f64) -> Result<Self> {
        let t = Self {
            amplitude,
            freq,
            phase,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("Target", format!("amplitude {} must be > 0", self.amplitude)));
        }
        if !(0.0..1.0).contains(&self.freq) {
            return Err(Error::invalid("Target", format!("freq {} outside [0, 1)", self.freq)));
        }
        if !(0.0..2.0 * PI).contains(&self.phase) {
            return Err(Error::invalid("Target", format!("phase {} outside [0, 2π)", self.phase)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub targets: Vec<Target>,
}

impl Scene {
    pub fn new(targets: Vec<Target>) -> Self {
        Self { targets }
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::EmptyScene);
        }
        self.targets.iter().try_for_each(Target::validate)
    }
}

/// Length-N frequency-domain measurement. `snr_db` is `+inf` when noise-free.
#[derive(Clone, Debug, PartialEq)]
pub struct Echo {
    pub samples: Vec<Complex64>,
    pub snr_db: f64,
}

impl Echo {
    pub fn noise_free(samples: Vec<Complex64>) -> Self {
        Self {
            samples,
            snr_db: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean per-sample power `(1/N) Σ |y[n]|²`.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    pub values: Vec<f64>,
}

/// `y[n] = Σ_p σ_p · exp(j(φ_p − 2π n u_p))`, `n = 0..N`.
pub fn synthesize_echo(scene: &Scene, cfg: &RadarConfig) -> Result<Echo> {
    scene.validate()?;
    cfg.validate()?;
    let samples = (0..cfg.n_samples)
        .map(|n| {
            scene
                .targets
                .iter()
                .map(|t| Complex64::from_polar(t.amplitude, t.phase - 2.0 * PI * n as f64 * t.freq))
                .sum()
        })
        .collect();
    Ok(Echo::noise_free(samples))
}

/// Adds circular complex Gaussian noise with per-sample variance
/// `P_sig / 10^(snr_db/10)`. `snr_db = +inf` returns the echo unchanged.
pub fn apply_awgn(echo: &Echo, snr_db: f64, seed: u64) -> Result<Echo> {
    if echo.snr_db.is_finite() {
        return Err(Error::DoubleNoise(echo.snr_db));
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("apply_awgn", "snr_db is NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(echo.clone());
    }
    let variance = echo.power() / 10f64.powf(snr_db / 10.0);
    let per_part = (variance / 2.0).sqrt();
    let mut rng = seed::rng(seed, "awgn", 0);
    let samples = echo
        .samples
        .iter()
        .map(|&s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s + Complex64::new(re, im) * per_part
        })
        .collect();
    Ok(Echo { samples, snr_db })
}

/// Sum of per-target Gaussian kernels on the `M`-bin grid, each scaled so
/// that its largest grid sample equals one.
pub fn make_label(scene: &Scene, cfg: &RadarConfig, sigma_norm: f64) -> Result<LabelVector> {
    scene.validate()?;
    cfg.validate()?;
    if !(sigma_norm > 0.0 && sigma_norm.is_finite()) {
        return Err(Error::invalid("make_label", format!("sigma {sigma_norm} must be > 0")));
    }
    let m = cfg.grid_size();
    let mf = m as f64;
    let denom = 2.0 * sigma_norm * sigma_norm;
    let mut values = vec![0.0; m];
    for t in &scene.targets {
        let nearest = ((t.freq * mf).round() as usize).min(m - 1);
        let d0 = nearest as f64 / mf - t.freq;
        for (i, v) in values.iter_mut().enumerate() {
            let d = i as f64 / mf - t.freq;
            *v += (-(d * d - d0 * d0) / denom).exp();
        }
    }
    Ok(LabelVector { values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub echo: Echo,
    pub label: LabelVector,
    pub scene: Scene,
}

/// Random training scene: `P ~ U{1..10}`, first position `U(0,1)`, later
/// spacings `|N(0, 3/N)|` wrapped modulo 1, `σ ~ U(0.1, 1)`, `φ ~ U(0, 2π)`.
pub fn random_training_scene<R: Rng>(rng: &mut R, n_samples: usize) -> Scene {
    let p = rng.random_range(1..=MAX_TRAINING_TARGETS);
    let spacing = Normal::new(0.0, (3.0 / n_samples as f64).sqrt()).expect("finite std");
    let mut freq: f64 = rng.random_range(0.0..1.0);
    let mut targets = Vec::with_capacity(p);
    for i in 0..p {
        if i > 0 {
            let step: f64 = spacing.sample(rng);
            freq = (freq + step.abs()).rem_euclid(1.0);
        }
        targets.push(Target {
            amplitude: rng.random_range(0.1..1.0),
            freq,
            phase: rng.random_range(0.0..2.0 * PI),
        });
    }
    Scene { targets }
}

/// One training item; depends only on `(seed, index)`.
pub fn generate_item(index: u64, cfg: &RadarConfig, seed: u64) -> Result<DatasetItem> {
    let mut rng = seed::rng(seed, "dataset-item", index);
    let scene = random_training_scene(&mut rng, cfg.n_samples);
    let snr_db: f64 = rng.random_range(0.0..50.0);
    let clean = synthesize_echo(&scene, cfg)?;
    let echo = apply_awgn(&clean, snr_db, seed::derive(seed, "dataset-noise", index))?;
    let label = make_label(&scene, cfg, cfg.default_label_sigma())?;
    Ok(DatasetItem { echo, label, scene })
}

/// Items are generated in parallel on the current rayon pool; the result is
/// identical for any number of workers.
pub fn generate_dataset(n_items: usize, cfg: &RadarConfig, seed: u64) -> Result<Vec<DatasetItem>> {
    if n_items == 0 {
        return Err(Error::invalid("generate_dataset", "n_items must be >= 1"));
    }
    cfg.validate()?;
    (0..n_items as u64)
        .into_par_iter()
        .map(|i| generate_item(i, cfg, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: usize) -> RadarConfig {
        RadarConfig::new(n, 16, 0).unwrap()
    }

    fn one(amplitude: f64, freq: f64, phase: f64) -> Scene {
        Scene::new(vec![Target::new(amplitude, freq, phase).unwrap()])
    }

    #[test]
    fn quarter_frequency_unit_target() {
        let e = synthesize_echo(&one(1.0, 0.25, 0.0), &cfg(8)).unwrap();
        let expect = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        for (a, b) in e.samples.iter().zip(expect) {
            assert!((a - b).norm() < 1e-15);
        }
        assert_eq!(e.snr_db, f64::INFINITY);
    }

    #[test]
    fn opposite_phases_cancel() {
        let scene = Scene::new(vec![
            Target::new(1.0, 0.3, 0.5).unwrap(),
            Target::new(1.0, 0.3, 0.5 + PI).unwrap(),
        ]);
        let e = synthesize_echo(&scene, &cfg(16)).unwrap();
        assert!(e.samples.iter().all(|s| s.norm() < 1e-14));
    }

    #[test]
    fn empty_scene_is_rejected() {
        assert!(matches!(synthesize_echo(&Scene::default(), &cfg(8)), Err(Error::EmptyScene)));
    }

    #[test]
    fn invalid_targets_are_rejected() {
        assert!(Target::new(0.0, 0.1, 0.0).is_err());
        assert!(Target::new(1.0, 1.0, 0.0).is_err());
        assert!(Target::new(1.0, 0.1, 2.0 * PI).is_err());
        assert!(RadarConfig::new(7, 16, 0).is_err());
        assert!(RadarConfig::new(8, 0, 0).is_err());
    }

    #[test]
    fn infinite_snr_is_identity_and_noise_does_not_stack() {
        let e = synthesize_echo(&one(1.0, 0.1, 0.0), &cfg(16)).unwrap();
        assert_eq!(apply_awgn(&e, f64::INFINITY, 1).unwrap(), e);
        let noisy = apply_awgn(&e, 10.0, 1).unwrap();
        assert_eq!(noisy.snr_db, 10.0);
        assert!(matches!(apply_awgn(&noisy, 10.0, 2), Err(Error::DoubleNoise(_))));
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let e = synthesize_echo(&one(1.0, 0.1, 0.0), &cfg(16)).unwrap();
        assert_eq!(apply_awgn(&e, 5.0, 3).unwrap(), apply_awgn(&e, 5.0, 3).unwrap());
        assert_ne!(apply_awgn(&e, 5.0, 3).unwrap(), apply_awgn(&e, 5.0, 4).unwrap());
    }

    #[test]
    fn on_grid_label_is_closed_form_gaussian() {
        let c = cfg(64);
        let label = make_label(&one(0.4, 256.0 / 1024.0, 1.0), &c, 0.2 / 64.0).unwrap();
        let grid_std = 0.2 * 16.0;
        assert_eq!(label.values[256], 1.0);
        for k in 1..20usize {
            let expect = (-(k as f64).powi(2) / (2.0 * grid_std * grid_std)).exp();
            assert!((label.values[256 + k] - expect).abs() < 1e-12);
            assert!((label.values[256 - k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn off_grid_label_peak_is_renormalized_to_one() {
        let c = cfg(64);
        let label = make_label(&one(1.0, 256.5 / 1024.0, 0.0), &c, 0.2 / 64.0).unwrap();
        let max = label.values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        let argmax = label.values.iter().position(|&v| v == max).unwrap();
        assert!(argmax == 256 || argmax == 257);
    }

    #[test]
    fn separated_labels_superpose() {
        let c = cfg(64);
        let sigma = c.default_label_sigma();
        let a = Target::new(1.0, 0.2, 0.0).unwrap();
        let b = Target::new(0.5, 0.2 + 10.0 / 64.0, 1.0).unwrap();
        let both = make_label(&Scene::new(vec![a, b]), &c, sigma).unwrap();
        let la = make_label(&Scene::new(vec![a]), &c, sigma).unwrap();
        let lb = make_label(&Scene::new(vec![b]), &c, sigma).unwrap();
        for i in 0..1024 {
            assert!((both.values[i] - la.values[i] - lb.values[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn training_scene_respects_table_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let s = random_training_scene(&mut rng, 64);
            assert!((1..=10).contains(&s.targets.len()));
            s.validate().unwrap();
            for t in &s.targets {
                assert!((0.1..=1.0).contains(&t.amplitude));
            }
        }
    }
}
