//! Classical range-profile estimators on the common `M`-bin grid.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Echo, RadarConfig};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Unnormalized `Σ_n x[n] exp(+j2π nm/len)` of the zero-padded input.
fn padded_inverse_dft(x: &[Complex64], len: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..x.len()].copy_from_slice(x);
    plan(len, true).process(&mut buf);
    buf
}

/// `Σ_n x[n] exp(−j2π nm/len)` of the zero-padded input.
fn padded_forward_dft(x: &[Complex64], len: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..x.len()].copy_from_slice(x);
    plan(len, false).process(&mut buf);
    buf
}

/// Non-negative profile on the `M`-bin grid plus how it was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeProfile {
    pub values: Vec<f64>,
    pub meta: ProfileMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub estimator: String,
    pub params: BTreeMap<String, f64>,
}

impl RangeProfile {
    pub fn new(values: Vec<f64>, estimator: &str, params: &[(&str, f64)]) -> Self {
        Self {
            values,
            meta: ProfileMeta {
                estimator: estimator.to_string(),
                params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Steering dictionary `A[n][m] = exp(−j2π nm/M)`.
#[derive(Clone, Debug)]
pub struct Dictionary {
    n: usize,
    m: usize,
    atoms: Vec<Complex64>,
    frame_gram: DMatrix<Complex64>,
    frame_norm: f64,
}

impl Dictionary {
    pub fn new(cfg: &RadarConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, m) = (cfg.n_samples, cfg.grid_size());
        let mut atoms = Vec::with_capacity(n * m);
        for row in 0..n {
            for col in 0..m {
                let phase = -2.0 * std::f64::consts::PI * ((row * col) % m) as f64 / m as f64;
                atoms.push(Complex64::from_polar(1.0, phase));
            }
        }
        let a = DMatrix::from_row_slice(n, m, &atoms);
        let frame_gram = &a * a.adjoint();
        let frame_norm = SymmetricEigen::new(frame_gram.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        Ok(Self {
            n,
            m,
            atoms,
            frame_gram,
            frame_norm,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn atom(&self, col: usize) -> Vec<Complex64> {
        (0..self.n).map(|row| self.atoms[row * self.m + col]).collect()
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.atoms[row * self.m + col]
    }

    /// `A A^H` (N×N).
    pub fn frame_gram(&self) -> &DMatrix<Complex64> {
        &self.frame_gram
    }

    /// Largest eigenvalue of `A A^H`, i.e. `||A||₂²`.
    pub fn frame_norm(&self) -> f64 {
        self.frame_norm
    }

    /// `A x` for `x` of length M.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = padded_forward_dft(x, self.m);
        out.truncate(self.n);
        out
    }

    /// `A^H r` for `r` of length N.
    pub fn adjoint(&self, r: &[Complex64]) -> Vec<Complex64> {
        padded_inverse_dft(r, self.m)
    }
}

fn check_len(echo: &Echo, n: usize) -> Result<()> {
    if echo.len() != n {
        return Err(Error::invalid("echo", format!("length {} != N = {n}", echo.len())));
    }
    Ok(())
}

/// Zero-padded periodogram magnitude `|Σ_n y[n] exp(+j2π nm/M)|`.
pub fn fft_profile(echo: &Echo, cfg: &RadarConfig) -> Result<RangeProfile> {
    cfg.validate()?;
    check_len(echo, cfg.n_samples)?;
    let spec = padded_inverse_dft(&echo.samples, cfg.grid_size());
    Ok(RangeProfile::new(spec.iter().map(|c| c.norm()).collect(), "fft", &[]))
}

/// Forward-backward smoothed covariance of the length-`l` Hankel subvectors.
fn smoothed_covariance(y: &[Complex64], l: usize) -> DMatrix<Complex64> {
    let k = y.len() - l + 1;
    let mut r = DMatrix::<Complex64>::zeros(l, l);
    for start in 0..k {
        let s = &y[start..start + l];
        for i in 0..l {
            for j in 0..l {
                r[(i, j)] += s[i] * s[j].conj();
            }
        }
    }
    r /= Complex64::new(k as f64, 0.0);
    let mut fb = r.clone();
    for i in 0..l {
        for j in 0..l {
            fb[(i, j)] = (r[(i, j)] + r[(l - 1 - i, l - 1 - j)].conj()) * 0.5;
        }
    }
    fb
}

/// Single-snapshot MUSIC with forward-backward spatial smoothing.
pub fn music_profile(echo: &Echo, cfg: &RadarConfig, n_targets: usize, subarray_len: usize) -> Result<RangeProfile> {
    cfg.validate()?;
    check_len(echo, cfg.n_samples)?;
    if n_targets == 0 {
        return Err(Error::invalid("music_profile", "n_targets must be >= 1"));
    }
    if n_targets >= subarray_len {
        return Err(Error::RankDeficient {
            n_targets,
            subarray_len,
        });
    }
    if subarray_len > cfg.n_samples {
        return Err(Error::invalid(
            "music_profile",
            format!("subarray_len {subarray_len} > N = {}", cfg.n_samples),
        ));
    }
    let cov = smoothed_covariance(&echo.samples, subarray_len);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..subarray_len).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let m = cfg.grid_size();
    let mut den = vec![0.0; m];
    for &idx in &order[..subarray_len - n_targets] {
        let e: Vec<Complex64> = eig.eigenvectors.column(idx).iter().map(|c| c.conj()).collect();
        // e^H a(m) with a(m)[l] = exp(−j2π lm/M)
        for (d, p) in den.iter_mut().zip(padded_forward_dft(&e, m)) {
            *d += p.norm_sqr();
        }
    }
    let values = den.iter().map(|&d| 1.0 / d.max(1e-300)).collect();
    Ok(RangeProfile::new(
        values,
        "music",
        &[("n_targets", n_targets as f64), ("subarray_len", subarray_len as f64)],
    ))
}

/// Per-iteration record of [`omp_solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct OmpTrace {
    pub profile: RangeProfile,
    pub support: Vec<usize>,
    pub residual_norms: Vec<f64>,
}

pub fn omp_profile(echo: &Echo, dict: &Dictionary, n_targets: usize) -> Result<RangeProfile> {
    Ok(omp_solve(echo, dict, n_targets)?.profile)
}

/// Orthogonal matching pursuit for exactly `n_targets` greedy steps.
pub fn omp_solve(echo: &Echo, dict: &Dictionary, n_targets: usize) -> Result<OmpTrace> {
    check_len(echo, dict.n_samples())?;
    if n_targets == 0 || n_targets > dict.n_samples() {
        return Err(Error::invalid(
            "omp_profile",
            format!("n_targets {n_targets} outside 1..={}", dict.n_samples()),
        ));
    }
    let m = dict.grid_size();
    let params = [("n_targets", n_targets as f64)];
    let y = DVector::from_column_slice(&echo.samples);
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return Ok(OmpTrace {
            profile: RangeProfile::new(vec![0.0; m], "omp", &params),
            support: Vec::new(),
            residual_norms: vec![0.0],
        });
    }
    let mut support: Vec<usize> = Vec::with_capacity(n_targets);
    let mut residual = y.clone();
    let mut norms = vec![y_norm];
    let mut coeffs = DVector::<Complex64>::zeros(0);
    for _ in 0..n_targets {
        let corr = dict.adjoint(residual.as_slice());
        let pick = (0..m)
            .filter(|c| !support.contains(c))
            .max_by(|&a, &b| corr[a].norm().total_cmp(&corr[b].norm()))
            .expect("n_targets <= N < M leaves candidates");
        support.push(pick);
        let sub = DMatrix::from_fn(dict.n_samples(), support.len(), |r, c| dict.entry(r, support[c]));
        let svd = sub.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::DegenerateSupport);
        }
        coeffs = svd.solve(&y, 0.0).map_err(|_| Error::DegenerateSupport)?;
        residual = &y - &sub * &coeffs;
        norms.push(residual.norm());
    }
    let mut values = vec![0.0; m];
    for (&bin, c) in support.iter().zip(coeffs.iter()) {
        values[bin] = c.norm();
    }
    Ok(OmpTrace {
        profile: RangeProfile::new(values, "omp", &params),
        support,
        residual_norms: norms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HqsConfig {
    pub iterations: usize,
    pub rho: f64,
    pub lambda_frac: f64,
}

impl Default for HqsConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            rho: 1.0,
            lambda_frac: 0.05,
        }
    }
}

impl HqsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::invalid("HqsConfig", "iterations must be >= 1"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("HqsConfig", format!("rho {} must be > 0", self.rho)));
        }
        if !(self.lambda_frac > 0.0 && self.lambda_frac < 1.0) {
            return Err(Error::invalid(
                "HqsConfig",
                format!("lambda_frac {} outside (0, 1)", self.lambda_frac),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HqsTrace {
    pub profile: RangeProfile,
    /// Soft threshold applied in the prior step.
    pub threshold: f64,
    /// ℓ1 weight of the objective the iteration descends.
    pub lambda: f64,
    /// `½||y − Az||² + λ|z|₁` after each iteration.
    pub objective: Vec<f64>,
}

pub fn hqs_profile(echo: &Echo, dict: &Dictionary, cfg: &HqsConfig) -> Result<RangeProfile> {
    Ok(hqs_solve(echo, dict, cfg)?.profile)
}

fn soft_threshold(v: Complex64, t: f64) -> Complex64 {
    let mag = v.norm();
    if mag <= t || mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        v * ((mag - t) / mag)
    }
}

/// Half-quadratic splitting with fixed penalty:
///
/// ```text
/// x ← (AᴴA + ρI)⁻¹ (Aᴴy + ρz)      solved through (ρI + AAᴴ)⁻¹, an N×N system
/// z ← S(x, τ)
/// ```
///
/// The threshold is `τ = lambda_frac · ||x¹||∞` where `x¹` is the first data
/// step from `z = 0`. The x-step scales `Aᴴy` by `1/(ρ + ||A||²)`, so this is
/// the same data-adaptive rule as `lambda_frac · ||Aᴴy||∞` expressed where the
/// threshold is applied. The iteration is then a fixed-step proximal gradient
/// method on `½||y − Az||² + λ|z|₁` with `λ = τ(ρ + ||A||²)`, which is what
/// `objective` records.
pub fn hqs_solve(echo: &Echo, dict: &Dictionary, cfg: &HqsConfig) -> Result<HqsTrace> {
    cfg.validate()?;
    check_len(echo, dict.n_samples())?;
    let (n, m) = (dict.n_samples(), dict.grid_size());
    let rho = cfg.rho;
    let mut system = dict.frame_gram().clone();
    for i in 0..n {
        system[(i, i)] += Complex64::new(rho, 0.0);
    }
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::invalid("hqs", "ρI + AAᴴ is not positive definite"))?;
    let aty = dict.adjoint(&echo.samples);
    let data_step = |z: &[Complex64]| -> Vec<Complex64> {
        let v: Vec<Complex64> = aty.iter().zip(z).map(|(&a, &b)| a + b * rho).collect();
        let av = DVector::from_vec(dict.apply(&v));
        let u = chol.solve(&av);
        let atu = dict.adjoint(u.as_slice());
        v.iter().zip(atu).map(|(&vi, ai)| (vi - ai) / rho).collect()
    };
    let lambda_of = |tau: f64| tau * (rho + dict.frame_norm());
    let objective_of = |z: &[Complex64], lambda: f64| -> f64 {
        let az = dict.apply(z);
        let fit: f64 = echo.samples.iter().zip(&az).map(|(y, a)| (y - a).norm_sqr()).sum();
        0.5 * fit + lambda * z.iter().map(|c| c.norm()).sum::<f64>()
    };

    let mut z = vec![Complex64::new(0.0, 0.0); m];
    let mut threshold = 0.0;
    let mut objective = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let x = data_step(&z);
        if k == 0 {
            let peak = x.iter().map(|c| c.norm()).fold(0.0, f64::max);
            threshold = cfg.lambda_frac * peak;
        }
        z = x.iter().map(|&v| soft_threshold(v, threshold)).collect();
        objective.push(objective_of(&z, lambda_of(threshold)));
    }
    let profile = RangeProfile::new(
        z.iter().map(|c| c.norm()).collect(),
        "hqs",
        &[
            ("iterations", cfg.iterations as f64),
            ("rho", rho),
            ("lambda_frac", cfg.lambda_frac),
            ("threshold", threshold),
        ],
    );
    Ok(HqsTrace {
        profile,
        threshold,
        lambda: lambda_of(threshold),
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{apply_awgn, synthesize_echo, Scene, Target};

    fn cfg() -> RadarConfig {
        RadarConfig::new(64, 16, 0).unwrap()
    }

    fn on_grid(bin: usize, amplitude: f64, phase: f64) -> Target {
        Target::new(amplitude, bin as f64 / 1024.0, phase).unwrap()
    }

    fn echo_of(targets: Vec<Target>) -> Echo {
        synthesize_echo(&Scene::new(targets), &cfg()).unwrap()
    }

    #[test]
    fn dictionary_columns_have_norm_sqrt_n_and_first_is_ones() {
        let d = Dictionary::new(&cfg()).unwrap();
        for col in [0, 1, 333, 1023] {
            let norm: f64 = d.atom(col).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - 8.0).abs() < 1e-12);
        }
        assert!(d.atom(0).iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert!((d.frame_norm() - 1024.0).abs() < 1e-8);
    }

    #[test]
    fn fft_peak_is_n_at_true_bin() {
        let p = fft_profile(&echo_of(vec![on_grid(256, 1.0, 0.3)]), &cfg()).unwrap();
        assert_eq!(p.argmax(), 256);
        assert!((p.values[256] - 64.0).abs() < 1e-9);
    }

    #[test]
    fn fft_of_zero_echo_is_zero() {
        let e = Echo::noise_free(vec![Complex64::new(0.0, 0.0); 64]);
        assert!(fft_profile(&e, &cfg()).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn music_locates_single_noise_free_target() {
        let p = music_profile(&echo_of(vec![on_grid(400, 0.7, 1.0)]), &cfg(), 1, 32).unwrap();
        assert!((p.argmax() as i64 - 400).abs() <= 1);
    }

    #[test]
    fn music_rejects_rank_deficient_request() {
        let e = echo_of(vec![on_grid(400, 0.7, 1.0)]);
        assert!(matches!(music_profile(&e, &cfg(), 32, 32), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn omp_recovers_single_on_grid_coefficient() {
        let d = Dictionary::new(&cfg()).unwrap();
        let p = omp_profile(&echo_of(vec![on_grid(700, 0.37, 2.0)]), &d, 1).unwrap();
        let nonzero: Vec<usize> = (0..1024).filter(|&i| p.values[i] != 0.0).collect();
        assert_eq!(nonzero, vec![700]);
        assert!((p.values[700] - 0.37).abs() < 1e-9);
    }

    #[test]
    fn omp_recovers_three_separated_targets() {
        let d = Dictionary::new(&cfg()).unwrap();
        let e = echo_of(vec![on_grid(100, 1.0, 0.1), on_grid(500, 0.6, 2.0), on_grid(900, 0.8, 4.0)]);
        let trace = omp_solve(&e, &d, 3).unwrap();
        let mut s = trace.support.clone();
        s.sort();
        assert_eq!(s, vec![100, 500, 900]);
        assert!(trace.residual_norms.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn omp_of_zero_echo_is_zero_profile() {
        let d = Dictionary::new(&cfg()).unwrap();
        let e = Echo::noise_free(vec![Complex64::new(0.0, 0.0); 64]);
        assert!(omp_profile(&e, &d, 2).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hqs_of_zero_echo_is_zero_profile() {
        let d = Dictionary::new(&cfg()).unwrap();
        let e = Echo::noise_free(vec![Complex64::new(0.0, 0.0); 64]);
        let p = hqs_profile(&e, &d, &HqsConfig::default()).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hqs_config_validation() {
        let bad = [
            HqsConfig { iterations: 0, ..Default::default() },
            HqsConfig { rho: 0.0, ..Default::default() },
            HqsConfig { lambda_frac: 1.0, ..Default::default() },
            HqsConfig { lambda_frac: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn hqs_threshold_near_one_gives_zero_profile() {
        let d = Dictionary::new(&cfg()).unwrap();
        let e = apply_awgn(&echo_of(vec![on_grid(300, 1.0, 0.0), on_grid(340, 0.5, 1.0)]), 20.0, 9).unwrap();
        let c = HqsConfig {
            lambda_frac: 1.0 - 1e-12,
            ..Default::default()
        };
        let p = hqs_profile(&e, &d, &c).unwrap();
        let scale = d.adjoint(&e.samples).iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(p.max() <= 1e-9 * scale, "max {}", p.max());
    }

    #[test]
    fn hqs_threshold_matches_lasso_weight() {
        let d = Dictionary::new(&cfg()).unwrap();
        let e = echo_of(vec![on_grid(300, 1.0, 0.0)]);
        let t = hqs_solve(&e, &d, &HqsConfig::default()).unwrap();
        let aty_max = d.adjoint(&e.samples).iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!((t.lambda - 0.05 * aty_max).abs() < 1e-9 * aty_max);
    }
}
