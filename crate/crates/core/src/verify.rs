//! Monte Carlo check of `W(T) = e^{-χ(T)}`.
//!
//! Noise realizations are synthesised from the spectrum on a uniform
//! midpoint frequency grid,
//! `β(t) = Σ_k a_k cos ω_k t + b_k sin ω_k t` with
//! `Var a_k = Var b_k = S(ω_k) Δω / π`, and the modulated phase is the
//! trapezoidal integral of `β F` on a time grid that contains every pulse
//! time. Because the phase is linear in `(a_k, b_k)`, the trapezoid sums
//! of each mode are evaluated once in closed form and every realization
//! reduces to a dot product with its Gaussian draws.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoherence::chi_spectral;
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::quad::compensated_sum;
use crate::sequences::{modulation_of, PulseSequence};

/// Fraction of the spectral variance allowed above `omega_max`.
pub const MASS_FRACTION: f64 = 1e-4;
/// Default frequency resolution `Δω T`.
pub const DEFAULT_RESOLUTION: f64 = 0.25;
/// Default frequency resolution relative to the spectrum's own scale.
pub const SPECTRAL_RESOLUTION: f64 = 0.1;
/// Largest `ω_max h` per time step used by the default grid.
const PHASE_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_realizations: usize,
    pub n_spectral_modes: usize,
    pub omega_max: f64,
    /// Time step in units of `T`.
    pub dt: f64,
    pub seed: u64,
}

/// Smallest frequency above which at most `fraction` of the variance lies.
pub fn coverage_frequency(noise: &NoiseModel, fraction: f64) -> f64 {
    let total = noise.spectral_mass_above(0.0);
    if !(total > 0.0) {
        return noise.char_frequency();
    }
    if let Some(wc) = noise.hard_cutoff() {
        if noise.spectral_mass_above(wc) == 0.0 && fraction <= 0.0 {
            return wc;
        }
    }
    let target = fraction * total;
    let mut hi = noise.char_frequency();
    while noise.spectral_mass_above(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if noise.spectral_mass_above(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

impl McConfig {
    /// Default discretization for a given problem: `ω_max` from the
    /// variance-coverage criterion, `Δω` below both `0.25 / T` and a tenth of
    /// the spectrum's characteristic frequency, and a time step below
    /// both a twentieth of the shortest pulse gap and `0.5 / (ω_max T)`.
    pub fn for_problem(noise: &NoiseModel, seq: &PulseSequence, t: f64, n_realizations: usize, seed: u64) -> Self {
        let omega_max = coverage_frequency(noise, MASS_FRACTION);
        let dw = (DEFAULT_RESOLUTION / t).min(SPECTRAL_RESOLUTION * noise.char_frequency());
        let n_spectral_modes = ((omega_max / dw).ceil() as usize).max(64);
        let dt = (seq.min_gap() / 20.0).min(PHASE_STEP / (omega_max * t));
        McConfig { n_realizations, n_spectral_modes, omega_max, dt, seed }
    }

    pub fn delta_omega(&self) -> f64 {
        self.omega_max / self.n_spectral_modes as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let dw = self.delta_omega();
        (0..self.n_spectral_modes).map(|k| (k as f64 + 0.5) * dw).collect()
    }

    fn validate(&self, seq: &PulseSequence) -> Result<()> {
        if self.n_realizations < 100 {
            return Err(Error::InvalidParameter(format!(
                "n_realizations must be at least 100, got {}",
                self.n_realizations
            )));
        }
        if self.n_spectral_modes == 0 || !(self.omega_max > 0.0) {
            return Err(Error::InvalidParameter("need a positive frequency grid".into()));
        }
        if !(self.dt > 0.0) || self.dt > seq.min_gap() / 20.0 {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds a twentieth of the shortest pulse gap {}",
                self.dt,
                seq.min_gap()
            )));
        }
        Ok(())
    }
}

/// Absolute times of the integration grid: every segment between pulses is
/// split uniformly with a relative step no larger than `dt`.
pub fn phase_grid(seq: &PulseSequence, t: f64, dt: f64) -> Vec<f64> {
    let b = seq.boundaries();
    let mut grid = vec![0.0];
    for w in b.windows(2) {
        let n = ((w[1] - w[0]) / dt).ceil().max(1.0) as usize;
        for i in 1..=n {
            let s = if i == n { w[1] } else { w[0] + (w[1] - w[0]) * i as f64 / n as f64 };
            grid.push(s * t);
        }
    }
    grid
}

fn mode_std(noise: &NoiseModel, cfg: &McConfig) -> Vec<f64> {
    let dw = cfg.delta_omega();
    cfg.frequencies().iter().map(|&w| (noise.spectrum(w) * dw / PI).sqrt()).collect()
}

fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One realization of `β` on `grid`; mode `k` draws `a_k` then `b_k`.
pub fn sample_noise(noise: &NoiseModel, cfg: &McConfig, grid: &[f64], realization: u64) -> Vec<f64> {
    let sd = mode_std(noise, cfg);
    let omegas = cfg.frequencies();
    let mut rng = realization_rng(cfg.seed, realization);
    let mut beta = vec![0.0; grid.len()];
    for (w, s) in omegas.iter().zip(&sd) {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        if *s == 0.0 {
            continue;
        }
        for (x, &ti) in beta.iter_mut().zip(grid) {
            let (sn, cs) = (w * ti).sin_cos();
            *x += s * (a * cs + b * sn);
        }
    }
    beta
}

/// Trapezoidal `∫₀^T β(t) F(t/T) dt` on `grid`, which must contain the
/// pulse times so that `F` is constant on every grid interval.
pub fn accumulate_phase(beta: &[f64], grid: &[f64], seq: &PulseSequence, t: f64) -> f64 {
    let modulation = modulation_of(seq);
    compensated_sum(grid.windows(2).zip(beta.windows(2)).map(|(g, b)| {
        let f = modulation.value_at(0.5 * (g[0] + g[1]) / t).re;
        0.5 * f * (b[0] + b[1]) * (g[1] - g[0])
    }))
}

/// Trapezoid sum of `e^{iωt} F(t/T)` over the grid of `phase_grid`, using
/// `Σ_trap e^{iωt} = (e^{iωb} - e^{iωa}) (h/2) (-i) cot(ωh/2)` per segment.
fn mode_weight(seq: &PulseSequence, t: f64, dt: f64, omega: f64) -> Complex64 {
    let b = seq.boundaries();
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, w) in b.windows(2).enumerate() {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let n = ((w[1] - w[0]) / dt).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) * t / n as f64;
        let x = 0.5 * omega * h;
        let diff = Complex64::from_polar(1.0, omega * w[1] * t) - Complex64::from_polar(1.0, omega * w[0] * t);
        let factor = if x.abs() < 1e-8 { 1.0 / omega } else { 0.5 * h / x.tan() };
        acc += sign * diff * Complex64::new(0.0, -factor);
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    #[serde(rename = "W_hat")]
    pub w_hat: f64,
    pub stderr: f64,
    pub chi_analytic: f64,
    pub w_analytic: f64,
    pub chi_mc: Option<f64>,
    pub chi_mc_stderr: Option<f64>,
    pub z_score: f64,
    pub skewness: f64,
    pub skewness_stderr: f64,
    pub phase_variance: f64,
    pub warnings: Vec<String>,
    pub config: McConfig,
}

impl McReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Simulated phases of all realizations, in realization order.
pub fn sample_phases(noise: &NoiseModel, seq: &PulseSequence, t: f64, cfg: &McConfig) -> Result<Vec<f64>> {
    cfg.validate(seq)?;
    let sd = mode_std(noise, cfg);
    let weights: Vec<(f64, f64)> = cfg
        .frequencies()
        .iter()
        .zip(&sd)
        .map(|(&w, &s)| {
            let c = mode_weight(seq, t, cfg.dt, w);
            (s * c.re, s * c.im)
        })
        .collect();
    Ok((0..cfg.n_realizations as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = realization_rng(cfg.seed, i);
            let mut phase = 0.0;
            for (u, v) in &weights {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                phase += a * u + b * v;
            }
            phase
        })
        .collect())
}

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = compensated_sum(xs.iter().copied()) / n;
    let m2 = compensated_sum(xs.iter().map(|x| (x - mean).powi(2))) / n;
    let m3 = compensated_sum(xs.iter().map(|x| (x - mean).powi(3))) / n;
    (mean, m2, m3)
}

pub fn run_mc(noise: &NoiseModel, seq: &PulseSequence, t: f64, cfg: &McConfig) -> Result<McReport> {
    let phases = sample_phases(noise, seq, t, cfg)?;
    let n = phases.len() as f64;
    let cosines: Vec<f64> = phases.iter().map(|p| p.cos()).collect();
    let (w_hat, var_cos, _) = moments(&cosines);
    let stderr = (var_cos * n / (n - 1.0)).sqrt() / n.sqrt();
    let (_, var_phase, m3) = moments(&phases);
    let skewness = if var_phase > 0.0 { m3 / var_phase.powf(1.5) } else { 0.0 };
    let skewness_stderr = (6.0 / n).sqrt();

    let chi_analytic = chi_spectral(&modulation_of(seq), noise, t)?.value;
    let w_analytic = (-chi_analytic).exp();
    let diff = w_hat - w_analytic;
    let z_score = if stderr > 0.0 {
        diff / stderr
    } else if diff.abs() <= 1e-15 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let (chi_mc, chi_mc_stderr) = if w_hat > 0.0 { (Some(-w_hat.ln()), Some(stderr / w_hat)) } else { (None, None) };

    let mut warnings = Vec::new();
    let total = noise.spectral_mass_above(0.0);
    if total > 0.0 {
        let missing = noise.spectral_mass_above(cfg.omega_max) / total;
        if missing > MASS_FRACTION * (1.0 + 1e-6) {
            warnings.push(format!("omega_max leaves {missing:.2e} of the noise variance unsampled"));
        }
    }
    if cfg.delta_omega() * t > 1.0 {
        warnings.push(format!("coarse frequency grid: Δω T = {:.3}", cfg.delta_omega() * t));
    }
    if chi_mc.is_none() {
        warnings.push("W_hat ≤ 0: chi_mc unavailable".into());
    }
    if skewness.abs() > 5.0 * skewness_stderr {
        warnings.push(format!("phase skewness {skewness:.3e} exceeds 5 standard errors"));
    }
    Ok(McReport {
        w_hat,
        stderr,
        chi_analytic,
        w_analytic,
        chi_mc,
        chi_mc_stderr,
        z_score,
        skewness,
        skewness_stderr,
        phase_variance: var_phase,
        warnings,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seq: &PulseSequence, t: f64) -> McConfig {
        McConfig { n_realizations: 100, n_spectral_modes: 64, omega_max: 20.0, dt: seq.min_gap() / 40.0, seed: 7 }
            .clamp_dt(seq, t)
    }

    impl McConfig {
        fn clamp_dt(mut self, seq: &PulseSequence, t: f64) -> Self {
            self.dt = self.dt.min(seq.min_gap() / 20.0).min(0.1 / (self.omega_max * t));
            self
        }
    }

    #[test]
    fn constant_beta_phases() {
        let t = 2.0;
        let hahn = PulseSequence::cpmg(1).unwrap();
        let grid = phase_grid(&hahn, t, 0.01);
        let beta = vec![0.7; grid.len()];
        assert!(accumulate_phase(&beta, &grid, &hahn, t).abs() < 1e-14);
        let free = PulseSequence::free_evolution();
        let grid = phase_grid(&free, t, 0.01);
        let beta = vec![0.7; grid.len()];
        assert!((accumulate_phase(&beta, &grid, &free, t) - 1.4).abs() < 1e-14);
    }

    #[test]
    fn cosine_beta_matches_filter() {
        let seq = PulseSequence::udd(3).unwrap();
        let (t, w) = (1.5, 4.0);
        let grid = phase_grid(&seq, t, 2e-4);
        let beta: Vec<f64> = grid.iter().map(|x| (w * x).cos()).collect();
        let phase = accumulate_phase(&beta, &grid, &seq, t);
        let expect = t * crate::decoherence::filter(&modulation_of(&seq), w * t).value.re;
        assert!((phase - expect).abs() < 1e-6, "{phase} vs {expect}");
    }

    #[test]
    fn closed_form_trapezoid_matches_explicit_sum() {
        let seq = PulseSequence::new(vec![0.2, 0.45, 0.8]).unwrap();
        let noise = NoiseModel::make_exponential_correlation(0.5).unwrap();
        let t = 1.3;
        let cfg = small_cfg(&seq, t);
        let grid = phase_grid(&seq, t, cfg.dt);
        let phases = sample_phases(&noise, &seq, t, &cfg).unwrap();
        for i in [0u64, 17, 99] {
            let beta = sample_noise(&noise, &cfg, &grid, i);
            let direct = accumulate_phase(&beta, &grid, &seq, t);
            assert!((direct - phases[i as usize]).abs() < 1e-10 * (1.0 + direct.abs()), "{direct} vs {}", phases[i as usize]);
        }
    }

    #[test]
    fn zero_noise_is_exact() {
        let seq = PulseSequence::cpmg(2).unwrap();
        let cfg = small_cfg(&seq, 1.0);
        let grid = phase_grid(&seq, 1.0, cfg.dt);
        assert!(sample_noise(&NoiseModel::zero(), &cfg, &grid, 0).iter().all(|b| *b == 0.0));
        let r = run_mc(&NoiseModel::zero(), &seq, 1.0, &cfg).unwrap();
        assert_eq!(r.w_hat, 1.0);
        assert_eq!(r.chi_mc, Some(0.0));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let seq = PulseSequence::cpmg(2).unwrap();
        let noise = NoiseModel::make_gaussian_correlation(1.0).unwrap();
        let cfg = McConfig::for_problem(&noise, &seq, 1.0, 500, 3);
        let a = run_mc(&noise, &seq, 1.0, &cfg).unwrap();
        let b = run_mc(&noise, &seq, 1.0, &cfg).unwrap();
        assert_eq!(a.w_hat.to_bits(), b.w_hat.to_bits());
    }

    #[test]
    fn rejects_coarse_time_step() {
        let seq = PulseSequence::cpmg(4).unwrap();
        let noise = NoiseModel::make_gaussian_correlation(1.0).unwrap();
        let mut cfg = McConfig::for_problem(&noise, &seq, 1.0, 500, 3);
        cfg.dt = 0.1;
        assert!(run_mc(&noise, &seq, 1.0, &cfg).is_err());
    }
}
