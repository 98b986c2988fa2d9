//! Decoherence functionals of a modulation under Gaussian noise.
//!
//! All moments `λ_m`, decoherence functions `φ_k` and filter values `f̃(u)`
//! are dimensionless and computed in relative time `s ∈ [0, 1]`; the total
//! duration enters only through `u = ωT` and the prefactors `C_k T^{k+2}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{CorrelationExpansion, NoiseModel, SpectralSupport};
use crate::quad::{compensated_sum, integrate_panels, Neumaier, QuadOptions};
use crate::sequences::{modulation_of, Jump, Modulation, PulseSequence, SequenceFamily};

/// Below this |u| the filter is summed from its moment series.
pub const SERIES_SWITCH: f64 = 3.0;
const SERIES_TERMS: usize = 48;

/// Moments below this magnitude count as satisfied constraints.
pub const CONSTRAINT_TOL: f64 = 1e-10;

/// Closed-form `φ_k` values below this magnitude are reported as zero by
/// the series evaluator; the alternating sums carry rounding noise of a
/// few ulp.
const PHI_FLOOR: f64 = 1e-13;

/// Ratio of the last two non-zero series terms above which the short-time
/// series is declared unreliable.
pub const SERIES_RATIO_LIMIT: f64 = 0.5;

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `λ_m = ∫₀¹ F(s) s^m ds`, integrated exactly segment by segment.
pub fn lambda_m(modulation: &Modulation, m: usize) -> Complex64 {
    let p = m as i32 + 1;
    let mut re = Neumaier::default();
    let mut im = Neumaier::default();
    for seg in modulation.segments() {
        let w = (seg.end.powi(p) - seg.start.powi(p)) / p as f64;
        re.add(seg.value.re * w);
        im.add(seg.value.im * w);
    }
    Complex64::new(re.sum(), im.sum())
}

pub fn lambdas(modulation: &Modulation, m_max: usize) -> Vec<Complex64> {
    (0..=m_max).map(|m| lambda_m(modulation, m)).collect()
}

/// Real moment of an ideal π-pulse sequence.
pub fn lambda_pi(seq: &PulseSequence, m: usize) -> f64 {
    lambda_m(&modulation_of(seq), m).re
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterEvaluation {
    pub u: f64,
    pub value: Complex64,
    pub power: f64,
}

/// Precomputed data for repeated evaluation of `f̃(u) = ∫₀¹ F(s) e^{ius} ds`.
#[derive(Debug, Clone)]
pub struct FilterKernel {
    jumps: Vec<Jump>,
    lambdas: Vec<Complex64>,
    jump_bound: f64,
    l1: f64,
}

impl FilterKernel {
    pub fn new(modulation: &Modulation) -> Self {
        let jumps = modulation.jumps();
        let jump_bound = jumps.iter().map(|j| j.weight.norm()).sum();
        FilterKernel {
            jumps,
            lambdas: lambdas(modulation, SERIES_TERMS),
            jump_bound,
            l1: modulation.l1_norm(),
        }
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambdas
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// `a` in `|f̃(u)| ≤ a / |u|`.
    pub fn jump_bound(&self) -> f64 {
        self.jump_bound
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1
    }

    pub fn eval(&self, u: f64) -> Complex64 {
        self.eval_reduced(u, 0)
    }

    /// `f̃(u) / u^skip`, dropping the moments `λ_m, m < skip` inside the
    /// series region (they are constrained to vanish when this is used).
    pub fn eval_reduced(&self, u: f64, skip: usize) -> Complex64 {
        if u.abs() <= SERIES_SWITCH {
            let iu = Complex64::new(0.0, u);
            let mut pow = Complex64::new(1.0, 0.0);
            for _ in 0..skip {
                pow *= Complex64::i();
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, lam) in self.lambdas.iter().enumerate().skip(skip) {
                acc += pow * lam / factorial(m);
                pow *= iu;
            }
            acc
        } else {
            let sum: Complex64 = self
                .jumps
                .iter()
                .map(|j| j.weight * Complex64::from_polar(1.0, u * j.at))
                .sum();
            sum / (Complex64::new(0.0, u) * u.powi(skip as i32))
        }
    }

    /// `|f̃(u)|² / u^{2 skip}`.
    pub fn power_reduced(&self, u: f64, skip: usize) -> f64 {
        self.eval_reduced(u, skip).norm_sqr()
    }

    /// Asymptotic mean of `|D(u)|² = u² |f̃(u)|²` for large u.
    fn mean_jump_power(&self) -> f64 {
        self.jumps.iter().map(|j| j.weight.norm_sqr()).sum()
    }

    /// Bound on `Σ_{a<b} 2|d_a d_b| / |b_a - b_b|`, the oscillating part of
    /// `|D(u)|²` after one integration by parts.
    fn oscillation_weight(&self) -> f64 {
        let mut acc = 0.0;
        for (i, a) in self.jumps.iter().enumerate() {
            for b in &self.jumps[i + 1..] {
                let gap = (b.at - a.at).abs();
                if gap > 0.0 {
                    acc += 2.0 * a.weight.norm() * b.weight.norm() / gap;
                }
            }
        }
        acc
    }
}

pub fn filter(modulation: &Modulation, u: f64) -> FilterEvaluation {
    let value = FilterKernel::new(modulation).eval(u);
    FilterEvaluation { u, value, power: value.norm_sqr() }
}

/// Boundary weights `e_a` of the pairwise closed form:
/// `e_0 = 1`, `e_j = 2(-1)^j`, `e_{N+1} = (-1)^{N+1}`.
pub(crate) fn boundary_weights(n: usize) -> Vec<f64> {
    let mut e = Vec::with_capacity(n + 2);
    e.push(1.0);
    for j in 1..=n {
        e.push(if j % 2 == 0 { 2.0 } else { -2.0 });
    }
    e.push(if n % 2 == 0 { -1.0 } else { 1.0 });
    e
}

/// `φ_k` of an ideal π-pulse sequence from the closed pairwise sum
/// `φ_k = -1/((k+1)(k+2)) Σ_{a<b} e_a e_b (s_b - s_a)^{k+2}` over the
/// boundaries `s_0 = 0, s_1 … s_N, s_{N+1} = 1`.
pub fn phi_k_closed(seq: &PulseSequence, k: usize) -> f64 {
    let b = seq.boundaries();
    let e = boundary_weights(seq.len());
    let p = k as i32 + 2;
    let mut acc = Neumaier::default();
    for i in 0..b.len() {
        for j in i + 1..b.len() {
            acc.add(e[i] * e[j] * (b[j] - b[i]).powi(p));
        }
    }
    -acc.sum() / ((k + 1) * (k + 2)) as f64
}

/// Even-order `φ_{2m}` from moments:
/// `(2m)!/2 · Re Σ_r (-1)^r λ_r* λ_{2m-r} / (r! (2m-r)!)`.
pub fn phi_even_bilinear(modulation: &Modulation, m: usize) -> f64 {
    let k = 2 * m;
    let lam = lambdas(modulation, k);
    let sum = compensated_sum((0..=k).map(|r| {
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        sign * (lam[r].conj() * lam[k - r]).re / (factorial(r) * factorial(k - r))
    }));
    factorial(k) / 2.0 * sum
}

/// `φ_k = Re ∬_{s₂<s₁} (s₁ - s₂)^k F*(s₁) F(s₂)` by nested adaptive
/// Gauss-Kronrod quadrature. Panels are split at the modulation's
/// discontinuities and further into `panels` uniform pieces.
pub fn phi_k_bruteforce(modulation: &Modulation, k: usize, panels: usize) -> Result<f64> {
    let panels = panels.max(1);
    let mut edges: Vec<f64> = (0..=panels).map(|i| i as f64 / panels as f64).collect();
    edges.extend(modulation.interior_breaks());
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let tol = 1e-12;
    let inner_opts = QuadOptions { abs_tol: 1e-13, rel_tol: tol, max_intervals: 4000 };
    let inner_failures = std::cell::Cell::new(0.0f64);
    let outer = |s1: f64| -> f64 {
        let mut inner_edges: Vec<f64> = edges.iter().copied().filter(|&x| x < s1).collect();
        inner_edges.push(s1);
        let f = |s2: f64| (s1 - s2).powi(k as i32);
        let re = integrate_panels(|s2| f(s2) * modulation.value_at(s2).re, &inner_edges, inner_opts);
        let im = integrate_panels(|s2| f(s2) * modulation.value_at(s2).im, &inner_edges, inner_opts);
        if !(re.converged && im.converged) {
            inner_failures.set(inner_failures.get().max(re.error.max(im.error)));
        }
        let inner = Complex64::new(re.value, im.value);
        (modulation.value_at(s1).conj() * inner).re
    };
    let abs_tol = 1e-14;
    let res = integrate_panels(outer, &edges, QuadOptions { abs_tol, rel_tol: tol, max_intervals: 4000 });
    let achieved = res.error.max(inner_failures.get());
    if !res.converged || inner_failures.get() > 0.0 {
        return Err(Error::QuadratureNonConvergence { achieved, requested: abs_tol.max(tol * res.value.abs()) });
    }
    Ok(res.value)
}

/// Value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn check_constraints(modulation: &Modulation, m: usize) -> Result<()> {
    for order in 0..m {
        let lam = lambda_m(modulation, order).norm();
        if lam >= CONSTRAINT_TOL {
            return Err(Error::Divergent(format!(
                "constraints not satisfied; spectral form divergent (|λ_{order}| = {lam:.3e})"
            )));
        }
    }
    Ok(())
}

fn unit_panels(upper: f64, step: f64) -> Vec<f64> {
    let n = (upper / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| (i as f64 * step).min(upper)).collect()
}

/// `φ_{2M-1} = (-1)^M (2M-1)! ∫ dω/(2π) |f̃(ω)|² / ω^{2M}` for a sequence
/// whose first `M` moments vanish.
pub fn phi_odd_spectral(seq: &PulseSequence, m: usize, tol: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter("constraint order M must be at least 1".into()));
    }
    let modulation = modulation_of(seq);
    check_constraints(&modulation, m)?;
    let kernel = FilterKernel::new(&modulation);
    let u_max = if m == 1 { 4000.0 } else { 1000.0 };
    let edges = unit_panels(u_max, PI / 2.0);
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: 0.1 * tol, max_intervals: 200_000 };
    let res = integrate_panels(|u| kernel.power_reduced(u, m), &edges, opts);
    let q = (2 * m + 1) as i32;
    let tail_mean = kernel.mean_jump_power() / (q as f64 * u_max.powi(q));
    let tail_osc = 2.0 * kernel.oscillation_weight() / u_max.powi(q + 1);
    let pref = factorial(2 * m - 1) / PI;
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let value = sign * pref * (res.value + tail_mean);
    let error = pref * (res.error + tail_osc);
    if !res.converged || error > tol * value.abs() {
        return Err(Error::QuadratureNonConvergence { achieved: error / value.abs(), requested: tol });
    }
    Ok(value)
}

/// `χ(T) = T² ∫₀^∞ (dω/2π) S(ω) |f̃(ωT)|²`, integrated in `u = ωT`.
///
/// This is `½ ∬ C(t₁ - t₂) F*(t₁/T) F(t₂/T)` under the pair
/// `C(t) = ∫ (dω/2π) S(ω) e^{-iωt}`, so that `W(T) = e^{-χ(T)}`.
///
/// For power-law tails the integral stops at `u_max = max(10³, 10 ω_char T)`
/// and the envelope bound `S a² / ω²` beyond it is added to the error.
pub fn chi_spectral(modulation: &Modulation, noise: &NoiseModel, t: f64) -> Result<Estimate> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t}")));
    }
    let kernel = FilterKernel::new(modulation);
    if !noise.spectrum(0.0).is_finite() && kernel.lambdas[0].norm() > CONSTRAINT_TOL {
        return Err(Error::Divergent("infrared-divergent spectrum requires λ_0 = 0".into()));
    }
    let scale = noise.char_frequency() * t;
    let (u_hi, tail) = match noise.spectral_support() {
        SpectralSupport::Bounded(w) => {
            let mass = if noise.hard_cutoff().is_some() { 0.0 } else { noise.spectral_mass_above(w) };
            (w * t, 0.5 * t * t * kernel.l1_norm().powi(2) * mass)
        }
        SpectralSupport::PowerLawTail { alpha, p } => {
            let u_hi = (1e3f64).max(10.0 * scale);
            let a = kernel.jump_bound();
            let tail = t * alpha * t.powf(p) * a * a / (2.0 * PI * (p + 1.0) * u_hi.powf(p + 1.0));
            (u_hi, tail)
        }
    };

    let mut edges = unit_panels(u_hi, 1.0);
    let mut g = scale.min(u_hi);
    while g > 1e-12 * scale {
        edges.push(g);
        g *= std::f64::consts::FRAC_1_SQRT_2;
    }
    let mut g = scale;
    while g < u_hi {
        edges.push(g);
        g *= 2.0;
    }
    edges.retain(|&x| x >= 0.0 && x <= u_hi);
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    // Rounding in the jump sum limits |f̃|² to about ε times its envelope
    // min(‖F‖₁, a/u)², so the absolute target follows the envelope integral.
    let (l1, a) = (kernel.l1_norm(), kernel.jump_bound());
    let envelope = integrate_panels(
        |u| noise.spectrum(u / t) * (l1 * l1).min(a * a / (u * u)),
        &edges,
        QuadOptions { abs_tol: 0.0, rel_tol: 1e-3, max_intervals: 10_000 },
    );
    let opts = QuadOptions { abs_tol: 1e-14 * envelope.value, rel_tol: 1e-11, max_intervals: 400_000 };
    let res = integrate_panels(|u| noise.spectrum(u / t) * kernel.power_reduced(u, 0), &edges, opts);
    let value = t / (2.0 * PI) * res.value;
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite spectral overlap".into()));
    }
    Ok(Estimate { value, error: t / (2.0 * PI) * res.error + tail })
}

/// Direct time-domain evaluation through the second antiderivative `G` of
/// the correlation: `χ = -Σ_{a<b} Re(d_a* d_b) G(T |b_a - b_b|)` over the
/// jumps `d` of the modulation. Exact for piecewise-constant modulations,
/// but the pair sum cancels heavily once many moments vanish and `T` is
/// short, so it serves as a cross-check at moderate `T`.
pub fn chi_time_domain(modulation: &Modulation, noise: &NoiseModel, t: f64) -> f64 {
    let jumps = modulation.jumps();
    let mut acc = Neumaier::default();
    for (i, a) in jumps.iter().enumerate() {
        for b in &jumps[i + 1..] {
            let w = (a.weight.conj() * b.weight).re;
            if w != 0.0 {
                acc.add(-w * noise.correlation_second_integral(t * (b.at - a.at)));
            }
        }
    }
    acc.sum()
}

/// Partial sum `Σ_{k ≤ k_max} C_k φ_k T^{k+2}`; the error is the magnitude
/// of the last non-zero term.
pub fn chi_series(seq: &PulseSequence, expansion: &CorrelationExpansion, t: f64, k_max: usize) -> Result<Estimate> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t}")));
    }
    let top = k_max.min(expansion.k_max());
    let mut terms = Vec::new();
    for k in 0..=top {
        let c = expansion.coefficients[k];
        if c == 0.0 {
            continue;
        }
        let phi = phi_k_closed(seq, k);
        if phi.abs() < PHI_FLOOR {
            continue;
        }
        terms.push(c * phi * t.powi(k as i32 + 2));
    }
    let value = compensated_sum(terms.iter().copied());
    let error = terms.last().map(|x| x.abs()).unwrap_or(0.0);
    if terms.len() >= 2 {
        let ratio = (terms[terms.len() - 1] / terms[terms.len() - 2]).abs();
        if ratio >= SERIES_RATIO_LIMIT {
            return Err(Error::SeriesUnreliable { ratio, limit: SERIES_RATIO_LIMIT });
        }
    }
    Ok(Estimate { value, error })
}

/// Least-squares power law `χ ∝ T^slope`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub t: Vec<f64>,
    pub chi: Vec<f64>,
}

pub fn fit_power_law(ts: &[f64], chis: &[f64]) -> Result<ScalingFit> {
    if ts.len() < 3 || ts.len() != chis.len() {
        return Err(Error::FitRejected("need at least three (T, χ) points".into()));
    }
    if chis.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::FitRejected("χ must be strictly positive for a log-log fit".into()));
    }
    let mut pairs: Vec<(f64, f64)> = ts.iter().copied().zip(chis.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.windows(2).any(|w| w[1].1 <= w[0].1) {
        return Err(Error::FitRejected("χ is not monotone on the T grid".into()));
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok(ScalingFit {
        slope,
        stderr,
        intercept,
        t: pairs.iter().map(|p| p.0).collect(),
        chi: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Fitted exponent of `χ(T)` for an `n`-pulse member of `family`.
pub fn decoupling_order(noise: &NoiseModel, family: SequenceFamily, n: usize, t_grid: &[f64]) -> Result<ScalingFit> {
    let lo = t_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t_grid.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || hi / lo < 10.0 {
        return Err(Error::InvalidParameter("T grid must be positive and span at least one decade".into()));
    }
    let seq = if n == 0 { PulseSequence::free_evolution() } else { family.generate(n)? };
    let modulation = modulation_of(&seq);
    let chis = t_grid
        .iter()
        .map(|&t| chi_spectral(&modulation, noise, t).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;
    fit_power_law(t_grid, &chis)
}

/// Geometric grid of `n` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChiMethod {
    Spectral,
    Series,
}

impl std::str::FromStr for ChiMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(ChiMethod::Spectral),
            "series" => Ok(ChiMethod::Series),
            other => Err(Error::InvalidParameter(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceReport {
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    pub chi: f64,
    pub chi_err: f64,
    pub method: ChiMethod,
}

impl DecoherenceReport {
    /// Number of leading moments that vanish, i.e. the largest `M` with
    /// `λ_0 = … = λ_{M-1} = 0` within the reported range.
    pub fn vanishing_moments(&self) -> usize {
        self.lambda.iter().take_while(|l| l.abs() < CONSTRAINT_TOL).count()
    }
}

pub fn decoherence_report(
    seq: &PulseSequence,
    noise: &NoiseModel,
    t: f64,
    k_max: usize,
    method: ChiMethod,
) -> Result<DecoherenceReport> {
    let modulation = modulation_of(seq);
    let lambda = lambdas(&modulation, k_max).iter().map(|l| l.re).collect();
    let phi = (0..=k_max).map(|k| phi_k_closed(seq, k)).collect();
    let chi = match method {
        ChiMethod::Spectral => chi_spectral(&modulation, noise, t)?,
        ChiMethod::Series => chi_series(seq, &noise.correlation_expansion(k_max)?, t, k_max)?,
    };
    Ok(DecoherenceReport { lambda, phi, chi: chi.value, chi_err: chi.error, method })
}
