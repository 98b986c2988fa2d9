//! Stationary Gaussian dephasing noise.
//!
//! Spectrum and correlation are related by
//! `C(t) = ∫ dω/(2π) S(ω) e^{-iωt} = (1/π) ∫₀^∞ S(ω) cos(ωt) dω`
//! for every built-in family. Under this convention the exponential
//! correlation `e^{-|t|/t_c}` has the Lorentzian `2 t_c / (1 + (ω t_c)²)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_panels, Chebyshev, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    /// `S(ω) = α / (Ω_c^{2K} + ω^{2K})`.
    SoftPowerLaw { alpha: f64, k: u32, omega_c: f64 },
    /// `C(t) = e^{-|t|/t_c}`.
    ExpCorrelation { tc: f64 },
    /// `C(t) = e^{-(t/σ_t)²}`.
    GaussCorrelation { sigma_t: f64 },
    /// Constant `S₀` up to the model's hard cutoff.
    Flat { s0: f64 },
}

/// High-frequency behaviour of a spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailDescriptor {
    /// `S(ω) ≈ α / ω^P` for large ω.
    PowerLaw { alpha: f64, p: f64 },
    HardCutoff,
}

/// Where the spectrum lives, as needed by frequency quadratures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralSupport {
    /// Negligible (or exactly zero) above the given frequency.
    Bounded(f64),
    /// Unbounded with `S(ω) ≤ α / ω^P` everywhere.
    PowerLawTail { alpha: f64, p: f64 },
}

/// Short-time coefficients `C_k` of `C(t) = Σ C_k |t|^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationExpansion {
    pub coefficients: Vec<f64>,
    /// Index `2K - 1` of the first non-zero odd coefficient within range.
    pub leading_odd: Option<usize>,
}

impl CorrelationExpansion {
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        let leading_odd = coefficients
            .iter()
            .enumerate()
            .find(|(k, c)| k % 2 == 1 && **c != 0.0)
            .map(|(k, _)| k);
        CorrelationExpansion { coefficients, leading_odd }
    }

    pub fn k_max(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    /// Truncated series `Σ_{k ≤ k_max} C_k |t|^k`.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Smallest `ω t` at which the asymptotic cosine tail is used.
const TAIL_PHASE: f64 = 100.0;

/// `∫_u^∞ cos(ωt) ω^{-p} dω` for `p > 1`, by the asymptotic series in
/// `1/(ut)` when `t > 0`.
fn power_law_cos_tail(p: f64, u: f64, t: f64) -> f64 {
    if t == 0.0 {
        return u.powf(1.0 - p) / (p - 1.0);
    }
    let x = u * t;
    let ix = Complex64::new(0.0, x);
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    for j in 0..40 {
        let next = term * (p + j as f64) / ix;
        if next.norm() >= term.norm() || next.norm() < 1e-17 {
            break;
        }
        term = next;
        sum += term;
    }
    (-Complex64::from_polar(1.0, x) / ix * sum).re * u.powf(1.0 - p)
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    family: NoiseFamily,
    hard_cutoff: Option<f64>,
    interpolant: OnceLock<Chebyshev>,
}

impl PartialEq for NoiseModel {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family && self.hard_cutoff == other.hard_cutoff
    }
}

fn positive(name: &str, x: f64) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {x}")))
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `e^w - 1 - w`, accurate for small |w|.
fn exp_rem2(w: Complex64) -> Complex64 {
    if w.norm() < 0.5 {
        let mut term = w * w / 2.0;
        let mut sum = term;
        for n in 3..30 {
            term = term * w / n as f64;
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
        }
        sum
    } else {
        w.exp() - 1.0 - w
    }
}

/// Relative level `S/S(0)` below which the Gaussian spectrum is treated as zero.
const GAUSS_NEGLIGIBLE: f64 = 1e-18;

impl NoiseModel {
    fn from_family(family: NoiseFamily) -> Self {
        NoiseModel { family, hard_cutoff: None, interpolant: OnceLock::new() }
    }

    pub fn make_soft_power_law(alpha: f64, k: u32, omega_c_soft: f64) -> Result<Self> {
        positive("alpha", alpha)?;
        positive("omega_c_soft", omega_c_soft)?;
        if k == 0 || k > 32 {
            return Err(Error::InvalidParameter(format!("K must be in 1..=32, got {k}")));
        }
        Ok(Self::from_family(NoiseFamily::SoftPowerLaw { alpha, k, omega_c: omega_c_soft }))
    }

    pub fn make_exponential_correlation(tc: f64) -> Result<Self> {
        positive("tc", tc)?;
        Ok(Self::from_family(NoiseFamily::ExpCorrelation { tc }))
    }

    pub fn make_gaussian_correlation(sigma_t: f64) -> Result<Self> {
        positive("sigma_t", sigma_t)?;
        Ok(Self::from_family(NoiseFamily::GaussCorrelation { sigma_t }))
    }

    /// Band-limited white noise, `S = s0` on `|ω| ≤ omega_c`.
    pub fn make_flat(s0: f64, omega_c: f64) -> Result<Self> {
        if !(s0.is_finite() && s0 >= 0.0) {
            return Err(Error::InvalidParameter(format!("s0 must be non-negative, got {s0}")));
        }
        positive("omega_c", omega_c)?;
        Ok(NoiseModel {
            family: NoiseFamily::Flat { s0 },
            hard_cutoff: Some(omega_c),
            interpolant: OnceLock::new(),
        })
    }

    /// `S ≡ 0`.
    pub fn zero() -> Self {
        Self::make_flat(0.0, 1.0).expect("valid parameters")
    }

    /// Sets the spectrum to zero above `omega_c`.
    pub fn with_hard_cutoff(&self, omega_c: f64) -> Result<Self> {
        positive("omega_c", omega_c)?;
        let cut = match self.hard_cutoff {
            Some(existing) => existing.min(omega_c),
            None => omega_c,
        };
        Ok(NoiseModel { family: self.family, hard_cutoff: Some(cut), interpolant: OnceLock::new() })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn hard_cutoff(&self) -> Option<f64> {
        self.hard_cutoff
    }

    /// Characteristic correlation time of the family.
    pub fn char_time(&self) -> f64 {
        match self.family {
            NoiseFamily::SoftPowerLaw { omega_c, .. } => 1.0 / omega_c,
            NoiseFamily::ExpCorrelation { tc } => tc,
            NoiseFamily::GaussCorrelation { sigma_t } => sigma_t,
            NoiseFamily::Flat { .. } => 1.0 / self.hard_cutoff.unwrap_or(1.0),
        }
    }

    pub fn char_frequency(&self) -> f64 {
        1.0 / self.char_time()
    }

    fn raw_spectrum(&self, w: f64) -> f64 {
        match self.family {
            NoiseFamily::SoftPowerLaw { alpha, k, omega_c } => {
                let two_k = 2 * k as i32;
                alpha / (omega_c.powi(two_k) + w.powi(two_k))
            }
            NoiseFamily::ExpCorrelation { tc } => 2.0 * tc / (1.0 + (w * tc).powi(2)),
            NoiseFamily::GaussCorrelation { sigma_t } => {
                sigma_t * PI.sqrt() * (-(w * sigma_t).powi(2) / 4.0).exp()
            }
            NoiseFamily::Flat { s0 } => s0,
        }
    }

    /// `S(ω)`, even in ω.
    pub fn spectrum(&self, omega: f64) -> f64 {
        let w = omega.abs();
        match self.hard_cutoff {
            Some(wc) if w > wc => 0.0,
            _ => self.raw_spectrum(w),
        }
    }

    fn soft_poles(k: u32, omega_c: f64) -> impl Iterator<Item = Complex64> {
        let two_k = 2.0 * k as f64;
        (0..k).map(move |n| Complex64::from_polar(omega_c, PI * (2 * n + 1) as f64 / two_k))
    }

    fn closed_correlation(&self, t: f64) -> f64 {
        match self.family {
            NoiseFamily::SoftPowerLaw { alpha, k, omega_c } => {
                // residues of the upper half-plane poles z_n = Ω_c e^{iπ(2n+1)/2K}
                let pref = Complex64::new(0.0, alpha / (2.0 * k as f64));
                let sum: Complex64 = Self::soft_poles(k, omega_c)
                    .map(|z| (Complex64::i() * z * t).exp() / z.powi(2 * k as i32 - 1))
                    .sum();
                (pref * sum).re
            }
            NoiseFamily::ExpCorrelation { tc } => (-t / tc).exp(),
            NoiseFamily::GaussCorrelation { sigma_t } => (-(t / sigma_t).powi(2)).exp(),
            NoiseFamily::Flat { s0 } => {
                let wc = self.hard_cutoff.unwrap_or(1.0);
                let x = wc * t;
                let sinc = if x.abs() < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x };
                s0 * wc * sinc / PI
            }
        }
    }

    fn needs_numeric_correlation(&self) -> bool {
        self.hard_cutoff.is_some() && !matches!(self.family, NoiseFamily::Flat { .. })
    }

    fn frequency_edges(&self, upper: f64, t: f64) -> Vec<f64> {
        let by_oscillation = (upper * t.abs() / PI).ceil() as usize;
        let by_shape = (upper / self.char_frequency()).ceil() as usize;
        let n = (by_oscillation + by_shape + 8).min(8192);
        (0..=n).map(|i| upper * i as f64 / n as f64).collect()
    }

    /// `(1/π) ∫₀^{ω_c} S(ω) cos(ωt) dω` by quadrature.
    /// Power-law tails beyond the integration range are added analytically
    /// from their asymptotic form.
    pub fn correlation_by_quadrature(&self, t: f64) -> f64 {
        let t = t.abs();
        let mut upper = self.integration_upper();
        let tail = match self.spectral_support() {
            SpectralSupport::Bounded(_) => None,
            SpectralSupport::PowerLawTail { alpha, p } => {
                if t > 0.0 {
                    upper = upper.max(TAIL_PHASE / t);
                }
                Some(alpha * power_law_cos_tail(p, upper, t))
            }
        };
        let edges = self.frequency_edges(upper, t);
        let opts = QuadOptions { abs_tol: 1e-13 * self.variance_scale(), rel_tol: 1e-12, ..Default::default() };
        let body = integrate_panels(|w| self.spectrum(w) * (w * t).cos(), &edges, opts).value;
        (body + tail.unwrap_or(0.0)) / PI
    }

    fn variance_scale(&self) -> f64 {
        self.closed_correlation(0.0).abs().max(f64::MIN_POSITIVE)
    }

    fn integration_upper(&self) -> f64 {
        match self.spectral_support() {
            SpectralSupport::Bounded(w) => w,
            SpectralSupport::PowerLawTail { .. } => 1e4 * self.char_frequency(),
        }
    }

    fn interpolant_span(&self) -> f64 {
        40.0 * self.char_time()
    }

    /// `C(t)`, even in t. Models with a hard cutoff use a cached Chebyshev
    /// interpolant of the quadrature on `[0, 40 t_char]`.
    pub fn correlation(&self, t: f64) -> f64 {
        let t = t.abs();
        if !self.needs_numeric_correlation() {
            return self.closed_correlation(t);
        }
        let span = self.interpolant_span();
        if t > span {
            return self.correlation_by_quadrature(t);
        }
        let cheb = self.interpolant.get_or_init(|| {
            Chebyshev::fit_adaptive(|x| self.correlation_by_quadrature(x), 0.0, span, 64, 4096, 1e-10)
        });
        cheb.eval(t)
    }

    /// `G(t) = ∫₀^t (t - τ) C(τ) dτ`, the second antiderivative of the
    /// correlation with `G(0) = G'(0) = 0`.
    pub fn correlation_second_integral(&self, t: f64) -> f64 {
        let t = t.abs();
        if self.hard_cutoff.is_some() {
            // (1/π) ∫ S(ω) (1 - cos ωt) / ω² dω
            let upper = self.integration_upper();
            let edges = self.frequency_edges(upper, t);
            let opts = QuadOptions { abs_tol: 1e-13 * self.variance_scale() * t * t, rel_tol: 1e-12, ..Default::default() };
            let f = |w: f64| {
                if w == 0.0 {
                    self.spectrum(0.0) * t * t / 2.0
                } else {
                    let s = (0.5 * w * t).sin();
                    self.spectrum(w) * 2.0 * s * s / (w * w)
                }
            };
            return integrate_panels(f, &edges, opts).value / PI;
        }
        match self.family {
            NoiseFamily::SoftPowerLaw { alpha, k, omega_c } => {
                let pref = Complex64::new(0.0, alpha / (2.0 * k as f64));
                let sum: Complex64 = Self::soft_poles(k, omega_c)
                    .map(|z| -exp_rem2(Complex64::i() * z * t) / z.powi(2 * k as i32 + 1))
                    .sum();
                (pref * sum).re
            }
            NoiseFamily::ExpCorrelation { tc } => {
                let x = t / tc;
                // x - 1 + e^{-x}
                let g = if x < 0.1 {
                    let mut term = x * x / 2.0;
                    let mut sum = term;
                    for n in 3..25 {
                        term *= -x / n as f64;
                        sum += term;
                    }
                    sum
                } else {
                    x + (-x).exp_m1()
                };
                tc * tc * g
            }
            NoiseFamily::GaussCorrelation { sigma_t } => {
                let x = t / sigma_t;
                sigma_t * sigma_t * (x * PI.sqrt() / 2.0 * libm::erf(x) + 0.5 * (-x * x).exp_m1())
            }
            NoiseFamily::Flat { .. } => unreachable!("flat noise always carries a cutoff"),
        }
    }

    pub fn spectral_support(&self) -> SpectralSupport {
        if let Some(wc) = self.hard_cutoff {
            return SpectralSupport::Bounded(wc);
        }
        match self.family {
            NoiseFamily::SoftPowerLaw { alpha, k, .. } => SpectralSupport::PowerLawTail { alpha, p: 2.0 * k as f64 },
            NoiseFamily::ExpCorrelation { tc } => SpectralSupport::PowerLawTail { alpha: 2.0 / tc, p: 2.0 },
            NoiseFamily::GaussCorrelation { sigma_t } => {
                SpectralSupport::Bounded(2.0 * (-GAUSS_NEGLIGIBLE.ln()).sqrt() / sigma_t)
            }
            NoiseFamily::Flat { .. } => unreachable!("flat noise always carries a cutoff"),
        }
    }

    pub fn spectrum_tail_descriptor(&self) -> TailDescriptor {
        if self.hard_cutoff.is_some() {
            return TailDescriptor::HardCutoff;
        }
        match self.family {
            NoiseFamily::SoftPowerLaw { alpha, k, .. } => TailDescriptor::PowerLaw { alpha, p: 2.0 * k as f64 },
            NoiseFamily::ExpCorrelation { tc } => TailDescriptor::PowerLaw { alpha: 2.0 / tc, p: 2.0 },
            NoiseFamily::GaussCorrelation { .. } | NoiseFamily::Flat { .. } => TailDescriptor::HardCutoff,
        }
    }

    /// `(1/π) ∫_ω^∞ S`, the variance carried by frequencies above `omega`.
    pub fn spectral_mass_above(&self, omega: f64) -> f64 {
        let omega = omega.max(0.0);
        if let Some(wc) = self.hard_cutoff {
            if omega >= wc {
                return 0.0;
            }
            let n = ((wc - omega) / self.char_frequency()).ceil().clamp(1.0, 4096.0) as usize;
            let edges: Vec<f64> = (0..=n).map(|i| omega + (wc - omega) * i as f64 / n as f64).collect();
            let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-12, ..Default::default() };
            return integrate_panels(|w| self.spectrum(w), &edges, opts).value / PI;
        }
        match self.family {
            NoiseFamily::ExpCorrelation { tc } => 1.0 - 2.0 / PI * (omega * tc).atan(),
            NoiseFamily::GaussCorrelation { sigma_t } => libm::erfc(omega * sigma_t / 2.0),
            NoiseFamily::SoftPowerLaw { omega_c, .. } => {
                // [ω, a] directly, [a, ∞) through x = a/v
                let a = omega.max(omega_c);
                let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-12, ..Default::default() };
                let far = integrate(
                    |v| if v == 0.0 { 0.0 } else { self.raw_spectrum(a / v) * a / (v * v) },
                    0.0,
                    1.0,
                    opts,
                )
                .value;
                let near = if omega < a { integrate(|w| self.raw_spectrum(w), omega, a, opts).value } else { 0.0 };
                (far + near) / PI
            }
            NoiseFamily::Flat { .. } => unreachable!("flat noise always carries a cutoff"),
        }
    }

    /// Short-time expansion coefficients `C_0 … C_{k_max}`.
    pub fn correlation_expansion(&self, k_max: usize) -> Result<CorrelationExpansion> {
        if k_max > 120 {
            return Err(Error::ExpansionUnavailable(format!("k_max = {k_max} exceeds supported order 120")));
        }
        let coeffs: Vec<f64> = if let (Some(wc), false) = (self.hard_cutoff, matches!(self.family, NoiseFamily::Flat { .. })) {
            // band-limited: C_{2j} = (-1)^j / (π (2j)!) ∫₀^{ω_c} S ω^{2j} dω, odd terms vanish
            (0..=k_max)
                .map(|k| {
                    if k % 2 == 1 {
                        return 0.0;
                    }
                    let n = (wc / self.char_frequency()).ceil().clamp(4.0, 4096.0) as usize;
                    let edges: Vec<f64> = (0..=n).map(|i| wc * i as f64 / n as f64).collect();
                    let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-13, ..Default::default() };
                    let moment = integrate_panels(|w| self.spectrum(w) * w.powi(k as i32), &edges, opts).value;
                    let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * moment / (PI * factorial(k))
                })
                .collect()
        } else {
            (0..=k_max).map(|k| self.family_coefficient(k)).collect()
        };
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::ExpansionUnavailable(format!("coefficient C_{k} is not finite")));
        }
        Ok(CorrelationExpansion::from_coefficients(coeffs))
    }

    fn family_coefficient(&self, m: usize) -> f64 {
        match self.family {
            NoiseFamily::SoftPowerLaw { alpha, k, omega_c } => {
                let k = k as usize;
                if m % 2 == 1 && (m + 1) % (2 * k) != 0 {
                    return 0.0;
                }
                // C_m = Re[(iα/2K) Ω_c^{m+1-2K} i^m / m! Σ_n e^{iθ_n (m+1-2K)}]
                let p = m as i32 + 1 - 2 * k as i32;
                let phase_sum: Complex64 = (0..k)
                    .map(|n| Complex64::from_polar(1.0, PI * (2 * n + 1) as f64 * p as f64 / (2 * k) as f64))
                    .sum();
                let i_pow = Complex64::i().powi(m as i32);
                let val = Complex64::new(0.0, alpha / (2.0 * k as f64)) * omega_c.powi(p) * i_pow * phase_sum
                    / factorial(m);
                val.re
            }
            NoiseFamily::ExpCorrelation { tc } => (-1.0 / tc).powi(m as i32) / factorial(m),
            NoiseFamily::GaussCorrelation { sigma_t } => {
                if m % 2 == 1 {
                    0.0
                } else {
                    let j = m / 2;
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign / (factorial(j) * sigma_t.powi(m as i32))
                }
            }
            NoiseFamily::Flat { s0 } => {
                if m % 2 == 1 {
                    0.0
                } else {
                    let wc = self.hard_cutoff.unwrap_or(1.0);
                    let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * s0 * wc.powi(m as i32 + 1) / (PI * factorial(m + 1))
                }
            }
        }
    }

    pub fn spec(&self) -> NoiseSpec {
        let mut spec = NoiseSpec { hard_cutoff: self.hard_cutoff, ..Default::default() };
        match self.family {
            NoiseFamily::SoftPowerLaw { alpha, k, omega_c } => {
                spec.family = "soft_power_law".into();
                spec.alpha = Some(alpha);
                spec.k = Some(k);
                spec.omega_c_soft = Some(omega_c);
            }
            NoiseFamily::ExpCorrelation { tc } => {
                spec.family = "exp_corr".into();
                spec.tc = Some(tc);
            }
            NoiseFamily::GaussCorrelation { sigma_t } => {
                spec.family = "gauss_corr".into();
                spec.sigma_t = Some(sigma_t);
            }
            NoiseFamily::Flat { s0 } => {
                spec.family = "flat".into();
                spec.s0 = Some(s0);
            }
        }
        spec
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<NoiseSpec>(text)?.build()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec()).expect("noise spec serialization is infallible")
    }
}

/// One-sided finite-difference estimate of `C_k = C^{(k)}(0⁺) / k!` using
/// `k + 5` forward nodes `0, h, 2h, …`.
pub fn finite_difference_coefficients<F: Fn(f64) -> f64>(f: F, k_max: usize, h: f64) -> Vec<f64> {
    (0..=k_max)
        .map(|k| {
            let nodes: Vec<f64> = (0..k + 5).map(|j| j as f64 * h).collect();
            let w = fornberg_weights(0.0, &nodes, k);
            let d: f64 = nodes.iter().zip(&w).map(|(x, w)| w * f(*x)).sum();
            d / factorial(k)
        })
        .collect()
}

/// Finite-difference weights for the `order`-th derivative at `x0`.
fn fornberg_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}

/// JSON description of a noise model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_c_soft: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(default)]
    pub hard_cutoff: Option<f64>,
}

impl NoiseSpec {
    pub fn build(&self) -> Result<NoiseModel> {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::InvalidParameter(format!("family '{}' requires '{name}'", self.family)))
        };
        let base = match self.family.as_str() {
            "soft_power_law" => NoiseModel::make_soft_power_law(
                need("alpha", self.alpha)?,
                self.k.ok_or_else(|| Error::InvalidParameter("family 'soft_power_law' requires 'K'".into()))?,
                need("omega_c_soft", self.omega_c_soft)?,
            )?,
            "exp_corr" => NoiseModel::make_exponential_correlation(need("tc", self.tc)?)?,
            "gauss_corr" => NoiseModel::make_gaussian_correlation(need("sigma_t", self.sigma_t)?)?,
            "flat" => {
                let wc = need("hard_cutoff", self.hard_cutoff)?;
                return NoiseModel::make_flat(need("s0", self.s0)?, wc);
            }
            other => return Err(Error::InvalidParameter(format!("unknown noise family '{other}'"))),
        };
        match self.hard_cutoff {
            Some(wc) => base.with_hard_cutoff(wc),
            None => Ok(base),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_k1_matches_exponential() {
        let (alpha, wc) = (3.0, 2.0);
        let m = NoiseModel::make_soft_power_law(alpha, 1, wc).unwrap();
        for t in [0.0, 0.1, 0.7, 2.5] {
            let expect = alpha / (2.0 * wc) * (-wc * t).exp();
            assert!((m.correlation(t) - expect).abs() < 1e-14, "t = {t}");
        }
    }

    #[test]
    fn fig3_spectrum_value() {
        let m = NoiseModel::make_soft_power_law(1e5, 2, 1.0).unwrap();
        assert!((m.spectrum(40.0) - 1e5 / (1.0 + 40f64.powi(4))).abs() < 1e-15);
        assert!((m.spectrum(40.0) - 0.039_062_4).abs() < 1e-6);
        assert_eq!(m.spectrum(0.0), 1e5);
    }

    #[test]
    fn exp_values() {
        let m = NoiseModel::make_exponential_correlation(0.5).unwrap();
        assert_eq!(m.correlation(0.0), 1.0);
        assert_eq!(m.spectrum(0.0), 1.0);
        let e = m.correlation_expansion(3).unwrap();
        assert_eq!(e.coefficients[1], -2.0);
        assert_eq!(e.leading_odd, Some(1));
    }

    #[test]
    fn gauss_expansion() {
        let m = NoiseModel::make_gaussian_correlation(2.0).unwrap();
        let e = m.correlation_expansion(7).unwrap();
        assert!(e.coefficients.iter().skip(1).step_by(2).all(|c| *c == 0.0));
        assert_eq!(e.coefficients[2], -0.25);
        assert_eq!(e.leading_odd, None);
        assert_eq!(m.spectrum_tail_descriptor(), TailDescriptor::HardCutoff);
    }

    #[test]
    fn soft_leading_odd_terms() {
        for k in 1..=3u32 {
            let alpha = 7.0;
            let m = NoiseModel::make_soft_power_law(alpha, k, 1.3).unwrap();
            let e = m.correlation_expansion(2 * k as usize + 2).unwrap();
            let lead = 2 * k as usize - 1;
            assert_eq!(e.leading_odd, Some(lead));
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let expect = sign * alpha / (2.0 * factorial(lead));
            assert!((e.coefficients[lead] - expect).abs() < 1e-12 * expect.abs());
        }
        let m = NoiseModel::make_soft_power_law(2.0, 2, 1.0).unwrap();
        let e = m.correlation_expansion(3).unwrap();
        assert!((e.coefficients[3] - 2.0 / 12.0).abs() < 1e-14);
    }

    #[test]
    fn soft_expansion_matches_finite_differences() {
        let m = NoiseModel::make_soft_power_law(1.0, 2, 1.0).unwrap();
        let e = m.correlation_expansion(3).unwrap();
        let fd = finite_difference_coefficients(|t| m.correlation(t), 3, 1e-2);
        for k in 0..=3 {
            assert!((e.coefficients[k] - fd[k]).abs() < 1e-5, "k={k}: {} vs {}", e.coefficients[k], fd[k]);
        }
    }

    #[test]
    fn tail_descriptors() {
        let m = NoiseModel::make_soft_power_law(4.0, 3, 1.0).unwrap();
        assert_eq!(m.spectrum_tail_descriptor(), TailDescriptor::PowerLaw { alpha: 4.0, p: 6.0 });
        let m = NoiseModel::make_exponential_correlation(0.25).unwrap();
        assert_eq!(m.spectrum_tail_descriptor(), TailDescriptor::PowerLaw { alpha: 8.0, p: 2.0 });
    }

    #[test]
    fn hard_cutoff_spectrum() {
        let m = NoiseModel::make_soft_power_law(1e5, 2, 1.0).unwrap().with_hard_cutoff(40.0).unwrap();
        assert_eq!(m.spectrum(40.0 + 1e-9), 0.0);
        assert_eq!(m.spectrum(20.0), 1e5 / (1.0 + 20f64.powi(4)));
        assert_eq!(m.spectrum_tail_descriptor(), TailDescriptor::HardCutoff);
    }

    #[test]
    fn second_integral_matches_quadrature() {
        let models = [
            NoiseModel::make_soft_power_law(2.0, 2, 1.5).unwrap(),
            NoiseModel::make_exponential_correlation(0.7).unwrap(),
            NoiseModel::make_gaussian_correlation(1.2).unwrap(),
        ];
        for m in &models {
            for t in [0.01, 0.3, 2.0] {
                let direct = integrate(|x| (t - x) * m.correlation(x), 0.0, t, QuadOptions { rel_tol: 1e-13, ..Default::default() }).value;
                let g = m.correlation_second_integral(t);
                assert!((g - direct).abs() < 1e-11 * direct.abs().max(1e-6), "{m:?} t={t}: {g} vs {direct}");
            }
        }
    }

    #[test]
    fn spectral_mass_consistent() {
        let m = NoiseModel::make_soft_power_law(3.0, 2, 1.0).unwrap();
        assert!((m.spectral_mass_above(0.0) - m.correlation(0.0)).abs() < 1e-10);
        let m = NoiseModel::make_exponential_correlation(1.0).unwrap();
        assert!((m.spectral_mass_above(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noise_json() {
        let m = NoiseModel::from_json(r#"{"family":"soft_power_law","alpha":1e5,"K":2,"omega_c_soft":1.0,"hard_cutoff":40.0}"#).unwrap();
        assert_eq!(m.hard_cutoff(), Some(40.0));
        assert_eq!(NoiseModel::from_json(&m.to_json()).unwrap(), m);
        assert!(NoiseModel::from_json(r#"{"family":"exp_corr","tc":1.0,"bogus":2}"#).is_err());
        assert!(NoiseModel::from_json(r#"{"family":"exp_corr"}"#).is_err());
        assert!(NoiseModel::from_json(r#"{"family":"pink"}"#).is_err());
        let m = NoiseModel::from_json(r#"{"family":"exp_corr","tc":2.0,"hard_cutoff":null}"#).unwrap();
        assert_eq!(m.correlation(0.0), 1.0);
    }
}
