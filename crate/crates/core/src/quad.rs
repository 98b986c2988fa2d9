//! Numerical integration and summation helpers.
//!
//! Globally adaptive Gauss-Kronrod (7/15 point) quadrature over a list of
//! initial panels, compensated summation, and a Chebyshev interpolant used
//! to cache expensive one-dimensional functions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-10,
            max_intervals: 20_000,
        }
    }
}

/// Single Gauss-Kronrod 15 point evaluation on `[a, b]`: (estimate, error).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let abs_half = half.abs();
    let result = res_k * half;
    res_abs *= abs_half;
    res_asc *= abs_half;
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (result, err)
}

struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over the union of consecutive panels given by `edges`
/// (sorted, at least two entries), bisecting the worst interval until the
/// global error meets the tolerance.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, edges: &[f64], opts: QuadOptions) -> QuadResult {
    let mut heap = BinaryHeap::new();
    for w in edges.windows(2) {
        if w[1] > w[0] {
            let (value, error) = gk15(&f, w[0], w[1]);
            heap.push(Interval { a: w[0], b: w[1], value, error });
        }
    }
    let totals = |heap: &BinaryHeap<Interval>| {
        let mut v = Neumaier::default();
        let mut e = 0.0;
        for iv in heap.iter() {
            v.add(iv.value);
            e += iv.error;
        }
        (v.sum(), e)
    };
    let (mut value, mut error) = totals(&heap);
    let mut since_refresh = 0usize;
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= tol {
            return QuadResult { value, error, converged: true };
        }
        if heap.len() >= opts.max_intervals {
            break;
        }
        let worst = match heap.pop() {
            Some(w) => w,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        value += v1 + v2 - worst.value;
        error += e1 + e2 - worst.error;
        heap.push(Interval { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Interval { a: mid, b: worst.b, value: v2, error: e2 });
        since_refresh += 1;
        if since_refresh >= 64 {
            let (v, e) = totals(&heap);
            value = v;
            error = e;
            since_refresh = 0;
        }
    }
    let (value, error) = totals(&heap);
    let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
    QuadResult { value, error, converged: error <= tol }
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> QuadResult {
    integrate_panels(f, &[a, b], opts)
}

/// Neumaier compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = Neumaier::default();
    for x in iter {
        acc.add(x);
    }
    acc.sum()
}

/// Chebyshev interpolant on `[a, b]`.
#[derive(Debug, Clone)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl Chebyshev {
    /// Samples `f` at `n` Chebyshev points of the first kind.
    pub fn fit<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Self {
        let values: Vec<f64> = (0..n)
            .map(|k| {
                let x = (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos();
                f(0.5 * (a + b) + 0.5 * (b - a) * x)
            })
            .collect();
        let coeffs = (0..n)
            .map(|j| {
                let s = compensated_sum((0..n).map(|k| {
                    values[k]
                        * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n as f64).cos()
                }));
                let c = 2.0 * s / n as f64;
                if j == 0 {
                    0.5 * c
                } else {
                    c
                }
            })
            .collect();
        Chebyshev { a, b, coeffs }
    }

    /// Doubles the node count from `n0` until the trailing coefficients fall
    /// below `tol` relative to the largest one, or `n_max` is reached.
    pub fn fit_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n0: usize, n_max: usize, tol: f64) -> Self {
        let mut n = n0.max(8);
        loop {
            let cheb = Chebyshev::fit(&f, a, b, n);
            if n >= n_max || cheb.tail_ratio() < tol {
                return cheb;
            }
            n *= 2;
        }
    }

    fn tail_ratio(&self) -> f64 {
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let tail = self.coeffs.iter().rev().take(4).fold(0.0f64, |m, c| m.max(c.abs()));
        tail / scale
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = (2.0 * t - self.a - self.b) / (self.b - self.a);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.coeffs[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x.powi(7) - 3.0 * x * x, 0.0, 2.0, QuadOptions::default());
        assert!(r.converged);
        assert!((r.value - (32.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_panels() {
        let edges: Vec<f64> = (0..=40).map(|k| k as f64 * std::f64::consts::PI).collect();
        let r = integrate_panels(|x| x.sin().powi(2), &edges, QuadOptions::default());
        assert!((r.value - 20.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn kink_is_refined() {
        let r = integrate(|x: f64| (x - 0.3).abs(), 0.0, 1.0, QuadOptions { rel_tol: 1e-12, ..Default::default() });
        assert!(r.converged);
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-11);
    }

    #[test]
    fn chebyshev_reproduces_smooth_function() {
        let cheb = Chebyshev::fit_adaptive(|t: f64| (3.0 * t).cos() * (-t).exp(), 0.0, 4.0, 16, 512, 1e-14);
        for i in 0..50 {
            let t = 4.0 * i as f64 / 49.0;
            assert!((cheb.eval(t) - (3.0 * t).cos() * (-t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let s = compensated_sum([1.0, 1e100, 1.0, -1e100]);
        assert_eq!(s, 2.0);
    }
}
