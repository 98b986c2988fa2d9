//! Optimal sequences for soft-cutoff noise.
//!
//! Minimises `(-1)^M φ_{2M-1}` over ordered pulse times subject to
//! `λ_0 = … = λ_{M-1} = 0`. An augmented-Lagrangian outer loop with a BFGS
//! inner solver over positive inter-pulse gaps finds a local minimum; a
//! Newton iteration on the full KKT system then polishes it with the exact
//! Hessians. Several starts are tried and the best converged one is kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoherence::{boundary_weights, lambda_pi, phi_k_closed};
use crate::error::{Error, Result};
use crate::sequences::PulseSequence;

/// `∂φ_k/∂s_p` for `p = 1 … N`.
pub fn grad_phi(seq: &PulseSequence, k: usize) -> Vec<f64> {
    let b = seq.boundaries();
    let e = boundary_weights(seq.len());
    let p1 = k as i32 + 1;
    let scale = -1.0 / (k + 1) as f64;
    (1..=seq.len())
        .map(|p| {
            let mut acc = 0.0;
            for q in 0..b.len() {
                if q != p {
                    let d = b[p] - b[q];
                    acc += e[p] * e[q] * d.signum() * d.abs().powi(p1);
                }
            }
            scale * acc
        })
        .collect()
}

/// Hessian of `φ_k` with respect to the pulse times.
pub fn hess_phi(seq: &PulseSequence, k: usize) -> Vec<Vec<f64>> {
    let b = seq.boundaries();
    let e = boundary_weights(seq.len());
    let n = seq.len();
    let mut h = vec![vec![0.0; n]; n];
    for p in 1..=n {
        let mut diag = 0.0;
        for q in 0..b.len() {
            if q == p {
                continue;
            }
            let w = e[p] * e[q] * (b[p] - b[q]).abs().powi(k as i32);
            diag -= w;
            if (1..=n).contains(&q) {
                h[p - 1][q - 1] = w;
            }
        }
        h[p - 1][p - 1] = diag;
    }
    h
}

pub fn grad_phi_odd(seq: &PulseSequence, m: usize) -> Vec<f64> {
    grad_phi(seq, 2 * m - 1)
}

/// `∂λ_m/∂s_k = 2(-1)^{k+1} s_k^m`.
pub fn grad_lambda(seq: &PulseSequence, m: usize) -> Vec<f64> {
    seq.times()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sign = if i % 2 == 0 { 2.0 } else { -2.0 };
            sign * s.powi(m as i32)
        })
        .collect()
}

/// Diagonal of the (diagonal) Hessian of `λ_m`.
pub fn hess_lambda_diag(seq: &PulseSequence, m: usize) -> Vec<f64> {
    seq.times()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if m == 0 {
                return 0.0;
            }
            let sign = if i % 2 == 0 { 2.0 } else { -2.0 };
            sign * m as f64 * s.powi(m as i32 - 1)
        })
        .collect()
}

fn default_multistarts() -> usize {
    4
}
fn default_seed() -> u64 {
    0
}
fn default_eps_c() -> f64 {
    1e-10
}
fn default_eps_g() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddProblem {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default = "default_eps_c")]
    pub eps_c: f64,
    #[serde(default = "default_eps_g")]
    pub eps_g: f64,
    #[serde(default = "default_multistarts")]
    pub multistarts: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl OddProblem {
    pub fn new(n: usize, m: usize) -> Self {
        OddProblem {
            n,
            m,
            eps_c: default_eps_c(),
            eps_g: default_eps_g(),
            multistarts: default_multistarts(),
            seed: default_seed(),
            max_iter: default_max_iter(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddResult {
    pub times: Vec<f64>,
    /// Multipliers `y_0 … y_{M-1}` of `G_M = Σ y_j λ_j + φ_{2M-1}`.
    pub multipliers: Vec<f64>,
    /// `(-1)^M φ_{2M-1}`, positive at a feasible point.
    pub objective: f64,
    pub phi: f64,
    pub kkt_residual: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub start: usize,
    /// Objective after each outer iteration of the winning start.
    pub trace: Vec<f64>,
}

impl OddResult {
    pub fn sequence(&self) -> Result<PulseSequence> {
        PulseSequence::new(self.times.clone())
    }
}

fn sign_m(m: usize) -> f64 {
    if m % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn constraints(seq: &PulseSequence, m: usize) -> Vec<f64> {
    (0..m).map(|j| lambda_pi(seq, j)).collect()
}

/// Least-squares multipliers `ŷ` for `∇J + Σ ŷ_j ∇λ_j ≈ 0` and the
/// resulting stationarity residual, with `J = (-1)^M φ_{2M-1}`.
fn least_squares_multipliers(seq: &PulseSequence, m: usize) -> (Vec<f64>, f64) {
    let sm = sign_m(m);
    let gj: Vec<f64> = grad_phi_odd(seq, m).iter().map(|g| sm * g).collect();
    let a: Vec<Vec<f64>> = (0..m).map(|j| grad_lambda(seq, j)).collect();
    let mut normal = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            normal[i][j] = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
        }
        rhs[i] = -a[i].iter().zip(&gj).map(|(x, y)| x * y).sum::<f64>();
    }
    let y = solve_dense(normal, rhs).unwrap_or_else(|| vec![0.0; m]);
    let r: Vec<f64> = (0..seq.len())
        .map(|k| gj[k] + (0..m).map(|j| y[j] * a[j][k]).sum::<f64>())
        .collect();
    (y, max_abs(&r))
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn times_from_gaps(g: &[f64]) -> Option<PulseSequence> {
    let total: f64 = g.iter().sum();
    let mut acc = 0.0;
    let mut times = Vec::with_capacity(g.len() - 1);
    for gi in &g[..g.len() - 1] {
        acc += gi;
        times.push(acc / total);
    }
    PulseSequence::new(times).ok()
}

fn gaps_of(seq: &PulseSequence) -> Vec<f64> {
    seq.boundaries().windows(2).map(|w| w[1] - w[0]).collect()
}

struct Augmented {
    m: usize,
    scale: f64,
    y: Vec<f64>,
    rho: f64,
}

impl Augmented {
    /// Value and gradient with respect to the gaps.
    fn eval(&self, g: &[f64]) -> Option<(f64, Vec<f64>)> {
        let seq = times_from_gaps(g)?;
        let sm = sign_m(self.m) / self.scale;
        let k = 2 * self.m - 1;
        let mut value = sm * phi_k_closed(&seq, k);
        let mut ws: Vec<f64> = grad_phi(&seq, k).iter().map(|x| sm * x).collect();
        for j in 0..self.m {
            let c = lambda_pi(&seq, j);
            value += self.y[j] * c + 0.5 * self.rho * c * c;
            let w = self.y[j] + self.rho * c;
            for (wk, gk) in ws.iter_mut().zip(grad_lambda(&seq, j)) {
                *wk += w * gk;
            }
        }
        let total: f64 = g.iter().sum();
        let s = seq.times();
        let dot: f64 = ws.iter().zip(s).map(|(w, s)| w * s).sum();
        let mut grad = vec![0.0; g.len()];
        let mut suffix = 0.0;
        for i in (0..g.len()).rev() {
            grad[i] = (suffix - dot) / total;
            if i >= 1 {
                suffix += ws[i - 1];
            }
        }
        Some((value, grad))
    }
}

fn bfgs(aug: &Augmented, g0: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let n = g0.len();
    let mut g: Vec<f64> = g0.to_vec();
    let Some((mut f, mut grad)) = aug.eval(&g) else { return (g, 0) };
    let mut h = vec![vec![0.0; n]; n];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut iters = 0;
    for _ in 0..max_iter {
        if max_abs(&grad) <= tol {
            break;
        }
        iters += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i][j] * grad[j]).sum::<f64>()).collect();
        let mut slope: f64 = d.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            for (i, row) in h.iter_mut().enumerate() {
                row.iter_mut().for_each(|x| *x = 0.0);
                row[i] = 1.0;
            }
            d = grad.iter().map(|x| -x).collect();
            slope = -grad.iter().map(|x| x * x).sum::<f64>();
        }
        let mut alpha: f64 = 1.0;
        for (gi, di) in g.iter().zip(&d) {
            if *di < 0.0 {
                alpha = alpha.min(0.9 * gi / -di);
            }
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = g.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            if let Some((ft, gt)) = aug.eval(&trial) {
                if ft <= f + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((g_new, f_new, grad_new)) = accepted else { break };
        let s: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let yy = yv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sy > 1e-12 * ss * yy {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * yv[j]).sum()).collect();
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let r = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (1.0 + yhy * r) * r * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        let total: f64 = g_new.iter().sum();
        g = g_new.iter().map(|x| x / total).collect();
        grad = grad_new.iter().map(|x| x * total).collect();
        f = f_new;
    }
    (g, iters)
}

/// Orthonormal basis of the null space of the `m × n` matrix `a`.
fn null_space(a: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let orthonormalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| -> f64 {
        for _ in 0..2 {
            for b in basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    for row in a {
        let mut v = row.clone();
        let norm = orthonormalize(&mut v, &basis);
        if norm > 1e-12 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    let rank = basis.len();
    for i in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        let norm = orthonormalize(&mut v, &basis);
        if norm > 1e-6 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    basis.split_off(rank)
}

/// Cholesky solve of `(w + μI) x = b`, with `μ` raised until the shifted
/// matrix is positive definite.
fn shifted_cholesky_solve(w: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = w.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut mu = 0.0;
    for _ in 0..40 {
        let mut l = vec![vec![0.0; n]; n];
        let mut ok = true;
        'outer: for i in 0..n {
            for j in 0..=i {
                let mut s = w[i][j] + if i == j { mu } else { 0.0 };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 1e-14 * scale {
                        ok = false;
                        break 'outer;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        if ok {
            let mut y = vec![0.0; n];
            for i in 0..n {
                y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
            }
            let mut x = vec![0.0; n];
            for i in (0..n).rev() {
                x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
            }
            return Some(x);
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 10.0 };
    }
    None
}

/// Newton iteration on the KKT system restricted to the constraint
/// manifold: each step solves the stationarity equations in the tangent
/// space of `λ_0 … λ_{M-1} = 0` with the exact Lagrangian Hessian (shifted
/// when indefinite) and is restored onto the manifold before acceptance.
/// The objective never increases.
fn kkt_newton(seq: &PulseSequence, m: usize, max_iter: usize) -> (PulseSequence, usize) {
    let n = seq.len();
    let k = 2 * m - 1;
    let sm = sign_m(m);
    let objective = |s: &PulseSequence| sm * phi_k_closed(s, k);
    let mut s = seq.clone();
    let mut j_cur = objective(&s);
    let (_, mut kkt) = least_squares_multipliers(&s, m);
    let mut iters = 0;
    for _ in 0..max_iter {
        if kkt == 0.0 {
            break;
        }
        iters += 1;
        let gj: Vec<f64> = grad_phi(&s, k).iter().map(|g| sm * g).collect();
        let a: Vec<Vec<f64>> = (0..m).map(|j| grad_lambda(&s, j)).collect();
        let (y, _) = least_squares_multipliers(&s, m);
        let z = null_space(&a, n);
        let r = z.len();
        if r == 0 {
            break;
        }
        let mut w: Vec<Vec<f64>> = hess_phi(&s, k).into_iter().map(|row| row.into_iter().map(|x| sm * x).collect()).collect();
        for (j, yj) in y.iter().enumerate() {
            for (i, h) in hess_lambda_diag(&s, j).into_iter().enumerate() {
                w[i][i] += yj * h;
            }
        }
        let gr: Vec<f64> = z.iter().map(|zc| zc.iter().zip(&gj).map(|(a, b)| a * b).sum()).collect();
        let wz: Vec<Vec<f64>> = z
            .iter()
            .map(|zc| (0..n).map(|i| (0..n).map(|j| w[i][j] * zc[j]).sum()).collect())
            .collect();
        let wr: Vec<Vec<f64>> =
            (0..r).map(|p| (0..r).map(|q| z[p].iter().zip(&wz[q]).map(|(a, b)| a * b).sum()).collect()).collect();
        let Some(dr) = shifted_cholesky_solve(&wr, &gr.iter().map(|x| -x).collect::<Vec<_>>()) else { break };
        let d: Vec<f64> = (0..n).map(|i| (0..r).map(|p| dr[p] * z[p][i]).sum()).collect();
        let decrease: f64 = gr.iter().zip(&dr).map(|(a, b)| a * b).sum();

        let b = s.boundaries();
        let mut alpha: f64 = 1.0;
        for i in 0..=n {
            let dl = if i >= 1 { d[i - 1] } else { 0.0 };
            let dr = if i < n { d[i] } else { 0.0 };
            if dl - dr > 0.0 {
                alpha = alpha.min(0.5 * (b[i + 1] - b[i]) / (dl - dr));
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let times: Vec<f64> = s.times().iter().zip(&d).map(|(t, di)| t + alpha * di).collect();
            if let Some(trial) = PulseSequence::new(times).ok().and_then(|t| project_feasible(&t, m).ok()) {
                let j_trial = objective(&trial);
                let (_, kkt_trial) = least_squares_multipliers(&trial, m);
                let sufficient = j_trial <= j_cur + 1e-4 * alpha * decrease;
                let at_rounding = j_trial <= j_cur + 16.0 * f64::EPSILON * j_cur.abs() && kkt_trial < kkt;
                if sufficient || at_rounding {
                    let progress = kkt_trial < kkt || j_trial < j_cur;
                    s = trial;
                    j_cur = j_trial;
                    kkt = kkt_trial;
                    accepted = progress;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (s, iters)
}

struct StartOutcome {
    seq: PulseSequence,
    y_hat: Vec<f64>,
    objective: f64,
    kkt: f64,
    cons: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// Smallest gap considered a genuine pulse separation rather than a
/// collapsed (cancelling) pulse pair.
fn collapse_gap(n: usize) -> f64 {
    1e-6 / (n + 1) as f64
}

fn solve_from(start: &PulseSequence, prob: &OddProblem) -> Option<StartOutcome> {
    let m = prob.m;
    let k = 2 * m - 1;
    let sm = sign_m(m);
    let objective = |s: &PulseSequence| sm * phi_k_closed(s, k);
    let mut best = project_feasible(start, m).ok()?;
    let mut best_j = objective(&best);
    let scale = if best_j.abs() > 0.0 { best_j.abs() } else { 1.0 };
    let mut aug = Augmented { m, scale, y: vec![0.0; m], rho: 100.0 * prob.n as f64 };
    let mut g = gaps_of(&best);
    let mut prev_c = f64::INFINITY;
    let mut iterations = 0;
    let mut trace = vec![best_j];
    let mut inner_tol = 1e-3;
    for _ in 0..prob.max_iter.min(30) {
        let (g_new, it) = bfgs(&aug, &g, inner_tol, 200);
        iterations += it;
        g = g_new;
        let Some(seq) = times_from_gaps(&g) else { break };
        let c = constraints(&seq, m);
        let cn = max_abs(&c);
        for j in 0..m {
            aug.y[j] += aug.rho * c[j];
        }
        if cn > 0.25 * prev_c {
            aug.rho = (aug.rho * 10.0).min(1e12);
        }
        prev_c = cn;
        inner_tol = (inner_tol * 0.1).max(1e-10);
        if let Ok(restored) = project_feasible(&seq, m) {
            let j = objective(&restored);
            if restored.min_gap() > collapse_gap(prob.n) && j < best_j {
                best = restored;
                best_j = j;
                trace.push(j);
            }
        }
        if cn < 1e-8 && inner_tol <= 1e-8 {
            break;
        }
    }
    let (seq, newton_iters) = kkt_newton(&best, m, 100);
    iterations += newton_iters;
    if seq.min_gap() <= collapse_gap(prob.n) {
        return None;
    }
    let (y_hat, kkt) = least_squares_multipliers(&seq, m);
    let cons = max_abs(&constraints(&seq, m));
    let objective = objective(&seq);
    trace.push(objective);
    Some(StartOutcome { seq, y_hat, objective, kkt, cons, iterations, trace })
}

fn jittered(base: &PulseSequence, rng: &mut ChaCha8Rng, amount: f64) -> PulseSequence {
    let g: Vec<f64> = gaps_of(base)
        .iter()
        .map(|x| x * (1.0 + amount * (2.0 * rng.random::<f64>() - 1.0)))
        .collect();
    times_from_gaps(&g).unwrap_or_else(|| base.clone())
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Solves the constrained problem for `N` pulses and `M` vanishing moments.
pub fn solve_odd(prob: &OddProblem) -> Result<OddResult> {
    let (n, m) = (prob.n, prob.m);
    if m == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    if n < m {
        return Err(Error::Infeasible(format!("N = {n} pulses cannot satisfy M = {m} moment constraints")));
    }
    let sm = sign_m(m);
    let finish = |o: StartOutcome, start: usize| -> Result<OddResult> {
        let converged = o.cons <= prob.eps_c && o.kkt <= prob.eps_g;
        if o.cons <= prob.eps_c && !(o.objective > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive objective {:.3e} at a feasible point",
                o.objective
            )));
        }
        Ok(OddResult {
            times: o.seq.times().to_vec(),
            multipliers: o.y_hat.iter().map(|y| sm * y).collect(),
            objective: o.objective,
            phi: sm * o.objective,
            kkt_residual: o.kkt,
            constraint_residual: o.cons,
            iterations: o.iterations,
            converged,
            start,
            trace: o.trace,
        })
    };

    let udd = PulseSequence::udd(n)?;
    if n == m {
        let (y_hat, kkt) = least_squares_multipliers(&udd, m);
        let cons = max_abs(&constraints(&udd, m));
        let objective = sm * phi_k_closed(&udd, 2 * m - 1);
        let o = StartOutcome { seq: udd, y_hat, objective, kkt, cons, iterations: 0, trace: vec![objective] };
        return finish(o, 0);
    }

    let cpmg = PulseSequence::cpmg(n)?;
    let mut starts = vec![udd.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(prob.seed);
    for i in 0..prob.multistarts {
        let base = if i % 2 == 0 { &cpmg } else { &udd };
        starts.push(jittered(base, &mut rng, 1e-2));
    }
    let outcomes: Vec<StartOutcome> = starts.par_iter().filter_map(|s| solve_from(s, prob)).collect();
    if outcomes.is_empty() {
        return Err(Error::Numerical("no start reached a feasible non-degenerate sequence".into()));
    }
    let feasible = |o: &StartOutcome| o.cons <= prob.eps_c && o.kkt <= prob.eps_g;
    let any_converged = outcomes.iter().any(feasible);
    let best = outcomes
        .into_iter()
        .enumerate()
        .filter(|(_, o)| !any_converged || feasible(o))
        .min_by(|(_, a), (_, b)| {
            if (a.objective - b.objective).abs() <= 1e-12 * a.objective.abs().max(b.objective.abs()) {
                lexicographic(a.seq.times(), b.seq.times())
            } else if any_converged {
                a.objective.total_cmp(&b.objective)
            } else {
                (a.cons + a.kkt).total_cmp(&(b.cons + b.kkt))
            }
        })
        .expect("at least one start");
    finish(best.1, best.0)
}

/// Checks that CPMG(N) is stationary for `M = 1` with the multiplier
/// `y_0 = -(1 + (-1)^N) / (8 N²)`. Returns the stationarity residual.
pub fn verify_cpmg_stationarity(n: usize, tol: f64) -> Result<(bool, f64)> {
    let seq = PulseSequence::cpmg(n)?;
    let y0 = -(1.0 + sign_m(n)) / (8.0 * (n * n) as f64);
    let g = grad_phi(&seq, 1);
    let gl = grad_lambda(&seq, 0);
    let r = g.iter().zip(&gl).map(|(a, b)| (a + y0 * b).abs()).fold(0.0, f64::max);
    Ok((r <= tol, r))
}

/// Minimum-norm Gauss-Newton projection onto `λ_0 = … = λ_{M-1} = 0`.
pub fn project_feasible(seq: &PulseSequence, m: usize) -> Result<PulseSequence> {
    if seq.len() < m {
        return Err(Error::Infeasible(format!("{} pulses cannot satisfy {m} constraints", seq.len())));
    }
    let mut s = seq.clone();
    for _ in 0..100 {
        let c = constraints(&s, m);
        let norm = max_abs(&c);
        if norm < 1e-14 {
            return Ok(s);
        }
        let a: Vec<Vec<f64>> = (0..m).map(|j| grad_lambda(&s, j)).collect();
        let normal: Vec<Vec<f64>> =
            (0..m).map(|i| (0..m).map(|j| a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum()).collect()).collect();
        let z = solve_dense(normal, c.iter().map(|x| -x).collect())
            .ok_or_else(|| Error::Numerical("singular constraint Jacobian".into()))?;
        let step: Vec<f64> = (0..s.len()).map(|k| (0..m).map(|j| z[j] * a[j][k]).sum()).collect();
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let times: Vec<f64> = s.times().iter().zip(&step).map(|(t, d)| t + alpha * d).collect();
            if let Ok(trial) = PulseSequence::new(times) {
                if max_abs(&constraints(&trial, m)) < norm {
                    s = trial;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if max_abs(&constraints(&s, m)) < 1e-12 {
        Ok(s)
    } else {
        Err(Error::Numerical("projection onto the constraint set did not converge".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(seq: &PulseSequence, f: impl Fn(&PulseSequence) -> f64) -> Vec<f64> {
        let h = 1e-6;
        (0..seq.len())
            .map(|i| {
                let mut up = seq.times().to_vec();
                let mut dn = seq.times().to_vec();
                up[i] += h;
                dn[i] -= h;
                (f(&PulseSequence::new(up).unwrap()) - f(&PulseSequence::new(dn).unwrap())) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let seq = PulseSequence::new(vec![0.1, 0.3, 0.55, 0.8]).unwrap();
        for k in 0..6 {
            let g = grad_phi(&seq, k);
            let fd = fd_grad(&seq, |s| phi_k_closed(s, k));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-8, "k={k}: {a} vs {b}");
            }
        }
        for m in 0..4 {
            let g = grad_lambda(&seq, m);
            let fd = fd_grad(&seq, |s| lambda_pi(s, m));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let seq = PulseSequence::new(vec![0.12, 0.33, 0.6]).unwrap();
        let k = 3;
        let h = hess_phi(&seq, k);
        for j in 0..3 {
            let col = fd_grad(&seq, |s| grad_phi(s, k)[j]);
            for i in 0..3 {
                assert!((h[i][j] - col[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn cpmg_stationary_for_first_order() {
        for n in 1..=12 {
            let (ok, r) = verify_cpmg_stationarity(n, 1e-12).unwrap();
            assert!(ok, "N={n}: residual {r}");
        }
    }

    #[test]
    fn udd_returned_when_n_equals_m() {
        let r = solve_odd(&OddProblem::new(3, 3)).unwrap();
        assert_eq!(r.times, PulseSequence::udd(3).unwrap().times());
        assert!(r.converged);
    }

    #[test]
    fn infeasible_below_constraint_count() {
        assert!(matches!(solve_odd(&OddProblem::new(1, 2)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn first_order_optimum_is_cpmg() {
        let r = solve_odd(&OddProblem::new(4, 1)).unwrap();
        assert!(r.converged, "{r:?}");
        let cpmg = PulseSequence::cpmg(4).unwrap();
        for (a, b) in r.times.iter().zip(cpmg.times()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn problem_json_defaults() {
        let p = OddProblem::from_json(r#"{"N": 6, "M": 2}"#).unwrap();
        assert_eq!(p, OddProblem::new(6, 2));
    }
}
