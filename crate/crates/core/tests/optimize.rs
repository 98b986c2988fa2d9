use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softdd::optimize::{grad_lambda, grad_phi_odd, project_feasible, solve_odd, verify_cpmg_stationarity, OddProblem};
use softdd::{lambda_pi, phi_k_closed, Error, PulseSequence};

fn random_sequence(rng: &mut ChaCha8Rng, n: usize) -> PulseSequence {
    loop {
        let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
        t.sort_by(f64::total_cmp);
        if let Ok(seq) = PulseSequence::new(t.clone()) {
            if seq.min_gap() > 1e-3 {
                return seq;
            }
        }
    }
}

fn central_difference<F: Fn(&PulseSequence) -> f64>(seq: &PulseSequence, k: usize, h: f64, f: F) -> f64 {
    let mut up = seq.times().to_vec();
    let mut down = up.clone();
    up[k] += h;
    down[k] -= h;
    (f(&PulseSequence::new(up).unwrap()) - f(&PulseSequence::new(down).unwrap())) / (2.0 * h)
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn cpmg_gradient_formula() {
    for n in 1..=12usize {
        let g = grad_phi_odd(&PulseSequence::cpmg(n).unwrap(), 1);
        let parity = if n % 2 == 0 { 2.0 } else { 0.0 };
        for (k, gk) in g.iter().enumerate() {
            let sign = if (k + 1) % 2 == 1 { 1.0 } else { -1.0 };
            let expected = sign * parity / (4.0 * (n * n) as f64);
            assert!((gk - expected).abs() < 1e-13, "N={n} k={}: {gk} vs {expected}", k + 1);
        }
    }
    let g = grad_phi_odd(&PulseSequence::cpmg(2).unwrap(), 1);
    assert!((g[0] - 0.125).abs() < 1e-15);
}

#[test]
fn phi_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let n = rng.random_range(1..9);
        let m = rng.random_range(1..4);
        let seq = random_sequence(&mut rng, n);
        let g = grad_phi_odd(&seq, m);
        for k in 0..n {
            let fd = central_difference(&seq, k, 1e-6, |s| phi_k_closed(s, 2 * m - 1));
            assert!((g[k] - fd).abs() < 1e-6, "N={n} M={m} k={k}");
        }
    }
}

#[test]
fn lambda_gradient() {
    let g0 = grad_lambda(&PulseSequence::udd(5).unwrap(), 0);
    assert_eq!(g0, vec![2.0, -2.0, 2.0, -2.0, 2.0]);
    let g1 = grad_lambda(&PulseSequence::cpmg(2).unwrap(), 1);
    assert!((g1[0] - 0.5).abs() < 1e-16);
    assert!((g1[1] + 1.5).abs() < 1e-16);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..30 {
        let n = rng.random_range(1..9);
        let m = rng.random_range(0..5);
        let seq = random_sequence(&mut rng, n);
        let g = grad_lambda(&seq, m);
        for k in 0..n {
            let fd = central_difference(&seq, k, 1e-6, |s| lambda_pi(s, m));
            assert!((g[k] - fd).abs() < 1e-8, "N={n} m={m} k={k}");
        }
    }
}

#[test]
fn cpmg_stationarity() {
    for n in [1, 2, 3, 8, 13, 20] {
        let (ok, residual) = verify_cpmg_stationarity(n, 1e-12).unwrap();
        assert!(ok && residual < 1e-12, "N={n}: {residual}");
    }
}

#[test]
fn first_order_optimum_is_cpmg() {
    for n in 1..=10usize {
        let r = solve_odd(&OddProblem::new(n, 1)).unwrap();
        assert!(r.converged, "N={n}");
        let cpmg = PulseSequence::cpmg(n).unwrap();
        assert!(max_dev(&r.times, cpmg.times()) < 1e-6, "N={n}: {:?}", r.times);
        let parity = if n % 2 == 0 { 2.0 } else { 0.0 };
        let y0 = -parity / (8.0 * (n * n) as f64);
        assert!((r.multipliers[0] - y0).abs() < 1e-8, "N={n}: {} vs {y0}", r.multipliers[0]);
    }
}

#[test]
fn degenerate_case_is_udd() {
    for m in 1..=4 {
        let r = solve_odd(&OddProblem::new(m, m)).unwrap();
        let udd = PulseSequence::udd(m).unwrap();
        assert!(max_dev(&r.times, udd.times()) < 1e-12);
        assert!(r.converged);
    }
    let r = solve_odd(&OddProblem::new(2, 2)).unwrap();
    assert!(max_dev(&r.times, &[0.25, 0.75]) < 1e-12);
}

#[test]
fn infeasible_and_invalid_problems() {
    assert!(matches!(solve_odd(&OddProblem::new(1, 2)), Err(Error::Infeasible(_))));
    assert!(matches!(solve_odd(&OddProblem::new(3, 0)), Err(Error::InvalidParameter(_))));
}

#[test]
fn second_order_results_are_feasible_and_positive() {
    for n in [3usize, 4, 6, 9] {
        let prob = OddProblem::new(n, 2);
        let r = solve_odd(&prob).unwrap();
        assert!(r.converged, "N={n}");
        assert!(r.kkt_residual < prob.eps_g && r.constraint_residual < prob.eps_c);
        assert!(r.objective > 0.0);
        let seq = r.sequence().unwrap();
        assert!((phi_k_closed(&seq, 3) - r.phi).abs() < 1e-14);
        assert!(lambda_pi(&seq, 0).abs() < 1e-10 && lambda_pi(&seq, 1).abs() < 1e-10);
        let udd = PulseSequence::udd(n).unwrap();
        assert!(r.objective <= phi_k_closed(&udd, 3) + 1e-14, "N={n}");
        // mirror symmetry and the larger minimum gap compared with UDD
        let times = &r.times;
        for k in 0..n {
            assert!((times[k] + times[n - 1 - k] - 1.0).abs() < 1e-6, "N={n} k={k}");
        }
        if n >= 6 {
            assert!(seq.min_gap() > udd.min_gap(), "N={n}");
        }
    }
}

#[test]
fn large_n_odd_approaches_cpmg() {
    let n = 20;
    let r = solve_odd(&OddProblem::new(n, 2)).unwrap();
    assert!(r.converged);
    let cpmg = PulseSequence::cpmg(n).unwrap();
    let udd = PulseSequence::udd(n).unwrap();
    assert!(max_dev(&r.times, cpmg.times()) < max_dev(udd.times(), cpmg.times()));
}

#[test]
fn solver_is_deterministic() {
    let prob = OddProblem { seed: 17, ..OddProblem::new(7, 3) };
    let a = solve_odd(&prob).unwrap();
    let b = solve_odd(&prob).unwrap();
    assert_eq!(a, b);
}

#[test]
fn projection_restores_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let udd = PulseSequence::udd(6).unwrap();
        let jittered: Vec<f64> = udd.times().iter().map(|s| s + rng.random_range(-0.01..0.01)).collect();
        let p = project_feasible(&PulseSequence::new(jittered).unwrap(), 3).unwrap();
        for m in 0..3 {
            assert!(lambda_pi(&p, m).abs() < 1e-12);
        }
    }
}

#[test]
fn problem_json() {
    let p = OddProblem::from_json(r#"{"N": 8, "M": 2}"#).unwrap();
    assert_eq!((p.n, p.m, p.eps_c, p.eps_g), (8, 2, 1e-10, 1e-8));
    let p = OddProblem::from_json(r#"{"N": 8, "M": 2, "eps_c": 1e-9, "eps_g": 1e-7, "multistarts": 2, "seed": 5}"#).unwrap();
    assert_eq!((p.multistarts, p.seed), (2, 5));
    assert!(OddProblem::from_json(r#"{"N": 8, "M": 2, "bogus": 1}"#).is_err());
    let r = solve_odd(&OddProblem::new(4, 1)).unwrap();
    let json: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in ["times", "multipliers", "objective", "kkt_residual", "constraint_residual", "iterations", "converged"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
