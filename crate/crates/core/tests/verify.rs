use softdd::verify::{accumulate_phase, phase_grid, run_mc, sample_noise, sample_phases, McConfig};
use softdd::{filter, modulation_of, NoiseModel, PulseSequence};

#[test]
fn sampled_variance_and_covariance_match_correlation() {
    let noise = NoiseModel::make_gaussian_correlation(1.0).unwrap();
    let free = PulseSequence::free_evolution();
    let cfg = McConfig::for_problem(&noise, &free, 1.0, 10_000, 3);
    let grid = [0.0, 1.0];
    let (mut s00, mut s01) = (0.0, 0.0);
    for i in 0..cfg.n_realizations as u64 {
        let beta = sample_noise(&noise, &cfg, &grid, i);
        s00 += beta[0] * beta[0];
        s01 += beta[0] * beta[1];
    }
    let n = cfg.n_realizations as f64;
    let (c0, c1) = (noise.correlation(0.0), noise.correlation(1.0));
    let var = s00 / n;
    let cov = s01 / n;
    assert!((var - c0).abs() < 3.0 * c0 * (2.0 / n).sqrt(), "variance {var} vs {c0}");
    assert!((cov - c1).abs() < 3.0 * ((c0 * c0 + c1 * c1) / n).sqrt(), "covariance {cov} vs {c1}");
}

#[test]
fn zero_spectrum_gives_zero_noise_and_unit_coherence() {
    let noise = NoiseModel::zero();
    let seq = PulseSequence::udd(3).unwrap();
    let cfg = McConfig::for_problem(&noise, &seq, 1.0, 200, 0);
    let grid = phase_grid(&seq, 1.0, cfg.dt);
    assert!(sample_noise(&noise, &cfg, &grid, 5).iter().all(|&b| b == 0.0));
    let report = run_mc(&noise, &seq, 1.0, &cfg).unwrap();
    assert_eq!(report.w_hat, 1.0);
    assert_eq!(report.chi_mc, Some(0.0));
}

#[test]
fn phase_of_a_cosine_drive() {
    let t = 1.7;
    let omega = 3.3;
    for seq in [PulseSequence::free_evolution(), PulseSequence::udd(4).unwrap(), PulseSequence::cpmg(3).unwrap()] {
        let dt = seq.min_gap() / 2000.0;
        let grid = phase_grid(&seq, t, dt);
        let beta: Vec<f64> = grid.iter().map(|&x| (omega * x).cos()).collect();
        let phase = accumulate_phase(&beta, &grid, &seq, t);
        let expected = t * filter(&modulation_of(&seq), omega * t).value.conj().re;
        assert!((phase - expected).abs() < 1e-6, "N={}: {phase} vs {expected}", seq.len());
    }
}

#[test]
fn grid_contains_pulse_instants() {
    let seq = PulseSequence::udd(5).unwrap();
    let t = 3.0;
    let grid = phase_grid(&seq, t, 0.01);
    for s in seq.times() {
        assert!(grid.iter().any(|&g| (g - s * t).abs() < 1e-15));
    }
    assert_eq!(grid[0], 0.0);
    assert!((grid.last().unwrap() - t).abs() < 1e-15);
}

#[test]
fn hahn_echo_under_exponential_noise() {
    let noise = NoiseModel::make_exponential_correlation(1.0).unwrap();
    let seq = PulseSequence::cpmg(1).unwrap();
    let t = 1.3;
    let cfg = McConfig::for_problem(&noise, &seq, t, 10_000, 1);
    let r = run_mc(&noise, &seq, t, &cfg).unwrap();
    assert!(r.chi_analytic > 0.05 && r.chi_analytic < 0.2, "χ = {}", r.chi_analytic);
    assert!(r.z_score.abs() < 3.0, "z = {}", r.z_score);
    assert!(r.skewness.abs() < 5.0 * r.skewness_stderr);
    assert!(r.w_hat.abs() <= 1.0 && r.stderr > 0.0);
}

#[test]
fn free_evolution_at_short_time_follows_leading_term() {
    let noise = NoiseModel::make_gaussian_correlation(1.0).unwrap();
    let free = PulseSequence::free_evolution();
    let t = 0.15;
    let cfg = McConfig::for_problem(&noise, &free, t, 10_000, 2);
    let r = run_mc(&noise, &free, t, &cfg).unwrap();
    let leading = noise.correlation(0.0) * t * t / 2.0;
    let chi = r.chi_mc.unwrap();
    assert!((chi - leading).abs() < 3.0 * r.chi_mc_stderr.unwrap(), "{chi} vs {leading}");
}

#[test]
fn identical_seed_gives_identical_estimate() {
    let noise = NoiseModel::make_soft_power_law(1.0, 2, 1.0).unwrap();
    let seq = PulseSequence::cpmg(2).unwrap();
    let cfg = McConfig::for_problem(&noise, &seq, 2.0, 500, 99);
    let a = run_mc(&noise, &seq, 2.0, &cfg).unwrap();
    let b = run_mc(&noise, &seq, 2.0, &cfg).unwrap();
    assert_eq!(a.w_hat.to_bits(), b.w_hat.to_bits());
    let other = McConfig { seed: 100, ..cfg.clone() };
    assert_ne!(sample_phases(&noise, &seq, 2.0, &cfg).unwrap(), sample_phases(&noise, &seq, 2.0, &other).unwrap());
}

#[test]
fn invalid_configurations_rejected() {
    let noise = NoiseModel::make_gaussian_correlation(1.0).unwrap();
    let seq = PulseSequence::cpmg(4).unwrap();
    let cfg = McConfig::for_problem(&noise, &seq, 1.0, 1000, 0);
    assert!(run_mc(&noise, &seq, 1.0, &McConfig { n_realizations: 99, ..cfg.clone() }).is_err());
    assert!(run_mc(&noise, &seq, 1.0, &McConfig { dt: seq.min_gap() / 10.0, ..cfg.clone() }).is_err());
    let report = run_mc(&noise, &seq, 1.0, &McConfig { omega_max: 1.0, ..cfg }).unwrap();
    assert!(report.warnings.iter().any(|w| w.contains("unsampled")));
}

#[test]
fn report_json_fields() {
    let noise = NoiseModel::make_gaussian_correlation(1.0).unwrap();
    let seq = PulseSequence::cpmg(1).unwrap();
    let cfg = McConfig::for_problem(&noise, &seq, 1.0, 200, 0);
    let json: serde_json::Value = serde_json::from_str(&run_mc(&noise, &seq, 1.0, &cfg).unwrap().to_json()).unwrap();
    for key in ["W_hat", "stderr", "chi_analytic", "chi_mc", "z_score", "config"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["config"]["n_realizations"], 200);
}
