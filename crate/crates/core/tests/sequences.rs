use num_complex::Complex64;
use softdd::{
    lambda_m, modulation_of, multiqubit_modulation, Error, Modulation, MultiQubitPulseProgram, PulseSequence,
    QubitPulse, SequenceFamily,
};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn family_examples() {
    assert_eq!(PulseSequence::udd(1).unwrap().times(), &[0.5]);
    assert!(close(PulseSequence::udd(3).unwrap().times(), &[0.146447, 0.5, 0.853553], 1e-6));
    assert!(close(PulseSequence::udd(2).unwrap().times(), &[0.25, 0.75], 1e-15));
    assert_eq!(PulseSequence::cpmg(1).unwrap().times(), &[0.5]);
    assert_eq!(PulseSequence::cpmg(4).unwrap().times(), &[0.125, 0.375, 0.625, 0.875]);
    assert_eq!(PulseSequence::pdd(3).unwrap().times(), &[0.25, 0.5, 0.75]);
    assert!(close(PulseSequence::pdd(2).unwrap().times(), &[1.0 / 3.0, 2.0 / 3.0], 1e-16));
}

#[test]
fn zero_pulses_rejected_for_families() {
    for family in [SequenceFamily::Udd, SequenceFamily::Cpmg, SequenceFamily::Pdd] {
        assert!(matches!(family.generate(0), Err(Error::InvalidParameter(_))));
    }
}

#[test]
fn families_satisfy_invariants_up_to_64() {
    for family in [SequenceFamily::Udd, SequenceFamily::Cpmg, SequenceFamily::Pdd] {
        for n in 1..=64 {
            let seq = family.generate(n).unwrap();
            assert_eq!(seq.len(), n);
            assert!(PulseSequence::new(seq.times().to_vec()).is_ok(), "{family} {n}");
        }
    }
}

#[test]
fn udd_formula_matches_direct_evaluation() {
    for n in 1..=64usize {
        let seq = PulseSequence::udd(n).unwrap();
        for (j, s) in seq.times().iter().enumerate() {
            let direct = (std::f64::consts::PI * (j + 1) as f64 / (2 * n + 2) as f64).sin().powi(2);
            assert!((s - direct).abs() < 1e-15);
        }
    }
}

#[test]
fn modulation_values() {
    let free = modulation_of(&PulseSequence::free_evolution());
    assert_eq!(free.value_at(0.3).re, 1.0);
    let hahn = modulation_of(&PulseSequence::cpmg(1).unwrap());
    assert_eq!(hahn.value_at(0.7).re, -1.0);
    assert_eq!(hahn.value_at(1.2).re, 0.0);
    assert_eq!(hahn.value_at(0.5).re, 1.0);
    assert_eq!(hahn.value_at(0.0).re, 0.0);
}

#[test]
fn lambda_zero_matches_alternating_sum() {
    for n in 1..12 {
        let seq = PulseSequence::pdd(n).unwrap();
        let b = seq.boundaries();
        let sum: f64 = b
            .windows(2)
            .enumerate()
            .map(|(j, w)| if j % 2 == 0 { w[1] - w[0] } else { w[0] - w[1] })
            .sum();
        assert!((sum - lambda_m(&modulation_of(&seq), 0).re).abs() < 1e-15);
    }
}

fn program(n_qubits: usize, pulses: &[(f64, usize)], p: u64, q: u64) -> MultiQubitPulseProgram {
    MultiQubitPulseProgram {
        n_qubits,
        pulses: pulses.iter().map(|&(s, l)| QubitPulse { s, l }).collect(),
        p,
        q,
    }
}

#[test]
fn multiqubit_examples() {
    let m = multiqubit_modulation(&program(2, &[], 0b11, 0b00)).unwrap();
    assert_eq!(m.value_at(0.4).re, 2.0);
    let m = multiqubit_modulation(&program(2, &[], 0b01, 0b10)).unwrap();
    assert_eq!(m.value_at(0.4).re, 0.0);
    let m = multiqubit_modulation(&program(2, &[(0.5, 1)], 0b01, 0b00)).unwrap();
    assert_eq!(m.value_at(0.25).re, 1.0);
    assert_eq!(m.value_at(0.5).re, 1.0);
    assert_eq!(m.value_at(0.75).re, -1.0);
    assert!(matches!(multiqubit_modulation(&program(2, &[], 1, 1)), Err(Error::InvalidProgram(_))));
}

#[test]
fn single_qubit_program_reproduces_pi_modulation() {
    let seq = PulseSequence::udd(5).unwrap();
    let pulses: Vec<(f64, usize)> = seq.times().iter().map(|&s| (s, 1)).collect();
    let m = multiqubit_modulation(&program(1, &pulses, 1, 0)).unwrap();
    let exact = modulation_of(&seq);
    for i in 0..1000 {
        let s = (i as f64 + 0.37) / 1000.0;
        assert_eq!(m.value_at(s), exact.value_at(s));
    }
    for k in 0..6 {
        assert!((lambda_m(&m, k) - lambda_m(&exact, k)).norm() < 1e-14);
    }
}

/// Brute force over binary codes: flip bits qubit by qubit and count weights.
fn reference_value(prog: &MultiQubitPulseProgram, s: f64) -> f64 {
    let mut p = prog.p;
    let mut q = prog.q;
    for pulse in prog.pulses.iter().filter(|x| x.s < s) {
        let bit = 1u64 << (pulse.l - 1);
        p ^= bit;
        q ^= bit;
    }
    let weight = |x: u64| (0..prog.n_qubits).filter(|b| x >> b & 1 == 1).count() as f64;
    weight(p) - weight(q)
}

#[test]
fn multiqubit_values_bounded_and_match_brute_force() {
    let pulses = [(0.1, 1), (0.2, 3), (0.35, 2), (0.35, 1), (0.6, 3), (0.9, 2)];
    for l in [2usize, 3] {
        for p in 0..(1u64 << l) {
            for q in 0..(1u64 << l) {
                if p == q {
                    continue;
                }
                let used: Vec<(f64, usize)> = pulses.iter().copied().filter(|x| x.1 <= l).collect();
                let prog = program(l, &used, p, q);
                let m = multiqubit_modulation(&prog).unwrap();
                assert!(matches!(m, Modulation::Sampled(_)));
                for i in 0..200 {
                    let s = (i as f64 + 0.5) / 200.0;
                    let v = m.value_at(s);
                    assert_eq!(v.im, 0.0);
                    assert!(v.re.abs() <= l as f64);
                    assert_eq!(v.re, reference_value(&prog, s));
                }
            }
        }
    }
}

#[test]
fn json_round_trip_and_errors() {
    let seq = PulseSequence::new(vec![0.25, 0.75]).unwrap();
    assert_eq!(PulseSequence::from_json(&seq.to_json()).unwrap(), seq);
    let udd = PulseSequence::udd(17).unwrap();
    assert_eq!(PulseSequence::from_json(&udd.to_json()).unwrap(), udd);

    let err = PulseSequence::from_json(r#"{"times": [1.5]}"#).unwrap_err().to_string();
    assert!(err.contains("time out of (0,1)"), "{err}");
    assert!(err.contains("index 0"), "{err}");
    let err = PulseSequence::from_json(r#"{"times": [0.3, 0.3]}"#).unwrap_err().to_string();
    assert!(err.contains("non-increasing"), "{err}");
    assert!(err.contains("index 1"), "{err}");
    assert!(PulseSequence::from_json(r#"{"times": [0.2, 0.1]}"#).is_err());
    assert!(PulseSequence::from_json(r#"{"times": [0.2], "extra": 1}"#).is_err());
}

#[test]
fn min_gap_guard() {
    let seq = PulseSequence::udd(10).unwrap();
    assert!(seq.check_min_gap(0.01).is_ok());
    assert!(seq.check_min_gap(0.05).is_err());
}

#[test]
fn multiqubit_json() {
    let text = r#"{"n_qubits": 2, "pulses": [{"s": 0.5, "l": 1}], "p": 1, "q": 0}"#;
    let prog = MultiQubitPulseProgram::from_json(text).unwrap();
    let m = multiqubit_modulation(&prog).unwrap();
    assert_eq!(m.value_at(0.9), Complex64::new(-1.0, 0.0));
    assert!(MultiQubitPulseProgram::from_json(r#"{"n_qubits": 2, "pulses": [{"s": 0.5, "l": 3}], "p": 1, "q": 0}"#).is_err());
}
