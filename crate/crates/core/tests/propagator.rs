use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use optispin::analysis::fit_exponential;
use optispin::bath::{DefectSet, NoiseTrajectory};
use optispin::propagator::{
    propagate_delay, propagate_pulse, run_sequence, sample_ensemble, PropagationConfig, SpinState,
    DEFAULT_FWHM, DEFAULT_RABI_SPREAD,
};
use optispin::sequence::{build_cpmg, build_two_pulse_echo, PulseLabel, X_PHASE, Y_PHASE};
use optispin::{IonEnsemble, Point, TwoColorPulse};
use proptest::prelude::*;

const BEAT: f64 = 29.34e6;

fn echo(tau: f64, excite: f64) -> optispin::PulseSequence {
    build_two_pulse_echo(tau, 100e-6, excite, X_PHASE, BEAT).unwrap()
}

fn cycled() -> PropagationConfig {
    PropagationConfig {
        phase_cycle: true,
        ..PropagationConfig::default()
    }
}

proptest! {
    #[test]
    fn unitary_steps_conserve_the_norm(
        theta in 0.0f64..PI,
        phi in 0.0f64..2.0 * PI,
        steps in prop::collection::vec(
            (0.0f64..50e3, 0.0f64..2.0 * PI, 1e-6f64..200e-6, -200e3f64..200e3, 0.1f64..2.0),
            1..12,
        ),
    ) {
        let mut s = SpinState {
            bloch: Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
        };
        let mut t = 0.0;
        let silent = NoiseTrajectory::silent(1.0);
        for (rabi, phase, dur, det, kappa) in steps {
            let p = TwoColorPulse {
                t_start: t,
                duration: dur,
                rabi_nominal: rabi,
                phase,
                label: PulseLabel::Rephase,
            };
            s = propagate_pulse(s, &p, det, kappa);
            prop_assert!((s.bloch.norm() - 1.0).abs() < 1e-12);
            s = propagate_delay(s, t, dur, det, &silent, f64::INFINITY).unwrap();
            prop_assert!((s.bloch.norm() - 1.0).abs() < 1e-12);
            t += 2.0 * dur;
        }
        let damped = propagate_delay(s, 0.0, 1e-3, 0.0, &silent, 1e-3).unwrap();
        prop_assert!(damped.bloch.norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn static_inhomogeneity_refocuses(seed in 0u64..1000, fwhm in 10e3f64..300e3) {
        let ens = sample_ensemble(200, fwhm, 0.0, seed).unwrap();
        let cfg = PropagationConfig { phase_cycle: true, ..PropagationConfig::ideal() };
        let reference = run_sequence(&echo(150e-6, Y_PHASE), &ens, &cfg).unwrap().amplitude.norm();
        for tau in [200e-6, 450e-6, 1.5e-3] {
            let a = run_sequence(&echo(tau, Y_PHASE), &ens, &cfg).unwrap().amplitude.norm();
            prop_assert!((a - reference).abs() < 1e-6, "tau {}: {} vs {}", tau, a, reference);
            prop_assert!(a <= 0.5 + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn excite_phase_shifts_echo_phase(delta in -PI..PI, seed in 0u64..100) {
        let ens = sample_ensemble(120, DEFAULT_FWHM, DEFAULT_RABI_SPREAD, seed)
            .unwrap()
            .with_noise_realizations(8);
        let cfg = PropagationConfig { noise_draws: 2, ..cycled() };
        let a = run_sequence(&echo(300e-6, Y_PHASE), &ens, &cfg).unwrap().amplitude;
        let b = run_sequence(&echo(300e-6, Y_PHASE + delta), &ens, &cfg).unwrap().amplitude;
        prop_assert!((a.norm() - b.norm()).abs() < 1e-9);
        // the echo pathway carries the excite phase with sign +1
        let expected = a * Complex64::from_polar(1.0, delta);
        prop_assert!((b - expected).norm() < 1e-9, "{} vs {}", b, expected);
    }
}

#[test]
fn single_resonant_ion_echoes_perfectly() {
    let r = run_sequence(&echo(300e-6, Y_PHASE), &IonEnsemble::single(0.0, 1.0), &PropagationConfig::ideal())
        .unwrap();
    assert!((r.amplitude.norm() - 0.5).abs() < 1e-12);
    assert_eq!(r.metadata.ions, 1);
    assert_eq!(r.metadata.sequence_digest.len(), 64);
}

#[test]
fn floor_decay_is_exactly_exponential() {
    let t2 = 1.3e-3;
    let ens = sample_ensemble(100, DEFAULT_FWHM, DEFAULT_RABI_SPREAD, 4).unwrap();
    let cfg = PropagationConfig {
        t2_floor: t2,
        phase_cycle: true,
        ..PropagationConfig::ideal()
    };
    let pts: Vec<(f64, f64)> = (0..6)
        .map(|k| {
            let tau = 200e-6 + k as f64 * 150e-6;
            let a = run_sequence(&echo(tau, Y_PHASE), &ens, &cfg).unwrap().amplitude.norm();
            (2.0 * tau, a.ln())
        })
        .collect();
    for w in pts.windows(2) {
        let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        assert!((slope * t2 + 1.0).abs() < 1e-9, "slope {slope}");
    }
}

#[test]
fn ensemble_line_shape() {
    let n = 100_000;
    let ens = sample_ensemble(n, DEFAULT_FWHM, DEFAULT_RABI_SPREAD, 17).unwrap();
    assert!(ens.detunings.iter().all(|d| d.abs() <= 3.0 * DEFAULT_FWHM));
    assert!(ens.rabi_scales.iter().all(|&k| k > 0.0 && k <= 2.0));

    let mut abs: Vec<f64> = ens.detunings.iter().map(|d| d.abs()).collect();
    abs.sort_by(f64::total_cmp);
    // fraction of a +-3 FWHM truncated Lorentzian inside +-HWHM
    let inside = 1f64.atan() / 6f64.atan();
    let hwhm = abs[(inside * n as f64) as usize];
    assert!((2.0 * hwhm / DEFAULT_FWHM - 1.0).abs() < 0.02, "fwhm {}", 2.0 * hwhm);

    let mut d = ens.detunings.clone();
    d.sort_by(f64::total_cmp);
    let median = d[n / 2];
    assert!(median.abs() < 3.0 * DEFAULT_FWHM / (n as f64).sqrt());
}

#[test]
fn ensembles_are_reproducible() {
    let a = sample_ensemble(500, DEFAULT_FWHM, 0.3, 5).unwrap();
    assert_eq!(a, sample_ensemble(500, DEFAULT_FWHM, 0.3, 5).unwrap());
    assert_ne!(a, sample_ensemble(500, DEFAULT_FWHM, 0.3, 6).unwrap());
    let flat = sample_ensemble(500, DEFAULT_FWHM, 0.0, 5).unwrap();
    assert!(flat.rabi_scales.iter().all(|&k| k == 1.0));
    assert!(sample_ensemble(0, DEFAULT_FWHM, 0.3, 5).is_err());
    assert!(sample_ensemble(10, 0.0, 0.3, 5).is_err());
}

#[test]
fn weak_noise_free_decay_matches_motional_narrowing() {
    let set = DefectSet {
        couplings: vec![400.0, -300.0, 250.0, -200.0, 150.0],
    };
    let rate = 20e3;
    let expected = set.weak_noise_rate(rate, 1.0);
    let horizon = 2.0 / expected;
    let times: Vec<f64> = (1..=8).map(|k| k as f64 * horizon / 8.0).collect();
    let n = 3000u64;
    let mut mean = vec![0.0; times.len()];
    for s in 0..n {
        let tr = set.trajectory(rate, horizon, 1.0, s);
        for (m, &t) in mean.iter_mut().zip(&times) {
            let start = SpinState {
                bloch: Vector3::new(1.0, 0.0, 0.0),
            };
            let end = propagate_delay(start, 0.0, t, 0.0, &tr, f64::INFINITY).unwrap();
            *m += end.bloch.x / n as f64;
        }
    }
    let pts: Vec<Point> = times.iter().zip(&mean).map(|(&t, &m)| Point::new(t, m)).collect();
    let fitted = 1.0 / fit_exponential(&pts).unwrap().value("T2");
    assert!((fitted / expected - 1.0).abs() < 0.1, "{fitted} vs {expected}");
}

#[test]
fn short_trajectory_is_an_error() {
    let tr = NoiseTrajectory::silent(1e-3);
    assert!(propagate_delay(SpinState::ground(), 0.5e-3, 1e-3, 0.0, &tr, 1.0).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let ens = sample_ensemble(300, DEFAULT_FWHM, DEFAULT_RABI_SPREAD, 21)
        .unwrap()
        .with_noise_realizations(16);
    let cfg = PropagationConfig {
        noise_draws: 4,
        ..PropagationConfig::default()
    };
    let seq = build_cpmg(300e-6, 6, 20e-6, Y_PHASE, X_PHASE, BEAT).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sequence(&seq, &ens, &cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    for (a, b) in one.per_echo.iter().zip(&four.per_echo) {
        assert_eq!(a.amplitude.re.to_bits(), b.amplitude.re.to_bits());
        assert_eq!(a.amplitude.im.to_bits(), b.amplitude.im.to_bits());
    }
}

fn cpmg_t2(excite: f64, ens: &IonEnsemble, cfg: &PropagationConfig) -> f64 {
    let seq = build_cpmg(300e-6, 16, 20e-6, excite, X_PHASE, BEAT).unwrap();
    let r = run_sequence(&seq, ens, cfg).unwrap();
    let pts: Vec<Point> = r
        .per_echo
        .iter()
        .map(|e| Point::new(e.time, e.amplitude.norm()))
        .collect();
    fit_exponential(&pts).unwrap().value("T2")
}

#[test]
fn cpmg_protects_the_coherence_along_the_pulse_axis() {
    let ens = sample_ensemble(600, DEFAULT_FWHM, DEFAULT_RABI_SPREAD, 8)
        .unwrap()
        .with_noise_realizations(30);
    let cfg = PropagationConfig {
        noise_draws: 4,
        ..PropagationConfig::default()
    };
    // X-phased pi pulses: a Y excite leaves the coherence along X
    let parallel = cpmg_t2(Y_PHASE, &ens, &cfg);
    let perpendicular = cpmg_t2(X_PHASE, &ens, &cfg);
    assert!(perpendicular < parallel, "{perpendicular} vs {parallel}");
}
