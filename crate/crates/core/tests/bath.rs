use std::f64::consts::PI;

use optispin::analysis::{fit_exponential, gamma_from_t2};
use optispin::bath::{
    analytic_gamma, calibrate, defect_weight, fit_field_scan, hahn_segments, infer_concentration,
    linewidth_model, ppm_relative_to_y, sample_defects, sample_shift_distribution, suppression,
    telegraph_factor, telegraph_hahn, telegraph_trajectory, DefectSet, EnsembleKernel,
    FieldScanOptions, LinewidthParams,
};
use optispin::propagator::{
    run_sequence, sample_ensemble, PropagationConfig, DEFAULT_FWHM, DEFAULT_RABI_SPREAD,
};
use optispin::sequence::{build_two_pulse_echo, X_PHASE, Y_PHASE};
use optispin::{BathConfig, Point};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn flip_counts_are_poisson() {
    let cfg = BathConfig::default();
    let defects = sample_defects(&cfg, 3).unwrap();
    let m = defects.couplings.len() as f64;
    let d = 2e-3;
    let seeds = 1000u64;
    let total: usize = (0..seeds)
        .map(|s| defects.trajectory(cfg.flip_rate, d, 1.0, s).flip_count())
        .sum();
    let lambda = m * cfg.flip_rate * d;
    let mean = total as f64 / seeds as f64;
    let bound = 3.0 * (lambda / seeds as f64).sqrt();
    assert!((mean - lambda).abs() < bound, "mean {mean}, expected {lambda} +- {bound}");
}

#[test]
fn trajectories_are_seed_deterministic() {
    let cfg = BathConfig::default();
    let a = telegraph_trajectory(&cfg, 5e-3, 0.7, 11).unwrap();
    let b = telegraph_trajectory(&cfg, 5e-3, 0.7, 11).unwrap();
    let c = telegraph_trajectory(&cfg, 5e-3, 0.7, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn single_defect_echo_matches_closed_form() {
    // one fluctuator of amplitude b/2 Hz; Monte-Carlo phase average
    let b = 800.0;
    let rate = 1000.0;
    let set = DefectSet { couplings: vec![b] };
    let n = 8000u64;
    for t in [0.5e-3, 1.5e-3, 3e-3] {
        let mean: f64 = (0..n)
            .map(|s| {
                let tr = set.trajectory(rate, t, 1.0, s);
                let phi = 2.0 * PI * (tr.integral(0.0, 0.5 * t).unwrap() - tr.integral(0.5 * t, t).unwrap());
                phi.cos()
            })
            .sum::<f64>()
            / n as f64;
        let exact = telegraph_hahn(PI * b, rate, t);
        let matrix = telegraph_factor(PI * b, rate, &hahn_segments(t));
        assert!((exact - matrix).abs() < 1e-12);
        assert!((mean - exact).abs() < 4.0 / (n as f64).sqrt(), "t={t}: {mean} vs {exact}");
    }
}

#[test]
fn configuration_average_matches_kernel() {
    let cfg = BathConfig::default();
    let kernel = EnsembleKernel::new(&cfg, 1.0).unwrap();
    let t = 1.3e-3;
    let n = 1000u64;
    let mc: f64 = (0..n)
        .map(|s| {
            let d = sample_defects(&cfg, s).unwrap();
            d.couplings
                .iter()
                .map(|b| telegraph_factor(PI * b, cfg.flip_rate, &hahn_segments(t)))
                .product::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    let k = kernel.hahn(t);
    assert!((mc / k - 1.0).abs() < 0.03, "{mc} vs {k}");
}

#[test]
fn keeping_more_defects_barely_moves_the_decay() {
    // doubling M must change the decay rate by under 2%
    let base = BathConfig::default();
    let wide = BathConfig {
        strongest: 2 * base.strongest,
        ..base.clone()
    };
    let t = 1.3e-3;
    let avg = |cfg: &BathConfig| {
        (0..600u64)
            .map(|s| {
                sample_defects(cfg, s)
                    .unwrap()
                    .couplings
                    .iter()
                    .map(|b| telegraph_factor(PI * b, cfg.flip_rate, &hahn_segments(t)))
                    .product::<f64>()
            })
            .sum::<f64>()
            / 600.0
    };
    let (a, b) = (-avg(&base).ln(), -avg(&wide).ln());
    assert!((a / b - 1.0).abs() < 0.02, "{a} vs {b}");
}

#[test]
fn dense_bath_shifts_are_gaussian() {
    let cfg = BathConfig::default().with_concentration(1.5e19);
    let dist = sample_shift_distribution(&cfg, 100_000).unwrap();
    let k = dist.excess_kurtosis().unwrap();
    assert!(k.abs() < 0.5, "excess kurtosis {k}");
}

#[test]
fn shift_width_grows_with_concentration() {
    let base = BathConfig::default();
    let sigmas: Vec<f64> = [3.2e17, 6.4e17, 1.28e18]
        .iter()
        .map(|&n| sample_shift_distribution(&base.with_concentration(n), 20_000).unwrap().sigma)
        .collect();
    assert!(sigmas.windows(2).all(|w| w[0] <= w[1]), "{sigmas:?}");
    let ratio = sigmas[2] / sigmas[1];
    assert!((ratio - 2f64.sqrt()).abs() < 0.05, "doubling ratio {ratio}");
}

#[test]
fn dilute_limit_needs_defects() {
    let cfg = BathConfig::default().with_concentration(1e12);
    assert!(sample_shift_distribution(&cfg, 100).is_err());
}

proptest! {
    #[test]
    fn linewidth_is_non_increasing_in_field(
        g0 in 0.0f64..500.0,
        gdd in 0.0f64..500.0,
        b_c in 0.01f64..20.0,
        beta in 0.0f64..=1.0,
    ) {
        let p = LinewidthParams { gamma0: g0, gamma_dd: gdd, b_c, beta };
        let grid: Vec<f64> = (0..200).map(|k| k as f64 * 0.1).collect();
        for w in grid.windows(2) {
            prop_assert!(linewidth_model(w[1], &p) <= linewidth_model(w[0], &p) + 1e-12);
            prop_assert!(linewidth_model(-w[1], &p) == linewidth_model(w[1], &p));
        }
        prop_assert!((linewidth_model(1e9, &p) - (g0 + beta * gdd)).abs() < 1e-6 * (1.0 + gdd));
    }

    #[test]
    fn suppression_is_a_unit_fraction(b in -50.0f64..50.0) {
        let s = suppression(b, &BathConfig::default());
        prop_assert!(s > 0.0 && s <= 1.0);
    }
}

#[test]
fn field_scan_recovers_exact_parameters() {
    let truth = LinewidthParams {
        gamma0: 40.0,
        gamma_dd: 210.0,
        b_c: 1.5,
        beta: 0.3,
    };
    let data: Vec<(f64, f64, f64)> = (0..10)
        .map(|k| {
            let b = k as f64;
            (b, linewidth_model(b, &truth), 5.0)
        })
        .collect();
    let opts = FieldScanOptions {
        beta: 0.3,
        ..FieldScanOptions::default()
    };
    let fit = fit_field_scan(&data, &opts).unwrap();
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    assert!(rel(fit.params.gamma0, truth.gamma0) < 1e-6);
    assert!(rel(fit.params.gamma_dd, truth.gamma_dd) < 1e-6);
    assert!(rel(fit.params.b_c, truth.b_c) < 1e-6);
    assert!(fit.fit.warnings.is_empty());
}

#[test]
fn noisy_field_scans_recover_parameters() {
    let truth = LinewidthParams {
        gamma0: 110.0,
        gamma_dd: 140.0,
        b_c: 1.5,
        beta: 0.0,
    };
    let opts = FieldScanOptions {
        beta: 0.0,
        ..FieldScanOptions::default()
    };
    // Per-fit scatter of Gamma_DD is about 8% with B_c free, so the check is
    // on the mean and on the reported error bars rather than on every fit.
    let seeds = 100;
    let (mut g0, mut gdd) = (Vec::new(), Vec::new());
    let mut covered = 0;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<(f64, f64, f64)> = (0..10)
            .map(|k| {
                let b = k as f64;
                let g = linewidth_model(b, &truth);
                let s = 0.05 * g;
                (b, g + Normal::new(0.0, s).unwrap().sample(&mut rng), s)
            })
            .collect();
        let fit = fit_field_scan(&data, &opts).unwrap();
        let (a, sa) = (fit.params.gamma0, fit.fit.sigma("Gamma0").unwrap());
        let (b, sb) = (fit.params.gamma_dd, fit.fit.sigma("Gamma_DD").unwrap());
        if (a - truth.gamma0).abs() < 1.96 * sa && (b - truth.gamma_dd).abs() < 1.96 * sb {
            covered += 1;
        }
        g0.push(a);
        gdd.push(b);
    }
    for (xs, t) in [(&g0, truth.gamma0), (&gdd, truth.gamma_dd)] {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        assert!((mean / t - 1.0).abs() < 0.02, "mean {mean} vs {t}");
    }
    assert!(covered >= 85, "{covered}/{seeds} error bars cover the truth");
}

#[test]
fn two_anchor_scan_is_a_linear_solve() {
    let data = [(0.0, 250.0, 0.0), (9.0, 110.0, 0.0)];
    let fit = fit_field_scan(&data, &FieldScanOptions::default()).unwrap();
    let w = defect_weight(9.0, 1.5, 0.0);
    let gdd = 140.0 / (1.0 - w);
    assert!((fit.params.gamma_dd - gdd).abs() < 1e-9);
    assert!((fit.params.gamma0 - (250.0 - gdd)).abs() < 1e-9);
    assert_eq!(fit.params.beta, 0.0);
    assert_eq!(fit.fit.warnings.len(), 1);
}

#[test]
fn inference_is_linear_under_linear_calibration() {
    let cal = optispin::BathCalibration {
        reference_concentration: 1e18,
        reference_sigma_hz: 1000.0,
        sigma_exponent: 1.0,
        reference_gamma_dd_hz: 200.0,
        gamma_exponent: 1.0,
        flip_rate_hz: 1000.0,
    };
    let a = infer_concentration(123.0, Some(&cal)).unwrap();
    let b = infer_concentration(246.0, Some(&cal)).unwrap();
    assert!((b / a - 2.0).abs() < 1e-12);
    assert!(infer_concentration(100.0, None).is_err());
    assert!(infer_concentration(-1.0, Some(&cal)).is_err());
}

#[test]
fn calibration_survives_a_file_round_trip() {
    let cal = calibrate(&BathConfig::default(), 2000).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.toml");
    cal.save(&path).unwrap();
    assert_eq!(optispin::BathCalibration::load(&path).unwrap(), cal);
    let g = cal.reference_gamma_dd_hz;
    let n = infer_concentration(g, Some(&cal)).unwrap();
    assert!((n / 6.4e17 - 1.0).abs() < 1e-12);
}

#[test]
fn ppm_of_reference_concentration() {
    let ppm = ppm_relative_to_y(6.4e17);
    assert!((ppm - 24.0).abs() < 0.5, "{ppm}");
}

#[test]
fn analytic_linewidth_scales_with_concentration() {
    let base = BathConfig::default();
    let g1 = analytic_gamma(&base, 1.0, f64::INFINITY).unwrap();
    let g2 = analytic_gamma(&base.with_concentration(1.28e18), 1.0, f64::INFINITY).unwrap();
    assert!(g2 > 1.6 * g1 && g2 < 2.4 * g1, "{g1} -> {g2}");
    let quiet = analytic_gamma(&base, 0.0, f64::INFINITY).unwrap();
    assert_eq!(quiet, 0.0);
}

#[test]
fn simulated_decay_infers_its_concentration() {
    let truth = 1.0e18;
    let mut cfg = PropagationConfig {
        phase_cycle: true,
        ..PropagationConfig::default()
    };
    cfg.bath = cfg.bath.with_concentration(truth);
    let cal = calibrate(&BathConfig::default(), 4000).unwrap();
    let ens = sample_ensemble(2000, DEFAULT_FWHM, DEFAULT_RABI_SPREAD, 9)
        .unwrap()
        .with_noise_realizations(100);
    let pts: Vec<Point> = (0..10)
        .map(|k| {
            let two_tau = 0.3e-3 + k as f64 * 0.2e-3;
            let seq = build_two_pulse_echo(0.5 * two_tau, 100e-6, Y_PHASE, X_PHASE, 29.34e6).unwrap();
            Point::new(two_tau, run_sequence(&seq, &ens, &cfg).unwrap().amplitude.norm())
        })
        .collect();
    let t2 = fit_exponential(&pts).unwrap().value("T2");
    let floor = gamma_from_t2(cfg.t2_floor).unwrap();
    let gamma_dd = gamma_from_t2(t2).unwrap() - floor;
    let n = infer_concentration(gamma_dd, Some(&cal)).unwrap();
    assert!((n / truth - 1.0).abs() < 0.25, "inferred {n:e} from T2 = {t2}");
}

#[test]
fn random_defect_draws_differ() {
    let cfg = BathConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = sample_defects(&cfg, rng.random()).unwrap();
    let b = sample_defects(&cfg, rng.random()).unwrap();
    assert_ne!(a, b);
    assert!(a.couplings.len() <= cfg.strongest);
    assert!(a.couplings.windows(2).all(|w| w[0].abs() >= w[1].abs()));
}
