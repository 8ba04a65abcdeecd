use std::f64::consts::PI;

use num_complex::Complex64;
use optispin::detection::{
    extract_phase, fft_peak, fft_peak_windowed, noise_sigma_for_snr, synthesize_beat, Window,
    DEFAULT_SAMPLE_RATE, DEFAULT_WINDOW,
};
use proptest::prelude::*;

const BEAT: f64 = 29.34e6;

fn trace(echo: Complex64, noise: f64, seed: u64) -> optispin::BeatTrace {
    synthesize_beat(echo, BEAT, f64::INFINITY, DEFAULT_WINDOW, DEFAULT_SAMPLE_RATE, noise, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn noiseless_round_trip(a in 0.01f64..0.5, theta in -PI + 1e-9..PI) {
        let e = Complex64::from_polar(a, theta);
        let peak = fft_peak(&trace(e, 0.0, 1), BEAT).unwrap();
        let (t, _) = extract_phase(&peak).unwrap();
        prop_assert!((t - theta).abs() < 1e-6, "{} vs {}", t, theta);
        prop_assert!((peak.amplitude - 2.0 * a).abs() < 1e-6);
        prop_assert!((peak.echo() - e).norm() < 1e-6);
    }
}

#[test]
fn decaying_envelope_matches_geometric_sum() {
    let tau = 7e-6;
    let a = 0.4;
    let t = synthesize_beat(Complex64::new(a, 0.0), BEAT, tau, DEFAULT_WINDOW, DEFAULT_SAMPLE_RATE, 0.0, 1)
        .unwrap();
    let n = t.samples.len() as f64;
    let q = (-1.0 / (DEFAULT_SAMPLE_RATE * tau)).exp();
    let factor = (1.0 - q.powf(n)) / (n * (1.0 - q));
    let peak = fft_peak(&t, BEAT).unwrap();
    let expected = 2.0 * a * factor;
    assert!((peak.amplitude / expected - 1.0).abs() < 2e-3, "{} vs {}", peak.amplitude, expected);
    assert!(factor < 0.15);
}

#[test]
fn flat_top_handles_off_bin_tones() {
    let e = Complex64::new(0.3, 0.0);
    let off = BEAT + 10e3; // half a bin
    let t = synthesize_beat(e, off, f64::INFINITY, DEFAULT_WINDOW, DEFAULT_SAMPLE_RATE, 0.0, 1).unwrap();
    let flat = fft_peak_windowed(&t, off, Window::FlatTop).unwrap();
    assert!((flat.amplitude / 0.6 - 1.0).abs() < 0.02, "{}", flat.amplitude);
    let rect = fft_peak(&t, off).unwrap();
    assert!(rect.amplitude < 0.6 * 0.7, "rectangular scalloping {}", rect.amplitude);
}

#[test]
fn injected_snr_is_measured() {
    let e = Complex64::new(0.2, 0.1);
    let n = (DEFAULT_WINDOW * DEFAULT_SAMPLE_RATE).round() as usize;
    let sigma = noise_sigma_for_snr(2.0 * e.norm(), n, 10.0);
    for seed in 0..100 {
        let snr = fft_peak(&trace(e, sigma, seed), BEAT).unwrap().snr;
        assert!((7.0..=13.0).contains(&snr), "seed {seed}: snr {snr}");
    }
}

#[test]
fn snr_ten_estimates_are_unbiased() {
    let seeds = 400;
    let e = Complex64::from_polar(0.25, 0.7);
    let n = (DEFAULT_WINDOW * DEFAULT_SAMPLE_RATE).round() as usize;
    let sigma = noise_sigma_for_snr(2.0 * e.norm(), n, 10.0);
    let (mut amp, mut phase, mut dtheta, mut scatter) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let p = fft_peak(&trace(e, sigma, seed), BEAT).unwrap();
        let (t, d) = extract_phase(&p).unwrap();
        amp += p.amplitude / seeds as f64;
        phase += t / seeds as f64;
        dtheta += d / seeds as f64;
        scatter += (t - 0.7).powi(2) / seeds as f64;
    }
    assert!((amp / (2.0 * e.norm()) - 1.0).abs() < 0.02, "amplitude {amp}");
    assert!((phase - 0.7).abs() < 0.05, "phase {phase}");
    // reported uncertainty tracks the actual scatter
    assert!((dtheta / scatter.sqrt() - 1.0).abs() < 0.2, "{dtheta} vs {}", scatter.sqrt());
}

#[test]
fn high_snr_single_shots_are_accurate() {
    let e = Complex64::from_polar(0.25, -2.1);
    let n = (DEFAULT_WINDOW * DEFAULT_SAMPLE_RATE).round() as usize;
    let sigma = noise_sigma_for_snr(2.0 * e.norm(), n, 200.0);
    for seed in 0..50 {
        let p = fft_peak(&trace(e, sigma, seed), BEAT).unwrap();
        let (t, _) = extract_phase(&p).unwrap();
        assert!((p.amplitude / 0.5 - 1.0).abs() < 0.02);
        assert!((t + 2.1).abs() < 0.05);
    }
}

#[test]
fn phase_error_falls_with_amplitude() {
    let sigma = 0.05;
    let d: Vec<f64> = [0.02, 0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&a| {
            let p = fft_peak(&trace(Complex64::new(a, a), sigma, 3), BEAT).unwrap();
            extract_phase(&p).unwrap().1
        })
        .collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}

#[test]
fn hand_computed_phase_error() {
    let p = optispin::SpectrumPeak {
        frequency: BEAT,
        bin: 1467,
        re: 1.0,
        im: 0.0,
        amplitude: 1.0,
        theta: 0.0,
        d_re: 0.1,
        d_im: 0.1,
        d_theta: 0.0,
        snr: 0.0,
    };
    assert_eq!(extract_phase(&p).unwrap(), (0.0, 0.1));
}

#[test]
fn same_seed_same_trace() {
    let e = Complex64::new(0.1, 0.2);
    assert_eq!(trace(e, 0.01, 9), trace(e, 0.01, 9));
    assert_ne!(trace(e, 0.01, 9), trace(e, 0.01, 10));
    let csv = trace(e, 0.0, 1).to_csv();
    assert!(csv.starts_with("time_s,value\n"));
    assert_eq!(csv.lines().count(), 6251);
}
