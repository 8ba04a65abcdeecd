//! Fixtures shared by the benchmarks.

use optispin::propagator::{sample_ensemble, DEFAULT_FWHM, DEFAULT_RABI_SPREAD};
use optispin::sequence::{build_cpmg, build_two_pulse_echo, X_PHASE, Y_PHASE};
use optispin::{IonEnsemble, Point, PulseSequence};

pub const BEAT: f64 = 29.34e6;

/// Default line shape and Rabi spread with `ions` ions over `realizations`
/// bath geometries.
pub fn ensemble(ions: usize, realizations: usize) -> IonEnsemble {
    sample_ensemble(ions, DEFAULT_FWHM, DEFAULT_RABI_SPREAD, 1)
        .expect("valid ensemble")
        .with_noise_realizations(realizations)
}

pub fn two_pulse(tau: f64) -> PulseSequence {
    build_two_pulse_echo(tau, 100e-6, Y_PHASE, X_PHASE, BEAT).expect("valid echo")
}

pub fn cpmg(tau_dd: f64, pulses: usize) -> PulseSequence {
    build_cpmg(tau_dd, pulses, 20e-6, Y_PHASE, X_PHASE, BEAT).expect("valid train")
}

/// 41-point Lorentzian detuning scan.
pub fn lorentz_scan() -> Vec<Point> {
    (0..41)
        .map(|k| {
            let x = -300e3 + 15e3 * k as f64;
            Point::new(x, optispin::analysis::lorentzian(x, 2e3, 107e3, 0.3, 0.01))
        })
        .collect()
}
