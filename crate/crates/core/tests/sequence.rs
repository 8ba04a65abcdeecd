use optispin::sequence::{
    build_cpmg, build_two_pulse_echo, export_waveform, validate, Element, PulseLabel, Timeline,
    ToneLayout, READOUT_ANGLE, X_PHASE, Y_PHASE,
};
use proptest::prelude::*;

const BEAT: f64 = 29.34e6;

proptest! {
    #[test]
    fn builders_produce_valid_sequences(
        tau_us in 80.0f64..2000.0,
        n in 1usize..40,
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        let tau = tau_us * 1e-6;
        let cpmg = build_cpmg(tau, n, 20e-6, phase, X_PHASE, BEAT).unwrap();
        prop_assert!(validate(&cpmg).is_ok());
        prop_assert_eq!(cpmg.refocusing_count(), n);
        prop_assert_eq!(cpmg.echo_times.len(), n);
        prop_assert!((cpmg.readout_time().unwrap() - n as f64 * tau).abs() < 1e-12);
        if tau > 150e-6 {
            let echo = build_two_pulse_echo(tau, 100e-6, phase, X_PHASE, BEAT).unwrap();
            prop_assert!(validate(&echo).is_ok());
            prop_assert!((echo.readout_time().unwrap() - 2.0 * tau).abs() < 1e-15);
        }
    }

    #[test]
    fn timeline_text_round_trips(tau_us in 80.0f64..1000.0, n in 1usize..12) {
        let seq = build_cpmg(tau_us * 1e-6, n, 20e-6, Y_PHASE, X_PHASE, BEAT).unwrap();
        let t = Timeline::from_sequence(&seq, 125e6);
        let back = Timeline::parse(&t.to_text()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn pulses_tile_the_timeline(tau_us in 80.0f64..1000.0, n in 1usize..12) {
        let seq = build_cpmg(tau_us * 1e-6, n, 20e-6, Y_PHASE, X_PHASE, BEAT).unwrap();
        let mut t = 0.0;
        for el in &seq.elements {
            if matches!(el, Element::Reset { .. }) {
                continue;
            }
            prop_assert!((el.t_start() - t).abs() < 1e-12);
            t = el.end();
        }
        prop_assert!((t - seq.total_duration).abs() < 1e-12);
    }
}

#[test]
fn readout_is_weak_and_last() {
    let seq = build_two_pulse_echo(300e-6, 100e-6, Y_PHASE, X_PHASE, BEAT).unwrap();
    let r = seq.readout().unwrap();
    assert_eq!(r.label, PulseLabel::Readout);
    assert!((r.angle() - READOUT_ANGLE).abs() < 1e-12);
    let last_pulse = seq.pulses().last().unwrap();
    assert_eq!(last_pulse.label, PulseLabel::Readout);
}

#[test]
fn reset_appends_after_readout() {
    let seq = build_two_pulse_echo(300e-6, 100e-6, Y_PHASE, X_PHASE, BEAT)
        .unwrap()
        .with_reset();
    assert!(matches!(seq.elements.last(), Some(Element::Reset { .. })));
    assert!(validate(&seq).is_ok());
}

#[test]
fn waveform_length_matches_duration() {
    let seq = build_cpmg(300e-6, 3, 20e-6, Y_PHASE, X_PHASE, BEAT).unwrap();
    let t = Timeline::from_sequence(&seq, 500e6);
    let w = export_waveform(&t, 500e6, ToneLayout::default()).unwrap();
    assert_eq!(w.len(), t.sample_count(500e6));
    assert!(w.iter().all(|p| p.a.abs() <= 1.0 && p.b.abs() <= 1.0));
}
