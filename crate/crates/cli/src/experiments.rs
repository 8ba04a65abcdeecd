//! One runner per experiment kind. Runners only compute; writing is left to
//! [`crate::output`].

use std::f64::consts::PI;
use std::fs;

use num_complex::Complex64;
use optispin::analysis::{
    fit_exponential, fit_lorentzian, fit_t2dd_model, gamma_from_t2, phase_correlation, T2ddOptions,
};
use optispin::bath::{
    analytic_gamma, calibrate, fit_field_scan, infer_concentration, linewidth_model, ppm_relative_to_y,
    suppression, FieldScanOptions,
};
use optispin::detection::{amplitude_spectrum, extract_phase, fft_peak, noise_sigma_for_snr, synthesize_beat, Window};
use optispin::hyperfine::{build_hamiltonian, eigensystem, fit_quadrupole, transition_frequencies};
use optispin::propagator::{echo_amplitude_scan, run_sequence, sample_ensemble, scan_to_csv, ScanPoint};
use optispin::pumping::{evolve, pump, transmission};
use optispin::rng::mix;
use optispin::sequence::{build_cpmg, build_two_pulse_echo, Y_PHASE};
use optispin::{
    EchoResult, FitResult, IonEnsemble, Point, Populations, Probe, PropagationConfig, PulseSequence, ZeemanParams,
};
use serde_json::{json, Value};

use crate::config::{Experiment, FieldScanMode, FitModel, RunConfig};
use crate::output::{Csv, RunOutput};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Stream tag separating detector noise from the propagator's streams.
const STREAM_DETECTOR: u64 = 0xde7e;

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    match cfg.experiment {
        Experiment::Levels => levels(cfg),
        Experiment::Pumping => pumping(cfg),
        Experiment::LinewidthScan => linewidth_scan(cfg),
        Experiment::EchoDecay => echo_decay(cfg),
        Experiment::FieldScan => field_scan(cfg),
        Experiment::Cpmg => cpmg(cfg),
        Experiment::CpmgSweep => cpmg_sweep(cfg),
        Experiment::PhaseScan => phase_scan(cfg),
        Experiment::Fit => fit(cfg),
    }
}

fn ensemble(cfg: &RunConfig) -> Result<IonEnsemble> {
    let e = &cfg.ensemble;
    Ok(sample_ensemble(e.ions, e.fwhm_hz, e.rabi_spread, cfg.seed)?.with_noise_realizations(e.noise_realizations))
}

fn at_field(cfg: &RunConfig, field_mt: f64) -> PropagationConfig {
    PropagationConfig {
        field_mt,
        ..cfg.propagation.clone()
    }
}

fn two_pulse(cfg: &RunConfig, tau: f64, excite: f64) -> Result<PulseSequence> {
    let s = &cfg.sequence;
    Ok(build_two_pulse_echo(tau, s.echo_pulse_s, excite, s.pi_axis.phase(), s.beat_hz)?)
}

fn train(cfg: &RunConfig, tau_dd: f64, pulses: usize, excite: f64) -> Result<PulseSequence> {
    let s = &cfg.sequence;
    Ok(build_cpmg(tau_dd, pulses, s.pi_pulse_s, excite, s.pi_axis.phase(), s.beat_hz)?)
}

fn pulse_count(total: f64, tau_dd: f64) -> usize {
    ((total / tau_dd).round() as usize).max(1)
}

/// Exponential fit to the magnitudes of every echo in a train.
fn train_decay(r: &EchoResult) -> Result<FitResult> {
    let pts: Vec<Point> = r.per_echo.iter().map(|e| Point::new(e.time, e.amplitude.norm())).collect();
    Ok(fit_exponential(&pts)?)
}

fn params_json(fit: &FitResult) -> Value {
    let mut m = serde_json::Map::new();
    for p in &fit.params {
        m.insert(p.name.clone(), json!(p.value));
    }
    Value::Object(m)
}

fn levels(cfg: &RunConfig) -> Result<RunOutput> {
    let h = &cfg.hyperfine;
    let q = fit_quadrupole((h.splittings_mhz[0], h.splittings_mhz[1]))?;
    let zeeman = if h.field_mt == 0.0 {
        ZeemanParams::zero()
    } else {
        ZeemanParams::along(h.direction.into(), h.field_mt, h.gamma_n_khz_per_mt)
    };
    let ls = eigensystem(&build_hamiltonian(&q, &zeeman))?;
    let mut levels = Csv::new(&["level", "energy_mhz", "doublet"]);
    for (k, (e, label)) in ls.energies.iter().zip(&ls.labels).enumerate() {
        levels.row(&[&k, e, label]);
    }
    let lines = transition_frequencies(&ls);
    let mut trans = Csv::new(&["lower", "upper", "lower_level", "upper_level", "frequency_mhz"]);
    for t in &lines {
        trans.row(&[&t.lower, &t.upper, &t.lower_level, &t.upper_level, &t.frequency_mhz]);
    }
    let mut out = RunOutput::default();
    out.file("levels.csv", levels.into_string());
    out.file("transitions.csv", trans.into_string());
    out.headline("d_mhz", q.d_mhz);
    out.headline("e_mhz", q.e_mhz);
    out.headline("lines_mhz", lines.iter().map(|t| t.frequency_mhz).collect::<Vec<_>>());
    Ok(out)
}

fn pumping(cfg: &RunConfig) -> Result<RunOutput> {
    let pc = &cfg.pumping;
    let thermal = Populations::thermal();
    let mut trace = Csv::new(&["t_s", "p_half", "p_three_halves", "p_five_halves", "p_excited"]);
    let steps = 50;
    for k in 0..=steps {
        let t = pc.duration * k as f64 / steps as f64;
        let p = evolve(pc, &thermal, t)?;
        trace.row(&[&t, &p.p[0], &p.p[1], &p.p[2], &p.p[3]]);
    }
    let pumped = pump(pc)?;
    let mut table = Csv::new(&["probe", "transmission_thermal", "transmission_pumped"]);
    let mut out = RunOutput::default();
    for probe in Probe::ALL {
        let after = transmission(&pumped, pc.alpha0, probe);
        table.row(&[&probe, &transmission(&thermal, pc.alpha0, probe), &after]);
        out.headline(&format!("transmission_{probe}"), after);
    }
    out.file("transmission.csv", table.into_string());
    out.file("pumping_trace.csv", trace.into_string());
    Ok(out)
}

fn linewidth_scan(cfg: &RunConfig) -> Result<RunOutput> {
    let s = &cfg.linewidth_scan;
    let steps = ((s.stop_hz - s.start_hz) / s.step_hz + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| s.start_hz + k as f64 * s.step_hz).collect();
    let seq = two_pulse(cfg, 0.5 * s.two_tau_s, Y_PHASE)?;
    let rows = echo_amplitude_scan(
        &grid,
        |offset| {
            Ok(ScanPoint {
                sequence: seq.clone(),
                drive_offset: offset,
            })
        },
        &ensemble(cfg)?,
        &cfg.propagation,
    )?;
    let pts: Vec<Point> = rows.iter().map(|r| Point::new(r.parameter, r.amplitude.norm())).collect();
    let fit = fit_lorentzian(&pts)?;
    let mut out = RunOutput::default();
    out.file("linewidth_scan.csv", scan_to_csv(&rows, "offset_hz"));
    out.file("linewidth_fit.csv", fit.to_csv());
    out.headline("fwhm_hz", fit.value("fwhm"));
    out.headline("fwhm_sigma_hz", fit.sigma("fwhm").unwrap_or(f64::NAN));
    out.headline("center_hz", fit.value("center"));
    Ok(out)
}

fn echo_decay(cfg: &RunConfig) -> Result<RunOutput> {
    let s = &cfg.echo_decay;
    let ens = ensemble(cfg)?;
    let mut csv = Csv::new(&["t_s", "amplitude", "amplitude_sigma"]);
    let mut pts = Vec::with_capacity(s.two_tau_s.len());
    let mut first = None;
    for &two_tau in &s.two_tau_s {
        let r = run_sequence(&two_pulse(cfg, 0.5 * two_tau, s.excite.phase())?, &ens, &cfg.propagation)?;
        csv.row(&[&two_tau, &r.amplitude.norm(), &r.amplitude_sigma]);
        pts.push(Point::new(two_tau, r.amplitude.norm()));
        first.get_or_insert(r.amplitude);
    }
    let mut out = RunOutput::default();
    out.file("echo_decay.csv", csv.into_string());
    if pts.len() >= 3 {
        let fit = fit_exponential(&pts)?;
        let t2 = fit.value("T2");
        out.file("echo_fit.csv", fit.to_csv());
        out.headline("T2_s", t2);
        out.headline("T2_sigma_s", fit.sigma("T2").unwrap_or(f64::NAN));
        if t2.is_finite() {
            out.headline("gamma_h_hz", gamma_from_t2(t2)?);
        }
    }
    if s.spectrum {
        let echo = first.expect("at least one echo time");
        let d = &cfg.detection;
        let samples = (d.window_s * d.sample_rate_hz).round() as usize;
        let sigma = d.snr.map_or(0.0, |snr| noise_sigma_for_snr(2.0 * echo.norm(), samples, snr));
        let trace = synthesize_beat(
            echo,
            cfg.sequence.beat_hz,
            f64::INFINITY,
            d.window_s,
            d.sample_rate_hz,
            sigma,
            mix(cfg.seed, STREAM_DETECTOR, 0),
        )?;
        let mut spec = Csv::new(&["frequency_hz", "amplitude"]);
        for (f, a) in amplitude_spectrum(&trace, Window::Rectangular) {
            spec.row(&[&f, &a]);
        }
        let peak = fft_peak(&trace, cfg.sequence.beat_hz)?;
        let (theta, d_theta) = extract_phase(&peak)?;
        out.file("beat_trace.csv", trace.to_csv());
        out.file("beat_spectrum.csv", spec.into_string());
        out.headline("peak_frequency_hz", peak.frequency);
        out.headline("peak_amplitude", peak.amplitude);
        out.headline("echo_phase_rad", theta);
        out.headline("echo_phase_sigma_rad", d_theta);
    }
    Ok(out)
}

fn field_scan(cfg: &RunConfig) -> Result<RunOutput> {
    let s = &cfg.field_scan;
    let bath = &cfg.propagation.bath;
    let mut data = Vec::with_capacity(s.fields_mt.len());
    match s.mode {
        FieldScanMode::Analytic => {
            for &b in &s.fields_mt {
                let g = analytic_gamma(bath, suppression(b, bath), cfg.propagation.t2_floor)?;
                data.push((b, g, s.sigma_hz));
            }
        }
        FieldScanMode::Simulated => {
            let ens = ensemble(cfg)?;
            for &b in &s.fields_mt {
                let pc = at_field(cfg, b);
                let pts = s
                    .two_tau_s
                    .iter()
                    .map(|&two_tau| {
                        let r = run_sequence(&two_pulse(cfg, 0.5 * two_tau, Y_PHASE)?, &ens, &pc)?;
                        Ok(Point::new(two_tau, r.amplitude.norm()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let fit = fit_exponential(&pts)?;
                let t2 = fit.value("T2");
                let g = gamma_from_t2(t2)?;
                let rel = fit.sigma("T2").unwrap_or(0.0) / t2;
                data.push((b, g, (g * rel).max(1e-3)));
            }
        }
    }
    let opts = FieldScanOptions {
        beta: bath.secular_fraction,
        b_c_default: bath.b_c,
    };
    let fit = fit_field_scan(&data, &opts)?;
    let mut csv = Csv::new(&["field_mt", "gamma_hz", "gamma_sigma_hz", "model_hz"]);
    for &(b, g, sg) in &data {
        csv.row(&[&b, &g, &sg, &linewidth_model(b, &fit.params)]);
    }
    let cal = calibrate(bath, s.calibration_samples)?;
    let n = infer_concentration(fit.params.gamma_dd, Some(&cal))?;
    let mut out = RunOutput::default();
    out.file("field_scan.csv", csv.into_string());
    out.file("field_fit.csv", fit.fit.to_csv());
    out.file("bath_calibration.toml", cal.to_text());
    out.headline("gamma0_hz", fit.params.gamma0);
    out.headline("gamma_dd_hz", fit.params.gamma_dd);
    out.headline("b_c_mt", fit.params.b_c);
    out.headline("beta", fit.params.beta);
    out.headline("concentration_cm3", n);
    out.headline("ppm_relative_to_y", ppm_relative_to_y(n));
    Ok(out)
}

fn cpmg(cfg: &RunConfig) -> Result<RunOutput> {
    let s = &cfg.cpmg;
    let ens = ensemble(cfg)?;
    let mut echoes = Csv::new(&["field_mt", "excite", "tau_dd_s", "t_s", "amplitude", "amplitude_sigma"]);
    let mut fits = Csv::new(&["field_mt", "excite", "tau_dd_s", "pulses", "T2DD_s", "T2DD_sigma_s"]);
    let mut summary = Vec::new();
    for &b in &s.fields_mt {
        let pc = at_field(cfg, b);
        for &axis in &s.excite {
            for &tau in &s.tau_dd_s {
                let n = pulse_count(s.total_s, tau);
                let r = run_sequence(&train(cfg, tau, n, axis.phase())?, &ens, &pc)?;
                for e in &r.per_echo {
                    echoes.row(&[&b, &axis.name(), &tau, &e.time, &e.amplitude.norm(), &e.sigma]);
                }
                let t2dd = if n >= 3 { Some(train_decay(&r)?) } else { None };
                let (v, sv) = t2dd
                    .as_ref()
                    .map_or((f64::NAN, f64::NAN), |f| (f.value("T2"), f.sigma("T2").unwrap_or(f64::NAN)));
                fits.row(&[&b, &axis.name(), &tau, &n, &v, &sv]);
                summary.push(json!({
                    "field_mt": b,
                    "excite": axis.name(),
                    "tau_dd_s": tau,
                    "pulses": n,
                    "T2DD_s": v,
                }));
            }
        }
    }
    let mut out = RunOutput::default();
    out.file("cpmg_echoes.csv", echoes.into_string());
    out.file("cpmg_fits.csv", fits.into_string());
    out.headline("decays", summary);
    Ok(out)
}

fn cpmg_sweep(cfg: &RunConfig) -> Result<RunOutput> {
    let s = &cfg.cpmg_sweep;
    let ens = ensemble(cfg)?;
    let mut csv = Csv::new(&["tau_dd_s", "pulses", "T2DD_s", "T2DD_sigma_s"]);
    let mut pts = Vec::with_capacity(s.tau_dd_s.len());
    for &tau in &s.tau_dd_s {
        let n = pulse_count(s.total_s, tau);
        let fit = train_decay(&run_sequence(&train(cfg, tau, n, s.excite.phase())?, &ens, &cfg.propagation)?)?;
        let t2dd = fit.value("T2");
        csv.row(&[&tau, &n, &t2dd, &fit.sigma("T2").unwrap_or(f64::NAN)]);
        pts.push(Point::new(tau, t2dd));
    }
    let opts = T2ddOptions {
        exponent: s.exponent,
        exclude: s.exclude.clone(),
    };
    let model = fit_t2dd_model(&pts, &opts)?;
    let mut out = RunOutput::default();
    out.file("cpmg_sweep.csv", csv.into_string());
    out.file("cpmg_sweep_fit.csv", model.to_csv());
    for key in ["tau_opt", "T2DD_opt"] {
        if let Some(v) = model.get(key) {
            out.headline(&format!("{key}_s"), v);
        }
    }
    out.headline("model", params_json(&model));
    Ok(out)
}

fn phase_scan(cfg: &RunConfig) -> Result<RunOutput> {
    let s = &cfg.phase_scan;
    let d = &cfg.detection;
    let ens = ensemble(cfg)?;
    let phis: Vec<f64> = (0..s.steps).map(|k| 2.0 * PI * k as f64 / s.steps as f64).collect();
    let sweep = |make: &dyn Fn(f64) -> Result<PulseSequence>| -> Result<Vec<Complex64>> {
        phis.iter()
            .map(|&phi| Ok(run_sequence(&make(Y_PHASE + phi)?, &ens, &cfg.propagation)?.amplitude))
            .collect()
    };
    let mut cases = vec![("two-pulse", sweep(&|p| two_pulse(cfg, s.echo_tau_s, p))?)];
    if s.dd_pulses > 0 {
        cases.push(("cpmg", sweep(&|p| train(cfg, s.dd_tau_s, s.dd_pulses, p))?));
    }
    // detector noise is fixed once, by the two-pulse echo
    let samples = (d.window_s * d.sample_rate_hz).round() as usize;
    let sigma = d.snr.map_or(0.0, |snr| noise_sigma_for_snr(2.0 * cases[0].1[0].norm(), samples, snr));

    let mut table = Csv::new(&["sequence", "phi_rad", "theta_rad", "d_theta_rad", "echo_amplitude"]);
    let mut fits = Csv::new(&["sequence", "slope", "slope_sigma", "intercept_rad", "r"]);
    let mut out = RunOutput::default();
    let mut shot = 0u64;
    for (name, echoes) in &cases {
        let mut pairs = Vec::with_capacity(phis.len());
        for (&phi, &e) in phis.iter().zip(echoes) {
            let trace = synthesize_beat(
                e,
                cfg.sequence.beat_hz,
                f64::INFINITY,
                d.window_s,
                d.sample_rate_hz,
                sigma,
                mix(cfg.seed, STREAM_DETECTOR, shot),
            )?;
            shot += 1;
            let (theta, d_theta) = extract_phase(&fft_peak(&trace, cfg.sequence.beat_hz)?)?;
            table.row(&[name, &phi, &theta, &d_theta, &e.norm()]);
            pairs.push((phi, theta, d_theta));
        }
        let f = phase_correlation(&pairs)?;
        let r = f.r.unwrap_or(f64::NAN);
        fits.row(&[name, &f.value("slope"), &f.sigma("slope").unwrap_or(f64::NAN), &f.value("intercept"), &r]);
        out.headline(&format!("{name}_slope"), f.value("slope"));
        out.headline(&format!("{name}_r"), r);
    }
    out.file("phase_scan.csv", table.into_string());
    out.file("phase_fits.csv", fits.into_string());
    Ok(out)
}

fn fit(cfg: &RunConfig) -> Result<RunOutput> {
    let s = &cfg.fit;
    let text = fs::read_to_string(&s.input).map_err(|e| CliError::io(&s.input, e))?;
    let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Schema(format!("{}: no header row", s.input.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Schema(format!("{}: no column `{name}`", s.input.display())))
    };
    let xi = column(&s.x_column)?;
    let yi = column(&s.y_column)?;
    let si = s.sigma_column.as_deref().map(column).transpose()?;
    let mut pts = Vec::new();
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            cells
                .get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| CliError::Schema(format!("{}: data row {} column {} is not a number", s.input.display(), row + 1, header[i])))
        };
        pts.push(match si {
            Some(i) => Point::with_sigma(num(xi)?, num(yi)?, num(i)?),
            None => Point::new(num(xi)?, num(yi)?),
        });
    }
    let result = match s.model {
        FitModel::Exponential => fit_exponential(&pts)?,
        FitModel::Lorentzian => fit_lorentzian(&pts)?,
        FitModel::T2dd => fit_t2dd_model(&pts, &T2ddOptions::default())?,
        FitModel::PhaseCorrelation => {
            let pairs: Vec<(f64, f64, f64)> = pts.iter().map(|p| (p.x, p.y, p.sigma.unwrap_or(0.0))).collect();
            phase_correlation(&pairs)?
        }
    };
    let mut out = RunOutput::default();
    out.file("fit.csv", result.to_csv());
    out.file("fit.txt", result.to_text());
    out.headline("model", result.model.clone());
    out.headline("params", params_json(&result));
    out.headline("r_squared", result.r_squared);
    Ok(out)
}
