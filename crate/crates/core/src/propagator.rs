//! Monte-Carlo propagation of an inhomogeneous ensemble of effective
//! two-level spins through a pulse sequence.
//!
//! Each ion is a Bloch vector in the frame rotating at the nominal transition
//! frequency. Pulses are exact rotations; delays are exact precessions by
//! the static detuning plus the integral of a telegraph noise trajectory,
//! followed by a residual exponential decay. The echo amplitude is the
//! ensemble mean of `(x - i y) / 2`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bath::{self, BathConfig, DefectSet, NoiseTrajectory};
use crate::error::{Error, Result};
use crate::hyperfine::{self, QuadrupoleParams, ZeemanParams};
use crate::rng::{
    mix, rng_for, STREAM_BATH, STREAM_DETUNING, STREAM_JITTER, STREAM_NOISE, STREAM_RABI,
    STREAM_ZEEMAN,
};
use crate::sequence::{self, Element, PulseLabel, PulseSequence, Timeline, TwoColorPulse};

pub const DEFAULT_NOISE_REALIZATIONS: usize = 200;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 4000;
/// Inhomogeneous linewidth of the optical transition, Hz.
pub const DEFAULT_FWHM: f64 = 107e3;
/// Relative spread of the Rabi scale across the beam.
pub const DEFAULT_RABI_SPREAD: f64 = 0.3;
/// Detunings are drawn from a Lorentzian cut at this many FWHM.
pub const TRUNCATION_FWHM: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IonEnsemble {
    /// Static offsets from the drive difference frequency, Hz.
    pub detunings: Vec<f64>,
    /// Rabi scale factors.
    pub rabi_scales: Vec<f64>,
    /// Shot key per ion; ions sharing a key share bath geometry and pulse errors.
    pub noise_seeds: Vec<u64>,
    pub master_seed: u64,
    pub fwhm: f64,
}

impl IonEnsemble {
    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }

    /// Assign ion `i` to noise realization `i mod k`.
    pub fn with_noise_realizations(mut self, k: usize) -> Self {
        let k = k.max(1) as u64;
        for (i, s) in self.noise_seeds.iter_mut().enumerate() {
            *s = i as u64 % k;
        }
        self
    }

    /// Single resonant ion with unit Rabi scale.
    pub fn single(detuning: f64, kappa: f64) -> Self {
        Self {
            detunings: vec![detuning],
            rabi_scales: vec![kappa],
            noise_seeds: vec![0],
            master_seed: 0,
            fwhm: 0.0,
        }
    }
}

/// Stratified draw from a Lorentzian of FWHM `fwhm` truncated at
/// `+-TRUNCATION_FWHM * fwhm`, with Rabi scales from a normal law of width
/// `rabi_spread` truncated to (0, 2].
///
/// Ion `i` sits in the `i`-th equal-probability stratum, so detunings ascend
/// with the index and `i mod k` noise keys spread evenly across the line.
pub fn sample_ensemble(n: usize, fwhm: f64, rabi_spread: f64, master_seed: u64) -> Result<IonEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("ensemble needs at least one ion".into()));
    }
    if !(fwhm > 0.0) {
        return Err(Error::InvalidParameter(format!("fwhm must be positive, got {fwhm}")));
    }
    if !(rabi_spread >= 0.0) {
        return Err(Error::InvalidParameter("rabi_spread must be non-negative".into()));
    }
    let half = 0.5 * fwhm;
    let edge = (2.0 * TRUNCATION_FWHM).atan();
    let mut urng = rng_for(master_seed, STREAM_DETUNING, 0);
    let detunings = (0..n)
        .map(|p| {
            let u = (p as f64 + urng.random::<f64>()) / n as f64;
            half * ((2.0 * u - 1.0) * edge).tan()
        })
        .collect();

    let mut krng = rng_for(master_seed, STREAM_RABI, 0);
    let rabi_scales = (0..n)
        .map(|_| {
            if rabi_spread == 0.0 {
                return 1.0;
            }
            let normal = Normal::new(1.0, rabi_spread).expect("finite spread");
            loop {
                let k: f64 = normal.sample(&mut krng);
                if k > 0.0 && k <= 2.0 {
                    return k;
                }
            }
        })
        .collect();

    Ok(IonEnsemble {
        detunings,
        rabi_scales,
        noise_seeds: (0..n as u64).collect(),
        master_seed,
        fwhm,
    }
    .with_noise_realizations(DEFAULT_NOISE_REALIZATIONS))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    pub bloch: Vector3<f64>,
}

impl SpinState {
    /// Fully polarized along +z.
    pub fn ground() -> Self {
        Self {
            bloch: Vector3::new(0.0, 0.0, 1.0),
        }
    }

    /// `(x - i y) / 2`.
    pub fn coherence(&self) -> Complex64 {
        Complex64::new(0.5 * self.bloch.x, -0.5 * self.bloch.y)
    }
}

/// Right-handed rotation of `v` about unit axis `n` by `angle`.
#[inline]
fn rotate(v: Vector3<f64>, n: Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    v * c + n.cross(&v) * s + n * (n.dot(&v) * (1.0 - c))
}

/// Rotation about `(Omega cos phi, Omega sin phi, Delta) / W` by
/// `2 pi W duration`, with `Omega = kappa * rabi_nominal`.
pub fn propagate_pulse(state: SpinState, pulse: &TwoColorPulse, detuning: f64, kappa: f64) -> SpinState {
    let omega = kappa * pulse.rabi_nominal;
    let w = omega.hypot(detuning);
    if w == 0.0 {
        return state;
    }
    let (sp, cp) = pulse.phase.sin_cos();
    let axis = Vector3::new(omega * cp / w, omega * sp / w, detuning / w);
    SpinState {
        bloch: rotate(state.bloch, axis, 2.0 * PI * w * pulse.duration),
    }
}

#[inline]
fn precess(state: SpinState, cycles: f64, damping: f64) -> SpinState {
    let (s, c) = (2.0 * PI * cycles).sin_cos();
    let b = state.bloch;
    SpinState {
        bloch: Vector3::new(
            damping * (b.x * c - b.y * s),
            damping * (b.x * s + b.y * c),
            b.z,
        ),
    }
}

/// Free evolution over `[t0, t0 + duration]` under the static detuning and
/// the noise trajectory, with transverse decay `exp(-duration / t2_floor)`.
pub fn propagate_delay(
    state: SpinState,
    t0: f64,
    duration: f64,
    static_detuning: f64,
    noise: &NoiseTrajectory,
    t2_floor: f64,
) -> Result<SpinState> {
    if !(duration >= 0.0) {
        return Err(Error::InvalidParameter("delay must be non-negative".into()));
    }
    if duration == 0.0 {
        return Ok(state);
    }
    let cycles = static_detuning * duration + noise.integral(t0, t0 + duration)?;
    Ok(precess(state, cycles, (-duration / t2_floor).exp()))
}

/// Per-ion line offsets from nuclear Zeeman splitting in a powder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeemanBroadening {
    pub enabled: bool,
    /// Nuclear gyromagnetic ratio, kHz/mT.
    pub gamma_n: f64,
    /// Number of field orientations in the powder average.
    pub orientations: usize,
}

impl Default for ZeemanBroadening {
    fn default() -> Self {
        Self {
            enabled: true,
            gamma_n: hyperfine::DEFAULT_GAMMA_N_KHZ_PER_MT,
            orientations: 64,
        }
    }
}

/// Offsets (Hz) of the four sublevel lines of the lowest doublet pair from
/// their zero-field position, over a Fibonacci set of field directions.
pub fn zeeman_offsets(q: &QuadrupoleParams, gamma_n: f64, field_mt: f64, orientations: usize) -> Result<Vec<f64>> {
    let d = hyperfine::zero_field_doublets(q);
    let zero = d[1] - d[0];
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut out = Vec::with_capacity(4 * orientations);
    for k in 0..orientations {
        let z = 1.0 - (2.0 * k as f64 + 1.0) / orientations as f64;
        let r = (1.0 - z * z).sqrt();
        let dir = Vector3::new(r * (golden * k as f64).cos(), r * (golden * k as f64).sin(), z);
        let zp = ZeemanParams::along(dir, field_mt, gamma_n);
        let ls = hyperfine::eigensystem(&hyperfine::build_hamiltonian(q, &zp))?;
        for a in 0..2 {
            for b in 2..4 {
                out.push((ls.energies[b] - ls.energies[a] - zero) * 1e6);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub bath: BathConfig,
    /// Applied field, mT.
    pub field_mt: f64,
    /// Residual non-bath coherence time, s.
    pub t2_floor: f64,
    /// Relative pulse-area noise, drawn per pulse and per shot.
    pub pulse_area_jitter: f64,
    /// Drive-phase noise, rad, drawn per pulse and per shot.
    pub pulse_phase_jitter: f64,
    pub noise_enabled: bool,
    /// Four-step excitation phase cycle selecting the echo pathway.
    pub phase_cycle: bool,
    /// Independent telegraph trajectories averaged per ion.
    pub noise_draws: usize,
    pub zeeman: ZeemanBroadening,
    /// Quadrupole parameters used for Zeeman offsets.
    pub quadrupole: QuadrupoleParams,
}

/// Residual non-bath coherence time, s.
pub const DEFAULT_T2_FLOOR: f64 = 1.0;
/// Fitted to the 29.34 and 33.99 MHz zero-field lines.
pub const DEFAULT_QUADRUPOLE: QuadrupoleParams = QuadrupoleParams {
    d_mhz: 9.365_531_714,
    e_mhz: 2.576_110_809,
};
pub const DEFAULT_NOISE_DRAWS: usize = 32;
pub const DEFAULT_PULSE_AREA_JITTER: f64 = 0.0;
pub const DEFAULT_PULSE_PHASE_JITTER: f64 = 0.11;

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            bath: BathConfig::default(),
            field_mt: 0.0,
            t2_floor: DEFAULT_T2_FLOOR,
            pulse_area_jitter: DEFAULT_PULSE_AREA_JITTER,
            pulse_phase_jitter: DEFAULT_PULSE_PHASE_JITTER,
            noise_enabled: true,
            phase_cycle: false,
            noise_draws: DEFAULT_NOISE_DRAWS,
            zeeman: ZeemanBroadening::default(),
            quadrupole: DEFAULT_QUADRUPOLE,
        }
    }
}

impl PropagationConfig {
    /// Draws per ion; one suffices when nothing random varies between them.
    fn draws(&self, suppression: f64) -> usize {
        let noisy = self.noise_enabled && suppression > 0.0;
        let jittered = self.pulse_area_jitter > 0.0 || self.pulse_phase_jitter > 0.0;
        if noisy || jittered {
            self.noise_draws.max(1)
        } else {
            1
        }
    }

    /// Static, noiseless, lossless propagation.
    pub fn ideal() -> Self {
        Self {
            t2_floor: f64::INFINITY,
            pulse_area_jitter: 0.0,
            pulse_phase_jitter: 0.0,
            noise_enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoMetadata {
    pub sequence_digest: String,
    pub seed: u64,
    pub ions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EchoSample {
    pub time: f64,
    pub amplitude: Complex64,
    /// Standard error of `|amplitude|`.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoResult {
    /// Ensemble coherence at the start of the readout pulse.
    pub amplitude: Complex64,
    /// Standard error of `|amplitude|`.
    pub amplitude_sigma: f64,
    /// Coherence at every echo time of the sequence.
    pub per_echo: Vec<EchoSample>,
    pub metadata: EchoMetadata,
}

/// Bath geometry shared by every ion with the same key, plus pulse errors
/// shared by those ions within each noise draw.
struct Realization {
    defects: Option<DefectSet>,
    errors: Vec<Vec<PulseError>>,
}

/// Multiplicative area factor and additive phase of one pulse in one shot.
#[derive(Debug, Clone, Copy)]
struct PulseError {
    area: f64,
    phase: f64,
}

fn realizations(
    seq: &PulseSequence,
    ens: &IonEnsemble,
    cfg: &PropagationConfig,
    supp: f64,
) -> Result<BTreeMap<u64, Realization>> {
    let mut keys: Vec<u64> = ens.noise_seeds.clone();
    keys.sort_unstable();
    keys.dedup();
    let n_pulses = seq.pulses().count();
    let draws = cfg.draws(supp);
    let built: Vec<Result<(u64, Realization)>> = keys
        .par_iter()
        .map(|&key| {
            let defects = if cfg.noise_enabled && supp > 0.0 {
                Some(bath::sample_defects(&cfg.bath, mix(ens.master_seed, STREAM_BATH, key))?)
            } else {
                None
            };
            let mut jrng = rng_for(ens.master_seed, STREAM_JITTER, key);
            let errors = (0..draws)
                .map(|_| {
                    (0..n_pulses)
                        .map(|_| {
                            let za: f64 = StandardNormal.sample(&mut jrng);
                            let zp: f64 = StandardNormal.sample(&mut jrng);
                            PulseError {
                                area: (1.0 + cfg.pulse_area_jitter * za).max(0.0),
                                phase: cfg.pulse_phase_jitter * zp,
                            }
                        })
                        .collect()
                })
                .collect();
            Ok((key, Realization { defects, errors }))
        })
        .collect();
    built.into_iter().collect()
}

/// Propagate one ion; returns the coherence at each echo time followed by
/// the coherence at readout start.
fn propagate_ion(
    seq: &PulseSequence,
    detuning: f64,
    kappa: f64,
    excite_shift: f64,
    errors: &[PulseError],
    noise: &NoiseTrajectory,
    t2_floor: f64,
) -> Result<Vec<Complex64>> {
    let mut state = SpinState::ground();
    let mut out = Vec::with_capacity(seq.echo_times.len() + 1);
    let mut echo = seq.echo_times.iter().peekable();
    let mut pulse_idx = 0;
    for el in &seq.elements {
        match el {
            Element::Pulse(p) => {
                if p.label == PulseLabel::Readout {
                    while let Some(&&e) = echo.peek() {
                        if e <= p.t_start + 1e-15 {
                            out.push(state.coherence());
                            echo.next();
                        } else {
                            break;
                        }
                    }
                    out.push(state.coherence());
                    return Ok(out);
                }
                let err = errors[pulse_idx];
                let mut pulse = *p;
                pulse.phase += err.phase;
                if p.label == PulseLabel::Excite {
                    pulse.phase += excite_shift;
                }
                let delta = detuning + noise.value_at(p.t_start);
                state = propagate_pulse(state, &pulse, delta, kappa * err.area);
                pulse_idx += 1;
            }
            Element::Delay { t_start, duration } => {
                let end = t_start + duration;
                let mut t = *t_start;
                while let Some(&&e) = echo.peek() {
                    if e > end + 1e-15 {
                        break;
                    }
                    let e = e.max(t);
                    if e < end {
                        state = propagate_delay(state, t, e - t, detuning, noise, t2_floor)?;
                        t = e;
                        out.push(state.coherence());
                        echo.next();
                    } else {
                        break;
                    }
                }
                state = propagate_delay(state, t, end - t, detuning, noise, t2_floor)?;
            }
            Element::Reset { .. } => {}
        }
    }
    Err(Error::InvalidSequence(vec![sequence::Violation::MissingReadout]))
}

/// Order-independent reduction: recursive halving.
pub fn pairwise_sum(v: &[Complex64]) -> Complex64 {
    match v.len() {
        0 => Complex64::new(0.0, 0.0),
        1 => v[0],
        n if n <= 8 => v.iter().fold(Complex64::new(0.0, 0.0), |a, b| a + b),
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

pub fn sequence_digest(seq: &PulseSequence) -> String {
    let text = Timeline::from_sequence(seq, 0.0).to_text();
    let hash = Sha256::digest(text.as_bytes());
    let mut s = String::with_capacity(64);
    for b in hash {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Coherence order of the echo after `k` refocusing pulses.
fn pathway_order(k: usize) -> f64 {
    if k % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn run_sequence(seq: &PulseSequence, ens: &IonEnsemble, cfg: &PropagationConfig) -> Result<EchoResult> {
    run_sequence_offset(seq, ens, cfg, 0.0)
}

/// As [`run_sequence`] with the drive difference frequency moved by
/// `drive_offset` Hz.
pub fn run_sequence_offset(
    seq: &PulseSequence,
    ens: &IonEnsemble,
    cfg: &PropagationConfig,
    drive_offset: f64,
) -> Result<EchoResult> {
    sequence::validate(seq).map_err(Error::InvalidSequence)?;
    if ens.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let supp = bath::suppression(cfg.field_mt, &cfg.bath);
    let reals = realizations(seq, ens, cfg, supp)?;
    let zeeman = if cfg.zeeman.enabled && cfg.field_mt != 0.0 {
        zeeman_offsets(&cfg.quadrupole, cfg.zeeman.gamma_n, cfg.field_mt, cfg.zeeman.orientations.max(1))?
    } else {
        Vec::new()
    };

    // pulses preceding each echo, for pathway selection
    let pi_centers: Vec<f64> = seq
        .pulses()
        .filter(|p| p.label == PulseLabel::Rephase)
        .map(|p| p.center())
        .collect();
    let readout = seq.readout_time().expect("validated sequence has a readout");
    let orders: Vec<f64> = seq
        .echo_times
        .iter()
        .chain(std::iter::once(&readout))
        .map(|&t| pathway_order(pi_centers.iter().filter(|&&c| c < t).count()))
        .collect();
    let steps: &[usize] = if cfg.phase_cycle { &[0, 1, 2, 3] } else { &[0] };

    let per_ion: Vec<Result<Vec<Complex64>>> = (0..ens.len())
        .into_par_iter()
        .map(|i| {
            let mut detuning = ens.detunings[i] - drive_offset;
            if !zeeman.is_empty() {
                let pick = rng_for(ens.master_seed, STREAM_ZEEMAN, i as u64).random_range(0..zeeman.len());
                detuning += zeeman[pick];
            }
            let real = &reals[&ens.noise_seeds[i]];
            let draws = cfg.draws(supp);
            let mut acc = vec![Complex64::new(0.0, 0.0); orders.len()];
            for draw in 0..draws {
                let noise = match &real.defects {
                    Some(d) => {
                        let seed = mix(mix(ens.master_seed, STREAM_NOISE, i as u64), STREAM_NOISE, draw as u64);
                        d.trajectory(cfg.bath.flip_rate, seq.total_duration, supp, seed)
                    }
                    None => NoiseTrajectory::silent(seq.total_duration),
                };
                for &k in steps {
                    let shift = k as f64 * PI / 2.0;
                    let amps = propagate_ion(
                        seq,
                        detuning,
                        ens.rabi_scales[i],
                        shift,
                        &real.errors[draw],
                        &noise,
                        cfg.t2_floor,
                    )?;
                    let scale = if cfg.phase_cycle { 0.25 } else { 1.0 } / draws as f64;
                    for (j, a) in amps.iter().enumerate() {
                        acc[j] += a * Complex64::from_polar(scale, -orders[j] * shift);
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let per_ion: Vec<Vec<Complex64>> = per_ion.into_iter().collect::<Result<_>>()?;

    let columns = orders.len();
    let samples: Vec<EchoSample> = (0..columns)
        .map(|j| {
            let col: Vec<Complex64> = per_ion.iter().map(|v| v[j]).collect();
            reduce_column(&col)
        })
        .collect();
    let last = samples[columns - 1];
    let per_echo = seq
        .echo_times
        .iter()
        .zip(&samples)
        .map(|(&t, s)| EchoSample { time: t, ..*s })
        .collect();
    Ok(EchoResult {
        amplitude: last.amplitude,
        amplitude_sigma: last.sigma,
        per_echo,
        metadata: EchoMetadata {
            sequence_digest: sequence_digest(seq),
            seed: ens.master_seed,
            ions: ens.len(),
        },
    })
}

/// Batches used for the standard error of the ensemble mean.
pub const ERROR_BATCHES: usize = 20;

/// Mean of one column plus the standard error of its magnitude, from
/// interleaved batch means projected on the mean's direction.
fn reduce_column(col: &[Complex64]) -> EchoSample {
    let n = col.len();
    let mean = pairwise_sum(col) / n as f64;
    let b = ERROR_BATCHES.min(n);
    let sigma = if b < 2 {
        0.0
    } else {
        let dir = if mean.norm() > 0.0 { mean.conj() / mean.norm() } else { Complex64::new(1.0, 0.0) };
        let proj: Vec<f64> = (0..b)
            .map(|k| {
                let batch: Vec<Complex64> = col.iter().skip(k).step_by(b).copied().collect();
                (pairwise_sum(&batch) / batch.len() as f64 * dir).re
            })
            .collect();
        let m = proj.iter().sum::<f64>() / b as f64;
        let var = proj.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
        (var / b as f64).sqrt()
    };
    EchoSample {
        time: 0.0,
        amplitude: mean,
        sigma,
    }
}

/// One grid point of an amplitude scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub sequence: PulseSequence,
    /// Shift of the drive difference frequency, Hz.
    pub drive_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub parameter: f64,
    pub amplitude: Complex64,
}

/// Run one sequence per grid value with a shared ensemble and seed.
pub fn echo_amplitude_scan<F>(
    grid: &[f64],
    make: F,
    ens: &IonEnsemble,
    cfg: &PropagationConfig,
) -> Result<Vec<ScanRow>>
where
    F: Fn(f64) -> Result<ScanPoint>,
{
    if grid.is_empty() {
        return Err(Error::InvalidParameter("scan grid is empty".into()));
    }
    grid.iter()
        .map(|&x| {
            let pt = make(x)?;
            let r = run_sequence_offset(&pt.sequence, ens, cfg, pt.drive_offset)?;
            Ok(ScanRow {
                parameter: x,
                amplitude: r.amplitude,
            })
        })
        .collect()
}

pub fn scan_to_csv(rows: &[ScanRow], parameter: &str) -> String {
    let mut s = format!("{parameter},re,im,amplitude,phase_rad\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.parameter,
            r.amplitude.re,
            r.amplitude.im,
            r.amplitude.norm(),
            r.amplitude.arg()
        );
    }
    s
}
