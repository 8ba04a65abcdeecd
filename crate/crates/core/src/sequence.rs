//! Two-color pulse sequences: representation, validation, builders and
//! sample-accurate waveform export.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// Default readout pulse length, s.
pub const DEFAULT_READOUT_LEN: f64 = 50e-6;
/// Rotation angle of the weak readout pulse, rad.
pub const READOUT_ANGLE: f64 = PI / 20.0;
/// Upper bound on the readout rotation angle, rad.
pub const WEAK_PROBE_LIMIT: f64 = PI / 10.0;

const TIME_TOL: f64 = 1e-12;

pub const X_PHASE: f64 = 0.0;
pub const Y_PHASE: f64 = PI / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseLabel {
    Excite,
    Rephase,
    Readout,
    Reset,
}

impl fmt::Display for PulseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PulseLabel::Excite => "excite",
            PulseLabel::Rephase => "rephase",
            PulseLabel::Readout => "readout",
            PulseLabel::Reset => "reset",
        })
    }
}

impl FromStr for PulseLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excite" => Ok(PulseLabel::Excite),
            "rephase" => Ok(PulseLabel::Rephase),
            "readout" => Ok(PulseLabel::Readout),
            "reset" => Ok(PulseLabel::Reset),
            other => Err(Error::Parse(format!("unknown pulse label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoColorPulse {
    pub t_start: f64,
    pub duration: f64,
    /// Spin Rabi frequency at unit scale factor, Hz.
    pub rabi_nominal: f64,
    /// Relative phase of the two tones, which sets the drive axis, rad.
    pub phase: f64,
    pub label: PulseLabel,
}

impl TwoColorPulse {
    pub fn end(&self) -> f64 {
        self.t_start + self.duration
    }

    pub fn center(&self) -> f64 {
        self.t_start + 0.5 * self.duration
    }

    /// Pulse area in cycles.
    pub fn area_cycles(&self) -> f64 {
        self.rabi_nominal * self.duration
    }

    /// Rotation angle on resonance, rad.
    pub fn angle(&self) -> f64 {
        2.0 * PI * self.area_cycles()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Element {
    Pulse(TwoColorPulse),
    Delay { t_start: f64, duration: f64 },
    /// Population reset to thermal equilibrium; instantaneous.
    Reset { t_start: f64 },
}

impl Element {
    pub fn t_start(&self) -> f64 {
        match self {
            Element::Pulse(p) => p.t_start,
            Element::Delay { t_start, .. } | Element::Reset { t_start } => *t_start,
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            Element::Pulse(p) => p.duration,
            Element::Delay { duration, .. } => *duration,
            Element::Reset { .. } => 0.0,
        }
    }

    pub fn end(&self) -> f64 {
        self.t_start() + self.duration()
    }

    pub fn as_pulse(&self) -> Option<&TwoColorPulse> {
        match self {
            Element::Pulse(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub elements: Vec<Element>,
    /// Difference frequency of the two tones, Hz.
    pub beat_frequency: f64,
    pub total_duration: f64,
    /// Times at which echoes form (one per refocusing pulse), s.
    pub echo_times: Vec<f64>,
}

impl PulseSequence {
    /// Build from explicit elements; total duration is the end of the last one.
    pub fn from_elements(elements: Vec<Element>, beat_frequency: f64) -> Self {
        let total_duration = elements.iter().map(Element::end).fold(0.0, f64::max);
        Self {
            elements,
            beat_frequency,
            total_duration,
            echo_times: Vec::new(),
        }
    }

    pub fn pulses(&self) -> impl Iterator<Item = &TwoColorPulse> {
        self.elements.iter().filter_map(Element::as_pulse)
    }

    pub fn readout(&self) -> Option<&TwoColorPulse> {
        self.pulses().find(|p| p.label == PulseLabel::Readout)
    }

    pub fn readout_time(&self) -> Option<f64> {
        self.readout().map(|p| p.t_start)
    }

    pub fn refocusing_count(&self) -> usize {
        self.pulses().filter(|p| p.label == PulseLabel::Rephase).count()
    }

    /// Replace the readout pulse duration, keeping its start and weak angle.
    pub fn with_readout_duration(mut self, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "readout duration must be positive, got {duration}"
            )));
        }
        for el in &mut self.elements {
            if let Element::Pulse(p) = el {
                if p.label == PulseLabel::Readout {
                    p.duration = duration;
                    p.rabi_nominal = READOUT_ANGLE / (2.0 * PI * duration);
                }
            }
        }
        self.total_duration = self.elements.iter().map(Element::end).fold(0.0, f64::max);
        Ok(self)
    }

    /// Append a population-reset marker right after the last element.
    pub fn with_reset(mut self) -> Self {
        self.elements.push(Element::Reset {
            t_start: self.total_duration,
        });
        self
    }

    /// Copy with every pulse of `label` given a new phase.
    pub fn with_phase(mut self, label: PulseLabel, phase: f64) -> Self {
        for el in &mut self.elements {
            if let Element::Pulse(p) = el {
                if p.label == label {
                    p.phase = phase;
                }
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("element {index} starts before element {previous}")]
    Unordered { previous: usize, index: usize },
    #[error("elements {first} and {second} overlap")]
    Overlap { first: usize, second: usize },
    #[error("multiple readout pulses at elements {0:?}")]
    MultipleReadout(Vec<usize>),
    #[error("no readout pulse")]
    MissingReadout,
    #[error("readout at element {index} rotates by {angle:.4} rad, above the weak-probe limit")]
    StrongReadout { index: usize, angle: f64 },
    #[error("element {index} has non-positive duration")]
    NonPositiveDuration { index: usize },
    #[error("element {index} has invalid Rabi frequency")]
    InvalidRabi { index: usize },
    #[error("total duration {declared} s differs from last element end {actual} s")]
    DurationMismatch { declared: f64, actual: f64 },
}

/// Check ordering, overlaps, readout count and the weak-probe condition.
pub fn validate(seq: &PulseSequence) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut readouts = Vec::new();
    for (i, el) in seq.elements.iter().enumerate() {
        if let Element::Pulse(p) = el {
            if !(p.duration > 0.0) {
                out.push(Violation::NonPositiveDuration { index: i });
            }
            if !(p.rabi_nominal >= 0.0) || !p.rabi_nominal.is_finite() {
                out.push(Violation::InvalidRabi { index: i });
            }
            if p.label == PulseLabel::Readout {
                readouts.push(i);
                let angle = p.angle();
                if angle >= WEAK_PROBE_LIMIT {
                    out.push(Violation::StrongReadout { index: i, angle });
                }
            }
        }
        if let Element::Delay { duration, .. } = el {
            if !(*duration > 0.0) {
                out.push(Violation::NonPositiveDuration { index: i });
            }
        }
        if i > 0 {
            let prev = &seq.elements[i - 1];
            if el.t_start() < prev.t_start() - TIME_TOL {
                out.push(Violation::Unordered {
                    previous: i - 1,
                    index: i,
                });
            } else if el.t_start() < prev.end() - TIME_TOL {
                out.push(Violation::Overlap {
                    first: i - 1,
                    second: i,
                });
            }
        }
    }
    match readouts.len() {
        0 => out.push(Violation::MissingReadout),
        1 => {}
        _ => out.push(Violation::MultipleReadout(readouts)),
    }
    let actual = seq.elements.iter().map(Element::end).fold(0.0, f64::max);
    if (actual - seq.total_duration).abs() > TIME_TOL {
        out.push(Violation::DurationMismatch {
            declared: seq.total_duration,
            actual,
        });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Assemble pulses into a gap-filled sequence and validate it.
fn assemble(pulses: Vec<TwoColorPulse>, beat: f64, echo_times: Vec<f64>) -> Result<PulseSequence> {
    let mut elements = Vec::with_capacity(2 * pulses.len());
    let mut t = 0.0;
    for p in pulses {
        if p.t_start > t + TIME_TOL {
            elements.push(Element::Delay {
                t_start: t,
                duration: p.t_start - t,
            });
        }
        t = t.max(p.end());
        elements.push(Element::Pulse(p));
    }
    let mut seq = PulseSequence::from_elements(elements, beat);
    seq.echo_times = echo_times;
    validate(&seq).map_err(Error::InvalidSequence)?;
    Ok(seq)
}

fn readout_pulse(t_start: f64) -> TwoColorPulse {
    TwoColorPulse {
        t_start,
        duration: DEFAULT_READOUT_LEN,
        rabi_nominal: READOUT_ANGLE / (2.0 * PI * DEFAULT_READOUT_LEN),
        phase: 0.0,
        label: PulseLabel::Readout,
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// pi/2 at t=0, pi centered at `tau`, readout at `2 tau`.
pub fn build_two_pulse_echo(
    tau: f64,
    pulse_len: f64,
    excite_phase: f64,
    rephase_phase: f64,
    beat: f64,
) -> Result<PulseSequence> {
    check_positive("pulse_len", pulse_len)?;
    check_positive("beat", beat)?;
    if !(tau > pulse_len) {
        return Err(Error::InvalidParameter(format!(
            "tau ({tau} s) must exceed pulse_len ({pulse_len} s)"
        )));
    }
    let pulses = vec![
        TwoColorPulse {
            t_start: 0.0,
            duration: pulse_len,
            rabi_nominal: 1.0 / (4.0 * pulse_len),
            phase: excite_phase,
            label: PulseLabel::Excite,
        },
        TwoColorPulse {
            t_start: tau - 0.5 * pulse_len,
            duration: pulse_len,
            rabi_nominal: 1.0 / (2.0 * pulse_len),
            phase: rephase_phase,
            label: PulseLabel::Rephase,
        },
        readout_pulse(2.0 * tau),
    ];
    assemble(pulses, beat, vec![2.0 * tau])
}

/// pi/2 at t=0, `n` pi pulses centered at `tau_dd/2 + k tau_dd`, readout at
/// `n tau_dd`.
pub fn build_cpmg(
    tau_dd: f64,
    n: usize,
    pi_len: f64,
    excite_phase: f64,
    pi_phase: f64,
    beat: f64,
) -> Result<PulseSequence> {
    check_positive("pi_len", pi_len)?;
    check_positive("beat", beat)?;
    if n == 0 {
        return Err(Error::InvalidParameter("CPMG needs at least one pi pulse".into()));
    }
    if !(tau_dd > pi_len) {
        return Err(Error::InvalidParameter(format!(
            "tau_dd ({tau_dd} s) must exceed pi_len ({pi_len} s)"
        )));
    }
    let mut pulses = Vec::with_capacity(n + 2);
    pulses.push(TwoColorPulse {
        t_start: 0.0,
        duration: pi_len,
        rabi_nominal: 1.0 / (4.0 * pi_len),
        phase: excite_phase,
        label: PulseLabel::Excite,
    });
    for k in 0..n {
        let center = 0.5 * tau_dd + k as f64 * tau_dd;
        pulses.push(TwoColorPulse {
            t_start: center - 0.5 * pi_len,
            duration: pi_len,
            rabi_nominal: 1.0 / (2.0 * pi_len),
            phase: pi_phase,
            label: PulseLabel::Rephase,
        });
    }
    pulses.push(readout_pulse(n as f64 * tau_dd));
    let echoes = (1..=n).map(|k| k as f64 * tau_dd).collect();
    assemble(pulses, beat, echoes)
}

// ---------------------------------------------------------------------------
// Timeline serialization

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub events: Vec<Element>,
    pub beat_frequency: f64,
    pub sample_rate: f64,
}

impl Timeline {
    pub fn from_sequence(seq: &PulseSequence, sample_rate: f64) -> Self {
        Self {
            events: seq.elements.clone(),
            beat_frequency: seq.beat_frequency,
            sample_rate,
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.events.iter().map(Element::end).fold(0.0, f64::max)
    }

    /// Number of samples covering the timeline: ceil(total x rate), with
    /// products within 1e-9 of an integer taken as that integer.
    pub fn sample_count(&self, sample_rate: f64) -> usize {
        let x = self.total_duration() * sample_rate;
        let r = x.round();
        if (x - r).abs() <= 1e-9 * r.max(1.0) {
            r as usize
        } else {
            x.ceil() as usize
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# beat_hz={}\n", self.beat_frequency));
        s.push_str(&format!("# sample_rate={}\n", self.sample_rate));
        for ev in &self.events {
            match ev {
                Element::Pulse(p) => s.push_str(&format!(
                    "{} pulse label={} duration={} rabi={} phase={}\n",
                    p.t_start, p.label, p.duration, p.rabi_nominal, p.phase
                )),
                Element::Delay { t_start, duration } => {
                    s.push_str(&format!("{t_start} delay duration={duration}\n"))
                }
                Element::Reset { t_start } => s.push_str(&format!("{t_start} reset\n")),
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut beat = None;
        let mut rate = None;
        let mut events = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "beat_hz" => beat = Some(parse_f64(v, lineno)?),
                        "sample_rate" => rate = Some(parse_f64(v, lineno)?),
                        _ => {}
                    }
                }
                continue;
            }
            let mut tok = line.split_whitespace();
            let t = parse_f64(tok.next().unwrap_or(""), lineno)?;
            let kind = tok
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: missing kind", lineno + 1)))?;
            let mut params = std::collections::BTreeMap::new();
            for kv in tok {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: bad token `{kv}`", lineno + 1)))?;
                params.insert(k, v);
            }
            let num = |key: &str| -> Result<f64> {
                let v = params
                    .get(key)
                    .ok_or_else(|| Error::Parse(format!("line {}: missing `{key}`", lineno + 1)))?;
                parse_f64(v, lineno)
            };
            let ev = match kind {
                "pulse" => Element::Pulse(TwoColorPulse {
                    t_start: t,
                    duration: num("duration")?,
                    rabi_nominal: num("rabi")?,
                    phase: num("phase")?,
                    label: params
                        .get("label")
                        .ok_or_else(|| Error::Parse(format!("line {}: missing `label`", lineno + 1)))?
                        .parse()?,
                }),
                "delay" => Element::Delay {
                    t_start: t,
                    duration: num("duration")?,
                },
                "reset" => Element::Reset { t_start: t },
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown event kind `{other}`",
                        lineno + 1
                    )))
                }
            };
            events.push(ev);
        }
        Ok(Self {
            events,
            beat_frequency: beat.ok_or_else(|| Error::Parse("missing beat_hz header".into()))?,
            sample_rate: rate.ok_or_else(|| Error::Parse("missing sample_rate header".into()))?,
        })
    }
}

fn parse_f64(s: &str, lineno: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {}: bad number `{s}`", lineno + 1)))
}

// ---------------------------------------------------------------------------
// Waveform export

/// Carrier offsets of the two AOM tones. Tone 2 sits `beat` above tone 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneLayout {
    pub base_offset: f64,
}

impl Default for ToneLayout {
    fn default() -> Self {
        Self { base_offset: 100e6 }
    }
}

/// One sample of the two drive components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TonePair {
    pub a: f32,
    pub b: f32,
}

/// Rectangular-envelope two-tone samples. Each tone keeps a phase that is
/// continuous in absolute time; the pulse phase is applied to tone 2. Tone
/// amplitudes scale as the square root of the Rabi frequency (a Raman drive
/// is proportional to the product of the two fields). The readout pulse
/// drives tone 2 only.
pub fn export_waveform(t: &Timeline, sample_rate: f64, layout: ToneLayout) -> Result<Vec<TonePair>> {
    let f1 = layout.base_offset;
    let f2 = layout.base_offset + t.beat_frequency;
    let top = f1.abs().max(f2.abs()).max(t.beat_frequency);
    if !(sample_rate >= 2.0 * top) {
        return Err(Error::Nyquist {
            sample_rate,
            frequency: top,
        });
    }
    let n = t.sample_count(sample_rate);
    let mut out = vec![TonePair::default(); n];
    let max_rabi = t
        .events
        .iter()
        .filter_map(Element::as_pulse)
        .map(|p| p.rabi_nominal)
        .fold(0.0, f64::max);
    if max_rabi <= 0.0 {
        return Ok(out);
    }
    for p in t.events.iter().filter_map(Element::as_pulse) {
        let env = (p.rabi_nominal / max_rabi).sqrt();
        let first = (p.t_start * sample_rate - 1e-9).ceil().max(0.0) as usize;
        let last = ((p.end() * sample_rate) - 1e-9).ceil().max(0.0) as usize;
        for (k, s) in out.iter_mut().enumerate().take(last.min(n)).skip(first) {
            let time = k as f64 / sample_rate;
            if p.label != PulseLabel::Readout {
                s.a = (env * (2.0 * PI * f1 * time).cos()) as f32;
            }
            s.b = (env * (2.0 * PI * f2 * time + p.phase).cos()) as f32;
        }
    }
    Ok(out)
}

/// Headerless little-endian f32 pairs.
pub fn write_waveform_binary<W: Write>(samples: &[TonePair], mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        buf.extend_from_slice(&s.a.to_le_bytes());
        buf.extend_from_slice(&s.b.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Headerless CSV, one `a,b` pair per line.
pub fn write_waveform_csv<W: Write>(samples: &[TonePair], mut w: W) -> Result<()> {
    for s in samples {
        writeln!(w, "{},{}", s.a, s.b)?;
    }
    Ok(())
}
