//! Run configuration: a TOML document with a strict schema.
//!
//! Every section is optional and falls back to the defaults documented on its
//! fields. Units are SI throughout (s, Hz) except where a key says otherwise
//! (`_mt`, `_mhz`). Unknown keys are rejected.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use optispin::propagator::{DEFAULT_ENSEMBLE_SIZE, DEFAULT_FWHM, DEFAULT_NOISE_REALIZATIONS, DEFAULT_RABI_SPREAD};
use optispin::{PropagationConfig, PumpConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Hyperfine levels and transition lines.
    Levels,
    /// Optical pumping and probe transmission.
    Pumping,
    /// Echo amplitude against drive detuning.
    LinewidthScan,
    /// Two-pulse echo amplitude against delay.
    EchoDecay,
    /// Homogeneous linewidth against applied field.
    FieldScan,
    /// Echo trains of individual CPMG sequences.
    Cpmg,
    /// CPMG decay time against pulse spacing.
    CpmgSweep,
    /// Echo phase against excitation phase.
    PhaseScan,
    /// Fit a model to a CSV table.
    Fit,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Levels => "levels",
            Self::Pumping => "pumping",
            Self::LinewidthScan => "linewidth-scan",
            Self::EchoDecay => "echo-decay",
            Self::FieldScan => "field-scan",
            Self::Cpmg => "cpmg",
            Self::CpmgSweep => "cpmg-sweep",
            Self::PhaseScan => "phase-scan",
            Self::Fit => "fit",
        }
    }
}

/// Drive phase named by its Bloch-sphere axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn phase(self) -> f64 {
        match self {
            Axis::X => 0.0,
            Axis::Y => FRAC_PI_2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Master seed for every random draw.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Directory receiving the CSVs and the manifest.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub sequence: SequenceSection,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub hyperfine: HyperfineSection,
    #[serde(default)]
    pub pumping: PumpConfig,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub echo_decay: EchoDecaySection,
    #[serde(default)]
    pub linewidth_scan: LinewidthScanSection,
    #[serde(default)]
    pub field_scan: FieldScanSection,
    #[serde(default)]
    pub cpmg: CpmgSection,
    #[serde(default)]
    pub cpmg_sweep: CpmgSweepSection,
    #[serde(default)]
    pub phase_scan: PhaseScanSection,
    #[serde(default)]
    pub fit: FitSection,
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Number of simulated ions.
    pub ions: usize,
    /// Inhomogeneous Lorentzian FWHM, Hz.
    pub fwhm_hz: f64,
    /// Relative standard deviation of the Rabi frequency.
    pub rabi_spread: f64,
    /// Distinct bath geometries shared among the ions.
    pub noise_realizations: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            ions: DEFAULT_ENSEMBLE_SIZE,
            fwhm_hz: DEFAULT_FWHM,
            rabi_spread: DEFAULT_RABI_SPREAD,
            noise_realizations: DEFAULT_NOISE_REALIZATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSection {
    /// Two-color difference frequency, Hz.
    pub beat_hz: f64,
    /// Length of the two-pulse echo pulses, s.
    pub echo_pulse_s: f64,
    /// Length of a CPMG pi pulse, s.
    pub pi_pulse_s: f64,
    /// Phase of the refocusing pulses.
    pub pi_axis: Axis,
}

impl Default for SequenceSection {
    fn default() -> Self {
        Self {
            beat_hz: 29.34e6,
            echo_pulse_s: 100e-6,
            pi_pulse_s: 20e-6,
            pi_axis: Axis::X,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperfineSection {
    /// Zero-field splittings the quadrupole parameters are fitted to, MHz.
    pub splittings_mhz: [f64; 2],
    /// Applied field, mT.
    pub field_mt: f64,
    /// Field direction in the crystal frame; normalized on use.
    pub direction: [f64; 3],
    /// Nuclear gyromagnetic ratio, kHz/mT.
    pub gamma_n_khz_per_mt: f64,
}

impl Default for HyperfineSection {
    fn default() -> Self {
        Self {
            splittings_mhz: [29.34, 33.99],
            field_mt: 0.0,
            direction: [0.0, 0.0, 1.0],
            gamma_n_khz_per_mt: optispin::hyperfine::DEFAULT_GAMMA_N_KHZ_PER_MT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    /// Acquisition window, s.
    pub window_s: f64,
    pub sample_rate_hz: f64,
    /// Heterodyne SNR of the reference echo; absent means noiseless.
    pub snr: Option<f64>,
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            window_s: optispin::detection::DEFAULT_WINDOW,
            sample_rate_hz: optispin::detection::DEFAULT_SAMPLE_RATE,
            snr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoDecaySection {
    /// Echo times 2τ, s.
    pub two_tau_s: Vec<f64>,
    pub excite: Axis,
    /// Also write the heterodyne trace and spectrum of the first echo.
    pub spectrum: bool,
}

impl Default for EchoDecaySection {
    fn default() -> Self {
        Self {
            two_tau_s: linspace(0.3e-3, 3.0e-3, 12),
            excite: Axis::Y,
            spectrum: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinewidthScanSection {
    /// Fixed echo time 2τ, s.
    pub two_tau_s: f64,
    /// Drive detuning range and step, Hz.
    pub start_hz: f64,
    pub stop_hz: f64,
    pub step_hz: f64,
}

impl Default for LinewidthScanSection {
    fn default() -> Self {
        Self {
            two_tau_s: 400e-6,
            start_hz: -300e3,
            stop_hz: 300e3,
            step_hz: 15e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldScanMode {
    /// Ensemble-averaged bath kernel; fast.
    Analytic,
    /// Full echo-decay simulation at every field.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldScanSection {
    pub fields_mt: Vec<f64>,
    pub mode: FieldScanMode,
    /// Echo times used per field in simulated mode, s.
    pub two_tau_s: Vec<f64>,
    /// Linewidth uncertainty assigned to analytic points, Hz.
    pub sigma_hz: f64,
    /// Shift-distribution samples for the concentration calibration.
    pub calibration_samples: usize,
}

impl Default for FieldScanSection {
    fn default() -> Self {
        Self {
            fields_mt: (0..10).map(f64::from).collect(),
            mode: FieldScanMode::Analytic,
            two_tau_s: linspace(0.3e-3, 3.0e-3, 8),
            sigma_hz: 5.0,
            calibration_samples: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpmgSection {
    /// Pulse spacings, s.
    pub tau_dd_s: Vec<f64>,
    /// Evolution time covered by each train, s; sets the pulse count.
    pub total_s: f64,
    pub excite: Vec<Axis>,
    pub fields_mt: Vec<f64>,
}

impl Default for CpmgSection {
    fn default() -> Self {
        Self {
            tau_dd_s: vec![300e-6],
            total_s: 16e-3,
            excite: vec![Axis::Y],
            fields_mt: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpmgSweepSection {
    pub tau_dd_s: Vec<f64>,
    pub total_s: f64,
    pub excite: Axis,
    /// Exponent of the slow-noise term; absent means fitted.
    pub exponent: Option<f64>,
    /// Sweep indices left out of the model fit.
    pub exclude: Vec<usize>,
}

impl Default for CpmgSweepSection {
    fn default() -> Self {
        Self {
            tau_dd_s: vec![150e-6, 200e-6, 250e-6, 300e-6, 350e-6, 400e-6, 500e-6, 600e-6],
            total_s: 16e-3,
            excite: Axis::Y,
            exponent: Some(1.0),
            exclude: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseScanSection {
    /// Excitation phase steps spread over one turn.
    pub steps: usize,
    /// Delay τ of the two-pulse echo, s.
    pub echo_tau_s: f64,
    /// CPMG spacing and pulse count; zero pulses skips the CPMG case.
    pub dd_tau_s: f64,
    pub dd_pulses: usize,
}

impl Default for PhaseScanSection {
    fn default() -> Self {
        Self {
            steps: 8,
            echo_tau_s: 300e-6,
            dd_tau_s: 150e-6,
            dd_pulses: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    Exponential,
    Lorentzian,
    T2dd,
    PhaseCorrelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// CSV table with a header row; `#` lines are skipped.
    pub input: PathBuf,
    pub model: FitModel,
    pub x_column: String,
    pub y_column: String,
    /// Optional per-point uncertainty column.
    pub sigma_column: Option<String>,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            input: PathBuf::from("data.csv"),
            model: FitModel::Exponential,
            x_column: "t_s".into(),
            y_column: "amplitude".into(),
            sigma_column: None,
        }
    }
}

pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Parse config text, apply `key=value` overrides with dotted keys, and
/// validate the result against the schema.
pub fn load(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Schema(e.message().trim().to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(table).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().trim();
        if path == "." {
            CliError::Schema(msg.to_string())
        } else {
            CliError::Schema(format!("at `{path}`: {msg}"))
        }
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

fn apply_override(table: &mut Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Schema(format!("override `{item}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Schema(format!("override key `{key}` is malformed")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Schema(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// TOML literal if it parses as one, bare string otherwise.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let bad = |key: &str, why: &str| Err(CliError::Schema(format!("`{key}` {why}")));
    if cfg.ensemble.ions == 0 {
        return bad("ensemble.ions", "must be positive");
    }
    if cfg.ensemble.noise_realizations == 0 {
        return bad("ensemble.noise_realizations", "must be positive");
    }
    match cfg.experiment {
        Experiment::EchoDecay if cfg.echo_decay.two_tau_s.is_empty() => bad("echo_decay.two_tau_s", "is empty"),
        Experiment::FieldScan if cfg.field_scan.fields_mt.len() < 2 => {
            bad("field_scan.fields_mt", "needs at least two fields")
        }
        Experiment::LinewidthScan if !(cfg.linewidth_scan.step_hz > 0.0) => bad("linewidth_scan.step_hz", "must be positive"),
        Experiment::Cpmg if cfg.cpmg.tau_dd_s.is_empty() || cfg.cpmg.excite.is_empty() || cfg.cpmg.fields_mt.is_empty() => {
            bad("cpmg", "needs at least one spacing, excitation axis and field")
        }
        Experiment::CpmgSweep if cfg.cpmg_sweep.tau_dd_s.len() < 3 => bad("cpmg_sweep.tau_dd_s", "needs at least three spacings"),
        Experiment::PhaseScan if cfg.phase_scan.steps < 4 => bad("phase_scan.steps", "must be at least 4"),
        _ => Ok(()),
    }
}

/// Canonical text of a resolved config; the manifest digest is taken over it.
pub fn canonical(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}
