//! Simulation and analysis of optically controlled nuclear-spin ensembles.

pub mod analysis;
pub mod bath;
pub mod detection;
pub mod error;
pub mod hyperfine;
pub mod propagator;
pub mod pumping;
pub mod rng;
pub mod sequence;

pub use analysis::{FitResult, Param, Point};
pub use bath::{BathCalibration, BathConfig, DefectSet, NoiseTrajectory, ShiftDistribution};
pub use detection::{BeatTrace, SpectrumPeak};
pub use error::{Error, Result};
pub use hyperfine::{LevelStructure, QuadrupoleParams, Transition, ZeemanParams};
pub use propagator::{EchoResult, EchoSample, IonEnsemble, PropagationConfig, SpinState};
pub use pumping::{Populations, Probe, PumpConfig};
pub use sequence::{PulseLabel, PulseSequence, Timeline, TwoColorPulse};
