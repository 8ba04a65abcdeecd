//! Rate-equation model of optical pumping into the ±1/2 ground doublet.
//!
//! Four populations: the three ground doublets and a lumped excited state.
//! Ions in ±3/2 and ±5/2 are driven to the excited state, which decays back
//! to all three doublets with fixed branching. A weak symmetric relaxation
//! links the ground doublets.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THERMAL: [f64; 4] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpConfig {
    /// Pump rates out of ±3/2 and ±5/2, s⁻¹.
    pub pump_rates: [f64; 2],
    /// Excited-state decay fractions into ±1/2, ±3/2, ±5/2.
    pub branching: [f64; 3],
    /// Excited-state lifetime, s.
    pub lifetime: f64,
    /// Relaxation rate between any two ground doublets, s⁻¹.
    pub ground_relaxation: f64,
    /// Pumping time, s.
    pub duration: f64,
    /// Optical depth per unit fractional population.
    pub alpha0: f64,
}

impl Default for PumpConfig {
    fn default() -> Self {
        Self {
            pump_rates: [2000.0, 2000.0],
            branching: [1.0 / 3.0; 3],
            lifetime: 2e-3,
            ground_relaxation: 10.0,
            duration: 0.05,
            alpha0: 3.0,
        }
    }
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.branching.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("branching sums to {sum}, not 1")));
        }
        let rates = self
            .pump_rates
            .iter()
            .chain(&self.branching)
            .chain([&self.ground_relaxation, &self.duration, &self.alpha0]);
        if rates.into_iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter("rates must be finite and non-negative".into()));
        }
        if !(self.lifetime > 0.0) {
            return Err(Error::InvalidParameter("lifetime must be positive".into()));
        }
        Ok(())
    }

    /// Generator `M` of `dp/dt = M p`; every column sums to zero.
    pub fn rate_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        let [r3, r5] = self.pump_rates;
        m[(3, 1)] += r3;
        m[(1, 1)] -= r3;
        m[(3, 2)] += r5;
        m[(2, 2)] -= r5;
        let decay = 1.0 / self.lifetime;
        for (i, b) in self.branching.iter().enumerate() {
            m[(i, 3)] += b * decay;
        }
        m[(3, 3)] -= decay;
        let g = self.ground_relaxation;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    m[(i, j)] += g;
                    m[(j, j)] -= g;
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    /// ±1/2, ±3/2, ±5/2, excited.
    pub p: [f64; 4],
}

impl Populations {
    pub fn thermal() -> Self {
        Self { p: THERMAL }
    }

    pub fn new(p: [f64; 4]) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("not a population vector: {p:?}")));
        }
        Ok(Self { p })
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }

    fn from_vector(v: Vector4<f64>) -> Self {
        // exact in exact arithmetic; clamp rounding residue
        let mut p = [0.0; 4];
        for (dst, src) in p.iter_mut().zip(v.iter()) {
            *dst = src.clamp(0.0, 1.0);
        }
        Self { p }
    }
}

/// Probe frequencies of the transmission spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    /// Addresses the ±1/2 doublet.
    Omega1,
    /// Addresses the ±3/2 doublet.
    Omega2,
    /// Addresses the ±5/2 doublet.
    Omega3,
}

impl Probe {
    pub const ALL: [Probe; 3] = [Probe::Omega1, Probe::Omega2, Probe::Omega3];

    fn level(self) -> usize {
        match self {
            Probe::Omega1 => 0,
            Probe::Omega2 => 1,
            Probe::Omega3 => 2,
        }
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Probe::Omega1 => "omega1",
            Probe::Omega2 => "omega2",
            Probe::Omega3 => "omega3",
        })
    }
}

impl FromStr for Probe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omega1" => Ok(Probe::Omega1),
            "omega2" => Ok(Probe::Omega2),
            "omega3" => Ok(Probe::Omega3),
            other => Err(Error::Parse(format!("unknown probe `{other}`"))),
        }
    }
}

/// Exact solution `exp(M t) p0`.
pub fn evolve(cfg: &PumpConfig, initial: &Populations, duration: f64) -> Result<Populations> {
    cfg.validate()?;
    if !(duration >= 0.0) {
        return Err(Error::InvalidParameter("duration must be non-negative".into()));
    }
    let prop = (cfg.rate_matrix() * duration).exp();
    Ok(Populations::from_vector(prop * Vector4::from(initial.p)))
}

/// Pump from thermal equilibrium for `cfg.duration`.
pub fn pump(cfg: &PumpConfig) -> Result<Populations> {
    evolve(cfg, &Populations::thermal(), cfg.duration)
}

/// Null vector of the rate matrix normalized to unit sum.
pub fn steady_state(cfg: &PumpConfig) -> Result<Populations> {
    cfg.validate()?;
    let mut m = cfg.rate_matrix();
    for j in 0..4 {
        m[(3, j)] = 1.0;
    }
    let rhs = Vector4::new(0.0, 0.0, 0.0, 1.0);
    let p = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidParameter("steady state is not unique".into()))?;
    Ok(Populations::from_vector(p))
}

pub fn transmission(p: &Populations, alpha0: f64, probe: Probe) -> f64 {
    (-alpha0 * p.p[probe.level()]).exp()
}

/// Chirped reset back to thermal equilibrium.
pub fn reset(_p: &Populations) -> Populations {
    Populations::thermal()
}

pub fn transmission_csv(p: &Populations, alpha0: f64) -> String {
    let mut s = String::from("probe,population,transmission\n");
    for probe in Probe::ALL {
        let _ = writeln!(
            s,
            "{probe},{},{}",
            p.p[probe.level()],
            transmission(p, alpha0, probe)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_pumping_keeps_thermal() {
        let cfg = PumpConfig {
            pump_rates: [0.0, 0.0],
            ..PumpConfig::default()
        };
        let p = evolve(&cfg, &Populations::thermal(), 1.0).unwrap();
        for (a, b) in p.p.iter().zip(THERMAL) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_pumping_empties_into_half() {
        let cfg = PumpConfig {
            pump_rates: [1e5, 1e5],
            ground_relaxation: 0.0,
            ..PumpConfig::default()
        };
        let p = evolve(&cfg, &Populations::thermal(), 1.0).unwrap();
        assert!((p.p[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn columns_conserve_population() {
        let m = PumpConfig::default().rate_matrix();
        for j in 0..4 {
            assert!(m.column(j).sum().abs() < 1e-9);
        }
    }

    #[test]
    fn transmission_arithmetic() {
        let t = Populations::thermal();
        for probe in Probe::ALL {
            assert!((transmission(&t, 3.0, probe) - (-1f64).exp()).abs() < 1e-15);
        }
        let empty = Populations::new([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(transmission(&empty, 3.0, Probe::Omega2), 1.0);
    }

    #[test]
    fn reset_is_idempotent() {
        let p = Populations::new([0.9, 0.05, 0.05, 0.0]).unwrap();
        assert_eq!(reset(&reset(&p)), Populations::thermal());
        assert!((reset(&p).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_branching() {
        let cfg = PumpConfig {
            branching: [0.5, 0.5, 0.5],
            ..PumpConfig::default()
        };
        assert!(pump(&cfg).is_err());
        assert!(Populations::new([0.5, 0.6, 0.0, 0.0]).is_err());
    }

    #[test]
    fn probe_names_round_trip() {
        for probe in Probe::ALL {
            assert_eq!(probe.to_string().parse::<Probe>().unwrap(), probe);
        }
    }
}
