//! Electron-spin defect bath.
//!
//! Defects sit at random in a spherical shell around the probed ion. Each
//! carries a spin 1/2 whose orientation shifts the ion's transition by
//! `+-b/2` with `b = K (1 - 3 cos^2 theta) / r^3`. Spins flip as independent
//! Poisson telegraphs; a weak field suppresses the shifts by a Lorentzian
//! factor in B.
//!
//! Besides Monte-Carlo trajectories the module evaluates the exact ensemble
//! echo of this model: for a Poisson cloud of defects the average of the
//! echo factor over configurations is `exp(-n * integral of (1 - f) d^3r)`,
//! with `f` the closed-form telegraph echo of a single defect.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_exponential, gamma_from_t2, levenberg_marquardt, FitResult, LmOutcome, Param, Point};
use crate::error::{Error, Result};
use crate::rng::{rng_for, STREAM_BATH, STREAM_NOISE};

const PLANCK: f64 = 6.626_070_15e-34;
const MU0_OVER_4PI: f64 = 1e-7;
const AVOGADRO: f64 = 6.022_140_76e23;
const NM3_PER_CM3: f64 = 1e21;

pub const Y2O3_DENSITY: f64 = 5.01;
pub const Y2O3_MOLAR_MASS: f64 = 225.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    /// Defects per cm^3.
    pub concentration: f64,
    /// Telegraph flip rate per defect, Hz.
    pub flip_rate: f64,
    /// Electron gyromagnetic ratio, MHz/mT.
    pub gamma_e: f64,
    /// Coupling scale of the probed transition, kHz/mT.
    pub gamma_target: f64,
    /// Half-suppression field, mT.
    pub b_c: f64,
    /// Residual secular weight in [0, 1].
    pub secular_fraction: f64,
    pub rng_seed: u64,
    /// Number of strongest defects kept in trajectories.
    pub strongest: usize,
    /// No defect closer than this to the ion, nm.
    pub exclusion_radius_nm: f64,
    /// Largest sampling sphere, nm.
    pub max_radius_nm: f64,
    /// Expected defect count the sampling sphere is sized for.
    pub target_count: f64,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            concentration: 6.4e17,
            flip_rate: 1000.0,
            gamma_e: 28.0,
            gamma_target: DEFAULT_GAMMA_TARGET,
            b_c: 1.5,
            secular_fraction: DEFAULT_SECULAR_FRACTION,
            rng_seed: 1,
            strongest: 50,
            exclusion_radius_nm: 3.0,
            max_radius_nm: 200.0,
            target_count: 200.0,
        }
    }
}

/// Coupling scale giving a 250 Hz zero-field linewidth at 6.4e17 cm^-3
/// together with the default 1 s residual decay.
pub const DEFAULT_GAMMA_TARGET: f64 = 114.8;
/// Residual weight that, with B_c = 1.5 mT, maps 250 Hz at zero field to
/// 110 Hz at 9 mT.
pub const DEFAULT_SECULAR_FRACTION: f64 = 0.423_71;

impl BathConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.concentration > 0.0) {
            return bad("concentration must be positive");
        }
        if !(self.flip_rate > 0.0) {
            return bad("flip_rate must be positive");
        }
        if !(self.b_c > 0.0) {
            return bad("b_c must be positive");
        }
        if !(0.0..=1.0).contains(&self.secular_fraction) {
            return bad("secular_fraction must lie in [0, 1]");
        }
        if !(self.exclusion_radius_nm >= 0.0 && self.max_radius_nm > self.exclusion_radius_nm) {
            return bad("need 0 <= exclusion_radius_nm < max_radius_nm");
        }
        if !(self.gamma_e.is_finite() && self.gamma_target.is_finite()) {
            return bad("gyromagnetic ratios must be finite");
        }
        Ok(())
    }

    /// Dipolar prefactor K in Hz nm^3.
    pub fn dipolar_prefactor(&self) -> f64 {
        let ge = self.gamma_e * 1e9; // Hz/T
        let gt = self.gamma_target * 1e6; // Hz/T
        MU0_OVER_4PI * PLANCK * ge * gt * 1e27
    }

    /// Defects per nm^3.
    pub fn density_nm3(&self) -> f64 {
        self.concentration / NM3_PER_CM3
    }

    pub fn with_concentration(&self, concentration: f64) -> Self {
        Self {
            concentration,
            ..self.clone()
        }
    }

    /// Sampling sphere radius (nm) and the expected number of defects in it.
    pub fn sampling_sphere(&self) -> Result<(f64, f64)> {
        let n = self.density_nm3();
        let r0 = self.exclusion_radius_nm;
        let shell = |r: f64| 4.0 / 3.0 * PI * (r.powi(3) - r0.powi(3));
        let wanted = (self.target_count / (4.0 / 3.0 * PI * n) + r0.powi(3)).cbrt();
        let radius = wanted.min(self.max_radius_nm);
        let expected = n * shell(radius);
        if expected < 10.0 {
            return Err(Error::TooFewDefects { expected });
        }
        Ok((radius, expected))
    }
}

fn sample_couplings(cfg: &BathConfig, radius: f64, expected: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let count = Poisson::new(expected).map(|p| p.sample(rng) as usize).unwrap_or(0);
    let k = cfg.dipolar_prefactor();
    let r0c = cfg.exclusion_radius_nm.powi(3);
    let r1c = radius.powi(3);
    (0..count)
        .map(|_| {
            let r = (r0c + rng.random::<f64>() * (r1c - r0c)).cbrt();
            let c: f64 = rng.random_range(-1.0..=1.0);
            k * (1.0 - 3.0 * c * c) / r.powi(3)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Static shift statistics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftDistribution {
    /// Standard deviation of the total shift, Hz.
    pub sigma: f64,
    pub sample_count: usize,
    pub raw_samples: Option<Vec<f64>>,
}

impl ShiftDistribution {
    pub fn excess_kurtosis(&self) -> Option<f64> {
        let s = self.raw_samples.as_ref()?;
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let m2 = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = s.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        Some(m4 / (m2 * m2) - 3.0)
    }
}

/// Monte-Carlo distribution of the static shift `sum_j b_j s_j`.
pub fn sample_shift_distribution(cfg: &BathConfig, n_realizations: usize) -> Result<ShiftDistribution> {
    cfg.validate()?;
    if n_realizations < 2 {
        return Err(Error::InvalidParameter("need at least 2 realizations".into()));
    }
    let (radius, expected) = cfg.sampling_sphere()?;
    let samples: Vec<f64> = (0..n_realizations as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.rng_seed, STREAM_BATH, i);
            let b = sample_couplings(cfg, radius, expected, &mut rng);
            b.iter()
                .map(|bj| if rng.random::<bool>() { 0.5 * bj } else { -0.5 * bj })
                .sum::<f64>()
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(ShiftDistribution {
        sigma: var.sqrt(),
        sample_count: samples.len(),
        raw_samples: Some(samples),
    })
}

// ---------------------------------------------------------------------------
// Telegraph trajectories

/// Flip amplitudes (Hz) of the defects that drive one ion.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectSet {
    pub couplings: Vec<f64>,
}

/// Draw one defect configuration and keep the `cfg.strongest` largest
/// couplings.
pub fn sample_defects(cfg: &BathConfig, seed: u64) -> Result<DefectSet> {
    cfg.validate()?;
    let (radius, expected) = cfg.sampling_sphere()?;
    let mut rng = rng_for(seed, STREAM_BATH, 0);
    let mut b = sample_couplings(cfg, radius, expected, &mut rng);
    b.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    b.truncate(cfg.strongest);
    Ok(DefectSet { couplings: b })
}

impl DefectSet {
    /// Motional-narrowing decay rate of the free-induction signal, s^-1.
    pub fn weak_noise_rate(&self, flip_rate: f64, suppression: f64) -> f64 {
        self.couplings
            .iter()
            .map(|b| (PI * suppression * b).powi(2) / (2.0 * flip_rate))
            .sum()
    }

    pub fn trajectory(&self, flip_rate: f64, duration: f64, suppression: f64, seed: u64) -> NoiseTrajectory {
        let mut rng = rng_for(seed, STREAM_NOISE, 0);
        let m = self.couplings.len();
        let mut spin: Vec<f64> = (0..m)
            .map(|_| if rng.random::<bool>() { 0.5 } else { -0.5 })
            .collect();
        let mut value: f64 = self.couplings.iter().zip(&spin).map(|(b, s)| b * s).sum();
        let mut times = vec![0.0];
        let mut values = vec![suppression * value];
        let total_rate = flip_rate * m as f64;
        if total_rate > 0.0 && m > 0 {
            let exp = Exp::new(total_rate).expect("positive rate");
            let mut t = 0.0;
            loop {
                let dt: f64 = exp.sample(&mut rng);
                t += dt;
                if t > duration {
                    break;
                }
                let j = rng.random_range(0..m);
                spin[j] = -spin[j];
                value += 2.0 * spin[j] * self.couplings[j];
                if dt > 0.0 {
                    times.push(t);
                    values.push(suppression * value);
                } else if let Some(last) = values.last_mut() {
                    *last = suppression * value;
                }
            }
        }
        NoiseTrajectory::new(times, values, duration, seed)
    }
}

/// Piecewise-constant frequency shift: `values[k]` holds on
/// `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub duration: f64,
    pub seed: u64,
    cumulative: Vec<f64>,
}

impl NoiseTrajectory {
    pub fn new(times: Vec<f64>, values: Vec<f64>, duration: f64, seed: u64) -> Self {
        let mut cumulative = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        for k in 0..times.len() {
            cumulative.push(acc);
            let end = times.get(k + 1).copied().unwrap_or(duration);
            acc += values[k] * (end - times[k]);
        }
        Self {
            times,
            values,
            duration,
            seed,
            cumulative,
        }
    }

    /// Identically zero over `duration`.
    pub fn silent(duration: f64) -> Self {
        Self::new(vec![0.0], vec![0.0], duration, 0)
    }

    pub fn flip_count(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t).max(1) - 1;
        self.values[k]
    }

    /// Integral of the shift from 0 to `t`, Hz s.
    fn primitive(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t).max(1) - 1;
        self.cumulative[k] + self.values[k] * (t - self.times[k])
    }

    /// Integral of the shift over `[a, b]`, Hz s.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let slack = 1e-12 * self.duration.max(1.0);
        if b > self.duration + slack {
            return Err(Error::TrajectoryTooShort {
                available: self.duration,
                requested: b,
            });
        }
        Ok(self.primitive(b) - self.primitive(a))
    }
}

/// Sample a defect configuration and one telegraph trajectory from `seed`.
pub fn telegraph_trajectory(
    cfg: &BathConfig,
    duration: f64,
    suppression: f64,
    seed: u64,
) -> Result<NoiseTrajectory> {
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter("duration must be positive".into()));
    }
    let defects = sample_defects(cfg, seed)?;
    Ok(defects.trajectory(cfg.flip_rate, duration, suppression, seed))
}

// ---------------------------------------------------------------------------
// Field dependence

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinewidthParams {
    /// Field-independent linewidth, Hz.
    pub gamma0: f64,
    /// Zero-field defect contribution, Hz.
    pub gamma_dd: f64,
    /// Half-suppression field, mT.
    pub b_c: f64,
    pub beta: f64,
}

/// Suppression factor of the defect contribution at field `b` (mT).
pub fn defect_weight(b: f64, b_c: f64, beta: f64) -> f64 {
    beta + (1.0 - beta) * b_c * b_c / (b_c * b_c + b * b)
}

/// `Gamma0 + Gamma_DD [beta + (1 - beta) B_c^2 / (B_c^2 + B^2)]`, Hz.
pub fn linewidth_model(b: f64, p: &LinewidthParams) -> f64 {
    p.gamma0 + p.gamma_dd * defect_weight(b, p.b_c, p.beta)
}

/// Amplitude scale applied to trajectories so that noise power follows the
/// linewidth ratio.
pub fn suppression(b: f64, cfg: &BathConfig) -> f64 {
    defect_weight(b, cfg.b_c, cfg.secular_fraction).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldScanOptions {
    /// Residual secular weight, held fixed.
    pub beta: f64,
    /// B_c used when the data cannot constrain it, mT.
    pub b_c_default: f64,
}

impl Default for FieldScanOptions {
    fn default() -> Self {
        Self {
            beta: DEFAULT_SECULAR_FRACTION,
            b_c_default: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldScanFit {
    pub params: LinewidthParams,
    pub fit: FitResult,
}

fn field_linear(data: &[(f64, f64, f64)], b_c: f64, beta: f64) -> Option<(f64, f64)> {
    let mut ata = nalgebra::Matrix2::zeros();
    let mut atb = nalgebra::Vector2::zeros();
    for &(b, g, s) in data {
        let w = if s > 0.0 { 1.0 / (s * s) } else { 1.0 };
        let row = nalgebra::Vector2::new(1.0, defect_weight(b, b_c, beta));
        ata += w * row * row.transpose();
        atb += w * g * row;
    }
    let sol = ata.try_inverse()? * atb;
    Some((sol.x, sol.y))
}

/// Weighted fit of `(B mT, Gamma_h Hz, sigma Hz)` data.
///
/// `beta` is held at `opts.beta`: a constant residual and a field-independent
/// offset cannot be told apart. With fewer than three distinct fields the
/// fit also fixes `beta = 0` and `B_c = opts.b_c_default` and warns.
pub fn fit_field_scan(data: &[(f64, f64, f64)], opts: &FieldScanOptions) -> Result<FieldScanFit> {
    if data.len() < 2 {
        return Err(Error::Fit("field scan needs at least 2 points".into()));
    }
    let mut fields: Vec<f64> = data.iter().map(|d| d.0.abs()).collect();
    fields.sort_by(f64::total_cmp);
    fields.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let is_weighted = data.iter().any(|d| d.2 > 0.0);
    let weight = |s: f64| if s > 0.0 { 1.0 / s } else { 1.0 };
    let mut warnings = Vec::new();

    let (params, sig, chi2, converged, iterations, gradient_norm) = if fields.len() < 3 {
        warnings.push(format!(
            "{} distinct fields cannot constrain B_c: fixed beta=0, B_c={} mT",
            fields.len(),
            opts.b_c_default
        ));
        let (g0, gdd) = field_linear(data, opts.b_c_default, 0.0)
            .ok_or_else(|| Error::Fit("field scan design is singular".into()))?;
        let p = LinewidthParams {
            gamma0: g0,
            gamma_dd: gdd,
            b_c: opts.b_c_default,
            beta: 0.0,
        };
        let chi2 = data
            .iter()
            .map(|&(b, g, s)| ((g - linewidth_model(b, &p)) * weight(s)).powi(2))
            .sum();
        (p, [0.0; 3], chi2, true, 1, 0.0)
    } else {
        let beta = opts.beta;
        let eval = |q: &[f64]| {
            let mut r = DVector::zeros(data.len());
            let mut j = DMatrix::zeros(data.len(), 3);
            for (i, &(b, g, s)) in data.iter().enumerate() {
                let w = weight(s);
                let bc2 = q[2] * q[2];
                let den = bc2 + b * b;
                let f = defect_weight(b, q[2], beta);
                r[i] = w * (g - (q[0] + q[1] * f));
                j[(i, 0)] = -w;
                j[(i, 1)] = -w * f;
                j[(i, 2)] = -w * q[1] * (1.0 - beta) * 2.0 * q[2] * b * b / (den * den);
            }
            (r, j)
        };
        let mut best: Option<LmOutcome> = None;
        for bc in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let Some((g0, gdd)) = field_linear(data, bc, beta) else { continue };
            let out = levenberg_marquardt(eval, &[g0, gdd, bc]);
            let better = match &best {
                None => true,
                Some(b) => out.chi2 < b.chi2 * (1.0 - 1e-12),
            };
            if better {
                best = Some(out);
            }
        }
        let out = best.ok_or_else(|| Error::Fit("field scan design is singular".into()))?;
        let dof = data.len().saturating_sub(3);
        let scale = if is_weighted || dof == 0 { 1.0 } else { out.chi2 / dof as f64 };
        let s: Vec<f64> = match &out.covariance {
            Some(c) => (0..3).map(|i| (c[(i, i)] * scale).max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; 3],
        };
        let p = LinewidthParams {
            gamma0: out.params[0],
            gamma_dd: out.params[1],
            b_c: out.params[2].abs(),
            beta,
        };
        (p, [s[0], s[1], s[2]], out.chi2, out.converged, out.iterations, out.gradient_norm)
    };

    let residuals: Vec<f64> = data
        .iter()
        .map(|&(b, g, _)| g - linewidth_model(b, &params))
        .collect();
    let mean = data.iter().map(|d| d.1).sum::<f64>() / data.len() as f64;
    let ss_tot: f64 = data.iter().map(|d| (d.1 - mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let fit = FitResult {
        model: "field_scan".into(),
        params: vec![
            Param {
                name: "Gamma0".into(),
                value: params.gamma0,
                sigma: sig[0],
            },
            Param {
                name: "Gamma_DD".into(),
                value: params.gamma_dd,
                sigma: sig[1],
            },
            Param {
                name: "B_c".into(),
                value: params.b_c,
                sigma: sig[2],
            },
            Param {
                name: "beta".into(),
                value: params.beta,
                sigma: 0.0,
            },
        ],
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        r: None,
        chi2,
        dof: data.len().saturating_sub(if fields.len() < 3 { 2 } else { 3 }),
        residuals,
        converged,
        gradient_norm,
        iterations,
        warnings,
    };
    Ok(FieldScanFit { params, fit })
}

// ---------------------------------------------------------------------------
// Exact ensemble echo of the telegraph model

/// Interval of free evolution with toggling sign +1 or -1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub sign: f64,
}

pub fn fid_segments(t: f64) -> Vec<Segment> {
    vec![Segment {
        duration: t,
        sign: 1.0,
    }]
}

/// Ideal two-pulse echo of total evolution time `t`.
pub fn hahn_segments(t: f64) -> Vec<Segment> {
    vec![
        Segment {
            duration: 0.5 * t,
            sign: 1.0,
        },
        Segment {
            duration: 0.5 * t,
            sign: -1.0,
        },
    ]
}

/// Ideal CPMG with `n` instantaneous pi pulses spaced `tau`.
pub fn cpmg_segments(tau: f64, n: usize) -> Vec<Segment> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(Segment {
        duration: 0.5 * tau,
        sign: 1.0,
    });
    let mut sign = -1.0;
    for _ in 1..n {
        out.push(Segment { duration: tau, sign });
        sign = -sign;
    }
    out.push(Segment {
        duration: 0.5 * tau,
        sign,
    });
    out
}

/// Average of `exp(i v int sign(t) xi(t) dt)` for a symmetric telegraph
/// `xi = +-1` flipping at `rate`, started in equilibrium. `v` in rad/s.
pub fn telegraph_factor(v: f64, rate: f64, segments: &[Segment]) -> f64 {
    let mut s0 = Complex64::new(0.5, 0.0);
    let mut s1 = s0;
    for seg in segments {
        let t = seg.duration;
        let a = Complex64::new(0.0, seg.sign * v);
        let w = (a * a + rate * rate).sqrt();
        let e = (-rate * t).exp();
        let c = (w * t).cosh();
        let sh = if w.norm() * t < 1e-8 {
            Complex64::new(t, 0.0)
        } else {
            (w * t).sinh() / w
        };
        let m00 = e * (c + a * sh);
        let m01 = e * rate * sh;
        let m11 = e * (c - a * sh);
        let n0 = m00 * s0 + m01 * s1;
        let n1 = m01 * s0 + m11 * s1;
        s0 = n0;
        s1 = n1;
    }
    (s0 + s1).re
}

/// Closed-form two-pulse echo of one telegraph defect.
pub fn telegraph_hahn(v: f64, rate: f64, t: f64) -> f64 {
    let mu = Complex64::new(rate * rate - v * v, 0.0).sqrt();
    let g = Complex64::new(rate, 0.0);
    let e = (-rate * t).exp();
    if mu.norm() * t < 1e-8 {
        // mu -> 0 limit of the series
        return e * (1.0 + rate * t + 0.5 * rate * rate * t * t);
    }
    let val = (1.0 + g / mu * (mu * t).sinh() + g * g / (mu * mu) * ((mu * t).cosh() - 1.0)) * e;
    val.re
}

const GRID_R: usize = 240;
const GRID_C: usize = 81;

/// Quadrature of the Poisson-cloud exponent over the defect shell.
#[derive(Debug, Clone)]
pub struct EnsembleKernel {
    amplitudes: Vec<f64>,
    weights: Vec<f64>,
    density: f64,
    rate: f64,
}

impl EnsembleKernel {
    pub fn new(cfg: &BathConfig, suppression: f64) -> Result<Self> {
        cfg.validate()?;
        let r0 = cfg.exclusion_radius_nm.max(0.05);
        let r1 = cfg.max_radius_nm;
        let k = cfg.dipolar_prefactor();
        let rs: Vec<f64> = (0..GRID_R)
            .map(|i| r0 * (r1 / r0).powf(i as f64 / (GRID_R - 1) as f64))
            .collect();
        let cs: Vec<f64> = (0..GRID_C).map(|j| j as f64 / (GRID_C - 1) as f64).collect();
        let trap = |xs: &[f64], i: usize| {
            let lo = if i > 0 { xs[i] - xs[i - 1] } else { 0.0 };
            let hi = if i + 1 < xs.len() { xs[i + 1] - xs[i] } else { 0.0 };
            0.5 * (lo + hi)
        };
        let mut amplitudes = Vec::with_capacity(GRID_R * GRID_C);
        let mut weights = Vec::with_capacity(GRID_R * GRID_C);
        for (i, &r) in rs.iter().enumerate() {
            let wr = trap(&rs, i) * 4.0 * PI * r * r;
            for (j, &c) in cs.iter().enumerate() {
                let b = k * (1.0 - 3.0 * c * c) / r.powi(3);
                amplitudes.push((PI * suppression * b).abs());
                weights.push(wr * trap(&cs, j));
            }
        }
        Ok(Self {
            amplitudes,
            weights,
            density: cfg.density_nm3(),
            rate: cfg.flip_rate,
        })
    }

    /// Configuration-averaged echo for the given toggling segments.
    pub fn decay(&self, segments: &[Segment]) -> f64 {
        let integral: f64 = self
            .amplitudes
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| w * (1.0 - telegraph_factor(v, self.rate, segments)))
            .sum();
        (-self.density * integral).exp()
    }

    pub fn hahn(&self, t: f64) -> f64 {
        self.decay(&hahn_segments(t))
    }
}

/// Points in the exponential fit that defines the analytic linewidth.
const GAMMA_FIT_POINTS: usize = 12;

/// Linewidth `1/(pi T2)` of the analytic two-pulse decay times
/// `exp(-t / t2_floor)`, with `T2` from a single-exponential fit over
/// `[0.25, 2.5]` times the 1/e time. Pass `f64::INFINITY` for no floor.
pub fn analytic_gamma(cfg: &BathConfig, suppression: f64, t2_floor: f64) -> Result<f64> {
    let kernel = EnsembleKernel::new(cfg, suppression)?;
    let f = |t: f64| kernel.hahn(t) * (-t / t2_floor).exp();
    let Some(t_e) = one_over_e_time(f) else {
        return Ok(0.0);
    };
    let pts: Vec<Point> = (0..GAMMA_FIT_POINTS)
        .map(|k| {
            let t = t_e * (0.25 + 2.25 * k as f64 / (GAMMA_FIT_POINTS - 1) as f64);
            Point::new(t, f(t))
        })
        .collect();
    let fit = fit_exponential(&pts)?;
    gamma_from_t2(fit.value("T2"))
}

/// First time a decreasing curve crosses 1/e; `None` past 10^4 s.
fn one_over_e_time(f: impl Fn(f64) -> f64) -> Option<f64> {
    let target = (-1.0f64).exp();
    let mut hi = 1e-5;
    while f(hi) > target {
        hi *= 2.0;
        if hi > 1e4 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Concentration inference

/// Stored link between concentration, shift width and defect linewidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathCalibration {
    /// Defects per cm^3 at which the references were computed.
    pub reference_concentration: f64,
    /// Shift standard deviation at the reference, Hz.
    pub reference_sigma_hz: f64,
    /// d ln sigma / d ln n.
    pub sigma_exponent: f64,
    /// Zero-field defect linewidth at the reference, Hz.
    pub reference_gamma_dd_hz: f64,
    /// d ln Gamma_DD / d ln n.
    pub gamma_exponent: f64,
    pub flip_rate_hz: f64,
}

impl BathCalibration {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# bath calibration\n");
        s.push_str(&toml::to_string(self).expect("plain struct serializes"));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Shift width implied by a defect linewidth.
    pub fn sigma_for_gamma(&self, gamma_dd: f64) -> f64 {
        let n = self.concentration_for_gamma(gamma_dd);
        self.reference_sigma_hz * (n / self.reference_concentration).powf(self.sigma_exponent)
    }

    fn concentration_for_gamma(&self, gamma_dd: f64) -> f64 {
        self.reference_concentration
            * (gamma_dd / self.reference_gamma_dd_hz).powf(1.0 / self.gamma_exponent)
    }
}

/// Measure the calibration at `cfg.concentration` and twice that.
pub fn calibrate(cfg: &BathConfig, n_realizations: usize) -> Result<BathCalibration> {
    let doubled = cfg.with_concentration(2.0 * cfg.concentration);
    let s1 = sample_shift_distribution(cfg, n_realizations)?.sigma;
    let s2 = sample_shift_distribution(&doubled, n_realizations)?.sigma;
    let g1 = analytic_gamma(cfg, 1.0, f64::INFINITY)?;
    let g2 = analytic_gamma(&doubled, 1.0, f64::INFINITY)?;
    Ok(BathCalibration {
        reference_concentration: cfg.concentration,
        reference_sigma_hz: s1,
        sigma_exponent: (s2 / s1).ln() / 2f64.ln(),
        reference_gamma_dd_hz: g1,
        gamma_exponent: (g2 / g1).ln() / 2f64.ln(),
        flip_rate_hz: cfg.flip_rate,
    })
}

/// Defect concentration (cm^-3) implied by a zero-field defect linewidth.
pub fn infer_concentration(gamma_dd: f64, calibration: Option<&BathCalibration>) -> Result<f64> {
    let cal = calibration.ok_or(Error::MissingCalibration)?;
    if !(gamma_dd > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Gamma_DD must be positive, got {gamma_dd}"
        )));
    }
    if !(cal.reference_gamma_dd_hz > 0.0 && cal.gamma_exponent > 0.0) {
        return Err(Error::InvalidParameter("calibration is degenerate".into()));
    }
    Ok(cal.concentration_for_gamma(gamma_dd))
}

/// Yttrium sites per cm^3 for a Y2O3 host.
pub fn yttrium_density(density_g_cm3: f64, molar_mass: f64) -> f64 {
    2.0 * density_g_cm3 * AVOGADRO / molar_mass
}

pub fn ppm_relative_to_y(n: f64) -> f64 {
    ppm_relative_to_y_with(n, Y2O3_DENSITY, Y2O3_MOLAR_MASS)
}

pub fn ppm_relative_to_y_with(n: f64, density_g_cm3: f64, molar_mass: f64) -> f64 {
    n / yttrium_density(density_g_cm3, molar_mass) * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yttrium_site_density() {
        let ny = yttrium_density(Y2O3_DENSITY, Y2O3_MOLAR_MASS);
        assert!((ny / 2.672e22 - 1.0).abs() < 1e-3);
        assert_eq!(ppm_relative_to_y(0.0), 0.0);
        assert!((ppm_relative_to_y(ny) - 1e6).abs() < 1e-6);
        let ppm = ppm_relative_to_y(6.4e17);
        assert!((ppm - 23.95).abs() < 0.05, "{ppm}");
    }

    #[test]
    fn linewidth_limits() {
        let p = LinewidthParams {
            gamma0: 6.4,
            gamma_dd: 243.6,
            b_c: 1.5,
            beta: 0.4,
        };
        assert!((linewidth_model(0.0, &p) - 250.0).abs() < 1e-12);
        assert!((linewidth_model(1e9, &p) - (6.4 + 0.4 * 243.6)).abs() < 1e-6);
    }

    #[test]
    fn telegraph_hahn_matches_transfer_matrix() {
        for &(v, g, t) in &[(500.0, 1500.0, 1e-3), (3000.0, 1500.0, 2e-3), (1500.0, 1500.0, 1e-3)] {
            let a = telegraph_hahn(v, g, t);
            let b = telegraph_factor(v, g, &hahn_segments(t));
            assert!((a - b).abs() < 1e-10, "{v} {g} {t}: {a} vs {b}");
        }
    }

    #[test]
    fn cpmg_single_pulse_is_hahn() {
        let a = telegraph_factor(800.0, 1000.0, &cpmg_segments(1e-3, 1));
        let b = telegraph_factor(800.0, 1000.0, &hahn_segments(1e-3));
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn zero_suppression_gives_silent_trajectory() {
        let cfg = BathConfig::default();
        let tr = telegraph_trajectory(&cfg, 5e-3, 0.0, 3).unwrap();
        assert!(tr.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vanishing_flip_rate_gives_constant_trajectory() {
        let cfg = BathConfig {
            flip_rate: 1e-12,
            ..BathConfig::default()
        };
        let tr = telegraph_trajectory(&cfg, 5e-3, 1.0, 3).unwrap();
        assert_eq!(tr.flip_count(), 0);
        assert_eq!(tr.value_at(4e-3), tr.value_at(0.0));
    }

    #[test]
    fn trajectory_integral_is_exact() {
        let tr = NoiseTrajectory::new(vec![0.0, 1.0, 3.0], vec![2.0, -1.0, 4.0], 5.0, 0);
        assert!((tr.integral(0.0, 5.0).unwrap() - (2.0 - 2.0 + 8.0)).abs() < 1e-12);
        assert!((tr.integral(0.5, 2.0).unwrap() - (1.0 - 1.0)).abs() < 1e-12);
        assert!(matches!(
            tr.integral(0.0, 6.0),
            Err(Error::TrajectoryTooShort { .. })
        ));
    }

    #[test]
    fn too_few_defects_is_an_error() {
        let cfg = BathConfig {
            concentration: 1e12,
            ..BathConfig::default()
        };
        assert!(matches!(
            sample_shift_distribution(&cfg, 100),
            Err(Error::TooFewDefects { .. })
        ));
    }

    #[test]
    fn calibration_text_round_trip() {
        let cal = BathCalibration {
            reference_concentration: 6.4e17,
            reference_sigma_hz: 1234.5,
            sigma_exponent: 0.5,
            reference_gamma_dd_hz: 243.6,
            gamma_exponent: 1.0,
            flip_rate_hz: 1500.0,
        };
        assert_eq!(BathCalibration::from_text(&cal.to_text()).unwrap(), cal);
        assert!(BathCalibration::from_text("bogus = 1").is_err());
    }

    #[test]
    fn linear_calibration_doubles_concentration() {
        let cal = BathCalibration {
            reference_concentration: 1e17,
            reference_sigma_hz: 100.0,
            sigma_exponent: 1.0,
            reference_gamma_dd_hz: 50.0,
            gamma_exponent: 1.0,
            flip_rate_hz: 1000.0,
        };
        let a = infer_concentration(60.0, Some(&cal)).unwrap();
        let b = infer_concentration(120.0, Some(&cal)).unwrap();
        assert!((b / a - 2.0).abs() < 1e-12);
        assert!(matches!(
            infer_concentration(60.0, None),
            Err(Error::MissingCalibration)
        ));
    }

    #[test]
    fn two_anchor_closed_form() {
        let data = [(0.0, 250.0, 1.0), (9.0, 110.0, 1.0)];
        let fit = fit_field_scan(&data, &FieldScanOptions::default()).unwrap();
        let s = 1.5f64.powi(2) / (1.5f64.powi(2) + 81.0);
        let gdd = 140.0 / (1.0 - s);
        let g0 = 250.0 - gdd;
        assert!((fit.params.gamma_dd - gdd).abs() < 1e-9);
        assert!((fit.params.gamma0 - g0).abs() < 1e-9);
        assert_eq!(fit.params.beta, 0.0);
        assert!(!fit.fit.warnings.is_empty());
    }
}
