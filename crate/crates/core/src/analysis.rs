//! Curve fitting and derived quantities.
//!
//! Every nonlinear fit goes through one damped Gauss-Newton
//! (Levenberg-Marquardt) solver with analytic Jacobians and deterministic
//! starting points.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative parameter-change tolerance of the solver.
pub const LM_TOLERANCE: f64 = 1e-10;
pub const LM_MAX_ITER: usize = 200;
/// Converged fits satisfy |J^T r| <= GRADIENT_TOLERANCE * |J| |r|.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub sigma: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, sigma: None }
    }

    pub fn with_sigma(x: f64, y: f64, sigma: f64) -> Self {
        Self {
            x,
            y,
            sigma: Some(sigma),
        }
    }

    fn weight(&self) -> f64 {
        match self.sigma {
            Some(s) if s > 0.0 && s.is_finite() => 1.0 / s,
            _ => 1.0,
        }
    }
}

fn weighted(points: &[Point]) -> bool {
    points
        .iter()
        .any(|p| matches!(p.sigma, Some(s) if s > 0.0 && s.is_finite()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Param {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: String,
    pub params: Vec<Param>,
    /// Coefficient of determination (or |Pearson R| for correlations).
    pub r_squared: f64,
    /// Pearson correlation, where meaningful.
    pub r: Option<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.sigma)
    }

    /// Value of a parameter known to exist.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name)
            .unwrap_or_else(|| panic!("fit `{}` has no parameter `{name}`", self.model))
    }

    fn push(&mut self, name: &str, value: f64, sigma: f64) {
        self.params.push(Param {
            name: name.to_string(),
            value,
            sigma,
        });
    }

    /// `name=value±sigma` lines followed by goodness metrics.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.model);
        for p in &self.params {
            let _ = writeln!(s, "{}={}±{}", p.name, p.value, p.sigma);
        }
        let _ = writeln!(s, "r_squared={}", self.r_squared);
        if let Some(r) = self.r {
            let _ = writeln!(s, "R={r}");
        }
        let _ = writeln!(s, "chi2={}", self.chi2);
        let _ = writeln!(s, "dof={}", self.dof);
        let _ = writeln!(s, "converged={}", self.converged);
        for w in &self.warnings {
            let _ = writeln!(s, "# warning: {w}");
        }
        s
    }

    /// CSV rows `model,param,value,sigma`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,param,value,sigma\n");
        for p in &self.params {
            let _ = writeln!(s, "{},{},{},{}", self.model, p.name, p.value, p.sigma);
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Solver

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub covariance: Option<DMatrix<f64>>,
    pub chi2: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Minimize |r(p)|^2 where `eval` returns weighted residuals and their
/// Jacobian (rows = residuals, columns = parameters).
pub(crate) fn levenberg_marquardt<F>(eval: F, p0: &[f64]) -> LmOutcome
where
    F: Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    let np = p0.len();
    let mut p = p0.to_vec();
    let (mut r, mut j) = eval(&p);
    let mut chi2 = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < LM_MAX_ITER {
        iterations += 1;
        let jt = j.transpose();
        let a = &jt * &j;
        let g = &jt * &r;
        let mut stepped = false;
        let mut small_step = false;
        while lambda < 1e16 {
            let mut m = a.clone();
            for i in 0..np {
                m[(i, i)] += lambda * a[(i, i)].max(1e-300);
            }
            let Some(delta) = m.clone().cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
            small_step = delta
                .iter()
                .zip(p.iter())
                .all(|(d, x)| d.abs() <= LM_TOLERANCE * (x.abs() + LM_TOLERANCE));
            let (rt, jt2) = eval(&trial);
            let chi2_t = rt.norm_squared();
            if chi2_t.is_finite() && chi2_t <= chi2 {
                p = trial;
                r = rt;
                j = jt2;
                chi2 = chi2_t;
                lambda = (lambda / 10.0).max(1e-12);
                stepped = true;
                break;
            }
            if small_step {
                break;
            }
            lambda *= 10.0;
        }
        if small_step || !stepped || chi2 == 0.0 {
            converged = true;
            break;
        }
    }

    let gradient_norm = (j.transpose() * &r).norm();
    let scale = j.norm() * r.norm();
    let gradient_ok = chi2 < 1e-28 || gradient_norm <= GRADIENT_TOLERANCE * scale.max(1e-300);
    converged = converged && gradient_ok && p.iter().all(|x| x.is_finite());

    let covariance = (j.transpose() * &j).try_inverse();
    LmOutcome {
        params: p,
        covariance,
        chi2,
        residuals: r.iter().copied().collect(),
        converged,
        gradient_norm,
        iterations,
    }
}

fn r_squared(points: &[Point], model: impl Fn(f64) -> f64) -> f64 {
    let mean = points.iter().map(|p| p.y).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.y - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.y - model(p.x)).powi(2)).sum();
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Parameter sigmas from the covariance, rescaled by the reduced chi-square
/// when the data carry no uncertainties.
fn sigmas(out: &LmOutcome, n: usize, is_weighted: bool) -> Vec<f64> {
    let np = out.params.len();
    let dof = n.saturating_sub(np);
    let scale = if is_weighted || dof == 0 {
        1.0
    } else {
        out.chi2 / dof as f64
    };
    match &out.covariance {
        Some(c) => (0..np).map(|i| (c[(i, i)] * scale).max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; np],
    }
}

fn base_result(model: &str, out: &LmOutcome, n: usize) -> FitResult {
    FitResult {
        model: model.to_string(),
        params: Vec::new(),
        r_squared: 0.0,
        r: None,
        chi2: out.chi2,
        dof: n.saturating_sub(out.params.len()),
        residuals: out.residuals.clone(),
        converged: out.converged,
        gradient_norm: out.gradient_norm,
        iterations: out.iterations,
        warnings: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Lorentzian

pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    amplitude / (1.0 + u * u) + offset
}

fn lorentzian_fit_from(points: &[Point], p0: [f64; 4]) -> LmOutcome {
    let eval = |p: &[f64]| {
        let (c, w, a, o) = (p[0], p[1], p[2], p[3]);
        let mut r = DVector::zeros(points.len());
        let mut j = DMatrix::zeros(points.len(), 4);
        for (i, pt) in points.iter().enumerate() {
            let wt = pt.weight();
            let u = 2.0 * (pt.x - c) / w;
            let d = 1.0 + u * u;
            r[i] = wt * (pt.y - (a / d + o));
            j[(i, 0)] = -wt * 4.0 * a * u / (w * d * d);
            j[(i, 1)] = -wt * 2.0 * a * u * u / (w * d * d);
            j[(i, 2)] = -wt / d;
            j[(i, 3)] = -wt;
        }
        (r, j)
    };
    levenberg_marquardt(eval, &p0)
}

/// Weighted Lorentzian fit: `center`, `fwhm`, `amplitude`, `offset`.
pub fn fit_lorentzian(points: &[Point]) -> Result<FitResult> {
    if points.len() < 5 {
        return Err(Error::Fit(format!(
            "Lorentzian fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    let (imax, pmax) = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.y.total_cmp(&b.1.y))
        .expect("non-empty");
    let pmin = points
        .iter()
        .min_by(|a, b| a.y.total_cmp(&b.y))
        .expect("non-empty");
    let offset0 = pmin.y;
    let amp0 = pmax.y - offset0;
    let half = offset0 + 0.5 * amp0;
    // half-maximum crossings on either side of the peak
    let left = points[..imax]
        .iter()
        .rev()
        .find(|p| p.y < half)
        .map(|p| p.x)
        .unwrap_or(points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min));
    let right = points[imax..]
        .iter()
        .find(|p| p.y < half)
        .map(|p| p.x)
        .unwrap_or(points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max));
    let span = (right - left).abs().max(f64::MIN_POSITIVE);
    let xs_span = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);

    let mut best: Option<LmOutcome> = None;
    for factor in [0.5, 1.0, 2.0] {
        for off in [offset0, 0.0] {
            let amp = pmax.y - off;
            let out = lorentzian_fit_from(points, [pmax.x, factor * span, amp, off]);
            let better = match &best {
                None => true,
                Some(b) => {
                    (out.converged && !b.converged)
                        || (out.converged == b.converged && out.chi2 < b.chi2 * (1.0 - 1e-12))
                }
            };
            if better {
                best = Some(out);
            }
        }
    }
    let out = best.expect("at least one start");
    let sig = sigmas(&out, points.len(), weighted(points));
    let p = &out.params;
    let mut res = base_result("lorentzian", &out, points.len());
    res.push("center", p[0], sig[0]);
    res.push("fwhm", p[1].abs(), sig[1]);
    res.push("amplitude", p[2], sig[2]);
    res.push("offset", p[3], sig[3]);
    res.r_squared = r_squared(points, |x| lorentzian(x, p[0], p[1], p[2], p[3]));
    if p[1].abs() > 10.0 * xs_span {
        res.warnings.push("fitted width exceeds the data span".into());
    }
    Ok(res)
}

// ---------------------------------------------------------------------------
// Exponential

/// `A0 exp(-t/T2)` fit. Non-positive amplitudes are dropped with a warning.
pub fn fit_exponential(points: &[Point]) -> Result<FitResult> {
    let mut warnings = Vec::new();
    let kept: Vec<Point> = points.iter().copied().filter(|p| p.y > 0.0).collect();
    if kept.len() < points.len() {
        warnings.push(format!(
            "{} non-positive amplitude(s) excluded",
            points.len() - kept.len()
        ));
    }
    if kept.is_empty() {
        return Err(Error::Fit("all amplitudes are non-positive".into()));
    }
    if kept.len() < 4 {
        return Err(Error::Fit(format!(
            "exponential fit needs at least 4 positive points, got {}",
            kept.len()
        )));
    }

    // log-linear initializer, weights y^2 (delta method)
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in &kept {
        let w = (p.y * p.weight()).powi(2);
        let ly = p.y.ln();
        sw += w;
        sx += w * p.x;
        sy += w * ly;
        sxx += w * p.x * p.x;
        sxy += w * p.x * ly;
    }
    let det = sw * sxx - sx * sx;
    let (slope, icpt) = if det.abs() > 0.0 {
        ((sw * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    } else {
        (0.0, sy / sw)
    };
    let p0 = [icpt.exp(), -slope];

    let eval = |p: &[f64]| {
        let (a, k) = (p[0], p[1]);
        let mut r = DVector::zeros(kept.len());
        let mut j = DMatrix::zeros(kept.len(), 2);
        for (i, pt) in kept.iter().enumerate() {
            let w = pt.weight();
            let e = (-k * pt.x).exp();
            r[i] = w * (pt.y - a * e);
            j[(i, 0)] = -w * e;
            j[(i, 1)] = w * a * pt.x * e;
        }
        (r, j)
    };
    let out = levenberg_marquardt(eval, &p0);
    let sig = sigmas(&out, kept.len(), weighted(&kept));
    let (a, k) = (out.params[0], out.params[1]);
    let mut res = base_result("exponential", &out, kept.len());
    res.warnings = warnings;
    let t_span = kept.iter().map(|p| p.x.abs()).fold(0.0, f64::max);
    res.push("A0", a, sig[0]);
    if k * t_span > 1e-9 {
        res.push("T2", 1.0 / k, sig[1] / (k * k));
    } else {
        res.converged = false;
        res.warnings
            .push("no measurable decay: T2 is unbounded".into());
        res.push("T2", f64::INFINITY, f64::INFINITY);
    }
    res.push("rate", k, sig[1]);
    res.r_squared = r_squared(&kept, |x| a * (-k * x).exp());
    Ok(res)
}

/// Homogeneous linewidth from a coherence time, Hz.
pub fn gamma_from_t2(t2: f64) -> Result<f64> {
    if !(t2 > 0.0) {
        return Err(Error::InvalidParameter(format!("T2 must be positive, got {t2}")));
    }
    Ok(1.0 / (PI * t2))
}

// ---------------------------------------------------------------------------
// Dynamical-decoupling balance model

#[derive(Debug, Clone, PartialEq)]
pub struct T2ddOptions {
    /// Exponent of the slow-refocusing term; `None` fits it.
    pub exponent: Option<f64>,
    /// Indices of points to leave out.
    pub exclude: Vec<usize>,
}

impl Default for T2ddOptions {
    fn default() -> Self {
        Self {
            exponent: Some(1.0),
            exclude: Vec::new(),
        }
    }
}

/// `1/T2DD(tau) = c_err/tau + Gamma_res + k tau^p`.
pub fn t2dd_model(tau: f64, c_err: f64, gamma_res: f64, k: f64, p: f64) -> f64 {
    1.0 / (c_err / tau + gamma_res + k * tau.powf(p))
}

/// Stationary point of the balance model, if interior.
pub fn t2dd_optimum(c_err: f64, k: f64, p: f64) -> Option<f64> {
    if c_err > 0.0 && k > 0.0 && p > 0.0 {
        Some((c_err / (p * k)).powf(1.0 / (p + 1.0)))
    } else {
        None
    }
}

fn t2dd_linear(points: &[Point], p: f64) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
    // Columns 1/tau, 1, tau^p on y = 1/T2DD, with sigma_y = sigma_T / T^2.
    let n = points.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (i, pt) in points.iter().enumerate() {
        let w = match pt.sigma {
            Some(s) if s > 0.0 => pt.y * pt.y / s,
            _ => 1.0,
        };
        a[(i, 0)] = w / pt.x;
        a[(i, 1)] = w;
        a[(i, 2)] = w * pt.x.powf(p);
        b[i] = w / pt.y;
    }
    let ata = a.transpose() * &a;
    let cov = ata.clone().try_inverse()?;
    let sol = &cov * (a.transpose() * &b);
    let chi2 = (&a * &sol - &b).norm_squared();
    Some((sol, cov, chi2))
}

pub fn fit_t2dd_model(points: &[Point], opts: &T2ddOptions) -> Result<FitResult> {
    let kept: Vec<Point> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| !opts.exclude.contains(i))
        .map(|(_, p)| *p)
        .collect();
    if kept.len() < 3 {
        return Err(Error::Fit(format!(
            "T2DD model needs at least 3 points, got {}",
            kept.len()
        )));
    }
    if kept.iter().any(|p| !(p.x > 0.0 && p.y > 0.0)) {
        return Err(Error::Fit("tau_dd and T2DD must be positive".into()));
    }
    let mut warnings = Vec::new();
    let mut exponent = opts.exponent;
    if exponent.is_none() && kept.len() < 4 {
        warnings.push("too few points to fit the exponent; fixed to 1".into());
        exponent = Some(1.0);
    }
    let is_weighted = weighted(&kept);

    let (c, g, k, p, sig, chi2, converged, iterations) = match exponent {
        Some(p) => {
            let (sol, cov, chi2) = t2dd_linear(&kept, p)
                .ok_or_else(|| Error::Fit("singular T2DD design matrix".into()))?;
            let dof = kept.len().saturating_sub(3);
            let scale = if is_weighted || dof == 0 { 1.0 } else { chi2 / dof as f64 };
            let s: Vec<f64> = (0..3).map(|i| (cov[(i, i)] * scale).max(0.0).sqrt()).collect();
            (sol[0], sol[1], sol[2], p, [s[0], s[1], s[2], 0.0], chi2, true, 1)
        }
        None => {
            // exponent scan for a start, then joint refinement
            let mut best = (f64::INFINITY, 1.0);
            for i in 0..=60 {
                let p = 0.25 + 0.05 * i as f64;
                if let Some((_, _, chi2)) = t2dd_linear(&kept, p) {
                    if chi2 < best.0 {
                        best = (chi2, p);
                    }
                }
            }
            let (sol, _, _) = t2dd_linear(&kept, best.1)
                .ok_or_else(|| Error::Fit("singular T2DD design matrix".into()))?;
            let eval = |q: &[f64]| {
                let mut r = DVector::zeros(kept.len());
                let mut j = DMatrix::zeros(kept.len(), 4);
                for (i, pt) in kept.iter().enumerate() {
                    let w = match pt.sigma {
                        Some(s) if s > 0.0 => pt.y * pt.y / s,
                        _ => 1.0,
                    };
                    let tp = pt.x.powf(q[3]);
                    r[i] = w * (1.0 / pt.y - (q[0] / pt.x + q[1] + q[2] * tp));
                    j[(i, 0)] = -w / pt.x;
                    j[(i, 1)] = -w;
                    j[(i, 2)] = -w * tp;
                    j[(i, 3)] = -w * q[2] * tp * pt.x.ln();
                }
                (r, j)
            };
            let out = levenberg_marquardt(eval, &[sol[0], sol[1], sol[2], best.1]);
            let s = sigmas(&out, kept.len(), is_weighted);
            let q = &out.params;
            (q[0], q[1], q[2], q[3], [s[0], s[1], s[2], s[3]], out.chi2, out.converged, out.iterations)
        }
    };

    let mut res = FitResult {
        model: "t2dd_balance".into(),
        params: Vec::new(),
        r_squared: r_squared(&kept, |x| t2dd_model(x, c, g, k, p)),
        r: None,
        chi2,
        dof: kept.len().saturating_sub(if exponent.is_some() { 3 } else { 4 }),
        residuals: kept.iter().map(|pt| pt.y - t2dd_model(pt.x, c, g, k, p)).collect(),
        converged,
        gradient_norm: 0.0,
        iterations,
        warnings,
    };
    res.push("c_err", c, sig[0]);
    res.push("Gamma_res", g, sig[1]);
    res.push("k", k, sig[2]);
    res.push("p", p, sig[3]);
    match t2dd_optimum(c, k, p) {
        Some(t) => {
            res.push("tau_opt", t, f64::NAN);
            res.push("T2DD_opt", t2dd_model(t, c, g, k, p), f64::NAN);
        }
        None => res
            .warnings
            .push("fitted model has no interior optimum".into()),
    }
    Ok(res)
}

// ---------------------------------------------------------------------------
// Phase correlation

/// Shift each value by a multiple of pi so successive points differ by at
/// most pi/2.
pub fn unwrap_half_turns(theta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta.len());
    for (i, &t) in theta.iter().enumerate() {
        if i == 0 {
            out.push(t);
        } else {
            let prev = out[i - 1];
            let m = ((prev - t) / PI).round();
            out.push(t + m * PI);
        }
    }
    out
}

/// Weighted line through (phi_excite, theta_echo) with Pearson R.
/// Each pair is `(phi, theta, d_theta)`; `d_theta <= 0` means unweighted.
pub fn phase_correlation(pairs: &[(f64, f64, f64)]) -> Result<FitResult> {
    if pairs.len() < 4 {
        return Err(Error::Fit(format!(
            "phase correlation needs at least 4 pairs, got {}",
            pairs.len()
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let xmin = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(xmax - xmin > 1e-12) {
        return Err(Error::Fit("degenerate excitation-phase range".into()));
    }
    let ys = unwrap_half_turns(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let ws: Vec<f64> = pairs
        .iter()
        .map(|p| if p.2 > 0.0 { 1.0 / (p.2 * p.2) } else { 1.0 })
        .collect();
    let is_weighted = pairs.iter().any(|p| p.2 > 0.0);

    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(&ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let chi2: f64 = residuals.iter().zip(&ws).map(|(r, w)| w * r * r).sum();
    let n = pairs.len();
    let scale = if is_weighted { 1.0 } else { chi2 / (n - 2) as f64 };
    let s_slope = (scale / sxx).sqrt();
    let s_icpt = (scale * (1.0 / sw + mx * mx / sxx)).sqrt();

    // unweighted Pearson R
    let ux = xs.iter().sum::<f64>() / n as f64;
    let uy = ys.iter().sum::<f64>() / n as f64;
    let cxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - ux) * (y - uy)).sum();
    let cxx: f64 = xs.iter().map(|x| (x - ux).powi(2)).sum();
    let cyy: f64 = ys.iter().map(|y| (y - uy).powi(2)).sum();
    let r = if cyy > 0.0 {
        cxy / (cxx * cyy).sqrt()
    } else {
        0.0
    };

    let mut res = FitResult {
        model: "phase_correlation".into(),
        params: Vec::new(),
        r_squared: r * r,
        r: Some(r),
        chi2,
        dof: n - 2,
        residuals,
        converged: true,
        gradient_norm: 0.0,
        iterations: 1,
        warnings: Vec::new(),
    };
    res.push("slope", slope, s_slope);
    res.push("intercept", intercept, s_icpt);
    Ok(res)
}

// ---------------------------------------------------------------------------
// Sine helper

/// `amplitude sin(x + phase) + offset`, seeded by the exact linear solution.
pub fn fit_sine(points: &[Point]) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::Fit(format!(
            "sine fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    // y = a sin x + b cos x + c
    let n = points.len();
    let mut m = DMatrix::zeros(n, 3);
    let mut v = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let w = p.weight();
        m[(i, 0)] = w * p.x.sin();
        m[(i, 1)] = w * p.x.cos();
        m[(i, 2)] = w;
        v[i] = w * p.y;
    }
    let sol = (m.transpose() * &m)
        .try_inverse()
        .map(|inv| inv * (m.transpose() * &v))
        .ok_or_else(|| Error::Fit("phases do not span a sine".into()))?;
    let amp0 = sol[0].hypot(sol[1]);
    let ph0 = sol[1].atan2(sol[0]);

    let eval = |q: &[f64]| {
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 3);
        for (i, p) in points.iter().enumerate() {
            let w = p.weight();
            let s = (p.x + q[1]).sin();
            let c = (p.x + q[1]).cos();
            r[i] = w * (p.y - (q[0] * s + q[2]));
            j[(i, 0)] = -w * s;
            j[(i, 1)] = -w * q[0] * c;
            j[(i, 2)] = -w;
        }
        (r, j)
    };
    let out = levenberg_marquardt(eval, &[amp0, ph0, sol[2]]);
    let sig = sigmas(&out, n, weighted(points));
    let q = out.params.clone();
    let mut res = base_result("sine", &out, n);
    res.push("amplitude", q[0], sig[0]);
    res.push("phase", q[1], sig[1]);
    res.push("offset", q[2], sig[2]);
    res.r_squared = r_squared(points, |x| q[0] * (x + q[1]).sin() + q[2]);
    Ok(res)
}
