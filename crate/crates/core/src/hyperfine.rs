//! Ground-state hyperfine structure of an I = 5/2 nucleus.
//!
//! The Hamiltonian is the usual quadrupole form plus an isotropic nuclear
//! Zeeman term, all in MHz:
//!
//! ```text
//! H = D [Iz^2 - I(I+1)/3] + E (Ix^2 - Iy^2) - gamma_n B . I
//! ```
//!
//! At zero field the six levels form three Kramers-like doublets labelled by
//! their dominant |m| (1/2, 3/2, 5/2).

use std::fmt;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPIN: f64 = 2.5;
const DIM: usize = 6;

pub type Hamiltonian = Matrix6<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrupoleParams {
    pub d_mhz: f64,
    pub e_mhz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeemanParams {
    /// Flux density in mT.
    pub field_mt: Vector3<f64>,
    /// Nuclear gyromagnetic ratio in kHz/mT.
    pub gamma_n_khz_per_mt: f64,
}

pub const DEFAULT_GAMMA_N_KHZ_PER_MT: f64 = 1.05;

impl ZeemanParams {
    pub fn zero() -> Self {
        Self {
            field_mt: Vector3::zeros(),
            gamma_n_khz_per_mt: DEFAULT_GAMMA_N_KHZ_PER_MT,
        }
    }

    /// Field of magnitude `magnitude_mt` along `direction` (normalized here).
    pub fn along(direction: Vector3<f64>, magnitude_mt: f64, gamma_n_khz_per_mt: f64) -> Self {
        let norm = direction.norm();
        let unit = if norm > 0.0 { direction / norm } else { Vector3::z() };
        Self {
            field_mt: unit * magnitude_mt,
            gamma_n_khz_per_mt,
        }
    }
}

/// Ground doublet, named by dominant |m|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Doublet {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl Doublet {
    fn from_abs_m_index(i: usize) -> Self {
        match i {
            0 => Doublet::Half,
            1 => Doublet::ThreeHalves,
            _ => Doublet::FiveHalves,
        }
    }
}

impl fmt::Display for Doublet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Doublet::Half => "1/2",
            Doublet::ThreeHalves => "3/2",
            Doublet::FiveHalves => "5/2",
        };
        f.write_str(s)
    }
}

/// Spin-5/2 angular momentum matrices in the basis m = +5/2 ... -5/2.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub x: Hamiltonian,
    pub y: Hamiltonian,
    pub z: Hamiltonian,
}

/// Magnetic quantum number of basis index `k`.
pub fn m_of(k: usize) -> f64 {
    SPIN - k as f64
}

pub fn spin_operators() -> SpinOperators {
    let mut z = Hamiltonian::zeros();
    let mut raise = Hamiltonian::zeros();
    for k in 0..DIM {
        z[(k, k)] = Complex64::new(m_of(k), 0.0);
    }
    // <m+1| I+ |m> = sqrt(I(I+1) - m(m+1)); row k-1 has m+1 when column k has m.
    for k in 1..DIM {
        let m = m_of(k);
        raise[(k - 1, k)] = Complex64::new((SPIN * (SPIN + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let lower = raise.adjoint();
    let half = Complex64::new(0.5, 0.0);
    let x = (raise + lower) * half;
    let y = (raise - lower) * Complex64::new(0.0, -0.5);
    SpinOperators { x, y, z }
}

pub fn build_hamiltonian(q: &QuadrupoleParams, z: &ZeemanParams) -> Hamiltonian {
    let ops = spin_operators();
    let id = Hamiltonian::identity();
    let c = |v: f64| Complex64::new(v, 0.0);
    let quad = (ops.z * ops.z - id * c(SPIN * (SPIN + 1.0) / 3.0)) * c(q.d_mhz)
        + (ops.x * ops.x - ops.y * ops.y) * c(q.e_mhz);
    let gamma_mhz = z.gamma_n_khz_per_mt * 1e-3;
    let b = z.field_mt;
    let zeeman = (ops.x * c(b.x) + ops.y * c(b.y) + ops.z * c(b.z)) * c(-gamma_mhz);
    quad + zeeman
}

pub fn hermiticity_error(h: &Hamiltonian) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..DIM {
        for j in 0..DIM {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct LevelStructure {
    /// Eigenvalues in MHz, ascending.
    pub energies: [f64; DIM],
    /// Column `k` is the eigenvector of `energies[k]` in the |m> basis.
    pub states: Hamiltonian,
    /// Dominant |m| of each level.
    pub labels: [Doublet; DIM],
}

impl LevelStructure {
    /// Centers of the three doublets (pairs of adjacent levels), ascending.
    pub fn doublet_centers(&self) -> [f64; 3] {
        let e = &self.energies;
        [
            0.5 * (e[0] + e[1]),
            0.5 * (e[2] + e[3]),
            0.5 * (e[4] + e[5]),
        ]
    }

    /// Largest splitting inside a doublet, MHz.
    pub fn max_internal_splitting(&self) -> f64 {
        let e = &self.energies;
        (e[1] - e[0]).max(e[3] - e[2]).max(e[5] - e[4])
    }

    pub fn doublet_label(&self, doublet: usize) -> Doublet {
        self.labels[2 * doublet]
    }
}

pub fn eigensystem(h: &Hamiltonian) -> Result<LevelStructure> {
    let scale = h.iter().map(|v| v.norm()).fold(1.0f64, f64::max);
    let herm = hermiticity_error(h);
    if herm > 1e-9 * scale {
        return Err(Error::NonHermitian(herm));
    }
    let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut energies = [0.0; DIM];
    let mut states = Hamiltonian::zeros();
    let mut labels = [Doublet::Half; DIM];
    for (dst, &src) in order.iter().enumerate() {
        energies[dst] = eig.eigenvalues[src];
        let v = eig.eigenvectors.column(src);
        states.set_column(dst, &v);
        labels[dst] = dominant_doublet(v.iter().copied());
    }
    Ok(LevelStructure {
        energies,
        states,
        labels,
    })
}

fn dominant_doublet(v: impl Iterator<Item = Complex64>) -> Doublet {
    let mut weight = [0.0f64; 3];
    for (k, c) in v.enumerate() {
        let abs_m = m_of(k).abs();
        weight[(abs_m - 0.5).round() as usize] += c.norm_sqr();
    }
    let best = (0..3)
        .max_by(|&a, &b| weight[a].total_cmp(&weight[b]))
        .unwrap_or(0);
    Doublet::from_abs_m_index(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub lower: Doublet,
    pub upper: Doublet,
    pub lower_level: usize,
    pub upper_level: usize,
    pub frequency_mhz: f64,
}

/// Doublets count as degenerate below this internal splitting.
pub const DEGENERACY_TOL_MHZ: f64 = 1e-9;

/// Lines between adjacent doublets.
///
/// At zero field one line per doublet pair (center to center). When the
/// doublets are split, every sublevel-to-sublevel line of each adjacent pair
/// is listed, four per pair.
pub fn transition_frequencies(ls: &LevelStructure) -> Vec<Transition> {
    let degenerate = ls.max_internal_splitting() < DEGENERACY_TOL_MHZ * ls.energies[5].abs().max(1.0);
    let centers = ls.doublet_centers();
    let mut out = Vec::new();
    for pair in 0..2 {
        let lower = ls.doublet_label(pair);
        let upper = ls.doublet_label(pair + 1);
        if degenerate {
            out.push(Transition {
                lower,
                upper,
                lower_level: 2 * pair,
                upper_level: 2 * pair + 2,
                frequency_mhz: (centers[pair + 1] - centers[pair]).abs(),
            });
        } else {
            for a in 2 * pair..2 * pair + 2 {
                for b in 2 * pair + 2..2 * pair + 4 {
                    out.push(Transition {
                        lower,
                        upper,
                        lower_level: a,
                        upper_level: b,
                        frequency_mhz: (ls.energies[b] - ls.energies[a]).abs(),
                    });
                }
            }
        }
    }
    out
}

/// Zero-field doublet energies from the 3x3 block {+5/2, +1/2, -3/2}.
///
/// The quadrupole term only couples m to m +/- 2, so the 6x6 problem splits
/// into two 3x3 blocks with identical spectra. The cubic is solved in closed
/// form.
pub fn zero_field_doublets(q: &QuadrupoleParams) -> [f64; 3] {
    let d = q.d_mhz;
    let e = q.e_mhz;
    let block = Matrix3::new(
        10.0 * d / 3.0,
        10f64.sqrt() * e,
        0.0,
        10f64.sqrt() * e,
        -8.0 * d / 3.0,
        18f64.sqrt() * e,
        0.0,
        18f64.sqrt() * e,
        -2.0 * d / 3.0,
    );
    symmetric3_eigenvalues(&block)
}

/// Eigenvalues of a real symmetric 3x3 matrix, ascending (trigonometric form).
fn symmetric3_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let mut out = if p1 == 0.0 {
        [a[(0, 0)], a[(1, 1)], a[(2, 2)]]
    } else {
        let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = (a - Matrix3::identity() * q) / p;
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let l1 = q + 2.0 * p * phi.cos();
        let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [l1, 3.0 * q - l1 - l3, l3]
    };
    out.sort_by(f64::total_cmp);
    out
}

/// Adjacent zero-field splittings (lower pair, upper pair), MHz.
pub fn zero_field_splittings(q: &QuadrupoleParams) -> (f64, f64) {
    let e = zero_field_doublets(q);
    (e[1] - e[0], e[2] - e[1])
}

const GRID_D_MIN: f64 = 1.0;
const GRID_D_MAX: f64 = 20.0;
const GRID_STEP: f64 = 0.05;
const FIT_TOL_MHZ: f64 = 1e-3;

/// Quadrupole parameters reproducing two unsigned zero-field splittings.
///
/// Targets are sorted so the smaller one is the lower doublet pair. A
/// deterministic grid over D in [1, 20] MHz and E in [0, D/3] seeds a
/// Gauss-Newton refinement; the result is checked by full diagonalization.
pub fn fit_quadrupole(targets: (f64, f64)) -> Result<QuadrupoleParams> {
    let (a, b) = targets;
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "splittings must be positive, got ({a}, {b})"
        )));
    }
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if ((hi / lo) - 2.0).abs() < 1e-12 {
        return Ok(QuadrupoleParams {
            d_mhz: lo / 2.0,
            e_mhz: 0.0,
        });
    }

    let residual = |d: f64, e: f64| {
        let (s1, s2) = zero_field_splittings(&QuadrupoleParams { d_mhz: d, e_mhz: e });
        (s1 - lo, s2 - hi)
    };
    let cost = |d: f64, e: f64| {
        let (r1, r2) = residual(d, e);
        r1 * r1 + r2 * r2
    };

    let mut best = (f64::INFINITY, GRID_D_MIN, 0.0);
    let mut worst = f64::NEG_INFINITY;
    let nd = ((GRID_D_MAX - GRID_D_MIN) / GRID_STEP).round() as usize;
    for i in 0..=nd {
        let d = GRID_D_MIN + i as f64 * GRID_STEP;
        let ne = ((d / 3.0) / GRID_STEP).floor() as usize;
        for j in 0..=ne {
            let e = j as f64 * GRID_STEP;
            let c = cost(d, e);
            worst = worst.max(c);
            if c < best.0 {
                best = (c, d, e);
            }
        }
    }

    let (_, mut d, mut e) = best;
    for _ in 0..100 {
        let (r1, r2) = residual(d, e);
        if r1.hypot(r2) < 1e-12 {
            break;
        }
        let h = 1e-6;
        let (a1, a2) = residual(d + h, e);
        let (b1, b2) = residual(d, e + h);
        let j = nalgebra::Matrix2::new((a1 - r1) / h, (b1 - r1) / h, (a2 - r2) / h, (b2 - r2) / h);
        let Some(inv) = j.try_inverse() else { break };
        let step = inv * nalgebra::Vector2::new(r1, r2);
        let mut lambda = 1.0;
        let c0 = r1 * r1 + r2 * r2;
        loop {
            let nd = d - lambda * step.x;
            let ne = (e - lambda * step.y).clamp(0.0, nd.abs() / 3.0);
            if cost(nd, ne) < c0 || lambda < 1e-6 {
                d = nd;
                e = ne;
                break;
            }
            lambda *= 0.5;
        }
    }

    let q = QuadrupoleParams { d_mhz: d, e_mhz: e };
    let check = transition_frequencies(&eigensystem(&build_hamiltonian(&q, &ZeemanParams::zero()))?);
    let s1 = check[0].frequency_mhz;
    let s2 = check[1].frequency_mhz;
    if (s1 - lo).abs() > FIT_TOL_MHZ || (s2 - hi).abs() > FIT_TOL_MHZ || d <= 0.0 {
        return Err(Error::QuadrupoleFit(format!(
            "no root for targets ({lo}, {hi}) MHz: best splittings ({s1:.6}, {s2:.6}); \
             residual landscape min {:.3e}, max {worst:.3e} MHz^2",
            best.0
        )));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axial_hamiltonian_is_diagonal_closed_form() {
        let h = build_hamiltonian(&QuadrupoleParams { d_mhz: 1.0, e_mhz: 0.0 }, &ZeemanParams::zero());
        for i in 0..6 {
            for j in 0..6 {
                let m = m_of(i);
                let want = if i == j { m * m - 35.0 / 12.0 } else { 0.0 };
                assert!((h[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_matrix() {
        let h = build_hamiltonian(&QuadrupoleParams { d_mhz: 0.0, e_mhz: 0.0 }, &ZeemanParams::zero());
        assert!(h.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn axial_transitions_are_two_and_four() {
        let q = QuadrupoleParams { d_mhz: 1.0, e_mhz: 0.0 };
        let ls = eigensystem(&build_hamiltonian(&q, &ZeemanParams::zero())).unwrap();
        let t = transition_frequencies(&ls);
        assert_eq!(t.len(), 2);
        assert!((t[0].frequency_mhz - 2.0).abs() < 1e-12);
        assert!((t[1].frequency_mhz - 4.0).abs() < 1e-12);
        assert_eq!((t[0].lower, t[0].upper), (Doublet::Half, Doublet::ThreeHalves));
        assert_eq!((t[1].lower, t[1].upper), (Doublet::ThreeHalves, Doublet::FiveHalves));
    }

    #[test]
    fn diagonal_input_gives_identity_vectors() {
        let mut h = Hamiltonian::zeros();
        let diag = [3.0, -1.0, 0.5, 2.0, -4.0, 1.5];
        for (k, v) in diag.iter().enumerate() {
            h[(k, k)] = Complex64::new(*v, 0.0);
        }
        let ls = eigensystem(&h).unwrap();
        let mut sorted = diag;
        sorted.sort_by(f64::total_cmp);
        assert_eq!(ls.energies, sorted);
        for (col, e) in ls.energies.iter().enumerate() {
            let row = diag.iter().position(|d| d == e).unwrap();
            assert!((ls.states[(row, col)].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_hermitian_is_rejected() {
        let mut h = Hamiltonian::zeros();
        h[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(eigensystem(&h), Err(Error::NonHermitian(_))));
    }

    #[test]
    fn closed_form_block_matches_full_diagonalization() {
        let q = QuadrupoleParams { d_mhz: 7.3, e_mhz: 1.9 };
        let ls = eigensystem(&build_hamiltonian(&q, &ZeemanParams::zero())).unwrap();
        let c = ls.doublet_centers();
        let block = zero_field_doublets(&q);
        for k in 0..3 {
            assert!((c[k] - block[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn axial_ratio_uses_closed_form() {
        let q = fit_quadrupole((6.0, 12.0)).unwrap();
        assert_eq!(q, QuadrupoleParams { d_mhz: 3.0, e_mhz: 0.0 });
    }

    #[test]
    fn impossible_ratio_reports_landscape() {
        let err = fit_quadrupole((10.0, 30.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("residual landscape"), "{msg}");
    }

    #[test]
    fn nonpositive_targets_rejected() {
        assert!(fit_quadrupole((0.0, 3.0)).is_err());
        assert!(fit_quadrupole((-1.0, 3.0)).is_err());
    }
}
