//! Lax matrices of the discrete map and the quantities they conserve.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::state::{check_cross_separation, SpinState, DEFAULT_COLLISION_THRESHOLD};

/// `L(p)` and the bridge `M(p)` to the next level.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxPair {
    pub l: CMatrix,
    pub m: CMatrix,
    pub level: i64,
}

impl LaxPair {
    pub fn new(sp: &SpinState, sp1: &SpinState) -> Result<Self> {
        Ok(Self {
            l: build_l(sp)?,
            m: build_m(sp, sp1)?,
            level: sp.level,
        })
    }
}

/// `L_ii = -xdot_i / 2`, `L_ij = -(b_i · a_j) / (x_i - x_j)`.
pub fn build_l(s: &SpinState) -> Result<CMatrix> {
    s.check_separation(DEFAULT_COLLISION_THRESHOLD)?;
    Ok(build_l_unchecked(s))
}

pub(crate) fn build_l_unchecked(s: &SpinState) -> CMatrix {
    let n = s.n_particles();
    CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -s.xdot[i] * 0.5
        } else {
            -s.b_dot_a(i, s, j) / (s.x[i] - s.x[j])
        }
    })
}

/// `M_ij = (b_i(p+1) · a_j(p)) / (x_i(p+1) - x_j(p))`.
pub fn build_m(sp: &SpinState, sp1: &SpinState) -> Result<CMatrix> {
    if sp1.level != sp.level + 1 {
        return Err(Error::InvalidParams(format!(
            "M links consecutive levels, got {} -> {}",
            sp.level, sp1.level
        )));
    }
    if sp.n_particles() != sp1.n_particles() || sp.n_spin() != sp1.n_spin() {
        return Err(Error::DimensionMismatch {
            what: "adjacent levels",
            expected: sp.n_particles() * sp.n_spin(),
            found: sp1.n_particles() * sp1.n_spin(),
        });
    }
    check_cross_separation(sp1, sp, DEFAULT_COLLISION_THRESHOLD)?;
    Ok(build_m_unchecked(sp, sp1))
}

pub(crate) fn build_m_unchecked(sp: &SpinState, sp1: &SpinState) -> CMatrix {
    let n = sp.n_particles();
    CMatrix::from_fn(n, n, |i, j| sp1.b_dot_a(i, sp, j) / (sp1.x[i] - sp.x[j]))
}

/// Relative defect of `L(p+1) M(p) = M(p) L(p)`:
/// `‖L(p+1)M - M L(p)‖_F / max(1, ‖M‖_F ‖L(p)‖_F)`.
pub fn lax_residual(sp: &SpinState, sp1: &SpinState) -> Result<f64> {
    let l0 = build_l(sp)?;
    let l1 = build_l(sp1)?;
    let m = build_m(sp, sp1)?;
    Ok(lax_residual_of(&l0, &l1, &m))
}

pub(crate) fn lax_residual_of(l0: &CMatrix, l1: &CMatrix, m: &CMatrix) -> f64 {
    let defect = l1 * m - m * l0;
    defect.norm() / (m.norm() * l0.norm()).max(1.0)
}

/// `[tr L, tr L², …, tr L^kmax]`.
pub fn spectral_invariants(l: &CMatrix, kmax: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(kmax);
    if kmax == 0 {
        return out;
    }
    let mut power = l.clone();
    out.push(power.trace());
    for _ in 1..kmax {
        power = &power * l;
        out.push(power.trace());
    }
    out
}

/// Largest drift of `tr L^k` between two Lax matrices, each trace scaled by
/// `max(1, ‖L_ref‖_F^k)`.
pub fn invariant_drift(l_ref: &CMatrix, l: &CMatrix, kmax: usize) -> f64 {
    let t0 = spectral_invariants(l_ref, kmax);
    let t1 = spectral_invariants(l, kmax);
    let norm = l_ref.norm();
    t0.iter()
        .zip(&t1)
        .enumerate()
        .map(|(k, (a, b))| (a - b).norm() / norm.powi(k as i32 + 1).max(1.0))
        .fold(0.0, f64::max)
}
