//! Executable checks of the identities satisfied by discrete trajectories:
//! resolvent data, recursions for the wavefunction coefficients, the
//! semi-discrete linear problems, the residue identity, and the discrete
//! equations of motion.
//!
//! Wavefunctions use the reduced pole ansatz with identity constant term:
//! `ψ(x) = I + Σ_i a_i c_iᵀ/(x - x_i)`, `ψ†(x) = I + Σ_i c*_i b_iᵀ/(x - x_i)`,
//! with `(z - L)c = -B` and `(z - L)ᵀ c* = A`. The potential is
//! `w(x) = -Σ_i a_i b_iᵀ/(x - x_i)` (its constant part cancels in every check).
//!
//! Every residual is relative: the norm of the defect divided by
//! `max(1, Σ norms of the terms)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::continuous::{t2_rhs, ContinuousState};
use crate::error::{Error, Result};
use crate::lax::{build_l_unchecked, build_m_unchecked, invariant_drift, lax_residual_of};
use crate::linalg::{eig, CMatrix, Lu, ZERO};
use crate::report::VerificationReport;
use crate::state::{check_cross_separation, quad, SpinState, Trajectory, DEFAULT_COLLISION_THRESHOLD};

/// Minimum distance between a spectral parameter and the spectrum of `L`.
pub const SPECTRUM_MARGIN: f64 = 1e-8;

/// Minimum distance between an `x` sample and any pole.
pub const POLE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub lax: f64,
    pub traces: f64,
    pub constraint: f64,
    pub eom: f64,
    pub velocity: f64,
    pub three_level: f64,
    pub resolvent: f64,
    pub recursion: f64,
    pub linear_problem: f64,
    pub residue_m1: f64,
    pub residue_m2: f64,
    pub spinless: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            lax: 1e-9,
            traces: 1e-8,
            constraint: 1e-10,
            eom: 1e-9,
            velocity: 1e-9,
            three_level: 1e-7,
            resolvent: 1e-12,
            recursion: 1e-8,
            linear_problem: 1e-8,
            residue_m1: 1e-9,
            residue_m2: 1e-8,
            spinless: 1e-9,
        }
    }
}

impl Tolerances {
    /// Every tolerance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lax: self.lax * factor,
            traces: self.traces * factor,
            constraint: self.constraint * factor,
            eom: self.eom * factor,
            velocity: self.velocity * factor,
            three_level: self.three_level * factor,
            resolvent: self.resolvent * factor,
            recursion: self.recursion * factor,
            linear_problem: self.linear_problem * factor,
            residue_m1: self.residue_m1 * factor,
            residue_m2: self.residue_m2 * factor,
            spinless: self.spinless * factor,
        }
    }
}

/// Wavefunction coefficients of one level at one spectral parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    pub z: Complex64,
    /// Column `β` solves `(z - L) c^β = -b^β`.
    pub c: CMatrix,
    /// Column `α` solves `(z - L)ᵀ c*^α = a^α`.
    pub cstar: CMatrix,
    pub level: i64,
}

fn shifted(l: &CMatrix, z: Complex64) -> CMatrix {
    let mut w = -l.clone();
    for i in 0..l.nrows() {
        w[(i, i)] += z;
    }
    w
}

fn resolvent_lu(s: &SpinState, z: Complex64) -> Result<(CMatrix, Lu)> {
    s.check_separation(DEFAULT_COLLISION_THRESHOLD)?;
    let l = build_l_unchecked(s);
    if let Some((vals, _)) = eig(&l) {
        if vals.iter().any(|v| (v - z).norm() < SPECTRUM_MARGIN) {
            return Err(Error::NearSpectrum { z });
        }
    }
    let w = shifted(&l, z);
    let lu = Lu::factor(&w, 1e-13).map_err(|_| Error::NearSpectrum { z })?;
    Ok((w, lu))
}

pub fn solve_c(s: &SpinState, z: Complex64) -> Result<CMatrix> {
    let (_, lu) = resolvent_lu(s, z)?;
    Ok(lu.solve(&-s.b.clone()))
}

pub fn solve_cstar(s: &SpinState, z: Complex64) -> Result<CMatrix> {
    let (_, lu) = resolvent_lu(s, z)?;
    Ok(lu.solve_transpose(&s.a))
}

pub fn spectral_sample(s: &SpinState, z: Complex64) -> Result<SpectralSample> {
    let (_, lu) = resolvent_lu(s, z)?;
    Ok(SpectralSample {
        z,
        c: lu.solve(&-s.b.clone()),
        cstar: lu.solve_transpose(&s.a),
        level: s.level,
    })
}

/// Back-substitution residuals `(‖(z-L)c + B‖, ‖(z-L)ᵀc* - A‖)`, relative.
pub fn resolvent_residuals(s: &SpinState, sample: &SpectralSample) -> (f64, f64) {
    let w = shifted(&build_l_unchecked(s), sample.z);
    let wn = w.norm();
    let rc = (&w * &sample.c + &s.b).norm() / (wn * sample.c.norm() + s.b.norm()).max(1.0);
    let rs = (w.transpose() * &sample.cstar - &s.a).norm() / (wn * sample.cstar.norm() + s.a.norm()).max(1.0);
    (rc, rs)
}

fn check_adjacent(sp: &SpinState, sp1: &SpinState) -> Result<()> {
    if sp1.level != sp.level + 1 {
        return Err(Error::InvalidParams(format!(
            "expected consecutive levels, got {} -> {}",
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
    sp.check_separation(DEFAULT_COLLISION_THRESHOLD)?;
    sp1.check_separation(DEFAULT_COLLISION_THRESHOLD)?;
    check_cross_separation(sp1, sp, DEFAULT_COLLISION_THRESHOLD)
}

/// Residuals of `(z-μ)c(p+1) + B(p+1) + M c(p) = 0` and
/// `c*(p+1)ᵀ M + c*(p)ᵀ (L(p) - μ) = 0`.
fn recursion_residuals(
    sp: &SpinState,
    sp1: &SpinState,
    m: &CMatrix,
    s0: &SpectralSample,
    s1: &SpectralSample,
    mu: Complex64,
) -> (f64, f64) {
    let z = s0.z;
    let lhs = s1.c.map(|v| v * (z - mu)) + &sp1.b + m * &s0.c;
    let scale = ((z - mu).norm() * s1.c.norm() + sp1.b.norm() + m.norm() * s0.c.norm()).max(1.0);
    let r1 = lhs.norm() / scale;

    let lmu = shifted(&build_l_unchecked(sp), mu).map(|v| -v);
    let lhs = s1.cstar.transpose() * m + s0.cstar.transpose() * &lmu;
    let scale = (s1.cstar.norm() * m.norm() + s0.cstar.norm() * lmu.norm()).max(1.0);
    (r1, lhs.norm() / scale)
}

/// Records `c_recursion` and `cstar_recursion` for the step `sp -> sp1`.
pub fn check_c_recursion(
    sp: &SpinState,
    sp1: &SpinState,
    z: Complex64,
    mu: Complex64,
    tol: &Tolerances,
) -> Result<VerificationReport> {
    check_adjacent(sp, sp1)?;
    let s0 = spectral_sample(sp, z)?;
    let s1 = spectral_sample(sp1, z)?;
    let m = build_m_unchecked(sp, sp1);
    let (r1, r2) = recursion_residuals(sp, sp1, &m, &s0, &s1, mu);
    let mut report = VerificationReport::new();
    report.record("c_recursion", r1, tol.recursion);
    report.record("cstar_recursion", r2, tol.recursion);
    Ok(report)
}

/// How the potential difference enters the forward linear problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PotentialConvention {
    /// `(w(p+1) - w(p)) ψ`, the plain matrix difference.
    #[default]
    Matrix,
    /// `(w(p+1) - w(p)ᵀ) ψ`, the lower level's potential transposed.
    TransposedLower,
}

struct Level<'a> {
    s: &'a SpinState,
    sample: SpectralSample,
}

impl Level<'_> {
    fn inv_dist(&self, x: Complex64, power: i32) -> Vec<Complex64> {
        self.s.x.iter().map(|xi| (x - xi).powi(-power)).collect()
    }

    /// `Σ_i a_i c_iᵀ d_i`
    fn psi_part(&self, d: &[Complex64]) -> CMatrix {
        let n = self.s.n_spin();
        let mut out = CMatrix::zeros(n, n);
        for (i, di) in d.iter().enumerate() {
            for al in 0..n {
                for be in 0..n {
                    out[(al, be)] += self.s.a[(i, al)] * self.sample.c[(i, be)] * di;
                }
            }
        }
        out
    }

    /// `Σ_i c*_i b_iᵀ d_i`
    fn psi_dag_part(&self, d: &[Complex64]) -> CMatrix {
        let n = self.s.n_spin();
        let mut out = CMatrix::zeros(n, n);
        for (i, di) in d.iter().enumerate() {
            for al in 0..n {
                for be in 0..n {
                    out[(al, be)] += self.sample.cstar[(i, al)] * self.s.b[(i, be)] * di;
                }
            }
        }
        out
    }

    fn psi(&self, x: Complex64) -> CMatrix {
        CMatrix::identity(self.s.n_spin(), self.s.n_spin()) + self.psi_part(&self.inv_dist(x, 1))
    }

    fn psi_x(&self, x: Complex64) -> CMatrix {
        -self.psi_part(&self.inv_dist(x, 2))
    }

    fn psi_dag(&self, x: Complex64) -> CMatrix {
        CMatrix::identity(self.s.n_spin(), self.s.n_spin()) + self.psi_dag_part(&self.inv_dist(x, 1))
    }

    fn psi_dag_x(&self, x: Complex64) -> CMatrix {
        -self.psi_dag_part(&self.inv_dist(x, 2))
    }
}

/// `w(x) = -Σ_i a_i b_iᵀ/(x - x_i)`.
pub fn potential(s: &SpinState, x: Complex64) -> CMatrix {
    let n = s.n_spin();
    let mut w = CMatrix::zeros(n, n);
    for i in 0..s.n_particles() {
        let d = (x - s.x[i]).inv();
        for al in 0..n {
            for be in 0..n {
                w[(al, be)] -= s.a[(i, al)] * s.b[(i, be)] * d;
            }
        }
    }
    w
}

fn check_pole_distance(states: &[&SpinState], x: Complex64) -> Result<()> {
    for s in states {
        for xi in &s.x {
            let d = (x - xi).norm();
            if d < POLE_MARGIN {
                return Err(Error::PoleProximity { x, distance: d });
            }
        }
    }
    Ok(())
}

/// Residuals of the forward and adjoint reduced linear problems at one `x`.
///
/// Forward: `μψ(p) - (μ - z)ψ(p+1) = zψ(p) + ∂ₓψ(p) + (w(p+1) - w(p))ψ(p)`.
/// Adjoint: `μψ†(p+1) - (μ - z)ψ†(p) = zψ†(p+1) - ∂ₓψ†(p+1) + ψ†(p+1)(w(p+1) - w(p))`.
fn linear_problem_at(
    l0: &Level,
    l1: &Level,
    x: Complex64,
    mu: Complex64,
    convention: PotentialConvention,
) -> (f64, f64) {
    let z = l0.sample.z;
    let w0 = potential(l0.s, x);
    let w1 = potential(l1.s, x);
    let dw = &w1 - &w0;

    let p0 = l0.psi(x);
    let p1 = l1.psi(x);
    let p0x = l0.psi_x(x);
    let dw_fwd = match convention {
        PotentialConvention::Matrix => dw.clone(),
        PotentialConvention::TransposedLower => &w1 - w0.transpose(),
    };
    let pot = &dw_fwd * &p0;
    let lhs = p0.map(|v| v * (mu - z)) - p1.map(|v| v * (mu - z)) - &p0x - &pot;
    let scale = (2.0 * (mu - z).norm() * p0.norm().max(p1.norm()) + p0x.norm() + pot.norm()).max(1.0);
    let forward = lhs.norm() / scale;

    let q0 = l0.psi_dag(x);
    let q1 = l1.psi_dag(x);
    let q1x = l1.psi_dag_x(x);
    let pot = &q1 * &dw;
    let lhs = q1.map(|v| v * (mu - z)) - q0.map(|v| v * (mu - z)) + &q1x - &pot;
    let scale = (2.0 * (mu - z).norm() * q0.norm().max(q1.norm()) + q1x.norm() + pot.norm()).max(1.0);
    (forward, lhs.norm() / scale)
}

/// Records `linear_problem` and `adjoint_linear_problem` over `x_samples`.
pub fn check_discrete_linear_problem(
    sp: &SpinState,
    sp1: &SpinState,
    z: Complex64,
    mu: Complex64,
    x_samples: &[Complex64],
    convention: PotentialConvention,
    tol: &Tolerances,
) -> Result<VerificationReport> {
    check_adjacent(sp, sp1)?;
    for &x in x_samples {
        check_pole_distance(&[sp, sp1], x)?;
    }
    let l0 = Level {
        s: sp,
        sample: spectral_sample(sp, z)?,
    };
    let l1 = Level {
        s: sp1,
        sample: spectral_sample(sp1, z)?,
    };
    let mut report = VerificationReport::new();
    for &x in x_samples {
        let (f, a) = linear_problem_at(&l0, &l1, x, mu, convention);
        report.record("linear_problem", f, tol.linear_problem);
        report.record("adjoint_linear_problem", a, tol.linear_problem);
    }
    Ok(report)
}

/// Coefficient of `z^{-n}` in `ψψ†` from the resolvent series
/// `c(z) = -Σ_k L^k B z^{-k-1}`, `c*(z)ᵀ = Σ_k Aᵀ L^k z^{-k-1}`.
fn product_coefficient(s: &SpinState, x: Complex64, n: usize) -> (CMatrix, f64) {
    let np = s.n_particles();
    let l = build_l_unchecked(s);
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        np,
        s.x.iter().map(|xi| (x - xi).inv()),
    ));
    let at_d = s.a.transpose() * &d; // N × Np
    let d_b = &d * &s.b; // Np × N
                         // c_k = -L^{k-1} B, c*_kᵀ = Aᵀ L^{k-1}
    let mut lp = CMatrix::identity(np, np);
    let mut c = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for _ in 0..n {
        c.push(-(&lp * &s.b));
        cs.push(s.a.transpose() * &lp);
        lp = &lp * &l;
    }
    let t1 = &at_d * &c[n - 1];
    let t2 = &cs[n - 1] * &d_b;
    let mut scale = t1.norm() + t2.norm();
    let mut total = t1 + t2;
    for k in 1..n {
        let t = &at_d * &c[k - 1] * &cs[n - k - 1] * &d_b;
        scale += t.norm();
        total += t;
    }
    (total, scale)
}

/// `Σ_γ res_∞ z^m ψ_{αγ} ψ†_{γβ}` and the sum of the norms of its parts.
pub fn residue_at_infinity(s: &SpinState, x: Complex64, m: usize) -> CMatrix {
    product_coefficient(s, x, m + 1).0
}

/// `-∂_{t_m} w` for `m = 1` (`∂ₓ`) or `m = 2` (second flow with rates from
/// the continuous equations of motion).
pub fn residue_target(s: &SpinState, x: Complex64, m: usize) -> Result<CMatrix> {
    let n = s.n_spin();
    let mut out = CMatrix::zeros(n, n);
    match m {
        1 => {
            for i in 0..s.n_particles() {
                let d2 = (x - s.x[i]).powi(-2);
                for al in 0..n {
                    for be in 0..n {
                        out[(al, be)] -= s.a[(i, al)] * s.b[(i, be)] * d2;
                    }
                }
            }
        }
        2 => {
            let rates = t2_rhs(&ContinuousState::from_spin(s, 0.0))?;
            for i in 0..s.n_particles() {
                let d = (x - s.x[i]).inv();
                for al in 0..n {
                    for be in 0..n {
                        out[(al, be)] += (rates.da[(i, al)] * s.b[(i, be)] + s.a[(i, al)] * rates.db[(i, be)]) * d
                            + s.xdot[i] * s.a[(i, al)] * s.b[(i, be)] * d * d;
                    }
                }
            }
        }
        _ => {
            return Err(Error::InvalidParams(format!(
                "residue identity needs m in {{1, 2}}, got {m}"
            )));
        }
    }
    Ok(out)
}

/// Records `residue_identity_m1` or `residue_identity_m2` at `x`.
pub fn check_residue_identity(s: &SpinState, m: usize, x: Complex64, tol: &Tolerances) -> Result<VerificationReport> {
    s.check_separation(DEFAULT_COLLISION_THRESHOLD)?;
    check_pole_distance(&[s], x)?;
    let target = residue_target(s, x, m)?;
    let (lhs, scale) = product_coefficient(s, x, m + 1);
    let r = (&lhs - &target).norm() / (scale + target.norm()).max(1.0);
    let mut report = VerificationReport::new();
    let (name, t) = if m == 1 {
        ("residue_identity_m1", tol.residue_m1)
    } else {
        ("residue_identity_m2", tol.residue_m2)
    };
    report.record(name, r, t);
    Ok(report)
}

/// Sum of `Q_ij(p,q)/(x_i(p) - x_j(q))` over `j` (skipping `j = i` when the
/// levels coincide), and the sum of the moduli of its terms.
fn pair_sum(sp: &SpinState, sq: &SpinState, i: usize, same: bool) -> (Complex64, f64) {
    let mut s = ZERO;
    let mut mag = 0.0;
    for j in 0..sp.n_particles() {
        if same && j == i {
            continue;
        }
        let t = quad(sp, sq, i, j) / (sp.x[i] - sq.x[j]);
        s += t;
        mag += t.norm();
    }
    (s, mag)
}

/// Largest relative residual of the position equation
/// `Σ_j Q(p,p+1)/(x_i - x_j(p+1)) + Σ_j Q(p,p-1)/(x_i - x_j(p-1)) = 2 Σ_{j≠i} Q(p,p)/(x_i - x_j)`
/// at level `cur`.
fn eom_residual(prev: &SpinState, cur: &SpinState, next: &SpinState) -> f64 {
    (0..cur.n_particles())
        .map(|i| {
            let (f, fm) = pair_sum(cur, next, i, false);
            let (b, bm) = pair_sum(cur, prev, i, false);
            let (s, sm) = pair_sum(cur, cur, i, true);
            (f + b - 2.0 * s).norm() / (fm + bm + 2.0 * sm).max(1.0)
        })
        .fold(0.0, f64::max)
}

/// `xdot_i = Σ_j Q(p,p-1)/(x_i - x_j(p-1)) - Σ_j Q(p,p+1)/(x_i - x_j(p+1)) - 2μ`.
fn velocity_residual(prev: &SpinState, cur: &SpinState, next: &SpinState, mu: Complex64) -> f64 {
    (0..cur.n_particles())
        .map(|i| {
            let (f, fm) = pair_sum(cur, next, i, false);
            let (b, bm) = pair_sum(cur, prev, i, false);
            (cur.xdot[i] - (b - f - 2.0 * mu)).norm() / (cur.xdot[i].norm() + fm + bm + 2.0 * mu.norm()).max(1.0)
        })
        .fold(0.0, f64::max)
}

fn dot(b: &SpinState, i: usize, a: &SpinState, j: usize) -> Complex64 {
    b.b_dot_a(i, a, j)
}

fn accumulate(acc: &mut [Complex64], mag: &mut f64, coef: Complex64, row: &CMatrix, k: usize) {
    for (g, v) in acc.iter_mut().enumerate() {
        let t = coef * row[(k, g)];
        *v += t;
        *mag += t.norm();
    }
}

/// Three-level identity built from levels `p-2`, `p-1`, `p` (vector in the
/// `b` index), for particle `i` at level `p`.
fn backward_identity(s2: &SpinState, s1: &SpinState, s0: &SpinState, i: usize) -> (Vec<Complex64>, f64) {
    let n = s0.n_particles();
    let mut acc = vec![ZERO; s0.n_spin()];
    let mut mag = 0.0;
    for j in 0..n {
        let dj = (s1.x[j] - s0.x[i]).powi(2);
        for k in 0..n {
            let c = dot(s0, i, s1, j) * dot(s1, j, s2, k) / (dj * (s2.x[k] - s1.x[j]));
            accumulate(&mut acc, &mut mag, c, &s2.b, k);
            let c = dot(s0, i, s0, k) * dot(s0, k, s1, j) / (dj * (s0.x[k] - s1.x[j]));
            accumulate(&mut acc, &mut mag, c, &s1.b, j);
            if j != k {
                let den = dj * (s0.x[i] - s1.x[k]);
                let c = dot(s0, i, s1, k) * dot(s1, k, s1, j) / den;
                accumulate(&mut acc, &mut mag, c, &s1.b, j);
                let c = dot(s0, i, s1, j) * dot(s1, j, s1, k) / den;
                accumulate(&mut acc, &mut mag, c, &s1.b, k);
            }
        }
    }
    (acc, mag)
}

/// Three-level identity built from levels `p`, `p+1`, `p+2` (vector in the
/// `a` index), for particle `i` at level `p`.
fn forward_identity(s0: &SpinState, s1: &SpinState, s2: &SpinState, i: usize) -> (Vec<Complex64>, f64) {
    let n = s0.n_particles();
    let mut acc = vec![ZERO; s0.n_spin()];
    let mut mag = 0.0;
    for j in 0..n {
        let dj = (s1.x[j] - s0.x[i]).powi(2);
        for k in 0..n {
            let c = dot(s1, j, s0, i) * dot(s2, k, s1, j) / (dj * (s2.x[k] - s1.x[j]));
            accumulate(&mut acc, &mut mag, c, &s2.a, k);
            let c = dot(s1, j, s0, k) * dot(s0, k, s0, i) / (dj * (s0.x[k] - s1.x[j]));
            accumulate(&mut acc, &mut mag, c, &s1.a, j);
            if j != k {
                let den = dj * (s0.x[i] - s1.x[k]);
                let c = dot(s1, k, s1, j) * dot(s1, j, s0, i) / den;
                accumulate(&mut acc, &mut mag, c, &s1.a, k);
                let c = dot(s1, j, s1, k) * dot(s1, k, s0, i) / den;
                accumulate(&mut acc, &mut mag, c, &s1.a, j);
            }
        }
    }
    (acc, mag)
}

fn identity_residual((v, mag): (Vec<Complex64>, f64)) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / mag.max(1.0)
}

fn check_trajectory_levels(traj: &Trajectory) -> Result<()> {
    for w in traj.states.windows(2) {
        check_adjacent(&w[0], &w[1])?;
    }
    if let Some(s) = traj.states.first() {
        s.check_separation(DEFAULT_COLLISION_THRESHOLD)?;
    }
    Ok(())
}

/// Two- and three-level equations of motion over a trajectory; requires
/// enough levels for every stencil to apply (at least 3).
fn eom_report(traj: &Trajectory, tol: &Tolerances) -> VerificationReport {
    let st = &traj.states;
    let mu = traj.params.mu;
    let mut report = VerificationReport::new();
    for w in st.windows(3) {
        report.record("discrete_eom", eom_residual(&w[0], &w[1], &w[2]), tol.eom);
        report.record(
            "velocity_two_sided",
            velocity_residual(&w[0], &w[1], &w[2], mu),
            tol.velocity,
        );
        for i in 0..w[0].n_particles() {
            report.record(
                "three_level_backward",
                identity_residual(backward_identity(&w[0], &w[1], &w[2], i)),
                tol.three_level,
            );
            report.record(
                "three_level_forward",
                identity_residual(forward_identity(&w[0], &w[1], &w[2], i)),
                tol.three_level,
            );
        }
    }
    report
}

/// Records `discrete_eom`, `velocity_two_sided`, `three_level_backward` and
/// `three_level_forward`, each the worst over all applicable levels.
pub fn check_eom_identities(traj: &Trajectory, tol: &Tolerances) -> Result<VerificationReport> {
    if traj.len() < 4 {
        return Err(Error::InsufficientLevels {
            needed: 4,
            found: traj.len(),
        });
    }
    check_trajectory_levels(traj)?;
    Ok(eom_report(traj, tol))
}

/// Spin-free position equation
/// `Σ_j 1/(x_i - x_j(p+1)) + Σ_j 1/(x_i - x_j(p-1)) = 2 Σ_{j≠i} 1/(x_i - x_j)`
/// at every interior level, recorded as `spinless_eom`.
pub fn check_spinless_reduction(traj: &Trajectory, tol: &Tolerances) -> Result<VerificationReport> {
    if traj.params.n_spin != 1 {
        return Err(Error::NotSpinless(traj.params.n_spin));
    }
    if traj.len() < 3 {
        return Err(Error::InsufficientLevels {
            needed: 3,
            found: traj.len(),
        });
    }
    check_trajectory_levels(traj)?;
    let mut report = VerificationReport::new();
    for w in traj.states.windows(3) {
        let cur = &w[1];
        for i in 0..cur.n_particles() {
            let mut total = ZERO;
            let mut mag = 0.0;
            for j in 0..cur.n_particles() {
                for t in [(cur.x[i] - w[2].x[j]).inv(), (cur.x[i] - w[0].x[j]).inv()] {
                    total += t;
                    mag += t.norm();
                }
                if j != i {
                    let t = 2.0 * (cur.x[i] - cur.x[j]).inv();
                    total -= t;
                    mag += t.norm();
                }
            }
            report.record("spinless_eom", total.norm() / mag.max(1.0), tol.spinless);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub z_seed: u64,
    pub x_seed: u64,
    /// Spectral parameters per step.
    pub n_z: usize,
    /// `x` samples per step and per level.
    pub n_x: usize,
    pub tol: Tolerances,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            z_seed: 0x5eed_0001,
            x_seed: 0x5eed_0002,
            n_z: 5,
            n_x: 5,
            tol: Tolerances::default(),
        }
    }
}

fn level_rng(seed: u64, level: i64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (level as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Spectral parameters in an annulus well outside both spectra.
fn sample_z(rng: &mut ChaCha8Rng, l0: &CMatrix, l1: &CMatrix, count: usize) -> Vec<Complex64> {
    let radius = l0.norm().max(l1.norm()) + 1.0;
    (0..count)
        .map(|_| {
            let r = radius * rng.gen_range(1.5..3.0);
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            Complex64::from_polar(r, th)
        })
        .collect()
}

/// Points around the particle cloud, kept away from every pole.
fn sample_x(rng: &mut ChaCha8Rng, states: &[&SpinState], count: usize) -> Vec<Complex64> {
    let all: Vec<Complex64> = states.iter().flat_map(|s| s.x.iter().copied()).collect();
    let centre = all.iter().sum::<Complex64>() / all.len() as f64;
    let radius = all.iter().map(|x| (x - centre).norm()).fold(0.0, f64::max) + 1.0;
    let keep_out = 0.05 * radius;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        let r = radius * rng.gen::<f64>().sqrt();
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = centre + Complex64::from_polar(r, th);
        if attempts > 10_000 || all.iter().all(|p| (x - p).norm() >= keep_out) {
            out.push(x);
        }
    }
    out
}

/// Full check suite over a trajectory. Checks whose stencil does not fit
/// are listed under `skipped`.
pub fn verify_trajectory(traj: &Trajectory, opts: &VerifyOptions) -> Result<VerificationReport> {
    check_trajectory_levels(traj)?;
    let tol = &opts.tol;
    let mu = traj.params.mu;
    let st = &traj.states;
    let mut report = VerificationReport::new();
    if st.is_empty() {
        report.skip("all", "trajectory has no levels");
        return Ok(report);
    }

    let l_ref = build_l_unchecked(&st[0]);
    let kmax = traj.params.n_particles;
    let mut z_rng = ChaCha8Rng::seed_from_u64(opts.z_seed);
    let mut x_rng = ChaCha8Rng::seed_from_u64(opts.x_seed);

    for s in st {
        report.record("constraint", s.constraint_defect(), tol.constraint);
        let sep = s.min_separation().map_or(f64::INFINITY, |m| m.0);
        report.record_lower("separation", sep, traj.params.collision_threshold);
        let l = build_l_unchecked(s);
        report.record("trace_invariants", invariant_drift(&l_ref, &l, kmax), tol.traces);
        let mut xr = level_rng(opts.x_seed, s.level);
        for x in sample_x(&mut xr, &[s], opts.n_x) {
            report.merge(check_residue_identity(s, 1, x, tol)?);
        }
    }

    if st.len() < 2 {
        report.skip("lax_equation", "needs two levels");
        report.skip("c_recursion", "needs two levels");
        report.skip("linear_problem", "needs two levels");
    }
    for w in st.windows(2) {
        let (sp, sp1) = (&w[0], &w[1]);
        let l0 = build_l_unchecked(sp);
        let l1 = build_l_unchecked(sp1);
        let m = build_m_unchecked(sp, sp1);
        report.record("lax_equation", lax_residual_of(&l0, &l1, &m), tol.lax);
        let zs = sample_z(&mut z_rng, &l0, &l1, opts.n_z);
        let xs = sample_x(&mut x_rng, &[sp, sp1], opts.n_x);
        for z in zs {
            let s0 = spectral_sample(sp, z)?;
            let s1 = spectral_sample(sp1, z)?;
            for (s, sample) in [(sp, &s0), (sp1, &s1)] {
                let (rc, rs) = resolvent_residuals(s, sample);
                report.record("resolvent_c", rc, tol.resolvent);
                report.record("resolvent_cstar", rs, tol.resolvent);
            }
            let (r1, r2) = recursion_residuals(sp, sp1, &m, &s0, &s1, mu);
            report.record("c_recursion", r1, tol.recursion);
            report.record("cstar_recursion", r2, tol.recursion);
            let lv0 = Level { s: sp, sample: s0 };
            let lv1 = Level { s: sp1, sample: s1 };
            for &x in &xs {
                let (f, a) = linear_problem_at(&lv0, &lv1, x, mu, PotentialConvention::Matrix);
                report.record("linear_problem", f, tol.linear_problem);
                report.record("adjoint_linear_problem", a, tol.linear_problem);
            }
        }
    }

    if st.len() >= 3 {
        report.merge(eom_report(traj, tol));
        if traj.params.n_spin == 1 {
            report.merge(check_spinless_reduction(traj, tol)?);
        }
    } else {
        for name in [
            "discrete_eom",
            "velocity_two_sided",
            "three_level_backward",
            "three_level_forward",
        ] {
            report.skip(name, format!("needs three levels, trajectory has {}", st.len()));
        }
    }
    Ok(report)
}
