//! One step of the discrete-time spin Calogero-Moser map.
//!
//! Given level `p` (positions, spins and second-flow velocities), the level
//! `p + 1` is the solution of a square holomorphic system:
//!
//! * `R1` (Np·N): the `a`-equation linking `p` and `p+1`,
//!   `Aᵀ(p+1) M(p) + Aᵀ(p) L(p) = μ Aᵀ(p)`;
//! * `R2` (Np·N): the `b`-equation at `p+1`,
//!   `M(p) B(p) + L(p+1) B(p+1) = μ B(p+1)`;
//! * `R3` (Np): `b_i(p+1) · a_i(p+1) = 1`;
//! * `R4` (Np): gauge anchors `a_i^{k_i}(p+1) = 1`.
//!
//! The unknowns are `x(p+1)`, `a(p+1)`, `b(p+1)` and `xdot(p+1)`. The system
//! is solved by Newton's method with a finite-difference Jacobian.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lax::build_l_unchecked;
use crate::linalg::{eig, sup_norm, CMatrix, Lu, ONE, ZERO};
use crate::state::{
    check_cross_separation, quad, validate_state, AnchorRule, ModelParams, SpinState, StepMeta, Trajectory,
    GAUGE_DEGENERACY,
};

/// Pivot ratio below which the Newton Jacobian counts as singular.
pub const JACOBIAN_PIVOT_TOL: f64 = 1e-14;

/// Constraint tolerance required of an initial state.
pub const INITIAL_CONSTRAINT_TOL: f64 = 1e-10;

/// Initial guess for the next level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// `x(p+1) = x(p) + 1/μ`, spins and velocities copied.
    ShiftByInverseMu,
    /// Linear extrapolation from the previous two levels (falls back to
    /// the shift when no history is available).
    LinearExtrapolation,
    /// Closed-form step: positions are the eigenvalues of
    /// `X + (μ - L)⁻¹` and spins follow from its eigenvectors. Newton then
    /// only polishes. Falls back to the shift if the eigenproblem fails.
    #[default]
    Spectral,
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Predictor::ShiftByInverseMu => "shift_by_inverse_mu",
            Predictor::LinearExtrapolation => "linear_extrapolation",
            Predictor::Spectral => "spectral",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    /// Sup-norm residual target, relative to the level's residual scale.
    pub newton_tol: f64,
    pub max_iters: usize,
    /// Finite-difference step, scaled by `max(1, |u_k|)`.
    pub fd_step: f64,
    pub predictor: Predictor,
    pub anchor: AnchorRule,
    /// Allowed relative disagreement between the Newton velocity and the
    /// velocity recovered from the contracted level equation.
    pub velocity_tol: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            max_iters: 50,
            fd_step: 1e-7,
            predictor: Predictor::default(),
            anchor: AnchorRule::default(),
            velocity_tol: 1e-9,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) || self.max_iters == 0 || !(self.fd_step > 0.0) {
            return Err(Error::InvalidParams(format!(
                "stepper needs newton_tol > 0, max_iters >= 1, fd_step > 0 (got {}, {}, {})",
                self.newton_tol, self.max_iters, self.fd_step
            )));
        }
        Ok(())
    }
}

/// Residual blocks of one step; see the module docs for their meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub r1: Vec<Complex64>,
    pub r2: Vec<Complex64>,
    pub r3: Vec<Complex64>,
    pub r4: Vec<Complex64>,
}

impl ResidualVector {
    pub fn len(&self) -> usize {
        self.r1.len() + self.r2.len() + self.r3.len() + self.r4.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<Complex64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.r1);
        v.extend_from_slice(&self.r2);
        v.extend_from_slice(&self.r3);
        v.extend_from_slice(&self.r4);
        v
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.r1)
            .max(sup_norm(&self.r2))
            .max(sup_norm(&self.r3))
            .max(sup_norm(&self.r4))
    }

    fn l2_norm(&self) -> f64 {
        self.r1
            .iter()
            .chain(&self.r2)
            .chain(&self.r3)
            .chain(&self.r4)
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Second-flow velocity at `s_cur` recovered from the `b`-equation between
/// `s_prev` and `s_cur`, contracted with `a_i` and using `b_i · a_i = 1`:
///
/// `xdot_i = 2 [ Σ_j Q_ij(p,p-1)/(x_i(p) - x_j(p-1)) - Σ_{j≠i} Q_ij(p,p)/(x_i - x_j) - μ ]`.
pub fn velocity_from_levels(s_prev: &SpinState, s_cur: &SpinState, mu: Complex64) -> Result<Vec<Complex64>> {
    if s_cur.level != s_prev.level + 1 {
        return Err(Error::InvalidParams(format!(
            "velocity needs consecutive levels, got {} -> {}",
            s_prev.level, s_cur.level
        )));
    }
    if s_cur.n_particles() != s_prev.n_particles() || s_cur.n_spin() != s_prev.n_spin() {
        return Err(Error::DimensionMismatch {
            what: "adjacent levels",
            expected: s_prev.n_particles() * s_prev.n_spin(),
            found: s_cur.n_particles() * s_cur.n_spin(),
        });
    }
    let thr = crate::state::DEFAULT_COLLISION_THRESHOLD;
    s_cur.check_separation(thr)?;
    check_cross_separation(s_cur, s_prev, thr)?;
    Ok(velocity_unchecked(s_prev, s_cur, mu))
}

pub(crate) fn velocity_unchecked(s_prev: &SpinState, s_cur: &SpinState, mu: Complex64) -> Vec<Complex64> {
    let n = s_cur.n_particles();
    (0..n)
        .map(|i| {
            let mut s = -mu;
            for j in 0..n {
                s += quad(s_cur, s_prev, i, j) / (s_cur.x[i] - s_prev.x[j]);
                if j != i {
                    s -= quad(s_cur, s_cur, i, j) / (s_cur.x[i] - s_cur.x[j]);
                }
            }
            2.0 * s
        })
        .collect()
}

fn residual_raw(cand: &SpinState, cur: &SpinState, mu: Complex64, anchors: &[usize]) -> ResidualVector {
    let np = cur.n_particles();
    let n = cur.n_spin();
    let mut r1 = vec![ZERO; np * n];
    let mut r2 = vec![ZERO; np * n];
    let mut r3 = vec![ZERO; np];
    let mut r4 = vec![ZERO; np];

    for i in 0..np {
        // a-equation at level p, component α
        let lead = cur.xdot[i] * 0.5 + mu;
        for al in 0..n {
            r1[i * n + al] = -lead * cur.a[(i, al)];
        }
        for j in 0..np {
            let w = cand.b_dot_a(j, cur, i) / (cand.x[j] - cur.x[i]);
            for al in 0..n {
                r1[i * n + al] += cand.a[(j, al)] * w;
            }
            if j != i {
                let w = cur.b_dot_a(j, cur, i) / (cur.x[j] - cur.x[i]);
                for al in 0..n {
                    r1[i * n + al] -= cur.a[(j, al)] * w;
                }
            }
        }

        // b-equation at level p+1, component β
        let lead = cand.xdot[i] * 0.5 + mu;
        for be in 0..n {
            r2[i * n + be] = -lead * cand.b[(i, be)];
        }
        for j in 0..np {
            let w = cand.b_dot_a(i, cur, j) / (cand.x[i] - cur.x[j]);
            for be in 0..n {
                r2[i * n + be] += w * cur.b[(j, be)];
            }
            if j != i {
                let w = cand.b_dot_a(i, cand, j) / (cand.x[i] - cand.x[j]);
                for be in 0..n {
                    r2[i * n + be] -= w * cand.b[(j, be)];
                }
            }
        }

        r3[i] = cand.b_dot_a(i, cand, i) - ONE;
        r4[i] = cand.a[(i, anchors[i])] - ONE;
    }
    ResidualVector { r1, r2, r3, r4 }
}

/// Residual of a candidate level `p+1` against the current level `p`.
/// All blocks vanish exactly when the candidate is a step of the map (in the
/// configured gauge).
pub fn step_residual(
    candidate: &SpinState,
    s_cur: &SpinState,
    params: &ModelParams,
    config: &StepperConfig,
) -> Result<ResidualVector> {
    s_cur.check_dims(params)?;
    candidate.check_dims(params)?;
    s_cur.check_separation(params.collision_threshold)?;
    candidate.check_separation(params.collision_threshold)?;
    check_cross_separation(candidate, s_cur, params.collision_threshold)?;
    let anchors = anchors_for(s_cur, config.anchor)?;
    Ok(residual_raw(candidate, s_cur, params.mu, &anchors))
}

fn anchors_for(s: &SpinState, rule: AnchorRule) -> Result<Vec<usize>> {
    let anchors = rule.anchor_indices(&s.a);
    if let Some(&k) = anchors.iter().find(|&&k| k >= s.n_spin()) {
        return Err(Error::InvalidParams(format!(
            "anchor component {k} out of range for N = {}",
            s.n_spin()
        )));
    }
    Ok(anchors)
}

/// Typical magnitude of the terms in `R1`; residuals are judged against it.
fn residual_scale(cur: &SpinState, mu: Complex64) -> f64 {
    let l = build_l_unchecked(cur);
    let np = cur.n_particles();
    let mut w = -l;
    for i in 0..np {
        w[(i, i)] += mu;
    }
    let rhs = cur.a.transpose() * w;
    rhs.iter().map(|z| z.norm()).fold(1.0, f64::max)
}

fn pack(s: &SpinState) -> Vec<Complex64> {
    let np = s.n_particles();
    let n = s.n_spin();
    let mut u = Vec::with_capacity(2 * np * n + 2 * np);
    u.extend_from_slice(&s.x);
    for i in 0..np {
        for g in 0..n {
            u.push(s.a[(i, g)]);
        }
    }
    for i in 0..np {
        for g in 0..n {
            u.push(s.b[(i, g)]);
        }
    }
    u.extend_from_slice(&s.xdot);
    u
}

fn unpack_into(u: &[Complex64], s: &mut SpinState) {
    let np = s.n_particles();
    let n = s.n_spin();
    s.x.copy_from_slice(&u[..np]);
    let mut k = np;
    for i in 0..np {
        for g in 0..n {
            s.a[(i, g)] = u[k];
            k += 1;
        }
    }
    for i in 0..np {
        for g in 0..n {
            s.b[(i, g)] = u[k];
            k += 1;
        }
    }
    s.xdot.copy_from_slice(&u[k..]);
}

fn gauge_fixed_copy(cur: &SpinState, anchors: &[usize]) -> SpinState {
    let kappa: Vec<Complex64> = anchors
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let v = cur.a[(i, k)];
            if v.norm() < GAUGE_DEGENERACY {
                ONE
            } else {
                v.inv()
            }
        })
        .collect();
    let mut s = cur.regauge(&kappa);
    s.level = cur.level + 1;
    s
}

fn shift_prediction(cur: &SpinState, mu: Complex64, anchors: &[usize]) -> SpinState {
    let mut s = gauge_fixed_copy(cur, anchors);
    let step = mu.inv();
    for x in s.x.iter_mut() {
        *x += step;
    }
    s
}

fn extrapolation(prev: &SpinState, cur: &SpinState, anchors: &[usize]) -> SpinState {
    let mut s = gauge_fixed_copy(cur, anchors);
    for i in 0..cur.n_particles() {
        s.x[i] = 2.0 * cur.x[i] - prev.x[i];
        s.xdot[i] = 2.0 * cur.xdot[i] - prev.xdot[i];
    }
    s
}

/// Closed-form next level.
///
/// With `W = μ - L(p)` and `X = diag x(p)`, write `X + W⁻¹ = U diag(x(p+1)) U⁻¹`.
/// Then `a_j(p+1) ∝ Σ_i a_i(p) U_ij`, `b_j(p+1) ∝ (U⁻¹ B(p))_j` with
/// reciprocal gauge factors, and `xdot_j(p+1) = -2 (U⁻¹ L(p) U)_jj`.
/// Eigenvalues are assigned to particles by proximity to the one-body step
/// `x_i + 1/(μ + xdot_i/2)`.
pub fn spectral_step(cur: &SpinState, mu: Complex64, anchor: AnchorRule) -> Result<SpinState> {
    cur.check_separation(crate::state::DEFAULT_COLLISION_THRESHOLD)?;
    let anchors = anchors_for(cur, anchor)?;
    spectral_prediction(cur, mu, &anchors)
}

fn spectral_prediction(cur: &SpinState, mu: Complex64, anchors: &[usize]) -> Result<SpinState> {
    let np = cur.n_particles();
    let l = build_l_unchecked(cur);
    let mut w = -l.clone();
    for i in 0..np {
        w[(i, i)] += mu;
    }
    let w_inv = Lu::factor(&w, 1e-13)?.inverse();
    let mut g = w_inv;
    for i in 0..np {
        g[(i, i)] += cur.x[i];
    }
    let (vals, vecs) = eig(&g).ok_or(Error::Singular { pivot: 0, ratio: 0.0 })?;

    let guesses: Vec<Complex64> = (0..np)
        .map(|i| {
            let lead = mu + cur.xdot[i] * 0.5;
            if lead.norm() > 1e-8 {
                cur.x[i] + lead.inv()
            } else {
                cur.x[i] + mu.inv()
            }
        })
        .collect();
    let order = greedy_match(&guesses, &vals);

    let u = CMatrix::from_fn(np, np, |r, c| vecs[(r, order[c])]);
    let u_lu = Lu::factor(&u, 1e-13)?;
    let u_inv = u_lu.inverse();

    let mut next = cur.clone();
    next.level = cur.level + 1;
    next.a = u.transpose() * &cur.a;
    next.b = &u_inv * &cur.b;
    let lt = &u_inv * &l * &u;
    for j in 0..np {
        next.x[j] = vals[order[j]];
        next.xdot[j] = -2.0 * lt[(j, j)];
        let d = next.a[(j, anchors[j])];
        if d.norm() < GAUGE_DEGENERACY {
            return Err(Error::GaugeDegenerate {
                particle: j,
                modulus: d.norm(),
            });
        }
        for g in 0..cur.n_spin() {
            next.a[(j, g)] /= d;
            next.b[(j, g)] *= d;
        }
    }
    Ok(next)
}

/// Assign each guess a distinct target, closest pairs first.
fn greedy_match(guesses: &[Complex64], targets: &[Complex64]) -> Vec<usize> {
    let n = guesses.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, g) in guesses.iter().enumerate() {
        for (k, t) in targets.iter().enumerate() {
            pairs.push(((g - t).norm(), i, k));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut order = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, i, k) in pairs {
        if order[i] == usize::MAX && !used[k] {
            order[i] = k;
            used[k] = true;
        }
    }
    order
}

/// A solved level and its Newton record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: SpinState,
    pub meta: StepMeta,
}

/// Predicted next level and the predictor actually used.
pub fn predict(
    s_prev: Option<&SpinState>,
    s_cur: &SpinState,
    params: &ModelParams,
    config: &StepperConfig,
) -> Result<(SpinState, Predictor)> {
    let anchors = anchors_for(s_cur, config.anchor)?;
    Ok(predict_with(s_prev, s_cur, params.mu, config.predictor, &anchors))
}

fn predict_with(
    s_prev: Option<&SpinState>,
    cur: &SpinState,
    mu: Complex64,
    predictor: Predictor,
    anchors: &[usize],
) -> (SpinState, Predictor) {
    match (predictor, s_prev) {
        (Predictor::Spectral, _) => match spectral_prediction(cur, mu, anchors) {
            Ok(s) if s.x.iter().chain(&s.xdot).all(|z| z.re.is_finite() && z.im.is_finite()) => {
                (s, Predictor::Spectral)
            }
            _ => (shift_prediction(cur, mu, anchors), Predictor::ShiftByInverseMu),
        },
        (Predictor::LinearExtrapolation, Some(prev)) if prev.level + 1 == cur.level => {
            (extrapolation(prev, cur, anchors), Predictor::LinearExtrapolation)
        }
        _ => (shift_prediction(cur, mu, anchors), Predictor::ShiftByInverseMu),
    }
}

fn collides(cand: &SpinState, cur: &SpinState, threshold: f64) -> bool {
    cand.check_separation(threshold).is_err() || check_cross_separation(cand, cur, threshold).is_err()
}

/// Advance one level by Newton iteration from the configured predictor.
pub fn solve_next(s_cur: &SpinState, params: &ModelParams, config: &StepperConfig) -> Result<StepOutcome> {
    solve_next_from(None, s_cur, params, config)
}

/// As [`solve_next`], with the previous level available for extrapolation.
pub fn solve_next_from(
    s_prev: Option<&SpinState>,
    s_cur: &SpinState,
    params: &ModelParams,
    config: &StepperConfig,
) -> Result<StepOutcome> {
    config.validate()?;
    s_cur.check_dims(params)?;
    s_cur.check_separation(params.collision_threshold)?;
    let anchors = anchors_for(s_cur, config.anchor)?;
    let mu = params.mu;
    let thr = params.collision_threshold;
    let scale = residual_scale(s_cur, mu);
    let target = config.newton_tol * scale;

    let (mut cand, used) = predict_with(s_prev, s_cur, mu, config.predictor, &anchors);
    if collides(&cand, s_cur, thr) {
        // e.g. the predictor put a particle on top of an old position
        return Err(check_cross_separation(&cand, s_cur, thr)
            .and_then(|_| cand.check_separation(thr))
            .unwrap_err());
    }
    let mut u = pack(&cand);
    let nunk = u.len();
    let mut r = residual_raw(&cand, s_cur, mu, &anchors);
    let mut best = r.sup_norm();
    let mut trial = cand.clone();

    for iter in 0..=config.max_iters {
        let rn = r.sup_norm();
        best = best.min(rn);
        if rn <= target {
            return Ok(StepOutcome {
                state: cand,
                meta: StepMeta {
                    iterations: iter,
                    residual: rn,
                    predictor: used,
                },
            });
        }
        if iter == config.max_iters || !rn.is_finite() {
            break;
        }

        // forward-difference Jacobian; the residual is holomorphic, so one
        // real perturbation per unknown yields the complex derivative
        let r0 = r.flatten();
        let mut jac = CMatrix::zeros(nunk, nunk);
        for k in 0..nunk {
            let h = config.fd_step * u[k].norm().max(1.0);
            let saved = u[k];
            u[k] = saved + h;
            unpack_into(&u, &mut trial);
            let rk = residual_raw(&trial, s_cur, mu, &anchors).flatten();
            for (row, (p, q)) in rk.iter().zip(&r0).enumerate() {
                jac[(row, k)] = (p - q) / h;
            }
            u[k] = saved;
        }
        let lu = Lu::factor(&jac, JACOBIAN_PIVOT_TOL)?;
        let neg: Vec<Complex64> = r0.iter().map(|v| -v).collect();
        let delta = lu.solve_vec(&neg);

        // backtracking on the 2-norm, never stepping into a collision
        let r_l2 = r.l2_norm();
        let mut t = 1.0;
        let mut accepted = None;
        while t >= 1.0 / 1024.0 {
            let un: Vec<Complex64> = u.iter().zip(&delta).map(|(a, d)| a + d * t).collect();
            unpack_into(&un, &mut trial);
            if !collides(&trial, s_cur, thr) {
                let rt = residual_raw(&trial, s_cur, mu, &anchors);
                let decrease = rt.l2_norm() < (1.0 - 1e-4 * t) * r_l2;
                if decrease || t <= 1.0 / 1024.0 {
                    accepted = Some((un, rt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((un, rt)) = accepted else {
            return Err(check_cross_separation(&trial, s_cur, thr)
                .and_then(|_| trial.check_separation(thr))
                .err()
                .unwrap_or(Error::NewtonDiverged {
                    iterations: iter + 1,
                    best_residual: best,
                }));
        };
        u = un;
        unpack_into(&u, &mut cand);
        r = rt;
    }
    Err(Error::NewtonDiverged {
        iterations: config.max_iters,
        best_residual: best,
    })
}

/// A run stopped early; the levels produced so far are kept.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub partial: Trajectory,
    pub error: Error,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run stopped after {} levels: {}", self.partial.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Iterate [`solve_next`] `steps` times from `s0`.
///
/// After each step the velocity recovered from the contracted level equation
/// must agree with the Newton velocity to `config.velocity_tol`.
pub fn run(
    s0: &SpinState,
    steps: usize,
    params: &ModelParams,
    config: &StepperConfig,
) -> std::result::Result<Trajectory, Box<RunFailure>> {
    let fail = |states: Vec<SpinState>, meta: Vec<StepMeta>, error: Error| {
        Box::new(RunFailure {
            partial: Trajectory {
                params: *params,
                states,
                steps: meta,
            },
            error,
        })
    };
    if let Err(e) = config.validate() {
        return Err(fail(Vec::new(), Vec::new(), e));
    }
    let check = validate_state(s0, params, INITIAL_CONSTRAINT_TOL);
    match check {
        Err(e) => return Err(fail(Vec::new(), Vec::new(), e)),
        Ok(report) if !report.all_pass() => {
            let e = match report.get("separation") {
                Some(sep) if !sep.pass => s0.check_separation(params.collision_threshold).unwrap_err(),
                _ => Error::InvalidParams(format!(
                    "initial state violates b_i·a_i = 1 (defect {:e})",
                    s0.constraint_defect()
                )),
            };
            return Err(fail(Vec::new(), Vec::new(), e));
        }
        Ok(_) => {}
    }

    let mut states = Vec::with_capacity(steps + 1);
    let mut meta = Vec::with_capacity(steps);
    states.push(s0.clone());
    for _ in 0..steps {
        let cur = states.last().unwrap();
        let prev = states.len().checked_sub(2).map(|k| &states[k]);
        let out = match solve_next_from(prev, cur, params, config) {
            Ok(o) => o,
            Err(e) => return Err(fail(states, meta, e)),
        };
        let v = velocity_unchecked(cur, &out.state, params.mu);
        let mismatch = v
            .iter()
            .zip(&out.state.xdot)
            .map(|(a, b)| (a - b).norm() / b.norm().max(1.0))
            .fold(0.0, f64::max);
        if !(mismatch <= config.velocity_tol) {
            let level = out.state.level;
            return Err(fail(states, meta, Error::VelocityMismatch { level, mismatch }));
        }
        states.push(out.state);
        meta.push(out.meta);
    }
    Ok(Trajectory {
        params: *params,
        states,
        steps: meta,
    })
}
