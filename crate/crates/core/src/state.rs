//! Particle/spin state at one discrete level, model parameters, gauge
//! normalization and instance construction.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discrete::Predictor;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::report::VerificationReport;

pub const DEFAULT_COLLISION_THRESHOLD: f64 = 1e-10;

/// Anchors below this modulus cannot be normalized.
pub const GAUGE_DEGENERACY: f64 = 1e-12;

const MIN_RAW_PAIRING: f64 = 1e-8;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Number of particles.
    pub n_particles: usize,
    /// Number of spin components.
    pub n_spin: usize,
    /// Discrete-flow parameter; the leading-order step is `1/mu`.
    pub mu: Complex64,
    pub collision_threshold: f64,
}

impl ModelParams {
    pub fn new(n_particles: usize, n_spin: usize, mu: Complex64) -> Result<Self> {
        if n_particles == 0 || n_spin == 0 {
            return Err(Error::InvalidParams(format!(
                "need Np >= 1 and N >= 1, got Np = {n_particles}, N = {n_spin}"
            )));
        }
        if !(mu.norm() > 0.0) || !mu.re.is_finite() || !mu.im.is_finite() {
            return Err(Error::InvalidParams(format!("mu must be finite and nonzero, got {mu}")));
        }
        Ok(Self {
            n_particles,
            n_spin,
            mu,
            collision_threshold: DEFAULT_COLLISION_THRESHOLD,
        })
    }

    pub fn with_collision_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "collision threshold must be nonnegative, got {threshold}"
            )));
        }
        self.collision_threshold = threshold;
        Ok(self)
    }

    pub fn with_mu(self, mu: Complex64) -> Result<Self> {
        Self::new(self.n_particles, self.n_spin, mu)?.with_collision_threshold(self.collision_threshold)
    }

    /// Complex unknowns of one implicit step: x, a, b and xdot at the new level.
    pub fn step_unknowns(&self) -> usize {
        2 * self.n_particles * self.n_spin + 2 * self.n_particles
    }
}

/// One discrete time level.
///
/// Row `i` of `a` and `b` holds the spin vectors of particle `i`; `xdot` is
/// the particle velocity along the continuous second flow, which enters the
/// diagonal of the Lax matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    pub level: i64,
    pub x: Vec<Complex64>,
    pub a: CMatrix,
    pub b: CMatrix,
    pub xdot: Vec<Complex64>,
}

/// `b_i · a_j` without complex conjugation.
#[inline]
pub fn pairing(b: &CMatrix, i: usize, a: &CMatrix, j: usize) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for g in 0..b.ncols() {
        s += b[(i, g)] * a[(j, g)];
    }
    s
}

impl SpinState {
    pub fn new(level: i64, x: Vec<Complex64>, a: CMatrix, b: CMatrix, xdot: Vec<Complex64>) -> Result<Self> {
        let np = x.len();
        if np == 0 {
            return Err(Error::InvalidParams("state has no particles".into()));
        }
        let n = a.ncols();
        if n == 0 {
            return Err(Error::InvalidParams("spin dimension is zero".into()));
        }
        check_dim("rows of a", np, a.nrows())?;
        check_dim("rows of b", np, b.nrows())?;
        check_dim("columns of b", n, b.ncols())?;
        check_dim("velocities", np, xdot.len())?;
        Ok(Self { level, x, a, b, xdot })
    }

    pub fn n_particles(&self) -> usize {
        self.x.len()
    }

    pub fn n_spin(&self) -> usize {
        self.a.ncols()
    }

    pub fn check_dims(&self, params: &ModelParams) -> Result<()> {
        check_dim("particle count", params.n_particles, self.x.len())?;
        check_dim("rows of a", params.n_particles, self.a.nrows())?;
        check_dim("rows of b", params.n_particles, self.b.nrows())?;
        check_dim("velocities", params.n_particles, self.xdot.len())?;
        check_dim("spin dimension of a", params.n_spin, self.a.ncols())?;
        check_dim("spin dimension of b", params.n_spin, self.b.ncols())
    }

    /// `b_i(self) · a_j(other)`.
    #[inline]
    pub fn b_dot_a(&self, i: usize, other: &SpinState, j: usize) -> Complex64 {
        pairing(&self.b, i, &other.a, j)
    }

    /// Smallest pairwise position distance and the pair attaining it;
    /// `None` for a single particle.
    pub fn min_separation(&self) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..self.x.len() {
            for j in (i + 1)..self.x.len() {
                let d = (self.x[i] - self.x[j]).norm();
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        best
    }

    pub fn check_separation(&self, threshold: f64) -> Result<()> {
        match self.min_separation() {
            Some((d, i, j)) if !(d >= threshold) => Err(Error::Collision {
                level: self.level,
                i,
                j,
                distance: d,
            }),
            _ => Ok(()),
        }
    }

    /// `max_i |b_i · a_i - 1|`.
    pub fn constraint_defect(&self) -> f64 {
        (0..self.n_particles())
            .map(|i| (self.b_dot_a(i, self, i) - 1.0).norm())
            .fold(0.0, f64::max)
    }

    /// Rescale `(a_i, b_i) -> (k_i a_i, b_i / k_i)`.
    pub fn regauge(&self, kappa: &[Complex64]) -> SpinState {
        let mut out = self.clone();
        for (i, k) in kappa.iter().enumerate() {
            for g in 0..self.n_spin() {
                out.a[(i, g)] *= k;
                out.b[(i, g)] /= k;
            }
        }
        out
    }
}

/// Minimum cross-level distance `min |x_i(upper) - x_j(lower)|`.
pub fn check_cross_separation(upper: &SpinState, lower: &SpinState, threshold: f64) -> Result<()> {
    for (i, xi) in upper.x.iter().enumerate() {
        for (j, xj) in lower.x.iter().enumerate() {
            let d = (xi - xj).norm();
            if !(d >= threshold) {
                return Err(Error::CrossLevelCollision {
                    upper: upper.level,
                    lower: lower.level,
                    i,
                    j,
                    distance: d,
                });
            }
        }
    }
    Ok(())
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { what, expected, found })
    } else {
        Ok(())
    }
}

/// Check the normalization constraint and the particle separation.
pub fn validate_state(s: &SpinState, params: &ModelParams, tol: f64) -> Result<VerificationReport> {
    s.check_dims(params)?;
    let mut report = VerificationReport::new();
    report.record("constraint", s.constraint_defect(), tol);
    let sep = s.min_separation().map_or(f64::INFINITY, |(d, _, _)| d);
    report.record_lower("separation", sep, params.collision_threshold);
    Ok(report)
}

/// How the per-particle gauge scale is fixed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRule {
    /// Component of `a_i` with the largest modulus, lowest index on ties.
    #[default]
    LargestModulus,
    /// A fixed component for every particle.
    Component(usize),
}

impl AnchorRule {
    pub fn anchor_index(&self, a: &CMatrix, i: usize) -> usize {
        match *self {
            AnchorRule::Component(k) => k,
            AnchorRule::LargestModulus => {
                let mut best = 0;
                let mut best_mag = -1.0;
                for g in 0..a.ncols() {
                    let m = a[(i, g)].norm();
                    if m > best_mag {
                        best = g;
                        best_mag = m;
                    }
                }
                best
            }
        }
    }

    pub fn anchor_indices(&self, a: &CMatrix) -> Vec<usize> {
        (0..a.nrows()).map(|i| self.anchor_index(a, i)).collect()
    }
}

/// Rescale every particle so that its anchor component of `a_i` equals 1.
pub fn gauge_normalize(s: &SpinState, rule: AnchorRule) -> Result<SpinState> {
    let mut kappa = Vec::with_capacity(s.n_particles());
    for i in 0..s.n_particles() {
        let k = rule.anchor_index(&s.a, i);
        if k >= s.n_spin() {
            return Err(Error::InvalidParams(format!(
                "anchor component {k} out of range for N = {}",
                s.n_spin()
            )));
        }
        let anchor = s.a[(i, k)];
        if anchor.norm() < GAUGE_DEGENERACY {
            return Err(Error::GaugeDegenerate {
                particle: i,
                modulus: anchor.norm(),
            });
        }
        kappa.push(anchor.inv());
    }
    let mut out = s.regauge(&kappa);
    // pin exactly
    for i in 0..s.n_particles() {
        let k = rule.anchor_index(&s.a, i);
        out.a[(i, k)] = Complex64::new(1.0, 0.0);
    }
    Ok(out)
}

/// `(b_i(p) · a_j(q)) (b_j(q) · a_i(p))`, the spin factor dressing every
/// pair interaction.
pub fn quadrilinear(sp: &SpinState, sq: &SpinState, i: usize, j: usize) -> Result<Complex64> {
    check_dim("spin dimension", sp.n_spin(), sq.n_spin())?;
    if i >= sp.n_particles() || j >= sq.n_particles() {
        return Err(Error::InvalidParams(format!("particle index ({i}, {j}) out of range")));
    }
    Ok(quad(sp, sq, i, j))
}

#[inline]
pub(crate) fn quad(sp: &SpinState, sq: &SpinState, i: usize, j: usize) -> Complex64 {
    sp.b_dot_a(i, sq, j) * sq.b_dot_a(j, sp, i)
}

fn unit_disk(rng: &mut ChaCha8Rng, radius: f64) -> Complex64 {
    let r = radius * rng.gen::<f64>().sqrt();
    let th = std::f64::consts::TAU * rng.gen::<f64>();
    Complex64::from_polar(r, th)
}

/// Seeded random level-0 state satisfying the constraint and the
/// separation bound `spread / (10 Np)`.
pub fn random_instance(params: &ModelParams, seed: u64, spread: f64) -> Result<SpinState> {
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::InvalidParams(format!("spread must be positive, got {spread}")));
    }
    let np = params.n_particles;
    let n = params.n_spin;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sep = spread / (10.0 * np as f64);

    let mut x: Vec<Complex64> = Vec::with_capacity(np);
    while x.len() < np {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::ResampleExhausted(MAX_RESAMPLES));
            }
            let cand = unit_disk(&mut rng, spread);
            if x.iter().all(|xj| (cand - xj).norm() >= min_sep) {
                x.push(cand);
                break;
            }
        }
    }

    let mut a = CMatrix::zeros(np, n);
    let mut b = CMatrix::zeros(np, n);
    for i in 0..np {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_RESAMPLES {
                return Err(Error::ResampleExhausted(MAX_RESAMPLES));
            }
            for g in 0..n {
                a[(i, g)] = unit_disk(&mut rng, 1.0);
                b[(i, g)] = unit_disk(&mut rng, 1.0);
            }
            let s = pairing(&b, i, &a, i);
            if s.norm() >= MIN_RAW_PAIRING {
                for g in 0..n {
                    b[(i, g)] /= s;
                }
                break;
            }
        }
    }
    let xdot = (0..np).map(|_| unit_disk(&mut rng, 1.0)).collect();
    SpinState::new(0, x, a, b, xdot)
}

/// Newton bookkeeping for one produced level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    pub iterations: usize,
    pub residual: f64,
    pub predictor: Predictor,
}

/// Consecutive discrete levels produced from one initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: ModelParams,
    pub states: Vec<SpinState>,
    /// One entry per produced step, or empty when loaded without metadata.
    pub steps: Vec<StepMeta>,
}

impl Trajectory {
    pub fn new(params: ModelParams, states: Vec<SpinState>, steps: Vec<StepMeta>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InsufficientLevels { needed: 1, found: 0 });
        }
        let p0 = states[0].level;
        for (k, s) in states.iter().enumerate() {
            s.check_dims(&params)?;
            let expected = i64::try_from(k).ok().and_then(|k| p0.checked_add(k));
            if expected != Some(s.level) {
                return Err(Error::InvalidParams(format!(
                    "levels must be consecutive from {p0}: entry {k} has level {}",
                    s.level
                )));
            }
            s.check_separation(params.collision_threshold)?;
        }
        if !steps.is_empty() && steps.len() + 1 != states.len() {
            return Err(Error::DimensionMismatch {
                what: "step metadata",
                expected: states.len() - 1,
                found: steps.len(),
            });
        }
        Ok(Self { params, states, steps })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}
