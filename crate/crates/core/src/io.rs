//! JSON instance and trajectory files.
//!
//! Complex numbers are `[re, im]` pairs. An instance is
//!
//! ```json
//! {"Np": 1, "N": 1, "mu": [3.0, 1.0],
//!  "particles": [{"x": [0, 0], "xdot": [0, 0], "a": [[1, 0]], "b": [[1, 0]]}]}
//! ```
//!
//! and a trajectory carries the same header plus `"levels"` (each with its
//! level index `p` and particle list) and optional per-step Newton metadata.
//! Parsers never panic on malformed input.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::report::VerificationReport;
use crate::state::{ModelParams, SpinState, StepMeta, Trajectory, DEFAULT_COLLISION_THRESHOLD};

/// Level indices beyond this magnitude are rejected.
pub const MAX_LEVEL: i64 = 1 << 53;

type Pair = [f64; 2];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticleRepr {
    x: Pair,
    xdot: Pair,
    a: Vec<Pair>,
    b: Vec<Pair>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRepr {
    #[serde(rename = "Np")]
    np: usize,
    #[serde(rename = "N")]
    n: usize,
    mu: Pair,
    particles: Vec<ParticleRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelRepr {
    p: i64,
    particles: Vec<ParticleRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRepr {
    #[serde(rename = "Np")]
    np: usize,
    #[serde(rename = "N")]
    n: usize,
    mu: Pair,
    #[serde(default = "default_threshold")]
    collision_threshold: f64,
    levels: Vec<LevelRepr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    steps: Vec<StepMeta>,
}

fn default_threshold() -> f64 {
    DEFAULT_COLLISION_THRESHOLD
}

/// Parameters and initial level read from an instance file.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub params: ModelParams,
    pub state: SpinState,
}

fn complex(p: Pair, what: &str) -> Result<Complex64> {
    if p[0].is_finite() && p[1].is_finite() {
        Ok(Complex64::new(p[0], p[1]))
    } else {
        Err(Error::Parse(format!("{what} is not finite")))
    }
}

fn pair(z: Complex64) -> Pair {
    [z.re, z.im]
}

fn params_from(np: usize, n: usize, mu: Pair) -> Result<ModelParams> {
    ModelParams::new(np, n, complex(mu, "mu")?).map_err(|e| Error::Parse(e.to_string()))
}

fn state_from(level: i64, particles: &[ParticleRepr], np: usize, n: usize) -> Result<SpinState> {
    if particles.len() != np {
        return Err(Error::Parse(format!(
            "level {level}: expected {np} particles, found {}",
            particles.len()
        )));
    }
    let mut x = Vec::with_capacity(np);
    let mut xdot = Vec::with_capacity(np);
    let mut a = CMatrix::zeros(np, n);
    let mut b = CMatrix::zeros(np, n);
    for (i, part) in particles.iter().enumerate() {
        x.push(complex(part.x, "x")?);
        xdot.push(complex(part.xdot, "xdot")?);
        for (name, src, dst) in [("a", &part.a, &mut a), ("b", &part.b, &mut b)] {
            if src.len() != n {
                return Err(Error::Parse(format!(
                    "level {level}, particle {i}: {name} has {} components, expected {n}",
                    src.len()
                )));
            }
            for (g, v) in src.iter().enumerate() {
                dst[(i, g)] = complex(*v, name)?;
            }
        }
    }
    SpinState::new(level, x, a, b, xdot)
}

fn particles_of(s: &SpinState) -> Vec<ParticleRepr> {
    (0..s.n_particles())
        .map(|i| ParticleRepr {
            x: pair(s.x[i]),
            xdot: pair(s.xdot[i]),
            a: s.a.row(i).iter().map(|z| pair(*z)).collect(),
            b: s.b.row(i).iter().map(|z| pair(*z)).collect(),
        })
        .collect()
}

/// Parse an instance file. Dimensions must agree with the header; the
/// initial level is 0. Physical validity (separation, constraint) is left to
/// the caller.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let repr: InstanceRepr = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let params = params_from(repr.np, repr.n, repr.mu)?;
    let state = state_from(0, &repr.particles, repr.np, repr.n)?;
    Ok(Instance { params, state })
}

pub fn instance_to_json(params: &ModelParams, state: &SpinState) -> String {
    let repr = InstanceRepr {
        np: params.n_particles,
        n: params.n_spin,
        mu: pair(params.mu),
        particles: particles_of(state),
    };
    serde_json::to_string_pretty(&repr).expect("instance serialization cannot fail")
}

/// Parse a trajectory file; levels must be consecutive and collision free.
pub fn parse_trajectory(text: &str) -> Result<Trajectory> {
    let repr: TrajectoryRepr = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let params = params_from(repr.np, repr.n, repr.mu)?
        .with_collision_threshold(repr.collision_threshold)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let mut states = Vec::with_capacity(repr.levels.len());
    for lv in &repr.levels {
        if lv.p.abs() > MAX_LEVEL {
            return Err(Error::Parse(format!("level index {} out of range", lv.p)));
        }
        states.push(state_from(lv.p, &lv.particles, repr.np, repr.n)?);
    }
    for m in &repr.steps {
        if !m.residual.is_finite() {
            return Err(Error::Parse("step residual is not finite".into()));
        }
    }
    Trajectory::new(params, states, repr.steps)
}

/// Pretty JSON carrying every component at full double precision.
pub fn trajectory_to_json(traj: &Trajectory) -> String {
    let repr = TrajectoryRepr {
        np: traj.params.n_particles,
        n: traj.params.n_spin,
        mu: pair(traj.params.mu),
        collision_threshold: traj.params.collision_threshold,
        levels: traj
            .states
            .iter()
            .map(|s| LevelRepr {
                p: s.level,
                particles: particles_of(s),
            })
            .collect(),
        steps: traj.steps.clone(),
    };
    serde_json::to_string_pretty(&repr).expect("trajectory serialization cannot fail")
}

pub fn parse_report(text: &str) -> Result<VerificationReport> {
    VerificationReport::from_json(text)
}
