use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("particles {i} and {j} collide at level {level} (|x_i - x_j| = {distance:e})")]
    Collision {
        level: i64,
        i: usize,
        j: usize,
        distance: f64,
    },

    #[error(
        "particle {i} at level {upper} collides with particle {j} at level {lower} \
         (distance {distance:e})"
    )]
    CrossLevelCollision {
        upper: i64,
        lower: i64,
        i: usize,
        j: usize,
        distance: f64,
    },

    #[error("collision during RK4 stage {stage}: {source}")]
    StageCollision {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("gauge anchor of particle {particle} is degenerate (|a| = {modulus:e})")]
    GaugeDegenerate { particle: usize, modulus: f64 },

    #[error("matrix is numerically singular (pivot {pivot} ratio {ratio:e})")]
    Singular { pivot: usize, ratio: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NewtonDiverged { iterations: usize, best_residual: f64 },

    #[error("solver velocity disagrees with contracted level equation at level {level} (relative {mismatch:e})")]
    VelocityMismatch { level: i64, mismatch: f64 },

    #[error("spectral parameter z = {z} is too close to the spectrum of L")]
    NearSpectrum { z: Complex64 },

    #[error("sample point x = {x} lies within {distance:e} of a pole")]
    PoleProximity { x: Complex64, distance: f64 },

    #[error("trajectory has {found} levels, at least {needed} required")]
    InsufficientLevels { needed: usize, found: usize },

    #[error("operation requires a spinless system (N = 1), got N = {0}")]
    NotSpinless(usize),

    #[error("could not draw a valid random instance after {0} attempts")]
    ResampleExhausted(usize),

    #[error("parse error: {0}")]
    Parse(String),
}
