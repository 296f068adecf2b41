//! Continuum limit of the discrete map.
//!
//! With `ε > 0`, `λ = ±i√(2ε)` and `μ = 1/λ`, positions of the discrete
//! trajectory behave as `x_i(p) ≈ λp + y_i(pε)`, where `y` follows the
//! continuous second flow from the same initial data (`x(0) = y(0)`,
//! `xdot(0) = ẏ(0)`, same spins). The study measures
//! `max_{p,i} |x_i(p) - λp - y_i(pε)|` over a fixed horizon for several `ε`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuous::{integrate_t2, ContinuousState};
use crate::discrete::{run, StepperConfig};
use crate::error::{Error, Result};
use crate::state::ModelParams;

/// Deviations at or below this count as exact agreement.
pub const EXACT_TOL: f64 = 1e-12;

/// Required log-log slope of deviation against `ε`.
pub const MIN_SLOPE: f64 = 0.5;

/// Sign of `λ = ±i√(2ε)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    #[default]
    Plus,
    Minus,
}

impl Branch {
    pub fn lambda(self, eps: f64) -> Complex64 {
        let v = (2.0 * eps).sqrt();
        match self {
            Branch::Plus => Complex64::new(0.0, v),
            Branch::Minus => Complex64::new(0.0, -v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSpec {
    pub initial: ContinuousState,
    /// Positive, distinct step sizes.
    pub eps: Vec<f64>,
    /// Horizon `T`; each run takes `round(T/ε)` steps.
    pub horizon: f64,
    pub branch: Branch,
    /// RK4 substeps per discrete step for the reference flow.
    pub rk4_substeps: usize,
    pub stepper: StepperConfig,
}

impl ConvergenceSpec {
    pub fn new(initial: ContinuousState, eps: Vec<f64>, horizon: f64, branch: Branch) -> Self {
        Self {
            initial,
            eps,
            horizon,
            branch,
            rk4_substeps: 10,
            stepper: StepperConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::InvalidParams("at least one epsilon is required".into()));
        }
        for (k, &e) in self.eps.iter().enumerate() {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::InvalidParams(format!("epsilon must be positive, got {e}")));
            }
            if self.eps[..k].contains(&e) {
                return Err(Error::InvalidParams(format!("epsilon {e} repeated")));
            }
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParams(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.rk4_substeps == 0 {
            return Err(Error::InvalidParams("rk4_substeps must be at least 1".into()));
        }
        let n = self.initial.n_particles();
        if n == 0 || self.initial.ydot.len() != n || self.initial.a.nrows() != n || self.initial.b.nrows() != n {
            return Err(Error::InvalidParams("inconsistent continuous initial data".into()));
        }
        Ok(())
    }

    fn steps_for(&self, eps: f64) -> usize {
        (self.horizon / eps).round().max(1.0) as usize
    }
}

/// Outcome for one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRun {
    pub eps: f64,
    pub steps: usize,
    pub lambda: [f64; 2],
    /// `None` if either flow failed.
    pub deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub branch: Branch,
    pub horizon: f64,
    /// Sorted by decreasing `ε`.
    pub runs: Vec<EpsilonRun>,
    /// Least-squares slope of `ln deviation` against `ln ε`.
    pub slope: Option<f64>,
    /// Deviations strictly decrease as `ε` decreases.
    pub monotone: bool,
    /// Every deviation is at or below [`EXACT_TOL`].
    pub exact: bool,
    pub pass: bool,
}

impl ConvergenceStudy {
    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(|r| r.deviation.is_none())
    }
}

/// Largest distance between the shifted discrete positions and the
/// continuous flow at matching times, for one `ε`.
pub fn deviation(spec: &ConvergenceSpec, eps: f64) -> Result<f64> {
    let lambda = spec.branch.lambda(eps);
    let steps = spec.steps_for(eps);
    let s0 = spec.initial.to_spin(0);
    let params = ModelParams::new(s0.n_particles(), s0.n_spin(), lambda.inv())?;
    let discrete = run(&s0, steps, &params, &spec.stepper).map_err(|f| f.error)?;

    let sub = spec.rk4_substeps;
    let mut start = spec.initial.clone();
    start.t = 0.0;
    let continuous = integrate_t2(&start, steps as f64 * eps, steps * sub)?;

    let mut worst: f64 = 0.0;
    for (p, level) in discrete.states.iter().enumerate() {
        let y = &continuous[p * sub].y;
        let shift = lambda * p as f64;
        for (x, yi) in level.x.iter().zip(y) {
            worst = worst.max((x - shift - yi).norm());
        }
    }
    Ok(worst)
}

fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(_, d)| !(d > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Run every `ε`; failures are recorded per run and the study continues.
///
/// The study passes when all deviations are exact, or when they decrease
/// monotonically with `ε` and the fitted slope is at least [`MIN_SLOPE`].
pub fn run_study(spec: &ConvergenceSpec) -> Result<ConvergenceStudy> {
    spec.validate()?;
    let mut eps = spec.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let runs: Vec<EpsilonRun> = eps
        .iter()
        .map(|&e| {
            let lambda = spec.branch.lambda(e);
            let (deviation, error) = match deviation(spec, e) {
                Ok(d) => (Some(d), None),
                Err(err) => (None, Some(err.to_string())),
            };
            EpsilonRun {
                eps: e,
                steps: spec.steps_for(e),
                lambda: [lambda.re, lambda.im],
                deviation,
                error,
            }
        })
        .collect();

    let ok: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.deviation.map(|d| (r.eps, d))).collect();
    let all_ok = ok.len() == runs.len();
    let exact = all_ok && ok.iter().all(|&(_, d)| d <= EXACT_TOL);
    let monotone = all_ok && ok.windows(2).all(|w| w[1].1 < w[0].1);
    let slope = fit_slope(&ok);
    let pass = exact || (monotone && slope.is_some_and(|s| s >= MIN_SLOPE));
    Ok(ConvergenceStudy {
        branch: spec.branch,
        horizon: spec.horizon,
        runs,
        slope,
        monotone,
        exact,
        pass,
    })
}
