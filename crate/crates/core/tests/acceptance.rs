//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::process::ExitCode;

use spincm::continuous::{integrate_t2, ContinuousState};
use spincm::convergence::{run_study, Branch, ConvergenceSpec, EXACT_TOL, MIN_SLOPE};
use spincm::discrete::{run, StepperConfig};
use spincm::lax::{build_l, invariant_drift, lax_residual};
use spincm::linalg::CMatrix;
use spincm::state::{quadrilinear, random_instance, ModelParams, SpinState, Trajectory};
use spincm::verify::{
    check_eom_identities, check_residue_identity, check_spinless_reduction, verify_trajectory, Tolerances,
    VerifyOptions,
};
use spincm::Complex64;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MU: Complex64 = Complex64::new(3.0, 1.0);
const SIZES: [(usize, usize); 3] = [(2, 1), (3, 2), (4, 3)];
const SEEDS: [u64; 2] = [1, 2];
const STEPS: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn runs() -> Result<Vec<Trajectory>, String> {
    let mut out = Vec::new();
    for (np, n) in SIZES {
        for seed in SEEDS {
            let p = ModelParams::new(np, n, MU).map_err(|e| e.to_string())?;
            let s = random_instance(&p, seed, 1.0).map_err(|e| e.to_string())?;
            let t =
                run(&s, STEPS, &p, &StepperConfig::default()).map_err(|f| format!("({np},{n}) seed {seed}: {f}"))?;
            out.push(t);
        }
    }
    Ok(out)
}

fn worst<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter()
        .fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

fn lax_worst(t: &Trajectory) -> f64 {
    worst(
        t.states
            .windows(2)
            .map(|w| lax_residual(&w[0], &w[1]).unwrap_or(f64::INFINITY)),
    )
}

fn criterion_lax(trajs: &[Trajectory]) -> Outcome {
    let tol = 1e-9;
    let r = worst(trajs.iter().map(lax_worst));
    outcome(
        r <= tol,
        format!("discrete Lax equation, worst relative residual {r:.2e} (tol {tol:.0e})"),
    )
}

fn criterion_isospectral(trajs: &[Trajectory]) -> Outcome {
    let tol = 1e-8;
    let r = worst(trajs.iter().map(|t| {
        let l0 = build_l(&t.states[0]).unwrap();
        worst(
            t.states
                .iter()
                .map(|s| invariant_drift(&l0, &build_l(s).unwrap(), t.params.n_particles)),
        )
    }));
    outcome(
        r <= tol,
        format!("tr L^k, k = 1..Np conserved, worst relative drift {r:.2e} (tol {tol:.0e})"),
    )
}

fn criterion_constraint(trajs: &[Trajectory]) -> Outcome {
    let tol = 1e-10;
    let r = worst(
        trajs
            .iter()
            .flat_map(|t| t.states.iter().map(|s| s.constraint_defect())),
    );
    outcome(
        r <= tol,
        format!("max |b_i.a_i - 1| over all levels {r:.2e} (tol {tol:.0e})"),
    )
}

fn eom_worst(t: &Trajectory) -> (f64, f64, f64) {
    let rep = check_eom_identities(t, &Tolerances::default()).unwrap();
    let get = |k: &str| rep.residual(k).unwrap_or(f64::INFINITY);
    (
        get("discrete_eom"),
        get("velocity_two_sided"),
        get("three_level_backward").max(get("three_level_forward")),
    )
}

fn criterion_eom(trajs: &[Trajectory]) -> Outcome {
    let (mut e, mut v, mut t3) = (0.0f64, 0.0f64, 0.0f64);
    for t in trajs {
        let (a, b, c) = eom_worst(t);
        e = e.max(a);
        v = v.max(b);
        t3 = t3.max(c);
    }
    let pass = e <= 1e-9 && v <= 1e-9 && t3 <= 1e-7;
    outcome(
        pass,
        format!("position equation {e:.2e} (tol 1e-9), two-sided velocity {v:.2e} (tol 1e-9), three-level identities {t3:.2e} (tol 1e-7)"),
    )
}

fn criterion_spinless() -> Outcome {
    let mut eom: f64 = 0.0;
    let mut quad_dev: f64 = 0.0;
    for np in [2, 3, 4] {
        let p = ModelParams::new(np, 1, MU).unwrap();
        let s = random_instance(&p, 7, 1.0).unwrap();
        let t = match run(&s, 30, &p, &StepperConfig::default()) {
            Ok(t) => t,
            Err(f) => return outcome(false, format!("spinless run Np = {np} failed: {f}")),
        };
        let rep = check_spinless_reduction(&t, &Tolerances::default()).unwrap();
        eom = eom.max(rep.residual("spinless_eom").unwrap());
        for w in t.states.windows(2) {
            for (sp, sq) in [(&w[0], &w[0]), (&w[0], &w[1]), (&w[1], &w[0])] {
                for i in 0..np {
                    for j in 0..np {
                        quad_dev = quad_dev.max((quadrilinear(sp, sq, i, j).unwrap() - 1.0).norm());
                    }
                }
            }
        }
    }
    outcome(
        eom <= 1e-9 && quad_dev <= 1e-12,
        format!("N = 1 position-only equation {eom:.2e} (tol 1e-9), quadrilinear factors |Q - 1| {quad_dev:.2e} (tol 1e-12)"),
    )
}

fn criterion_wavefunctions(trajs: &[Trajectory]) -> Outcome {
    let tol = Tolerances::default();
    let opts = VerifyOptions::default();
    let mut names = std::collections::BTreeMap::<&str, f64>::new();
    let keys = [
        "resolvent_c",
        "resolvent_cstar",
        "c_recursion",
        "cstar_recursion",
        "linear_problem",
        "adjoint_linear_problem",
    ];
    for t in trajs {
        let rep = match verify_trajectory(t, &opts) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("suite error: {e}")),
        };
        for k in keys {
            let v = rep.residual(k).unwrap_or(f64::INFINITY);
            let e = names.entry(k).or_insert(0.0);
            *e = e.max(v);
        }
    }
    // both orders on random valid states, flow-moved states and every computed level
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut states: Vec<SpinState> = Vec::new();
    let mut flowed = 0;
    for (np, n) in SIZES {
        let p = ModelParams::new(np, n, MU).unwrap();
        for seed in 0..5 {
            let s = random_instance(&p, 100 + seed, 1.0).unwrap();
            // a short, finely resolved stretch of the continuous flow
            if let Ok(path) = integrate_t2(&ContinuousState::from_spin(&s, 0.0), 0.01, 100) {
                let moved = path.last().unwrap().to_spin(0);
                if moved.constraint_defect() <= tol.constraint {
                    flowed += 1;
                    states.push(moved);
                }
            }
            states.push(s);
        }
    }
    states.extend(trajs.iter().flat_map(|t| t.states.iter().cloned()));
    let mut m1: f64 = 0.0;
    let mut m2: f64 = 0.0;
    for s in &states {
        for _ in 0..3 {
            let x = s.x[0] + c(rng.gen_range(-2.0..2.0), rng.gen_range(1.2..2.0));
            let r = |m: usize, key: &str| {
                check_residue_identity(s, m, x, &tol)
                    .map_or(f64::INFINITY, |r| r.residual(key).unwrap_or(f64::INFINITY))
            };
            m1 = m1.max(r(1, "residue_identity_m1"));
            m2 = m2.max(r(2, "residue_identity_m2"));
        }
    }
    let res = names["resolvent_c"].max(names["resolvent_cstar"]);
    let rec = names["c_recursion"].max(names["cstar_recursion"]);
    let lin = names["linear_problem"].max(names["adjoint_linear_problem"]);
    let pass = res <= tol.resolvent
        && rec <= tol.recursion
        && lin <= tol.linear_problem
        && m1 <= tol.residue_m1
        && m2 <= tol.residue_m2
        && flowed >= 8;
    outcome(
        pass,
        format!(
            "resolvent {res:.2e} (tol 1e-12), recursions {rec:.2e} (tol 1e-8), linear problems {lin:.2e} (tol 1e-8), residue m=1 {m1:.2e} (tol 1e-9), m=2 {m2:.2e} (tol 1e-8) over {} states, {flowed} flow-moved", states.len()
        ),
    )
}

fn resting_pair(n_spin: usize) -> ContinuousState {
    let (a, b) = if n_spin == 1 {
        (
            CMatrix::from_element(2, 1, c(1.0, 0.0)),
            CMatrix::from_element(2, 1, c(1.0, 0.0)),
        )
    } else {
        (
            CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.3, 0.0), c(1.0, 0.0)]),
            CMatrix::from_row_slice(2, 2, &[c(0.6, 0.0), c(0.8, 0.0), c(0.2, 0.0), c(0.94, 0.0)]),
        )
    };
    ContinuousState {
        t: 0.0,
        y: vec![c(-1.0, 0.0), c(1.0, 0.0)],
        ydot: vec![c(0.0, 0.0); 2],
        a,
        b,
    }
}

fn criterion_continuum() -> Outcome {
    let eps = vec![1e-2, 5e-3, 2.5e-3];
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [1, 2] {
        for branch in [Branch::Plus, Branch::Minus] {
            let study = run_study(&ConvergenceSpec::new(resting_pair(n), eps.clone(), 0.25, branch)).unwrap();
            let ok = study.monotone && study.slope.is_some_and(|s| s >= MIN_SLOPE);
            pass &= ok;
            let devs: Vec<String> = study
                .runs
                .iter()
                .map(|r| format!("{:.2e}", r.deviation.unwrap_or(f64::NAN)))
                .collect();
            parts.push(format!(
                "N={n} {branch:?}: [{}] slope {:.3}",
                devs.join(", "),
                study.slope.unwrap_or(f64::NAN)
            ));
        }
    }
    let single = ContinuousState {
        t: 0.0,
        y: vec![c(0.4, -0.2)],
        ydot: vec![c(0.0, 0.0)],
        a: CMatrix::from_element(1, 1, c(1.0, 0.0)),
        b: CMatrix::from_element(1, 1, c(1.0, 0.0)),
    };
    let study = run_study(&ConvergenceSpec::new(single, eps, 0.25, Branch::Plus)).unwrap();
    let d1 = worst(study.runs.iter().map(|r| r.deviation.unwrap_or(f64::INFINITY)));
    pass &= d1 <= EXACT_TOL;
    parts.push(format!("Np=1 worst {d1:.1e} (tol 1e-12)"));
    outcome(pass, format!("continuum limit (slope >= 0.5): {}", parts.join("; ")))
}

fn criterion_free_particle() -> Outcome {
    let mu = c(2.0, -0.7);
    let v = c(0.6, 0.25);
    let x0 = c(-0.3, 0.1);
    let p = ModelParams::new(1, 1, mu).unwrap();
    let s = SpinState::new(
        0,
        vec![x0],
        CMatrix::from_element(1, 1, c(1.0, 0.0)),
        CMatrix::from_element(1, 1, c(1.0, 0.0)),
        vec![v],
    )
    .unwrap();
    let t = match run(&s, 100, &p, &StepperConfig::default()) {
        Ok(t) => t,
        Err(f) => return outcome(false, format!("run failed: {f}")),
    };
    let step = (v * 0.5 + mu).inv();
    let dx = worst(
        t.states
            .iter()
            .enumerate()
            .map(|(k, st)| (st.x[0] - (x0 + step * k as f64)).norm()),
    );
    let dv = worst(t.states.iter().map(|st| (st.xdot[0] - v).norm()));
    outcome(
        dx <= 1e-12 && dv <= 1e-12,
        format!("100 steps, position error {dx:.2e}, velocity drift {dv:.2e} (tol 1e-12)"),
    )
}

fn corrupt(s: &mut SpinState, rng: &mut ChaCha8Rng) {
    let mut bump = |z: &mut Complex64| {
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        *z *= Complex64::new(1.0, 0.0) + Complex64::from_polar(1e-3, th);
    };
    s.x.iter_mut().for_each(&mut bump);
    s.xdot.iter_mut().for_each(&mut bump);
    s.a.iter_mut().for_each(&mut bump);
    s.b.iter_mut().for_each(&mut bump);
}

fn criterion_sensitivity(trajs: &[Trajectory]) -> Outcome {
    // margin = smallest ratio residual / tolerance over every corrupted level
    let mut lax_margin = f64::INFINITY;
    let mut eom_margin = f64::INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for t in trajs.iter().filter(|t| t.params.n_particles == 3) {
        for k in 0..t.len() {
            let mut bad = t.clone();
            corrupt(&mut bad.states[k], &mut rng);
            lax_margin = lax_margin.min(lax_worst(&bad) / 1e-9);
            let e = check_eom_identities(&bad, &Tolerances::default())
                .ok()
                .and_then(|r| r.residual("discrete_eom"))
                .unwrap_or(f64::INFINITY);
            eom_margin = eom_margin.min(e / 1e-9);
        }
    }
    outcome(
        lax_margin >= 1e3 && eom_margin >= 1e3,
        format!(
            "1e-3 corruption of each level: Lax residual >= {lax_margin:.1e} x tol, position equation >= {eom_margin:.1e} x tol (need 1e3)"
        ),
    )
}

fn main() -> ExitCode {
    let trajs = match runs() {
        Ok(t) => Some(t),
        Err(e) => {
            println!("stepper failed on an acceptance instance: {e}");
            None
        }
    };
    let failed_runs = || outcome(false, "stepper runs did not complete");
    let results: Vec<(u32, Outcome)> = vec![
        (1, trajs.as_deref().map_or_else(failed_runs, criterion_lax)),
        (2, trajs.as_deref().map_or_else(failed_runs, criterion_isospectral)),
        (3, trajs.as_deref().map_or_else(failed_runs, criterion_constraint)),
        (4, trajs.as_deref().map_or_else(failed_runs, criterion_eom)),
        (5, criterion_spinless()),
        (6, trajs.as_deref().map_or_else(failed_runs, criterion_wavefunctions)),
        (7, criterion_continuum()),
        (8, criterion_free_particle()),
        (9, trajs.as_deref().map_or_else(failed_runs, criterion_sensitivity)),
    ];
    let mut all = true;
    for (k, o) in &results {
        all &= o.pass;
        println!("[{}] criterion {k}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if all {
        println!("acceptance: all {} criteria pass", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
