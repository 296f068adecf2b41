//! Checks against values computed independently of the library's own
//! formulas: closed-form one-body motion, contour quadrature of the
//! wavefunction product, hand-written position equations, and Newton against
//! the closed-form step.

use std::f64::consts::TAU;

use spincm::discrete::{run, solve_next, spectral_step, Predictor, StepperConfig};
use spincm::linalg::CMatrix;
use spincm::state::{random_instance, AnchorRule, ModelParams, SpinState};
use spincm::verify::{residue_at_infinity, solve_c, solve_cstar};
use spincm::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn single_particle_moves_uniformly() {
    let mu = c(2.0, -0.5);
    let xdot = c(0.4, 0.3);
    let p = ModelParams::new(1, 2, mu).unwrap();
    let a = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.5, 0.2)]);
    let b = CMatrix::from_row_slice(1, 2, &[c(0.6, -0.16), c(0.8, 0.0)]);
    let s = SpinState::new(0, vec![c(0.1, 0.2)], a, b, vec![xdot]).unwrap();
    let t = run(&s, 10, &p, &StepperConfig::default()).unwrap();
    let step = (mu + xdot / 2.0).inv();
    for (k, level) in t.states.iter().enumerate() {
        let expect = c(0.1, 0.2) + step * k as f64;
        assert!((level.x[0] - expect).norm() < 1e-13, "level {k}");
        assert!((level.xdot[0] - xdot).norm() < 1e-13);
        let ratio = level.a[(0, 1)] / level.a[(0, 0)];
        assert!((ratio - c(0.5, 0.2)).norm() < 1e-13);
    }
}

fn product_by_quadrature(s: &SpinState, x: Complex64, m: i32) -> CMatrix {
    let n = s.n_spin();
    let radius = 40.0;
    let nodes = 4000;
    let mut acc = CMatrix::zeros(n, n);
    for k in 0..nodes {
        let z = Complex64::from_polar(radius, TAU * k as f64 / nodes as f64);
        let cz = solve_c(s, z).unwrap();
        let cs = solve_cstar(s, z).unwrap();
        let mut psi = CMatrix::identity(n, n);
        let mut psi_adj = CMatrix::identity(n, n);
        for i in 0..s.n_particles() {
            let d = (x - s.x[i]).inv();
            for al in 0..n {
                for be in 0..n {
                    psi[(al, be)] += s.a[(i, al)] * cz[(i, be)] * d;
                    psi_adj[(al, be)] += cs[(i, al)] * s.b[(i, be)] * d;
                }
            }
        }
        let w = z.powi(m + 1) / nodes as f64;
        acc += (&psi * &psi_adj).map(|v| v * w);
    }
    acc
}

#[test]
fn laurent_coefficients_match_contour_quadrature() {
    for (np, n, seed) in [(2, 2, 3), (3, 1, 5), (3, 2, 7)] {
        let p = ModelParams::new(np, n, c(3.0, 1.0)).unwrap();
        let s = random_instance(&p, seed, 1.0).unwrap();
        let x = c(0.5, 1.6);
        for m in 1..=2 {
            let series = residue_at_infinity(&s, x, m);
            let quad = product_by_quadrature(&s, x, m as i32);
            assert!(
                (&series - &quad).norm() < 1e-9 * series.norm().max(1.0),
                "({np},{n}) m={m}"
            );
        }
    }
}

#[test]
fn spinless_position_equation_by_hand() {
    let p = ModelParams::new(3, 1, c(2.5, 0.7)).unwrap();
    let s = random_instance(&p, 11, 1.0).unwrap();
    let t = run(&s, 6, &p, &StepperConfig::default()).unwrap();
    for w in t.states.windows(3) {
        let (lo, mid, hi) = (&w[0].x, &w[1].x, &w[2].x);
        for i in 0..3 {
            let mut r = Complex64::new(0.0, 0.0);
            for j in 0..3 {
                r += (mid[i] - hi[j]).inv() + (mid[i] - lo[j]).inv();
                if j != i {
                    r -= 2.0 * (mid[i] - mid[j]).inv();
                }
            }
            assert!(r.norm() < 1e-9, "level {} particle {i}: {r}", w[1].level);
        }
    }
}

#[test]
fn newton_from_shift_matches_closed_form() {
    let mu = c(30.0, 1.0);
    let cfg = StepperConfig {
        predictor: Predictor::ShiftByInverseMu,
        ..StepperConfig::default()
    };
    for (np, n) in [(2, 1), (3, 2), (4, 3)] {
        let p = ModelParams::new(np, n, mu).unwrap();
        let s = random_instance(&p, 2, 1.0).unwrap();
        let newton = solve_next(&s, &p, &cfg).unwrap();
        assert!(newton.meta.iterations > 0);
        let closed = spectral_step(&s, mu, AnchorRule::default()).unwrap();
        for i in 0..np {
            assert!((newton.state.x[i] - closed.x[i]).norm() < 1e-10);
            assert!((newton.state.xdot[i] - closed.xdot[i]).norm() < 1e-9);
            for g in 0..n {
                assert!((newton.state.a[(i, g)] - closed.a[(i, g)]).norm() < 1e-9);
                assert!((newton.state.b[(i, g)] - closed.b[(i, g)]).norm() < 1e-9);
            }
        }
    }
}
