//! Continuous second flow of the spin Calogero-Moser (Gibbons-Hermsen)
//! system, integrated with classical RK4. Serves as the reference for the
//! continuum limit of the discrete map.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::state::{pairing, SpinState, DEFAULT_COLLISION_THRESHOLD};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousState {
    pub t: f64,
    pub y: Vec<Complex64>,
    pub ydot: Vec<Complex64>,
    pub a: CMatrix,
    pub b: CMatrix,
}

/// Time derivatives of every component of a [`ContinuousState`].
#[derive(Debug, Clone, PartialEq)]
pub struct T2Rates {
    pub dy: Vec<Complex64>,
    pub dydot: Vec<Complex64>,
    pub da: CMatrix,
    pub db: CMatrix,
}

impl ContinuousState {
    pub fn from_spin(s: &SpinState, t: f64) -> Self {
        Self {
            t,
            y: s.x.clone(),
            ydot: s.xdot.clone(),
            a: s.a.clone(),
            b: s.b.clone(),
        }
    }

    /// Discrete level carrying the same data (positions, velocities, spins).
    pub fn to_spin(&self, level: i64) -> SpinState {
        SpinState {
            level,
            x: self.y.clone(),
            a: self.a.clone(),
            b: self.b.clone(),
            xdot: self.ydot.clone(),
        }
    }

    pub fn n_particles(&self) -> usize {
        self.y.len()
    }

    pub fn constraint_defect(&self) -> f64 {
        (0..self.n_particles())
            .map(|i| (pairing(&self.b, i, &self.a, i) - 1.0).norm())
            .fold(0.0, f64::max)
    }

    fn check_separation(&self) -> Result<()> {
        let n = self.y.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (self.y[i] - self.y[j]).norm();
                if !(d >= DEFAULT_COLLISION_THRESHOLD) {
                    return Err(Error::Collision {
                        level: 0,
                        i,
                        j,
                        distance: d,
                    });
                }
            }
        }
        Ok(())
    }

    fn advanced(&self, k: &T2Rates, h: f64) -> Self {
        let hc = Complex64::new(h, 0.0);
        Self {
            t: self.t + h,
            y: self.y.iter().zip(&k.dy).map(|(u, d)| u + hc * d).collect(),
            ydot: self.ydot.iter().zip(&k.dydot).map(|(u, d)| u + hc * d).collect(),
            a: &self.a + &k.da * hc,
            b: &self.b + &k.db * hc,
        }
    }
}

/// Right-hand side of the second flow:
///
/// ```text
/// y'' _i = -8 Σ_{k≠i} (b_i·a_k)(b_k·a_i) / (y_i - y_k)^3
/// a'_i   = -2 Σ_{k≠i} (b_k·a_i) a_k / (y_i - y_k)^2
/// b'_i   = +2 Σ_{k≠i} (b_i·a_k) b_k / (y_i - y_k)^2
/// ```
pub fn t2_rhs(s: &ContinuousState) -> Result<T2Rates> {
    s.check_separation()?;
    let n = s.n_particles();
    let nspin = s.a.ncols();
    let mut dydot = vec![Complex64::new(0.0, 0.0); n];
    let mut da = CMatrix::zeros(n, nspin);
    let mut db = CMatrix::zeros(n, nspin);
    for i in 0..n {
        for k in 0..n {
            if k == i {
                continue;
            }
            let d = s.y[i] - s.y[k];
            let d2 = d * d;
            let bi_ak = pairing(&s.b, i, &s.a, k);
            let bk_ai = pairing(&s.b, k, &s.a, i);
            dydot[i] -= 8.0 * bi_ak * bk_ai / (d2 * d);
            for g in 0..nspin {
                da[(i, g)] -= 2.0 * bk_ai * s.a[(k, g)] / d2;
                db[(i, g)] += 2.0 * bi_ak * s.b[(k, g)] / d2;
            }
        }
    }
    Ok(T2Rates {
        dy: s.ydot.clone(),
        dydot,
        da,
        db,
    })
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(s: &ContinuousState, h: f64) -> Result<ContinuousState> {
    if !(h != 0.0) || !h.is_finite() {
        return Err(Error::InvalidParams(format!(
            "step size must be finite and nonzero, got {h}"
        )));
    }
    let stage = |i: usize, st: &ContinuousState| {
        t2_rhs(st).map_err(|e| Error::StageCollision {
            stage: i,
            source: Box::new(e),
        })
    };
    let k1 = stage(1, s)?;
    let k2 = stage(2, &s.advanced(&k1, 0.5 * h))?;
    let k3 = stage(3, &s.advanced(&k2, 0.5 * h))?;
    let k4 = stage(4, &s.advanced(&k3, h))?;

    let w = Complex64::new(h / 6.0, 0.0);
    let comb =
        |x: &Complex64, a: &Complex64, b: &Complex64, c: &Complex64, d: &Complex64| x + w * (a + 2.0 * b + 2.0 * c + d);
    let n = s.n_particles();
    let y = (0..n)
        .map(|i| comb(&s.y[i], &k1.dy[i], &k2.dy[i], &k3.dy[i], &k4.dy[i]))
        .collect();
    let ydot = (0..n)
        .map(|i| comb(&s.ydot[i], &k1.dydot[i], &k2.dydot[i], &k3.dydot[i], &k4.dydot[i]))
        .collect();
    let a = &s.a + (&k1.da + (&k2.da + &k3.da) * Complex64::new(2.0, 0.0) + &k4.da) * w;
    let b = &s.b + (&k1.db + (&k2.db + &k3.db) * Complex64::new(2.0, 0.0) + &k4.db) * w;
    Ok(ContinuousState {
        t: s.t + h,
        y,
        ydot,
        a,
        b,
    })
}

/// `steps` RK4 steps of size `t_final / steps`; returns every state
/// including the initial one. `t_final == 0` returns just the initial state.
pub fn integrate_t2(s0: &ContinuousState, t_final: f64, steps: usize) -> Result<Vec<ContinuousState>> {
    if t_final == 0.0 {
        return Ok(vec![s0.clone()]);
    }
    if steps == 0 {
        return Err(Error::InvalidParams("integration needs at least one step".into()));
    }
    let h = t_final / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s0.clone());
    for k in 0..steps {
        let mut next = rk4_step(&out[k], h)?;
        // avoid accumulating rounding in t
        next.t = s0.t + (k + 1) as f64 * h;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lax::{build_l, spectral_invariants};
    use crate::state::{random_instance, ModelParams};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spinless(y: &[Complex64], ydot: &[Complex64]) -> ContinuousState {
        let n = y.len();
        ContinuousState {
            t: 0.0,
            y: y.to_vec(),
            ydot: ydot.to_vec(),
            a: CMatrix::from_element(n, 1, c(1.0, 0.0)),
            b: CMatrix::from_element(n, 1, c(1.0, 0.0)),
        }
    }

    fn random_continuous(np: usize, n: usize, seed: u64) -> ContinuousState {
        let p = ModelParams::new(np, n, c(1.0, 0.0)).unwrap();
        ContinuousState::from_spin(&random_instance(&p, seed, 2.0).unwrap(), 0.0)
    }

    #[test]
    fn single_particle_rhs() {
        let s = spinless(&[c(0.3, 0.1)], &[c(1.5, -0.5)]);
        let r = t2_rhs(&s).unwrap();
        assert_eq!(r.dy, vec![c(1.5, -0.5)]);
        assert_eq!(r.dydot, vec![c(0.0, 0.0)]);
        assert!(r.da.iter().chain(r.db.iter()).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn two_particle_rhs() {
        let s = spinless(&[c(-1.0, 0.0), c(1.0, 0.0)], &[c(0.0, 0.0); 2]);
        let r = t2_rhs(&s).unwrap();
        assert!((r.dydot[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((r.dydot[1] - c(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn constraint_rate_vanishes() {
        let s = random_continuous(4, 3, 3);
        let r = t2_rhs(&s).unwrap();
        for i in 0..4 {
            let rate = pairing(&r.db, i, &s.a, i) + pairing(&s.b, i, &r.da, i);
            assert!(rate.norm() < 1e-13, "rate {i}: {rate}");
        }
    }

    #[test]
    fn spinless_rhs_ignores_gauge() {
        let y = [c(-1.0, 0.2), c(0.4, -0.3), c(1.1, 0.5)];
        let mut s = spinless(&y, &[c(0.0, 0.0); 3]);
        let base = t2_rhs(&s).unwrap().dydot;
        for (i, k) in [c(2.0, 1.0), c(-0.5, 0.0), c(0.0, 3.0)].iter().enumerate() {
            s.a[(i, 0)] *= k;
            s.b[(i, 0)] /= k;
        }
        let gauged = t2_rhs(&s).unwrap().dydot;
        for i in 0..3 {
            assert!((base[i] - gauged[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn free_motion_is_exact() {
        let s = spinless(&[c(0.25, 0.0)], &[c(0.5, 1.0)]);
        let next = rk4_step(&s, 0.1).unwrap();
        assert_eq!(next.y[0], c(0.25, 0.0) + c(0.5, 1.0) * 0.1);
        assert_eq!(next.t, 0.1);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s = spinless(&[c(-1.0, 0.1), c(1.0, -0.2)], &[c(0.3, 0.0), c(-0.1, 0.2)]);
        let reference = |h: f64| {
            let fine = integrate_t2(&s, h, 4).unwrap();
            fine.last().unwrap().y.clone()
        };
        let err = |h: f64| {
            let coarse = rk4_step(&s, h).unwrap();
            let r = reference(h);
            coarse.y.iter().zip(&r).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
        };
        let ratio = err(0.2) / err(0.1);
        assert!(ratio > 24.0 && ratio < 40.0, "local error ratio {ratio}");
    }

    #[test]
    fn constraint_drift_small() {
        // 100 steps of h = 2.5e-3; at h = 1e-2 the h^4 truncation alone
        // reaches ~1e-8 on these instances
        for seed in [1, 4, 9] {
            let s = random_continuous(3, 2, seed);
            let traj = integrate_t2(&s, 0.25, 100).unwrap();
            for st in &traj {
                assert!(
                    st.constraint_defect() < 1e-10,
                    "seed {seed}: {}",
                    st.constraint_defect()
                );
            }
        }
    }

    #[test]
    fn zero_horizon() {
        let s = random_continuous(2, 2, 1);
        assert_eq!(integrate_t2(&s, 0.0, 10).unwrap(), vec![s]);
    }

    #[test]
    fn symmetric_pair_stays_symmetric() {
        let d = 1.0;
        let v = 0.4;
        let s = spinless(&[c(-d, 0.0), c(d, 0.0)], &[c(v, 0.0), c(-v, 0.0)]);
        for st in integrate_t2(&s, 1.0, 200).unwrap() {
            assert!((st.y[0] + st.y[1]).norm() < 1e-10);
        }
    }

    #[test]
    fn energy_invariant_conserved() {
        let s = random_continuous(3, 2, 21);
        let tr2 = |st: &ContinuousState| spectral_invariants(&build_l(&st.to_spin(0)).unwrap(), 2)[1];
        let e0 = tr2(&s);
        for st in integrate_t2(&s, 1.0, 1000).unwrap() {
            assert!((tr2(&st) - e0).norm() < 1e-8 * e0.norm().max(1.0));
        }
    }

    #[test]
    fn rhs_matches_central_difference() {
        let s = random_continuous(3, 2, 4);
        let rhs = t2_rhs(&s).unwrap();
        let err = |h: f64| {
            let fwd = integrate_t2(&s, h, 1).unwrap().pop().unwrap();
            let bwd = integrate_t2(&s, -h, 1).unwrap().pop().unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..3 {
                worst = worst.max(((fwd.ydot[i] - bwd.ydot[i]) / (2.0 * h) - rhs.dydot[i]).norm());
                for g in 0..2 {
                    worst = worst.max(((fwd.a[(i, g)] - bwd.a[(i, g)]) / (2.0 * h) - rhs.da[(i, g)]).norm());
                }
            }
            worst
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!(ratio > 3.5 && ratio < 4.5, "central-difference ratio {ratio}");
    }

    #[test]
    fn collision_reports_stage() {
        let s = spinless(&[c(0.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0); 2]);
        assert!(matches!(rk4_step(&s, 0.1), Err(Error::StageCollision { stage: 1, .. })));
    }
}
