//! Small dense complex linear-algebra helpers.
//!
//! Storage and products come from `nalgebra`; the LU factorization is local
//! so that pivot quality can be reported against the original row scale.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
    min_pivot_ratio: f64,
}

impl Lu {
    /// Factor `a`. Fails when a pivot falls below `rel_tol` times the
    /// largest entry of the (original) row it came from.
    pub fn factor(a: &CMatrix, rel_tol: f64) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU requires a square matrix");
        let row_scale: Vec<f64> = (0..n)
            .map(|i| a.row(i).iter().map(|v| v.norm()).fold(0.0, f64::max))
            .collect();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_ratio = f64::INFINITY;

        for k in 0..n {
            let (p, pmag) =
                (k..n)
                    .map(|r| (r, lu[(r, k)].norm()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let scale = row_scale[perm[k]];
            let ratio = if scale > 0.0 { pmag / scale } else { 0.0 };
            min_ratio = min_ratio.min(ratio);
            if !(ratio >= rel_tol) {
                return Err(Error::Singular { pivot: k, ratio });
            }
            let pivot = lu[(k, k)];
            for r in (k + 1)..n {
                let f = lu[(r, k)] / pivot;
                lu[(r, k)] = f;
                if f != ZERO {
                    for c in (k + 1)..n {
                        let u = lu[(k, c)];
                        lu[(r, c)] -= f * u;
                    }
                }
            }
        }
        Ok(Self {
            lu,
            perm,
            min_pivot_ratio: min_ratio,
        })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Smallest pivot-to-row-scale ratio seen during factorization.
    pub fn min_pivot_ratio(&self) -> f64 {
        self.min_pivot_ratio
    }

    /// Solve `A X = B` column by column.
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        let n = self.dim();
        assert_eq!(b.nrows(), n);
        let mut x = CMatrix::zeros(n, b.ncols());
        for col in 0..b.ncols() {
            let mut y: Vec<Complex64> = (0..n).map(|i| b[(self.perm[i], col)]).collect();
            for i in 0..n {
                let mut s = y[i];
                for k in 0..i {
                    s -= self.lu[(i, k)] * y[k];
                }
                y[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in (i + 1)..n {
                    s -= self.lu[(i, k)] * y[k];
                }
                y[i] = s / self.lu[(i, i)];
            }
            for i in 0..n {
                x[(i, col)] = y[i];
            }
        }
        x
    }

    pub fn solve_vec(&self, b: &[Complex64]) -> Vec<Complex64> {
        let m = CMatrix::from_column_slice(b.len(), 1, b);
        self.solve(&m).column(0).iter().copied().collect()
    }

    /// Solve `Aᵀ X = B` (plain transpose, no conjugation).
    pub fn solve_transpose(&self, b: &CMatrix) -> CMatrix {
        let n = self.dim();
        assert_eq!(b.nrows(), n);
        let mut x = CMatrix::zeros(n, b.ncols());
        for col in 0..b.ncols() {
            // Uᵀ w = b
            let mut w: Vec<Complex64> = (0..n).map(|i| b[(i, col)]).collect();
            for i in 0..n {
                let mut s = w[i];
                for k in 0..i {
                    s -= self.lu[(k, i)] * w[k];
                }
                w[i] = s / self.lu[(i, i)];
            }
            // Lᵀ v = w
            for i in (0..n).rev() {
                let mut s = w[i];
                for k in (i + 1)..n {
                    s -= self.lu[(k, i)] * w[k];
                }
                w[i] = s;
            }
            for i in 0..n {
                x[(self.perm[i], col)] = w[i];
            }
        }
        x
    }

    pub fn inverse(&self) -> CMatrix {
        self.solve(&CMatrix::identity(self.dim(), self.dim()))
    }
}

/// Eigenvalues and (unit 2-norm) eigenvectors of a general complex matrix,
/// via the complex Schur form and back-substitution on the triangular factor.
/// Returns `None` if the Schur iteration fails.
pub fn eig(g: &CMatrix) -> Option<(Vec<Complex64>, CMatrix)> {
    let n = g.nrows();
    let scale = g.norm().max(f64::MIN_POSITIVE);
    let schur = nalgebra::linalg::Schur::try_new(g.clone(), f64::EPSILON, 10_000)?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = (0..n).map(|k| t[(k, k)]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for k in 0..n {
        let mut y = vec![ZERO; n];
        y[k] = ONE;
        for j in (0..k).rev() {
            let mut s = ZERO;
            for l in (j + 1)..=k {
                s += t[(j, l)] * y[l];
            }
            let mut den = t[(j, j)] - t[(k, k)];
            if den.norm() < f64::EPSILON * scale {
                den = Complex64::new(f64::EPSILON * scale, 0.0);
            }
            y[j] = -s / den;
        }
        let yv = CVector::from_vec(y);
        let v = &q * yv;
        let nv = v.norm();
        for i in 0..n {
            vectors[(i, k)] = v[i] / nv;
        }
    }
    Some((values, vectors))
}

/// Max-modulus norm over all entries.
pub fn sup_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
