//! Small dense helpers on top of nalgebra, plus a symmetric block-tridiagonal
//! solver for the time-coupled trace normal equations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array1, Array2, ArrayView2};

pub(crate) fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub(crate) fn power_iteration(m: ArrayView2<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    // Rayleigh quotient can undershoot on a non-dominant start; the norm bound
    // from the last iterate is never smaller.
    let w = m.dot(&v);
    lambda.max(w.dot(&w).sqrt())
}

/// Symmetric positive definite block-tridiagonal system
///
/// ```text
/// [ D0  L1ᵀ          ] [x0]   [b0]
/// [ L1  D1  L2ᵀ      ] [x1] = [b1]
/// [     L2  D2  ...  ] [..]   [..]
/// ```
///
/// solved by block forward elimination with a Cholesky factor per pivot.
pub(crate) struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    /// `lower[t]` couples block `t` to block `t - 1`; `lower[0]` is unused.
    pub lower: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    /// Returns `None` if a pivot block is not positive definite.
    pub fn solve(&self, rhs: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
        let t_len = self.diag.len();
        let mut factors: Vec<Cholesky<f64, Dyn>> = Vec::with_capacity(t_len);
        let mut g: Vec<DVector<f64>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (pivot, gt) = if t == 0 {
                (self.diag[0].clone(), rhs[0].clone())
            } else {
                let l = &self.lower[t];
                let prev = &factors[t - 1];
                // S_t = D_t - L_t S_{t-1}^{-1} L_tᵀ
                let sinv_lt = prev.solve(&l.transpose());
                let pivot = &self.diag[t] - l * sinv_lt;
                let gt = &rhs[t] - l * prev.solve(&g[t - 1]);
                (pivot, gt)
            };
            let sym = (&pivot + pivot.transpose()) * 0.5;
            factors.push(Cholesky::new(sym)?);
            g.push(gt);
        }
        let mut x: Vec<DVector<f64>> = vec![DVector::zeros(0); t_len];
        for t in (0..t_len).rev() {
            let mut r = g[t].clone();
            if t + 1 < t_len {
                r -= self.lower[t + 1].transpose() * &x[t + 1];
            }
            x[t] = factors[t].solve(&r);
        }
        if x.iter().all(|v| v.iter().all(|e| e.is_finite())) {
            Some(x)
        } else {
            None
        }
    }

    /// Applies the operator, for residual checks.
    pub fn apply(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let t_len = self.diag.len();
        (0..t_len)
            .map(|t| {
                let mut y = &self.diag[t] * &x[t];
                if t > 0 {
                    y += &self.lower[t] * &x[t - 1];
                }
                if t + 1 < t_len {
                    y += self.lower[t + 1].transpose() * &x[t + 1];
                }
                y
            })
            .collect()
    }
}
