//! Ridge fit of a per-trial transition matrix.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use ndarray::{s, Array2, ArrayView2};

use super::linalg::{from_na, to_na};
use crate::error::{Error, Result};

/// Minimizer of `Σ_t ‖φ_t − Wφ_{t−1}‖² + γ5 ‖W − I‖²_F`:
///
/// ```text
/// Ŵ = (Σ φ_t φ_{t−1}ᵀ + γ5 I)(Σ φ_{t−1} φ_{t−1}ᵀ + γ5 I)⁻¹
/// ```
pub fn fit_transition(phi: ArrayView2<f64>, gamma5: f64) -> Result<Array2<f64>> {
    let (p, t_len) = phi.dim();
    if t_len < 2 {
        return Err(Error::parameter("transition fit needs at least 2 time points"));
    }
    if !(gamma5.is_finite() && gamma5 >= 0.0) {
        return Err(Error::parameter(format!("gamma5 must be >= 0, got {gamma5}")));
    }
    let prev = phi.slice(s![.., ..t_len - 1]);
    let next = phi.slice(s![.., 1..]);
    let mut lagged = to_na(prev.dot(&prev.t()).view());
    let mut cross = to_na(next.dot(&prev.t()).view());
    if !lagged.iter().chain(cross.iter()).all(|v| v.is_finite()) {
        return Err(Error::numeric("non-finite traces in transition fit"));
    }
    let eye = DMatrix::<f64>::identity(p, p);
    lagged += &eye * gamma5;
    cross += &eye * gamma5;

    if gamma5 == 0.0 {
        let eig = SymmetricEigen::new(lagged.clone()).eigenvalues;
        let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        if max == 0.0 || min <= max * 1e-13 {
            return Err(Error::numeric(
                "lagged trace covariance is singular; use a positive gamma5",
            ));
        }
    }
    // Ŵ M = N with M symmetric  ⇒  M Ŵᵀ = Nᵀ
    let chol = Cholesky::new(lagged)
        .ok_or_else(|| Error::numeric("lagged trace covariance is not positive definite"))?;
    let wt = chol.solve(&cross.transpose());
    Ok(from_na(&wt.transpose()))
}

/// `Σ_t ‖φ_t − Wφ_{t−1}‖²`.
pub fn transition_residual(phi: ArrayView2<f64>, w: ArrayView2<f64>) -> f64 {
    let t_len = phi.ncols();
    if t_len < 2 {
        return 0.0;
    }
    let pred = w.dot(&phi.slice(s![.., ..t_len - 1]));
    let diff = &phi.slice(s![.., 1..]) - &pred;
    diff.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn large_ridge_returns_identity() {
        let phi = array![[1.0, 0.5, -0.2, 0.3], [0.0, 1.0, 0.7, -0.4]];
        let w = fit_transition(phi.view(), 1e10).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((w[[i, j]] - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_scalar_trace_has_zero_residual() {
        let phi = array![[2.5, 2.5, 2.5, 2.5, 2.5]];
        let w = fit_transition(phi.view(), 0.0).unwrap();
        assert!(transition_residual(phi.view(), w.view()) < 1e-20);
    }

    #[test]
    fn singular_without_ridge_is_numeric_error() {
        // rank-one lag covariance in two dimensions
        let phi = array![[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]];
        assert!(matches!(fit_transition(phi.view(), 0.0), Err(Error::Numeric(_))));
        assert!(fit_transition(phi.view(), 0.1).is_ok());
    }
}
