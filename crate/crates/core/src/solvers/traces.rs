//! Per-trial trace update.
//!
//! Minimizes over `Φ` (P × T)
//!
//! ```text
//! Σ_obs (Y − AΦ)²  +  γ3 Σ_{t≥1} ‖φ_t − Wφ_{t−1}‖²  +  γ4 Σ_{j≠j'} |cos(Φ_j, Φ_j')|
//! ```
//!
//! with `W = I` for the smoothness prior and a per-trial transition matrix for
//! the LDS prior. Without the decorrelation term and without a sign
//! constraint the problem is quadratic, and its normal equations are block
//! tridiagonal in time; that case is solved directly. Everything else goes
//! through accelerated projected gradient on a smoothed objective where
//! `|x|` becomes `sqrt(x² + ε²)`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};

use super::linalg::{power_iteration, to_na, BlockTridiagonal};
use crate::data::TraceSolverParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TracePrior {
    /// Penalize consecutive differences.
    Smoothness,
    /// Penalize deviation from `φ_t = W φ_{t−1}`.
    Lds(Array2<f64>),
}

/// Gram matrix of trace rows and the matching inverse-norm scaling.
#[derive(Debug, Clone)]
pub struct DecorrelationTerms {
    pub gram: Array2<f64>,
    /// `D[j, j'] = 1 / (‖Φ_j‖ ‖Φ_j'‖)`, 0 where either row is zero.
    pub norm_scale: Array2<f64>,
}

impl DecorrelationTerms {
    pub fn from_traces(phi: ArrayView2<f64>) -> Self {
        let gram = phi.dot(&phi.t());
        let p = gram.nrows();
        let inv: Vec<f64> = (0..p)
            .map(|j| {
                let n = gram[[j, j]].sqrt();
                if n > 0.0 {
                    1.0 / n
                } else {
                    0.0
                }
            })
            .collect();
        let norm_scale = Array2::from_shape_fn((p, p), |(a, b)| inv[a] * inv[b]);
        DecorrelationTerms { gram, norm_scale }
    }

    /// `Σ_{j≠j'} |C ⊙ D|`.
    pub fn penalty(&self) -> f64 {
        let p = self.gram.nrows();
        let mut total = 0.0;
        for a in 0..p {
            for b in 0..p {
                if a != b {
                    total += (self.gram[[a, b]] * self.norm_scale[[a, b]]).abs();
                }
            }
        }
        total
    }
}

/// One trial's trace subproblem.
#[derive(Debug, Clone, Copy)]
pub struct TraceProblem<'a> {
    pub y: ArrayView2<'a, f64>,
    pub mask: Option<ArrayView2<'a, bool>>,
    pub loading: ArrayView2<'a, f64>,
    pub gamma3: f64,
    pub gamma4: f64,
    pub prior: &'a TracePrior,
    pub nonneg: bool,
}

#[derive(Debug, Clone)]
pub struct TraceSolution {
    pub phi: Array2<f64>,
    /// Solved through the normal equations.
    pub exact: bool,
    /// A tiny ridge was needed to factor the normal equations (dead components).
    pub regularized: bool,
    pub iterations: usize,
    pub warning: Option<String>,
}

impl<'a> TraceProblem<'a> {
    fn n_traces(&self) -> usize {
        self.loading.ncols()
    }

    fn transition(&self) -> Option<&Array2<f64>> {
        match self.prior {
            TracePrior::Smoothness => None,
            TracePrior::Lds(w) => Some(w),
        }
    }

    pub fn validate(&self, phi_shape: (usize, usize)) -> Result<()> {
        let (n, t_len) = self.y.dim();
        let p = self.n_traces();
        if self.loading.nrows() != n {
            return Err(Error::schema(format!(
                "loading has {} rows, data has {n}",
                self.loading.nrows()
            )));
        }
        if phi_shape != (p, t_len) {
            return Err(Error::schema(format!(
                "traces are {phi_shape:?}, expected ({p}, {t_len})"
            )));
        }
        if let Some(m) = self.mask {
            if m.dim() != (n, t_len) {
                return Err(Error::schema("mask shape does not match data"));
            }
        }
        if let Some(w) = self.transition() {
            if w.dim() != (p, p) {
                return Err(Error::schema(format!(
                    "transition matrix is {:?}, expected ({p}, {p})",
                    w.dim()
                )));
            }
        }
        Ok(())
    }

    fn data_residual(&self, phi: ArrayView2<f64>) -> Array2<f64> {
        let mut r = &self.y - &self.loading.dot(&phi);
        if let Some(m) = self.mask {
            r.zip_mut_with(&m, |v, &obs| {
                if !obs {
                    *v = 0.0
                }
            });
        }
        r
    }

    /// `Σ_t ‖φ_t − Wφ_{t−1}‖²` and the per-step innovations.
    fn innovations(&self, phi: ArrayView2<f64>) -> Array2<f64> {
        let t_len = phi.ncols();
        if t_len < 2 {
            return Array2::zeros((phi.nrows(), 0));
        }
        let prev = phi.slice(ndarray::s![.., ..t_len - 1]);
        let next = phi.slice(ndarray::s![.., 1..]);
        match self.transition() {
            None => &next - &prev,
            Some(w) => &next - &w.dot(&prev),
        }
    }

    /// The unsmoothed objective.
    pub fn objective(&self, phi: ArrayView2<f64>) -> f64 {
        let data: f64 = self.data_residual(phi).iter().map(|v| v * v).sum();
        let smooth = if self.gamma3 > 0.0 {
            self.gamma3 * self.innovations(phi).iter().map(|v| v * v).sum::<f64>()
        } else {
            0.0
        };
        let decor = if self.gamma4 > 0.0 {
            self.gamma4 * DecorrelationTerms::from_traces(phi).penalty()
        } else {
            0.0
        };
        data + smooth + decor
    }

    /// Objective with `|c|` replaced by `sqrt(c² + eps²)`, and its gradient.
    pub fn smoothed_value_and_gradient(&self, phi: ArrayView2<f64>, eps: f64) -> (f64, Array2<f64>) {
        let r = self.data_residual(phi);
        let mut value: f64 = r.iter().map(|v| v * v).sum();
        let mut grad = self.loading.t().dot(&r) * -2.0;

        if self.gamma3 > 0.0 && phi.ncols() >= 2 {
            let e = self.innovations(phi);
            value += self.gamma3 * e.iter().map(|v| v * v).sum::<f64>();
            let t_len = phi.ncols();
            let scaled = &e * (2.0 * self.gamma3);
            {
                let mut g_next = grad.slice_mut(ndarray::s![.., 1..]);
                g_next += &scaled;
            }
            let back = match self.transition() {
                None => scaled,
                Some(w) => w.t().dot(&scaled),
            };
            let mut g_prev = grad.slice_mut(ndarray::s![.., ..t_len - 1]);
            g_prev -= &back;
        }

        if self.gamma4 > 0.0 {
            let (v, g) = smoothed_decorrelation(phi, eps);
            value += self.gamma4 * v;
            grad.scaled_add(self.gamma4, &g);
        }
        (value, grad)
    }

    pub fn smoothed_value(&self, phi: ArrayView2<f64>, eps: f64) -> f64 {
        let data: f64 = self.data_residual(phi).iter().map(|v| v * v).sum();
        let smooth = if self.gamma3 > 0.0 {
            self.gamma3 * self.innovations(phi).iter().map(|v| v * v).sum::<f64>()
        } else {
            0.0
        };
        let decor = if self.gamma4 > 0.0 {
            self.gamma4 * smoothed_decorrelation(phi, eps).0
        } else {
            0.0
        };
        data + smooth + decor
    }

    /// Normal equations of the quadratic part (decorrelation excluded).
    pub(crate) fn normal_equations(&self, ridge: f64) -> (BlockTridiagonal, Vec<DVector<f64>>) {
        let (n, t_len) = self.y.dim();
        let p = self.n_traces();
        let a = to_na(self.loading);
        let ata_full = a.transpose() * &a;
        let eye = DMatrix::<f64>::identity(p, p);
        let (w, wtw) = match self.transition() {
            None => (eye.clone(), eye.clone()),
            Some(w) => {
                let w = to_na(w.view());
                let wtw = w.transpose() * &w;
                (w, wtw)
            }
        };
        let mut diag = Vec::with_capacity(t_len);
        let mut lower = Vec::with_capacity(t_len);
        let mut rhs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (mut d, b) = match self.mask {
                None => {
                    let y_t = DVector::from_iterator(n, self.y.column(t).iter().copied());
                    (ata_full.clone(), a.transpose() * y_t)
                }
                Some(m) => {
                    let mut d = DMatrix::<f64>::zeros(p, p);
                    let mut b = DVector::<f64>::zeros(p);
                    for i in 0..n {
                        if !m[[i, t]] {
                            continue;
                        }
                        let row = a.row(i);
                        d += row.transpose() * row;
                        b += row.transpose() * self.y[[i, t]];
                    }
                    (d, b)
                }
            };
            if t >= 1 {
                d += &eye * self.gamma3;
            }
            if t + 1 < t_len {
                d += &wtw * self.gamma3;
            }
            if ridge > 0.0 {
                d += &eye * ridge;
            }
            diag.push(d);
            lower.push(if t == 0 {
                DMatrix::zeros(p, p)
            } else {
                &w * -self.gamma3
            });
            rhs.push(b);
        }
        (BlockTridiagonal { diag, lower }, rhs)
    }

    /// Relative residual `‖HΦ − b‖ / ‖b‖` of the normal equations.
    pub fn normal_equation_residual(&self, phi: ArrayView2<f64>) -> f64 {
        let (sys, rhs) = self.normal_equations(0.0);
        let x: Vec<DVector<f64>> = phi
            .axis_iter(Axis(1))
            .map(|c| DVector::from_iterator(c.len(), c.iter().copied()))
            .collect();
        let hx = sys.apply(&x);
        let (mut num, mut den) = (0.0, 0.0);
        for (h, b) in hx.iter().zip(&rhs) {
            num += (h - b).norm_squared();
            den += b.norm_squared();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Minimizer of the quadratic part. Returns the solution and whether a
    /// ridge had to be added.
    pub fn solve_quadratic(&self) -> Result<(Array2<f64>, bool)> {
        let (_, t_len) = self.y.dim();
        let p = self.n_traces();
        let to_array = |x: Vec<DVector<f64>>| {
            let mut phi = Array2::zeros((p, t_len));
            for (t, col) in x.iter().enumerate() {
                for j in 0..p {
                    phi[[j, t]] = col[j];
                }
            }
            phi
        };
        let (sys, rhs) = self.normal_equations(0.0);
        if let Some(x) = sys.solve(&rhs) {
            return Ok((to_array(x), false));
        }
        let scale = sys
            .diag
            .iter()
            .flat_map(|d| (0..p).map(move |j| d[(j, j)]))
            .fold(0.0f64, f64::max)
            .max(1.0);
        let (sys, rhs) = self.normal_equations(1e-10 * scale);
        sys.solve(&rhs)
            .map(|x| (to_array(x), true))
            .ok_or_else(|| Error::numeric("trace normal equations are singular"))
    }

    fn lipschitz(&self) -> f64 {
        let ata = self.loading.t().dot(&self.loading);
        let la = power_iteration(ata.view(), 20);
        let wn = match self.transition() {
            None => 1.0,
            Some(w) => power_iteration(w.t().dot(w).view(), 20).sqrt(),
        };
        2.0 * (la + self.gamma3 * (1.0 + wn).powi(2))
    }

    fn project(&self, phi: &mut Array2<f64>) {
        if self.nonneg {
            phi.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Accelerated projected gradient with backtracking and function-value
    /// restart, started at `start`.
    fn gradient_descent(
        &self,
        params: &TraceSolverParams,
        start: Array2<f64>,
    ) -> (Array2<f64>, usize, Option<String>) {
        let eps = params.huber_eps;
        let mut step = params.step_size.unwrap_or_else(|| {
            let l = self.lipschitz();
            if l > 0.0 {
                1.0 / l
            } else {
                1.0
            }
        });
        let mut x = start;
        let mut fx = self.smoothed_value(x.view(), eps);
        let mut y = x.clone();
        let mut momentum = 1.0f64;
        let mut warning = None;
        let mut iters = 0;
        while iters < params.max_grad_iters {
            iters += 1;
            let (fy, gy) = self.smoothed_value_and_gradient(y.view(), eps);
            let mut halvings = 0;
            let (x_new, f_new) = loop {
                let mut cand = &y - &(&gy * step);
                self.project(&mut cand);
                let d = &cand - &y;
                let f_cand = self.smoothed_value(cand.view(), eps);
                let bound = fy + (&gy * &d).sum() + d.iter().map(|v| v * v).sum::<f64>() / (2.0 * step);
                if f_cand.is_finite() && f_cand <= bound + 1e-12 * fy.abs() {
                    break (cand, f_cand);
                }
                halvings += 1;
                if halvings > 30 {
                    warning = Some("trace step size halved 30 times without descent".into());
                    break (x.clone(), fx);
                }
                step *= 0.5;
            };
            if warning.is_some() {
                break;
            }
            if f_new > fx {
                // momentum overshot: restart from the last accepted iterate
                if y == x {
                    break;
                }
                y = x.clone();
                momentum = 1.0;
                continue;
            }
            let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / next_momentum;
            y = &x_new + &((&x_new - &x) * beta);
            momentum = next_momentum;
            let rel = (fx - f_new) / fx.abs().max(1e-300);
            x = x_new;
            fx = f_new;
            if rel < 1e-8 {
                break;
            }
        }
        (x, iters, warning)
    }

    pub fn solve(&self, params: &TraceSolverParams, warm_start: ArrayView2<f64>) -> Result<TraceSolution> {
        self.validate(warm_start.dim())?;
        if self.loading.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite loading matrix"));
        }
        if self.gamma4 == 0.0 && !self.nonneg {
            let (phi, regularized) = self.solve_quadratic()?;
            return Ok(TraceSolution {
                phi,
                exact: true,
                regularized,
                iterations: 0,
                warning: None,
            });
        }

        let eps = params.huber_eps;
        let mut warm = warm_start.to_owned();
        self.project(&mut warm);
        // the quadratic minimizer (projected) is usually a far better start
        let mut start = warm.clone();
        if let Ok((mut q, _)) = self.solve_quadratic() {
            self.project(&mut q);
            if self.smoothed_value(q.view(), eps) < self.smoothed_value(warm.view(), eps) {
                start = q;
            }
        }
        let (phi, iterations, warning) = self.gradient_descent(params, start);
        let phi = if self.objective(phi.view()) <= self.objective(warm.view()) {
            phi
        } else {
            warm
        };
        Ok(TraceSolution {
            phi,
            exact: false,
            regularized: false,
            iterations,
            warning,
        })
    }
}

/// `Σ_{j≠j'} sqrt(cos² + eps²)` over nonzero rows, and its gradient.
fn smoothed_decorrelation(phi: ArrayView2<f64>, eps: f64) -> (f64, Array2<f64>) {
    let p = phi.nrows();
    let gram = phi.dot(&phi.t());
    let norms: Vec<f64> = (0..p).map(|j| gram[[j, j]].sqrt()).collect();
    let mut value = 0.0;
    let mut grad = Array2::zeros(phi.dim());
    for a in 0..p {
        if norms[a] == 0.0 {
            continue;
        }
        for b in (a + 1)..p {
            if norms[b] == 0.0 {
                continue;
            }
            let nab = norms[a] * norms[b];
            let c = gram[[a, b]] / nab;
            let h = (c * c + eps * eps).sqrt();
            value += 2.0 * h;
            let coef = 2.0 * c / h;
            let (ra, rb) = (phi.row(a), phi.row(b));
            // d cos / d φ_a = φ_b/(n_a n_b) − cos φ_a / n_a²
            let ga = &rb / nab - &(&ra * (c / (norms[a] * norms[a])));
            let gb = &ra / nab - &(&rb * (c / (norms[b] * norms[b])));
            grad.row_mut(a).scaled_add(coef, &ga);
            grad.row_mut(b).scaled_add(coef, &gb);
        }
    }
    (value, grad)
}

pub fn trace_objective(
    y: ArrayView2<f64>,
    mask: Option<ArrayView2<bool>>,
    loading: ArrayView2<f64>,
    phi: ArrayView2<f64>,
    gamma3: f64,
    gamma4: f64,
    prior: &TracePrior,
) -> f64 {
    TraceProblem {
        y,
        mask,
        loading,
        gamma3,
        gamma4,
        prior,
        nonneg: false,
    }
    .objective(phi)
}

#[allow(clippy::too_many_arguments)]
pub fn solve_traces(
    y: ArrayView2<f64>,
    mask: Option<ArrayView2<bool>>,
    loading: ArrayView2<f64>,
    gamma3: f64,
    gamma4: f64,
    nonneg: bool,
    prior: &TracePrior,
    params: &TraceSolverParams,
    warm_start: ArrayView2<f64>,
) -> Result<TraceSolution> {
    TraceProblem {
        y,
        mask,
        loading,
        gamma3,
        gamma4,
        prior,
        nonneg,
    }
    .solve(params, warm_start)
}
