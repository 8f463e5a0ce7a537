//! Consistency-regularized LASSO by cyclic coordinate descent.
//!
//! Solves, for a channels × components matrix `A`,
//!
//! ```text
//! ‖R − A Φ‖²_F + γ1 ‖A‖_{1,1} + w ‖A − Ā‖²_F
//! ```
//!
//! where `R` stacks residuals over trials, `Φ` stacks the matching traces and
//! `Ā` is the similarity-weighted mean of sibling variants. Rows of `A` are
//! independent problems, so the solver works from per-row sufficient
//! statistics (`Φ Φᵀ` and `R Φᵀ`) and never materializes the stacked matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `sign(x) · max(|x| − tau, 0)`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// One residual/trace pair contributing to a stacked problem.
#[derive(Debug, Clone, Copy)]
pub struct LassoBlock<'a> {
    /// Channels × time.
    pub residual: ArrayView2<'a, f64>,
    /// Components × time.
    pub traces: ArrayView2<'a, f64>,
    /// Observed entries of `residual`; `None` means all observed.
    pub mask: Option<ArrayView2<'a, bool>>,
}

/// Sufficient statistics of one block.
#[derive(Debug, Clone)]
pub struct BlockStats {
    /// `Φ Φᵀ` over all columns (unmasked blocks).
    shared_gram: Option<Array2<f64>>,
    /// Per-row `Φ_obs Φ_obsᵀ` (masked blocks).
    row_grams: Option<Vec<Array2<f64>>>,
    cross: Array2<f64>,
    residual_sq: f64,
}

impl BlockStats {
    pub fn from_block(block: LassoBlock<'_>) -> Result<Self> {
        let (n, t_len) = block.residual.dim();
        let (p, t2) = block.traces.dim();
        if t_len != t2 {
            return Err(Error::schema(format!(
                "residual has {t_len} columns but traces have {t2}"
            )));
        }
        match block.mask {
            None => {
                let residual_sq = block.residual.iter().map(|v| v * v).sum();
                Ok(BlockStats {
                    shared_gram: Some(block.traces.dot(&block.traces.t())),
                    row_grams: None,
                    cross: block.residual.dot(&block.traces.t()),
                    residual_sq,
                })
            }
            Some(mask) => {
                if mask.dim() != (n, t_len) {
                    return Err(Error::schema("mask shape does not match residual"));
                }
                let mut grams = vec![Array2::zeros((p, p)); n];
                let mut cross = Array2::zeros((n, p));
                let mut residual_sq = 0.0;
                let cols: Vec<ArrayView1<f64>> = block.traces.axis_iter(Axis(1)).collect();
                for i in 0..n {
                    let g = &mut grams[i];
                    for (t, col) in cols.iter().enumerate() {
                        if !mask[[i, t]] {
                            continue;
                        }
                        let r = block.residual[[i, t]];
                        residual_sq += r * r;
                        for a in 0..p {
                            cross[[i, a]] += r * col[a];
                            for b in 0..p {
                                g[[a, b]] += col[a] * col[b];
                            }
                        }
                    }
                }
                Ok(BlockStats {
                    shared_gram: None,
                    row_grams: Some(grams),
                    cross,
                    residual_sq,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoProblem {
    shared_gram: Array2<f64>,
    row_grams: Option<Vec<Array2<f64>>>,
    cross: Array2<f64>,
    residual_sq: f64,
    /// `Ā`; ignored when `anchor_weight` is 0.
    pub target: Array2<f64>,
    pub anchor_weight: f64,
    pub gamma1: f64,
    pub nonneg: bool,
}

impl LassoProblem {
    /// Plain problem from stacked matrices.
    pub fn new(
        residual_stack: ArrayView2<f64>,
        trace_stack: ArrayView2<f64>,
        mask: Option<ArrayView2<bool>>,
    ) -> Result<Self> {
        let stats = BlockStats::from_block(LassoBlock {
            residual: residual_stack,
            traces: trace_stack,
            mask,
        })?;
        Self::from_stats(residual_stack.nrows(), trace_stack.nrows(), vec![stats])
    }

    pub fn from_blocks<'a>(
        n_rows: usize,
        n_components: usize,
        blocks: impl IntoIterator<Item = LassoBlock<'a>>,
    ) -> Result<Self> {
        let stats = blocks
            .into_iter()
            .map(BlockStats::from_block)
            .collect::<Result<Vec<_>>>()?;
        Self::from_stats(n_rows, n_components, stats)
    }

    /// Merges block statistics in the given order. An empty list yields a
    /// problem with no data term.
    pub fn from_stats(n_rows: usize, n_components: usize, stats: Vec<BlockStats>) -> Result<Self> {
        let p = n_components;
        let mut shared_gram = Array2::zeros((p, p));
        let mut row_grams: Option<Vec<Array2<f64>>> = None;
        let mut cross = Array2::zeros((n_rows, p));
        let mut residual_sq = 0.0;
        for s in stats {
            if s.cross.dim() != (n_rows, p) {
                return Err(Error::schema("block statistics have inconsistent shapes"));
            }
            cross += &s.cross;
            residual_sq += s.residual_sq;
            if let Some(g) = s.shared_gram {
                shared_gram += &g;
            }
            if let Some(rg) = s.row_grams {
                let acc = row_grams.get_or_insert_with(|| vec![Array2::zeros((p, p)); n_rows]);
                for (a, g) in acc.iter_mut().zip(rg) {
                    *a += &g;
                }
            }
        }
        Ok(LassoProblem {
            shared_gram,
            row_grams,
            cross,
            residual_sq,
            target: Array2::zeros((n_rows, p)),
            anchor_weight: 0.0,
            gamma1: 0.0,
            nonneg: false,
        })
    }

    pub fn with_gamma1(mut self, gamma1: f64) -> Self {
        self.gamma1 = gamma1;
        self
    }

    pub fn with_nonneg(mut self, nonneg: bool) -> Self {
        self.nonneg = nonneg;
        self
    }

    /// Quadratic pull `w ‖A − Ā‖²` toward `target`.
    pub fn with_anchor(mut self, target: Array2<f64>, weight: f64) -> Self {
        self.target = target;
        self.anchor_weight = weight;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.cross.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.cross.ncols()
    }

    fn row_gram(&self, i: usize) -> Array2<f64> {
        match &self.row_grams {
            Some(rg) => &self.shared_gram + &rg[i],
            None => self.shared_gram.clone(),
        }
    }

    /// Data fidelity `‖R − AΦ‖²` on observed entries.
    pub fn data_term(&self, a: ArrayView2<f64>) -> f64 {
        let mut total = self.residual_sq;
        for i in 0..self.n_rows() {
            let row = a.row(i);
            let g = self.row_gram(i);
            total += row.dot(&g.dot(&row)) - 2.0 * row.dot(&self.cross.row(i));
        }
        total
    }

    pub fn objective(&self, a: ArrayView2<f64>) -> f64 {
        let mut obj = self.data_term(a) + self.gamma1 * a.iter().map(|v| v.abs()).sum::<f64>();
        if self.anchor_weight > 0.0 {
            let d = &a - &self.target;
            obj += self.anchor_weight * d.iter().map(|v| v * v).sum::<f64>();
        }
        obj
    }

    fn check_finite(&self, warm: ArrayView2<f64>) -> Result<()> {
        fn finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
            it.all(|v| v.is_finite())
        }
        let grams_ok = finite(self.shared_gram.iter())
            && self
                .row_grams
                .as_ref()
                .is_none_or(|rg| rg.iter().all(|g| g.iter().all(|v| v.is_finite())));
        if !grams_ok || !finite(self.cross.iter()) || !self.residual_sq.is_finite() {
            return Err(Error::numeric("non-finite values in LASSO data"));
        }
        if !finite(warm.iter()) {
            return Err(Error::numeric("non-finite warm start"));
        }
        if self.anchor_weight > 0.0 && !finite(self.target.iter()) {
            return Err(Error::numeric("non-finite consistency anchor"));
        }
        if !(self.gamma1.is_finite() && self.gamma1 >= 0.0)
            || !(self.anchor_weight.is_finite() && self.anchor_weight >= 0.0)
        {
            return Err(Error::parameter("LASSO weights must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub coef: Array2<f64>,
    /// Largest sweep count used by any row.
    pub sweeps: usize,
    pub converged: bool,
}

/// Cyclic coordinate descent, warm-started. Each row sweeps until its largest
/// coordinate change drops below `tol` or `max_sweeps` is reached.
pub fn cd_lasso_variant(
    problem: &LassoProblem,
    warm_start: ArrayView2<f64>,
    max_sweeps: usize,
    tol: f64,
) -> Result<LassoSolution> {
    let (n, p) = (problem.n_rows(), problem.n_components());
    if warm_start.dim() != (n, p) {
        return Err(Error::schema(format!(
            "warm start is {:?}, expected ({n}, {p})",
            warm_start.dim()
        )));
    }
    problem.check_finite(warm_start)?;
    let w = problem.anchor_weight;
    let tau = problem.gamma1 / 2.0;
    let mut coef = warm_start.to_owned();
    if problem.nonneg {
        coef.mapv_inplace(|v| v.max(0.0));
    }
    let mut max_used = 0;
    let mut all_converged = true;
    for i in 0..n {
        let g = problem.row_gram(i);
        let b = problem.cross.row(i);
        let mut a: Array1<f64> = coef.row(i).to_owned();
        let mut q = g.dot(&a);
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut max_change: f64 = 0.0;
            for j in 0..p {
                let gjj = g[[j, j]];
                let denom = gjj + w;
                // data + anchor gradient with coordinate j removed
                let mut z = b[j] - (q[j] - gjj * a[j]);
                if w > 0.0 {
                    z += w * problem.target[[i, j]];
                }
                let mut new = if denom > 0.0 {
                    soft_threshold(z, tau) / denom
                } else {
                    0.0
                };
                if problem.nonneg && new < 0.0 {
                    new = 0.0;
                }
                let delta = new - a[j];
                if delta != 0.0 {
                    a[j] = new;
                    q.scaled_add(delta, &g.column(j));
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < tol {
                converged = true;
                break;
            }
        }
        max_used = max_used.max(sweeps);
        all_converged &= converged;
        coef.row_mut(i).assign(&a);
    }
    Ok(LassoSolution {
        coef,
        sweeps: max_used,
        converged: all_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(0.0, 0.0), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
    }

    #[test]
    fn scalar_closed_form() {
        let r = array![[2.0, 0.0]];
        let phi = array![[1.0, 0.0]];
        let prob = LassoProblem::new(r.view(), phi.view(), None)
            .unwrap()
            .with_gamma1(1.0);
        let sol = cd_lasso_variant(&prob, Array2::zeros((1, 1)).view(), 100, 1e-12).unwrap();
        assert!((sol.coef[[0, 0]] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_trace_without_anchor_gives_zero() {
        let r = array![[1.0, 2.0]];
        let phi = array![[0.0, 0.0]];
        let prob = LassoProblem::new(r.view(), phi.view(), None).unwrap();
        let sol = cd_lasso_variant(&prob, array![[3.0]].view(), 10, 1e-12).unwrap();
        assert_eq!(sol.coef[[0, 0]], 0.0);
    }

    #[test]
    fn nan_input_is_numeric_error() {
        let r = array![[f64::NAN, 2.0]];
        let phi = array![[1.0, 1.0]];
        let prob = LassoProblem::new(r.view(), phi.view(), None).unwrap();
        let err = cd_lasso_variant(&prob, array![[0.0]].view(), 10, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn nonneg_clamps() {
        let r = array![[-2.0, -1.0]];
        let phi = array![[1.0, 1.0]];
        let prob = LassoProblem::new(r.view(), phi.view(), None)
            .unwrap()
            .with_nonneg(true);
        let sol = cd_lasso_variant(&prob, array![[1.0]].view(), 10, 1e-12).unwrap();
        assert_eq!(sol.coef[[0, 0]], 0.0);
    }

    #[test]
    fn masked_entries_are_ignored() {
        // the masked entry would pull the coefficient toward 100
        let r = array![[1.0, 100.0, 1.0]];
        let phi = array![[1.0, 1.0, 1.0]];
        let mask = array![[true, false, true]];
        let prob = LassoProblem::new(r.view(), phi.view(), Some(mask.view())).unwrap();
        let sol = cd_lasso_variant(&prob, array![[0.0]].view(), 50, 1e-14).unwrap();
        assert!((sol.coef[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blocks_equal_stacked_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r1 = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let r2 = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let f1 = Array2::from_shape_fn((2, 5), |_| rng.random_range(-1.0..1.0));
        let f2 = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        let stacked_r = ndarray::concatenate(Axis(1), &[r1.view(), r2.view()]).unwrap();
        let stacked_f = ndarray::concatenate(Axis(1), &[f1.view(), f2.view()]).unwrap();
        let a = LassoProblem::new(stacked_r.view(), stacked_f.view(), None)
            .unwrap()
            .with_gamma1(0.1);
        let b = LassoProblem::from_blocks(
            3,
            2,
            [
                LassoBlock { residual: r1.view(), traces: f1.view(), mask: None },
                LassoBlock { residual: r2.view(), traces: f2.view(), mask: None },
            ],
        )
        .unwrap()
        .with_gamma1(0.1);
        let warm = Array2::zeros((3, 2));
        let sa = cd_lasso_variant(&a, warm.view(), 200, 1e-12).unwrap();
        let sb = cd_lasso_variant(&b, warm.view(), 200, 1e-12).unwrap();
        for (x, y) in sa.coef.iter().zip(sb.coef.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // data term through sufficient statistics equals the direct norm
        let direct = (&stacked_r - &sa.coef.dot(&stacked_f)).mapv(|v| v * v).sum();
        assert!((a.data_term(sa.coef.view()) - direct).abs() < 1e-10);
    }

    #[test]
    fn objective_never_increases_across_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (n, p, t) = (4, 3, 12);
            let r = Array2::from_shape_fn((n, t), |_| rng.random_range(-2.0..2.0));
            let phi = Array2::from_shape_fn((p, t), |_| rng.random_range(-1.0..1.0));
            let target = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
            let prob = LassoProblem::new(r.view(), phi.view(), None)
                .unwrap()
                .with_gamma1(rng.random_range(0.0..1.0))
                .with_anchor(target, rng.random_range(0.0..2.0));
            let mut a = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
            let mut prev = prob.objective(a.view());
            for _ in 0..15 {
                a = cd_lasso_variant(&prob, a.view(), 1, 0.0).unwrap().coef;
                let obj = prob.objective(a.view());
                assert!(obj <= prev + 1e-12 * prev.abs().max(1.0), "{obj} > {prev}");
                prev = obj;
            }
        }
    }
}
