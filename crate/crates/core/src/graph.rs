//! Label-similarity graphs.
//!
//! Each category gets a |k| × |k| weight matrix saying how strongly two of
//! its variants are pulled together during the component update. Categorical
//! values are equally similar to one another; ordinal values use a Gaussian
//! kernel on the numeric label distance. Rows are normalized to unit L1 mass
//! after the diagonal is cleared.

use ndarray::Array2;

use crate::data::{CategoryKind, CategorySpec};
use crate::error::{Error, Result};

/// Distance kernel for ordinal categories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Kernel {
    #[default]
    Gaussian,
}

impl Kernel {
    pub fn eval(self, a: f64, b: f64, bandwidth: f64) -> f64 {
        match self {
            Kernel::Gaussian => {
                let d = a - b;
                (-(d * d) / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub category: String,
    pub weights: Array2<f64>,
}

impl SimilarityGraph {
    pub fn n_values(&self) -> usize {
        self.weights.nrows()
    }

    /// Symmetric part `(λ + λᵀ) / 2`, the pairwise weights used by the fit.
    pub fn symmetrized(&self) -> Array2<f64> {
        (&self.weights + &self.weights.t()) * 0.5
    }
}

/// Kernel matrix before diagonal removal and normalization.
pub fn raw_weights(category: &CategorySpec, kernel: Kernel) -> Result<Array2<f64>> {
    category.validate()?;
    let n = category.n_values();
    match category.kind {
        CategoryKind::Categorical => Ok(Array2::ones((n, n))),
        CategoryKind::Ordinal => {
            let vals = category.numeric_values()?;
            let bw = category.bandwidth.ok_or_else(|| {
                Error::schema(format!("ordinal category '{}' requires a bandwidth", category.name))
            })?;
            if !(bw > 0.0) {
                return Err(Error::parameter(format!("bandwidth must be > 0, got {bw}")));
            }
            Ok(Array2::from_shape_fn((n, n), |(i, j)| {
                kernel.eval(vals[i], vals[j], bw)
            }))
        }
    }
}

pub fn build_graph(category: &CategorySpec) -> Result<SimilarityGraph> {
    build_graph_with(category, Kernel::Gaussian)
}

pub fn build_graph_with(category: &CategorySpec, kernel: Kernel) -> Result<SimilarityGraph> {
    let mut w = raw_weights(category, kernel)?;
    let n = w.nrows();
    for i in 0..n {
        w[[i, i]] = 0.0;
    }
    for &i in &category.free_variants {
        w.row_mut(i).fill(0.0);
    }
    for mut row in w.rows_mut() {
        let sum: f64 = row.iter().map(|v| v.abs()).sum();
        if sum > 0.0 {
            row.mapv_inplace(|v| v / sum);
        }
    }
    Ok(SimilarityGraph {
        category: category.name.clone(),
        weights: w,
    })
}

pub fn build_graphs(categories: &[CategorySpec]) -> Result<Vec<SimilarityGraph>> {
    categories.iter().map(build_graph).collect()
}
