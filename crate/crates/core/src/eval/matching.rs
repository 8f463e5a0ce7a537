//! Aligning estimated components with ground truth.

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use crate::data::{ComponentTensor, ModelState};
use crate::error::{Error, Result};
use crate::solvers::linear_sum_assignment;
use crate::synth::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// `permutation[t]` is the estimated component matched to true component `t`.
    pub permutation: Vec<usize>,
    /// Signed Pearson correlation per true component.
    pub component_corr: Vec<f64>,
    pub trace_corr: Vec<f64>,
    pub mean_component_corr: f64,
    pub mean_trace_corr: f64,
    pub warnings: Vec<String>,
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

struct Column {
    /// Concatenation over variants.
    stacked: Vec<f64>,
    /// Mean over variants.
    mean: Vec<f64>,
    n_variants: usize,
}

fn columns(components: &[ComponentTensor]) -> Vec<Column> {
    let mut out = Vec::new();
    for tensor in components {
        for j in 0..tensor.n_components() {
            let col = tensor.values.index_axis(Axis(1), j); // N × V
            let stacked = col.t().iter().copied().collect();
            let mean: Array1<f64> = col.mean_axis(Axis(1)).unwrap_or_else(|| Array1::zeros(col.nrows()));
            out.push(Column {
                stacked,
                mean: mean.to_vec(),
                n_variants: tensor.n_variants(),
            });
        }
    }
    out
}

fn trace_rows(traces: &[Array2<f64>], p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|j| traces.iter().flat_map(|phi| phi.row(j).to_vec()).collect())
        .collect()
}

pub fn match_and_score(est: &ModelState, truth: &GroundTruth) -> Result<MatchResult> {
    match_components(&est.components, &est.traces.traces, &truth.components, &truth.traces)
}

/// Matches by `1 − |r|` between component columns (variants concatenated
/// when both sides have the same variant count, variant means otherwise),
/// then scores traces under the same assignment.
pub fn match_components(
    est_components: &[ComponentTensor],
    est_traces: &[Array2<f64>],
    true_components: &[ComponentTensor],
    true_traces: &[Array2<f64>],
) -> Result<MatchResult> {
    let est_cols = columns(est_components);
    let true_cols = columns(true_components);
    let p = true_cols.len();
    if est_cols.len() != p {
        return Err(Error::schema(format!(
            "estimated model has {} components, ground truth has {p}",
            est_cols.len()
        )));
    }
    let n_channels = |cs: &[ComponentTensor]| cs.first().map(|c| c.n_channels());
    if n_channels(est_components) != n_channels(true_components) {
        return Err(Error::schema("channel counts differ"));
    }
    if est_traces.len() != true_traces.len()
        || est_traces.iter().zip(true_traces).any(|(a, b)| a.dim() != b.dim())
    {
        return Err(Error::schema("trace shapes differ between model and ground truth"));
    }

    let mut warnings = Vec::new();
    let mut corr = Array2::zeros((p, p));
    for (t, tc) in true_cols.iter().enumerate() {
        for (e, ec) in est_cols.iter().enumerate() {
            let r = if tc.n_variants == ec.n_variants {
                pearson(&tc.stacked, &ec.stacked)
            } else {
                pearson(&tc.mean, &ec.mean)
            };
            corr[[t, e]] = r.unwrap_or_else(|| {
                let w = format!("zero-variance component (true {t}, estimated {e}); correlation set to 0");
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
                0.0
            });
        }
    }
    let cost = corr.mapv(|r: f64| 1.0 - r.abs());
    let permutation = linear_sum_assignment(cost.view());

    let est_rows = trace_rows(est_traces, p);
    let true_rows = trace_rows(true_traces, p);
    let mut trace_corr = Vec::with_capacity(p);
    for (t, &e) in permutation.iter().enumerate() {
        trace_corr.push(pearson(&true_rows[t], &est_rows[e]).unwrap_or_else(|| {
            warnings.push(format!("zero-variance trace (true {t}, estimated {e}); correlation set to 0"));
            0.0
        }));
    }
    let component_corr: Vec<f64> = permutation.iter().enumerate().map(|(t, &e)| corr[[t, e]]).collect();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(MatchResult {
        mean_component_corr: mean(&component_corr),
        mean_trace_corr: mean(&trace_corr),
        permutation,
        component_corr,
        trace_corr,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> (Vec<ComponentTensor>, Vec<Array2<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = vec![ComponentTensor {
            values: Array3::from_shape_fn((10, 3, 2), |_| rng.random_range(0.0..1.0)),
        }];
        let traces = (0..4)
            .map(|_| Array2::from_shape_fn((3, 15), |_| rng.random_range(0.0..1.0)))
            .collect();
        (comps, traces)
    }

    #[test]
    fn self_match_is_perfect() {
        let (c, t) = random_model(1);
        let r = match_components(&c, &t, &c, &t).unwrap();
        assert_eq!(r.permutation, vec![0, 1, 2]);
        assert!((r.mean_component_corr - 1.0).abs() < 1e-12);
        assert!((r.mean_trace_corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shuffled_components_are_unshuffled() {
        let (c, t) = random_model(2);
        let shuffle = [2, 0, 1];
        let mut c2 = c.clone();
        for (new, &old) in shuffle.iter().enumerate() {
            c2[0].values.index_axis_mut(Axis(1), new).assign(&c[0].values.index_axis(Axis(1), old));
        }
        let t2: Vec<Array2<f64>> = t.iter().map(|phi| phi.select(Axis(0), &shuffle)).collect();
        let r = match_components(&c2, &t2, &c, &t).unwrap();
        for (truth, &est) in r.permutation.iter().enumerate() {
            assert_eq!(shuffle[est], truth);
        }
        assert!((r.mean_component_corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_warns() {
        let (c, t) = random_model(3);
        let mut c2 = c.clone();
        c2[0].values.index_axis_mut(Axis(1), 0).fill(0.0);
        let r = match_components(&c2, &t, &c, &t).unwrap();
        assert!(!r.warnings.is_empty());
        assert!(r.component_corr.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn pearson_basics() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), Some(1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
    }
}
