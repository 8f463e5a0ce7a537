//! Reconstruction error, information criteria and tensor distances.

use ndarray::{ArrayBase, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::data::{ComponentTensor, ModelState, TrialSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialError {
    pub mse: f64,
    pub relative_mse: f64,
    pub n_observed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionMetrics {
    pub per_trial: Vec<TrialError>,
    pub pooled_mse: f64,
    /// Observation-weighted mean of per-trial relative MSE.
    pub pooled_relative_mse: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Squared error and signal energy over the observed entries of trial `m`.
pub(crate) fn trial_sums(state: &ModelState, trials: &TrialSet, m: usize) -> (f64, f64, usize) {
    let trial = &trials.trials[m];
    let recon = state.reconstruct(m);
    let (mut sse, mut energy, mut count) = (0.0, 0.0, 0);
    for ((r, c), &y) in trial.data.indexed_iter() {
        if trial.observed(r, c) {
            let d = y - recon[[r, c]];
            sse += d * d;
            energy += y * y;
            count += 1;
        }
    }
    (sse, energy, count)
}

fn check_alignment(state: &ModelState, trials: &TrialSet) -> Result<()> {
    if state.traces.len() != trials.n_trials() || state.n_channels() != trials.n_channels() {
        return Err(Error::schema("model and dataset do not describe the same trials"));
    }
    for (m, t) in trials.trials.iter().enumerate() {
        if state.traces.traces[m].ncols() != t.n_times() || state.trials[m].label != t.label {
            return Err(Error::schema(format!("trial '{}' does not match the model", t.id)));
        }
    }
    Ok(())
}

pub fn reconstruction_metrics(state: &ModelState, trials: &TrialSet) -> Result<ReconstructionMetrics> {
    check_alignment(state, trials)?;
    let mut per_trial = Vec::with_capacity(trials.n_trials());
    let (mut sse_total, mut count_total, mut rel_weighted) = (0.0, 0usize, 0.0);
    for m in 0..trials.n_trials() {
        let (sse, energy, count) = trial_sums(state, trials, m);
        let mse = ratio(sse, count as f64);
        let relative_mse = ratio(sse, energy);
        sse_total += sse;
        count_total += count;
        rel_weighted += relative_mse * count as f64;
        per_trial.push(TrialError {
            mse,
            relative_mse,
            n_observed: count,
        });
    }
    Ok(ReconstructionMetrics {
        per_trial,
        pooled_mse: ratio(sse_total, count_total as f64),
        pooled_relative_mse: ratio(rel_weighted, count_total as f64),
    })
}

/// Parameter count used by the information criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfMode {
    /// Nonzero component entries.
    #[default]
    ComponentsNnz,
    /// Nonzero component entries plus every trace entry.
    ComponentsPlusTraces,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationCriteria {
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub hqc: f64,
    pub n_params: usize,
    pub n_observed: usize,
    pub warning: Option<String>,
}

/// Gaussian criteria from the residual sum of squares over `n` observations
/// and `k` parameters, with `σ̂² = ssr / n`.
pub fn criteria_from(ssr: f64, n: usize, k: usize) -> InformationCriteria {
    let nf = n as f64;
    let kf = k as f64;
    let sigma2 = ssr / nf;
    let (loglik, warning) = if sigma2 > 0.0 {
        (-nf / 2.0 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0), None)
    } else {
        (f64::INFINITY, Some("zero residual variance; log-likelihood is unbounded".to_string()))
    };
    InformationCriteria {
        loglik,
        aic: 2.0 * kf - 2.0 * loglik,
        bic: kf * nf.ln() - 2.0 * loglik,
        hqc: 2.0 * kf * nf.ln().ln() - 2.0 * loglik,
        n_params: k,
        n_observed: n,
        warning,
    }
}

pub fn information_criteria(state: &ModelState, trials: &TrialSet, mode: DfMode) -> Result<InformationCriteria> {
    check_alignment(state, trials)?;
    let (mut ssr, mut n) = (0.0, 0);
    for m in 0..trials.n_trials() {
        let (sse, _, count) = trial_sums(state, trials, m);
        ssr += sse;
        n += count;
    }
    let nnz: usize = state
        .components
        .iter()
        .map(|c| c.values.iter().filter(|&&v| v != 0.0).count())
        .sum();
    let k = match mode {
        DfMode::ComponentsNnz => nnz,
        DfMode::ComponentsPlusTraces => nnz + state.traces.traces.iter().map(|t| t.len()).sum::<usize>(),
    };
    Ok(criteria_from(ssr, n, k))
}

/// `‖a − b‖_F / sqrt(‖a‖_F² + ‖b‖_F²)`, zero when both are zero.
pub fn frobenius_distance<S1, S2, D>(a: &ArrayBase<S1, D>, b: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if a.shape() != b.shape() {
        return Err(Error::schema(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let den = (na + nb).sqrt();
    Ok(if den == 0.0 { 0.0 } else { diff.sqrt() / den })
}

/// Mean normalized distance over all pairs of variants; 0 for one variant.
pub fn mean_variant_distance(tensor: &ComponentTensor) -> f64 {
    let v = tensor.n_variants();
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..v {
        for j in (i + 1)..v {
            total += frobenius_distance(&tensor.variant(i), &tensor.variant(j)).expect("same shape");
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
