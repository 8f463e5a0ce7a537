//! Channel importance and permutation nulls for a fitted model.
//!
//! Zeroing channel `n` in every component tensor zeroes exactly row `n` of
//! every reconstruction, so the pooled MSE of any channel coalition is a sum
//! of per-channel terms: the fitted squared error for kept channels and the
//! raw signal energy for dropped ones. All coalition values below are read
//! from that per-channel table.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{loading_from, ComponentTensor, ModelState, TrialSet};
use crate::error::{Error, Result};
use crate::rng::stream_seed;

/// Per-channel squared error with the channel kept and with it zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTable {
    pub kept: Vec<f64>,
    pub dropped: Vec<f64>,
    pub n_observed: usize,
}

impl ChannelTable {
    pub fn new(state: &ModelState, trials: &TrialSet) -> Result<Self> {
        if state.traces.len() != trials.n_trials() || state.n_channels() != trials.n_channels() {
            return Err(Error::schema("model and dataset do not describe the same trials"));
        }
        let n = trials.n_channels();
        let per_trial: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..trials.n_trials())
            .into_par_iter()
            .map(|m| {
                let trial = &trials.trials[m];
                let recon = state.reconstruct(m);
                let mut kept = vec![0.0; n];
                let mut dropped = vec![0.0; n];
                let mut count = 0;
                for ((r, c), &y) in trial.data.indexed_iter() {
                    if trial.observed(r, c) {
                        let d = y - recon[[r, c]];
                        kept[r] += d * d;
                        dropped[r] += y * y;
                        count += 1;
                    }
                }
                (kept, dropped, count)
            })
            .collect();
        let mut table = ChannelTable {
            kept: vec![0.0; n],
            dropped: vec![0.0; n],
            n_observed: 0,
        };
        for (k, d, c) in per_trial {
            for i in 0..n {
                table.kept[i] += k[i];
                table.dropped[i] += d[i];
            }
            table.n_observed += c;
        }
        Ok(table)
    }

    pub fn n_channels(&self) -> usize {
        self.kept.len()
    }

    /// Pooled MSE with only the channels in `coalition` kept.
    pub fn mse(&self, coalition: &[bool]) -> f64 {
        let sse: f64 = coalition
            .iter()
            .enumerate()
            .map(|(i, &keep)| if keep { self.kept[i] } else { self.dropped[i] })
            .sum();
        sse / self.n_observed.max(1) as f64
    }

    /// Coalition value `−MSE`.
    pub fn value(&self, coalition: &[bool]) -> f64 {
        -self.mse(coalition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaveOneOut {
    pub base_mse: f64,
    pub mse: Vec<f64>,
    /// `100 (MSE_without − MSE) / MSE`.
    pub contribution: Vec<f64>,
}

pub fn leave_one_out(state: &ModelState, trials: &TrialSet) -> Result<LeaveOneOut> {
    let table = ChannelTable::new(state, trials)?;
    let n = table.n_channels();
    let mut coalition = vec![true; n];
    let base = table.mse(&coalition);
    let mut mse = Vec::with_capacity(n);
    let mut contribution = Vec::with_capacity(n);
    for i in 0..n {
        coalition[i] = false;
        let without = table.mse(&coalition);
        coalition[i] = true;
        mse.push(without);
        contribution.push(if base > 0.0 {
            100.0 * (without - base) / base
        } else if without == base {
            0.0
        } else {
            f64::INFINITY
        });
    }
    Ok(LeaveOneOut {
        base_mse: base,
        mse,
        contribution,
    })
}

/// Monte-Carlo Shapley values from `n_samples` random channel orderings; each
/// channel's marginal gain is taken against the channels preceding it.
pub fn shapley_approx(state: &ModelState, trials: &TrialSet, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::parameter("n_coalitions must be >= 1"));
    }
    let table = ChannelTable::new(state, trials)?;
    Ok(shapley_sampled(&table, n_samples, seed))
}

pub fn shapley_sampled(table: &ChannelTable, n_samples: usize, seed: u64) -> Vec<f64> {
    let n = table.n_channels();
    let sums: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 10, s as u64, 0));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut coalition = vec![false; n];
            let mut current = table.value(&coalition);
            let mut gains = vec![0.0; n];
            for &i in &order {
                coalition[i] = true;
                let next = table.value(&coalition);
                gains[i] = next - current;
                current = next;
            }
            gains
        })
        .collect();
    let mut out = vec![0.0; n];
    for g in sums {
        for i in 0..n {
            out[i] += g[i];
        }
    }
    out.iter().map(|v| v / n_samples as f64).collect()
}

/// Exact Shapley values by enumerating every coalition (N ≤ 20).
pub fn shapley_exhaustive(state: &ModelState, trials: &TrialSet) -> Result<Vec<f64>> {
    let table = ChannelTable::new(state, trials)?;
    shapley_enumerated(&table)
}

pub fn shapley_enumerated(table: &ChannelTable) -> Result<Vec<f64>> {
    let n = table.n_channels();
    if n > 20 {
        return Err(Error::parameter(format!("exhaustive Shapley supports at most 20 channels, got {n}")));
    }
    let values: Vec<f64> = (0..1usize << n)
        .map(|mask| {
            let coalition: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            table.value(&coalition)
        })
        .collect();
    // weight |S|! (n − |S| − 1)! / n!
    let mut weight = vec![0.0; n.max(1)];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut x = 1.0 / n as f64;
        // 1 / (n · C(n−1, s))
        let mut binom = 1.0;
        for t in 0..s {
            binom = binom * (n - 1 - t) as f64 / (t + 1) as f64;
        }
        x /= binom;
        *w = x;
    }
    let mut phi = vec![0.0; n];
    for mask in 0..1usize << n {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += weight[size] * (values[mask | 1 << i] - values[mask]);
            }
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NullTest {
    pub p_value: f64,
    pub null_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentNull {
    pub category: String,
    pub component: usize,
    pub p_value: f64,
    pub mean_null_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationReport {
    pub original_mse: f64,
    pub n_perm: usize,
    pub shuffle_rows: NullTest,
    pub random_control: NullTest,
    pub shuffle_each_component: NullTest,
    pub per_component: Vec<ComponentNull>,
}

/// `(#{null ≤ original} + 1) / (n + 1)`.
pub fn p_value(original: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&v| v <= original).count();
    (hits + 1) as f64 / (null.len() + 1) as f64
}

fn pooled_mse(components: &[ComponentTensor], state: &ModelState, trials: &TrialSet) -> f64 {
    let (mut sse, mut count) = (0.0, 0usize);
    for (m, trial) in trials.trials.iter().enumerate() {
        let loading = loading_from(components, &state.traces.groups, &trial.label);
        let recon = loading.dot(&state.traces.traces[m]);
        for ((r, c), &y) in trial.data.indexed_iter() {
            if trial.observed(r, c) {
                let d = y - recon[[r, c]];
                sse += d * d;
                count += 1;
            }
        }
    }
    sse / count.max(1) as f64
}

fn permute_rows(tensor: &ComponentTensor, perm: &[usize]) -> ComponentTensor {
    ComponentTensor {
        values: tensor.values.select(Axis(0), perm),
    }
}

fn run_null(
    n_perm: usize,
    seed: u64,
    tag: u64,
    original: f64,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<ComponentTensor> + Sync,
    state: &ModelState,
    trials: &TrialSet,
) -> NullTest {
    let null_mse: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, tag, it as u64, 0));
            pooled_mse(&make(&mut rng), state, trials)
        })
        .collect();
    NullTest {
        p_value: p_value(original, &null_mse),
        null_mse,
    }
}

/// Three nulls on the component tensors (traces fixed): one channel
/// permutation shared by all tensors; Gaussian tensors matching the global
/// mean and standard deviation; an independent channel permutation per
/// component column (shared across that column's variants). Also permutes
/// each component column alone.
pub fn permutation_tests(state: &ModelState, trials: &TrialSet, n_perm: usize, seed: u64) -> Result<PermutationReport> {
    if n_perm == 0 {
        return Err(Error::parameter("n_perm must be >= 1"));
    }
    if state.traces.len() != trials.n_trials() || state.n_channels() != trials.n_channels() {
        return Err(Error::schema("model and dataset do not describe the same trials"));
    }
    let n = state.n_channels();
    let comps = &state.components;
    let original = pooled_mse(comps, state, trials);

    let shuffle_rows = run_null(
        n_perm,
        seed,
        20,
        original,
        |rng| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            comps.iter().map(|c| permute_rows(c, &perm)).collect()
        },
        state,
        trials,
    );

    let all: Vec<f64> = comps.iter().flat_map(|c| c.values.iter().copied()).collect();
    let count = all.len().max(1) as f64;
    let mean = all.iter().sum::<f64>() / count;
    let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count).sqrt();
    let normal = Normal::new(mean, std).map_err(|e| Error::numeric(e.to_string()))?;
    let random_control = run_null(
        n_perm,
        seed,
        21,
        original,
        |rng| {
            comps
                .iter()
                .map(|c| ComponentTensor {
                    values: c.values.mapv(|_| normal.sample(rng)),
                })
                .collect()
        },
        state,
        trials,
    );

    let shuffle_column = |c: &mut ComponentTensor, j: usize, rng: &mut ChaCha8Rng| {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let col = c.values.index_axis(Axis(1), j).select(Axis(0), &perm);
        c.values.index_axis_mut(Axis(1), j).assign(&col);
    };
    let shuffle_each_component = run_null(
        n_perm,
        seed,
        22,
        original,
        |rng| {
            let mut out = comps.clone();
            for c in out.iter_mut() {
                for j in 0..c.n_components() {
                    shuffle_column(c, j, rng);
                }
            }
            out
        },
        state,
        trials,
    );

    let mut per_component = Vec::new();
    for (k, c) in comps.iter().enumerate() {
        for j in 0..c.n_components() {
            let g = state.traces.groups.range(k).start + j;
            let test = run_null(
                n_perm,
                seed,
                100 + g as u64,
                original,
                |rng| {
                    let mut out = comps.clone();
                    shuffle_column(&mut out[k], j, rng);
                    out
                },
                state,
                trials,
            );
            per_component.push(ComponentNull {
                category: state.categories[k].name.clone(),
                component: j,
                p_value: test.p_value,
                mean_null_mse: test.null_mse.iter().sum::<f64>() / n_perm as f64,
            });
        }
    }

    Ok(PermutationReport {
        original_mse: original,
        n_perm,
        shuffle_rows,
        random_control,
        shuffle_each_component,
        per_component,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub n_perm: usize,
    pub n_coalitions: usize,
    pub seed: u64,
    pub run_nulls: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            n_perm: 1000,
            n_coalitions: 500,
            seed: 0,
            run_nulls: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub leave_one_out: LeaveOneOut,
    pub shapley: Vec<f64>,
    pub permutation: Option<PermutationReport>,
}

pub fn validate_model(state: &ModelState, trials: &TrialSet, opts: &ValidationOptions) -> Result<ValidationReport> {
    if opts.n_perm == 0 {
        return Err(Error::parameter("n_perm must be >= 1"));
    }
    Ok(ValidationReport {
        leave_one_out: leave_one_out(state, trials)?,
        shapley: shapley_approx(state, trials, opts.n_coalitions, opts.seed)?,
        permutation: if opts.run_nulls {
            Some(permutation_tests(state, trials, opts.n_perm, opts.seed)?)
        } else {
            None
        },
    })
}

/// Zeroes channel rows outside `coalition` in every tensor (reference path
/// for checking the per-channel table).
pub fn restrict_channels(components: &[ComponentTensor], coalition: &[bool]) -> Vec<ComponentTensor> {
    components
        .iter()
        .map(|c| {
            let mut out = c.clone();
            for (i, &keep) in coalition.iter().enumerate() {
                if !keep {
                    out.values.index_axis_mut(Axis(0), i).fill(0.0);
                }
            }
            out
        })
        .collect()
}
