//! Outer alternating loop.
//!
//! Each outer iteration updates every variant of every category in turn
//! (Gauss–Seidel: the freshest sibling values feed the consistency anchor),
//! normalizes the updated variant's columns to unit L1 norm while rescaling
//! the matching trace rows, then refits every trial's traces.
//!
//! The consistency term couples variant pairs through the symmetrized graph
//! `c_ii' = (λ_ii' + λ_i'i) / 2`, counted once per unordered pair:
//!
//! ```text
//! γ2 Σ_k Σ_{i<i'} c_ii' ‖A_i − A_i'‖²
//! ```
//!
//! so that one variant update is an exact block minimization of the total
//! objective. Free variants have their coupling row and column removed.

use std::time::{Duration, Instant};

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;

use crate::data::{loading_from, Hyperparams, ModelState, TrialSet};
use crate::error::{Error, Result};
use crate::graph::{build_graphs, SimilarityGraph};
use crate::init::{category_assignments, dict_learn_with, seed_model, DictLearnParams, InitResult};
use crate::solvers::{
    cd_lasso_variant, fit_transition, solve_traces, trace_objective, BlockStats, LassoBlock,
    LassoProblem, TracePrior,
};

#[derive(Debug, Clone)]
pub struct FitReport {
    pub state: ModelState,
    pub iters: usize,
    pub final_objective: f64,
    pub per_iter_timing: Vec<Duration>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: usize,
    pub objective: f64,
    pub elapsed: Duration,
}

/// Symmetric variant coupling weights, one matrix per category.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub weights: Vec<Array2<f64>>,
}

impl Coupling {
    pub fn from_graphs(state_categories: &[crate::data::CategorySpec], graphs: &[SimilarityGraph]) -> Self {
        let weights = state_categories
            .iter()
            .zip(graphs)
            .map(|(cat, g)| {
                let mut c = g.symmetrized();
                for &i in &cat.free_variants {
                    c.row_mut(i).fill(0.0);
                    c.column_mut(i).fill(0.0);
                }
                c
            })
            .collect();
        Coupling { weights }
    }

    /// `Σ_k Σ_{i<i'} c_ii' ‖A_i − A_i'‖²` (unweighted by γ2).
    pub fn penalty(&self, state: &ModelState) -> f64 {
        let mut total = 0.0;
        for (tensor, c) in state.components.iter().zip(&self.weights) {
            let v = tensor.n_variants();
            for i in 0..v {
                for i2 in (i + 1)..v {
                    if c[[i, i2]] == 0.0 {
                        continue;
                    }
                    let d = &tensor.variant(i) - &tensor.variant(i2);
                    total += c[[i, i2]] * d.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
        total
    }
}

/// `Y^(m)` minus the reconstruction from every category except `k`, with
/// unobserved entries set to zero.
pub fn partial_residual(state: &ModelState, trials: &TrialSet, m: usize, k: usize) -> Array2<f64> {
    let trial = &trials.trials[m];
    let phi = &state.traces.traces[m];
    let mut r = trial.data.clone();
    for (k2, tensor) in state.components.iter().enumerate() {
        if k2 == k {
            continue;
        }
        let rows = state.traces.groups.range(k2);
        let a = tensor.variant(trial.label.get(k2));
        r -= &a.dot(&phi.slice(s![rows, ..]));
    }
    if let Some(mask) = &trial.mask {
        r.zip_mut_with(mask, |v, &obs| {
            if !obs {
                *v = 0.0
            }
        });
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantUpdate {
    pub n_trials: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub warning: Option<String>,
}

/// Refits variant `i` of category `k` on every trial carrying that value,
/// pulled toward its siblings by the coupling weights.
pub fn update_variant(
    state: &mut ModelState,
    trials: &TrialSet,
    k: usize,
    i: usize,
    coupling: &Coupling,
    hyper: &Hyperparams,
) -> Result<VariantUpdate> {
    let members = trials.trials_with_value(k, i);
    let rows = state.traces.groups.range(k);
    let n = state.n_channels();
    let p = rows.len();

    let stats = members
        .par_iter()
        .map(|&m| {
            let residual = partial_residual(state, trials, m, k);
            let traces = state.traces.traces[m].slice(s![rows.clone(), ..]);
            BlockStats::from_block(LassoBlock {
                residual: residual.view(),
                traces,
                mask: trials.trials[m].mask.as_ref().map(|x| x.view()),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let c = &coupling.weights[k];
    let tensor = &state.components[k];
    let total_weight: f64 = (0..tensor.n_variants()).filter(|&j| j != i).map(|j| c[[i, j]]).sum();
    let mut problem = LassoProblem::from_stats(n, p, stats)?
        .with_gamma1(hyper.gamma1)
        .with_nonneg(hyper.nonneg_components);
    if hyper.gamma2 > 0.0 && total_weight > 0.0 {
        let mut anchor = Array2::zeros((n, p));
        for j in (0..tensor.n_variants()).filter(|&j| j != i && c[[i, j]] > 0.0) {
            anchor.scaled_add(c[[i, j]] / total_weight, &tensor.variant(j));
        }
        problem = problem.with_anchor(anchor, hyper.gamma2 * total_weight);
    } else if members.is_empty() {
        return Ok(VariantUpdate {
            n_trials: 0,
            sweeps: 0,
            converged: true,
            warning: Some(format!(
                "category '{}' value '{}' has no trials and no coupling; left unchanged",
                state.categories[k].name, state.categories[k].values[i]
            )),
        });
    }

    let sol = cd_lasso_variant(&problem, tensor.variant(i), hyper.cd_max_sweeps, hyper.cd_tol)?;
    state.components[k].variant_mut(i).assign(&sol.coef);
    Ok(VariantUpdate {
        n_trials: members.len(),
        sweeps: sol.sweeps,
        converged: sol.converged,
        warning: None,
    })
}

/// Scales each column of variant `i` of category `k` to unit L1 norm and
/// multiplies the matching trace rows of its trials by the old norm. Returns
/// the indices of all-zero columns.
pub fn normalize_variant(state: &mut ModelState, trials: &TrialSet, k: usize, i: usize) -> Vec<usize> {
    let rows = state.traces.groups.range(k);
    let members = trials.trials_with_value(k, i);
    let mut dead = Vec::new();
    let mut variant = state.components[k].variant_mut(i);
    for (j, mut col) in variant.axis_iter_mut(Axis(1)).enumerate() {
        let norm: f64 = col.iter().map(|v| v.abs()).sum();
        if norm == 0.0 {
            dead.push(j);
            continue;
        }
        if norm == 1.0 {
            continue;
        }
        col.mapv_inplace(|v| v / norm);
        for &m in &members {
            state.traces.traces[m]
                .row_mut(rows.start + j)
                .mapv_inplace(|v| v * norm);
        }
    }
    dead
}

/// Dead columns as `(category, component, value)`.
pub fn normalize_components(state: &mut ModelState, trials: &TrialSet) -> Vec<(usize, usize, usize)> {
    let mut dead = Vec::new();
    for k in 0..state.components.len() {
        for i in 0..state.components[k].n_variants() {
            dead.extend(normalize_variant(state, trials, k, i).into_iter().map(|j| (k, j, i)));
        }
    }
    dead
}

/// Refits every trial's traces (and transition matrices in LDS mode).
/// Returns solver warnings.
pub fn update_traces(state: &mut ModelState, trials: &TrialSet, hyper: &Hyperparams) -> Result<Vec<String>> {
    let lds = hyper.lds_enabled;
    if lds && state.transitions.is_none() {
        let init = state
            .traces
            .traces
            .par_iter()
            .map(|phi| fit_transition(phi.view(), hyper.gamma5))
            .collect::<Result<Vec<_>>>()?;
        state.transitions = Some(init);
    }
    let results = (0..trials.n_trials())
        .into_par_iter()
        .map(|m| {
            let trial = &trials.trials[m];
            let loading = loading_from(&state.components, &state.traces.groups, &trial.label);
            let mask = trial.mask.as_ref().map(|x| x.view());
            let mut phi = state.traces.traces[m].clone();
            let mut warnings = Vec::new();
            let mut transition = None;
            if lds {
                let mut w = state.transitions.as_ref().expect("initialized above")[m].clone();
                for _ in 0..hyper.lds_inner_iters {
                    let prior = TracePrior::Lds(w);
                    let sol = solve_traces(
                        trial.data.view(),
                        mask,
                        loading.view(),
                        hyper.gamma3,
                        hyper.gamma4,
                        hyper.nonneg_traces,
                        &prior,
                        &hyper.trace_solver,
                        phi.view(),
                    )?;
                    warnings.extend(sol.warning);
                    phi = sol.phi;
                    w = fit_transition(phi.view(), hyper.gamma5)?;
                }
                transition = Some(w);
            } else {
                let sol = solve_traces(
                    trial.data.view(),
                    mask,
                    loading.view(),
                    hyper.gamma3,
                    hyper.gamma4,
                    hyper.nonneg_traces,
                    &TracePrior::Smoothness,
                    &hyper.trace_solver,
                    phi.view(),
                )?;
                warnings.extend(sol.warning);
                phi = sol.phi;
            }
            let warnings: Vec<String> = warnings.into_iter().map(|w| format!("trial '{}': {w}", trial.id)).collect();
            Ok((phi, transition, warnings))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut all_warnings = Vec::new();
    for (m, (phi, transition, warnings)) in results.into_iter().enumerate() {
        state.traces.traces[m] = phi;
        if let (Some(w), Some(ws)) = (transition, state.transitions.as_mut()) {
            ws[m] = w;
        }
        all_warnings.extend(warnings);
    }
    Ok(all_warnings)
}

/// Squared residual over observed entries and the observed-entry count.
pub fn residual_sum_of_squares(state: &ModelState, trials: &TrialSet) -> (f64, usize) {
    let per_trial: Vec<(f64, usize)> = (0..trials.n_trials())
        .into_par_iter()
        .map(|m| {
            let trial = &trials.trials[m];
            let r = &trial.data - &state.reconstruct(m);
            let mut ssr = 0.0;
            let mut count = 0;
            for ((a, b), v) in r.indexed_iter() {
                if trial.observed(a, b) {
                    ssr += v * v;
                    count += 1;
                }
            }
            (ssr, count)
        })
        .collect();
    per_trial
        .into_iter()
        .fold((0.0, 0), |(s, c), (s2, c2)| (s + s2, c + c2))
}

/// Total objective: masked fidelity, component L1, variant consistency and
/// per-trial trace penalties (plus the transition ridge in LDS mode).
pub fn objective(state: &ModelState, trials: &TrialSet, coupling: &Coupling, hyper: &Hyperparams) -> f64 {
    let l1: f64 = state
        .components
        .iter()
        .map(|c| c.values.iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    let consistency = if hyper.gamma2 > 0.0 {
        coupling.penalty(state)
    } else {
        0.0
    };
    let per_trial: Vec<f64> = (0..trials.n_trials())
        .into_par_iter()
        .map(|m| {
            let trial = &trials.trials[m];
            let loading = loading_from(&state.components, &state.traces.groups, &trial.label);
            let (prior, ridge) = match (&state.transitions, hyper.lds_enabled) {
                (Some(ws), true) => {
                    let w = &ws[m];
                    let eye = Array2::<f64>::eye(w.nrows());
                    let d = w - &eye;
                    (TracePrior::Lds(w.clone()), hyper.gamma3 * hyper.gamma5 * d.iter().map(|v| v * v).sum::<f64>())
                }
                _ => (TracePrior::Smoothness, 0.0),
            };
            trace_objective(
                trial.data.view(),
                trial.mask.as_ref().map(|x| x.view()),
                loading.view(),
                state.traces.traces[m].view(),
                hyper.gamma3,
                hyper.gamma4,
                &prior,
            ) + ridge
        })
        .collect();
    per_trial.iter().sum::<f64>() + hyper.gamma1 * l1 + hyper.gamma2 * consistency
}

fn check_finite(state: &ModelState) -> Result<()> {
    let comps = state.components.iter().all(|c| c.values.iter().all(|v| v.is_finite()));
    let traces = state.traces.traces.iter().all(|t| t.iter().all(|v| v.is_finite()));
    if comps && traces {
        Ok(())
    } else {
        Err(Error::numeric("non-finite values in model state"))
    }
}

pub fn fit(trials: &TrialSet, hyper: &Hyperparams) -> Result<FitReport> {
    fit_with_progress(trials, hyper, |_| {})
}

pub fn fit_with_progress(
    trials: &TrialSet,
    hyper: &Hyperparams,
    mut progress: impl FnMut(&Progress),
) -> Result<FitReport> {
    hyper.validate()?;
    trials.validate()?;
    let init = initial_dictionary(trials, hyper)?;
    let mut warnings: Vec<String> = init.warning.iter().cloned().collect();
    let sizes: Vec<usize> = trials.categories.iter().map(|c| c.n_components).collect();
    let probe = hyper.assignment_probe_iters.min(hyper.max_outer_iters);
    let candidates = if probe == 0 || sizes.len() < 2 {
        None
    } else {
        category_assignments(&sizes, hyper.max_assignment_candidates)
    };
    let Some(candidates) = candidates else {
        if probe > 0 && sizes.len() >= 2 {
            warnings.push(format!(
                "more than {} column-to-category assignments; using declaration order",
                hyper.max_assignment_candidates
            ));
        }
        let state = seed_model(&init, trials)?;
        return fit_from_state(trials, hyper, state, warnings, progress);
    };

    // short probe of every assignment; the lowest objective continues
    let probe_hyper = Hyperparams {
        max_outer_iters: probe,
        ..hyper.clone()
    };
    let mut best: Option<FitReport> = None;
    let mut first_error = None;
    for order in &candidates {
        let state = seed_model(&init.permuted(order), trials)?;
        match fit_from_state(trials, &probe_hyper, state, Vec::new(), |_| {}) {
            Ok(report) => {
                if best.as_ref().is_none_or(|b| report.final_objective < b.final_objective) {
                    best = Some(report);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let Some(best) = best else {
        return Err(first_error.expect("at least one candidate ran"));
    };
    for (i, (&objective, &elapsed)) in best
        .state
        .objective_history
        .iter()
        .zip(&best.per_iter_timing)
        .enumerate()
    {
        progress(&Progress {
            iteration: i + 1,
            objective,
            elapsed,
        });
    }
    warnings.extend(best.warnings);
    if best.state.converged {
        return Ok(FitReport { warnings, ..best });
    }
    let mut report = fit_from_state(trials, hyper, best.state, warnings, progress)?;
    let mut timing = best.per_iter_timing;
    timing.append(&mut report.per_iter_timing);
    report.per_iter_timing = timing;
    Ok(report)
}

fn initial_dictionary(trials: &TrialSet, hyper: &Hyperparams) -> Result<InitResult> {
    let params = DictLearnParams {
        n_components: trials.group_index().total(),
        gamma1: hyper.gamma1_init.unwrap_or(hyper.gamma1),
        n_iters: hyper.init_iters,
        seed: hyper.seed,
        nonneg_dictionary: hyper.nonneg_components,
        nonneg_codes: hyper.nonneg_traces,
        cd_max_sweeps: hyper.cd_max_sweeps,
        cd_tol: hyper.cd_tol,
    };
    dict_learn_with(trials, &params)
}

/// Dictionary-learning start with columns assigned in declaration order.
pub fn initialize(trials: &TrialSet, hyper: &Hyperparams) -> Result<(ModelState, Vec<String>)> {
    let init = initial_dictionary(trials, hyper)?;
    let warnings = init.warning.iter().cloned().collect();
    Ok((seed_model(&init, trials)?, warnings))
}

/// Runs outer iterations from `state` until convergence or until the
/// objective history holds `max_outer_iters` entries.
pub fn fit_from_state(
    trials: &TrialSet,
    hyper: &Hyperparams,
    mut state: ModelState,
    mut warnings: Vec<String>,
    mut progress: impl FnMut(&Progress),
) -> Result<FitReport> {
    hyper.validate()?;
    let graphs = build_graphs(&trials.categories)?;
    let coupling = Coupling::from_graphs(&trials.categories, &graphs);
    state.converged = false;
    let push_warning = |w: String, warnings: &mut Vec<String>| {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    };

    let mut prev = match state.objective_history.last() {
        Some(&obj) => obj,
        None => objective(&state, trials, &coupling, hyper),
    };
    let mut timing = Vec::new();
    let mut iters = state.objective_history.len();
    while iters < hyper.max_outer_iters {
        let start = Instant::now();
        let last_good = state.clone();
        let step = (|| -> Result<Vec<String>> {
            let mut notes = Vec::new();
            for k in 0..state.components.len() {
                for i in 0..state.components[k].n_variants() {
                    let upd = update_variant(&mut state, trials, k, i, &coupling, hyper)?;
                    notes.extend(upd.warning);
                    for j in normalize_variant(&mut state, trials, k, i) {
                        notes.push(format!(
                            "component {j} of category '{}' value '{}' is zero",
                            state.categories[k].name, state.categories[k].values[i]
                        ));
                    }
                }
            }
            notes.extend(update_traces(&mut state, trials, hyper)?);
            check_finite(&state)?;
            Ok(notes)
        })();
        let notes = match step {
            Ok(notes) => notes,
            Err(source) => {
                let mut last_state = last_good;
                let (ssr, count) = residual_sum_of_squares(&last_state, trials);
                last_state.noise_variance = ssr / count.max(1) as f64;
                return Err(Error::FitAborted {
                    iters,
                    source: Box::new(source),
                    last_state: Box::new(last_state),
                });
            }
        };
        for w in notes {
            push_warning(w, &mut warnings);
        }
        iters += 1;
        let obj = objective(&state, trials, &coupling, hyper);
        state.objective_history.push(obj);
        let elapsed = start.elapsed();
        timing.push(elapsed);
        progress(&Progress {
            iteration: iters,
            objective: obj,
            elapsed,
        });
        let rel = (prev - obj).abs() / prev.max(1e-12);
        prev = obj;
        if rel < hyper.tol {
            state.converged = true;
            break;
        }
    }
    let (ssr, count) = residual_sum_of_squares(&state, trials);
    state.noise_variance = ssr / count.max(1) as f64;
    Ok(FitReport {
        state,
        iters,
        final_objective: prev,
        per_iter_timing: timing,
        warnings,
    })
}
