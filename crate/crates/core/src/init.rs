//! Dictionary-learning warm start.
//!
//! A single shared N × P dictionary is learned from all trials by alternating
//! a code step (per-trial least squares for the codes, optionally
//! nonnegative) with a sparse dictionary step (LASSO over all stacked trials),
//! then each dictionary column is L1-normalized and the matching code row is
//! rescaled. The dictionary columns are then split across categories in
//! declaration order and replicated over every variant.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ComponentTensor, ModelState, TraceSet, TrialMeta, TrialSet};
use crate::error::{Error, Result};
use crate::solvers::{cd_lasso_variant, LassoBlock, LassoProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct DictLearnParams {
    pub n_components: usize,
    /// Sparsity on dictionary entries.
    pub gamma1: f64,
    pub n_iters: usize,
    pub seed: u64,
    pub nonneg_dictionary: bool,
    pub nonneg_codes: bool,
    pub cd_max_sweeps: usize,
    pub cd_tol: f64,
}

impl DictLearnParams {
    pub fn new(n_components: usize, gamma1: f64, n_iters: usize, seed: u64) -> Self {
        DictLearnParams {
            n_components,
            gamma1,
            n_iters,
            seed,
            nonneg_dictionary: false,
            nonneg_codes: false,
            cd_max_sweeps: 200,
            cd_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    /// N × P; every column has L1 norm 1, or is entirely zero.
    pub dictionary: Array2<f64>,
    /// One P × T^(m) matrix per trial.
    pub codes: Vec<Array2<f64>>,
    pub n_iters_run: usize,
    /// Squared reconstruction error on observed entries after each alternation.
    pub recon_history: Vec<f64>,
    pub warning: Option<String>,
}

pub fn dict_learn(
    trials: &TrialSet,
    n_components: usize,
    gamma1_init: f64,
    n_iters: usize,
    seed: u64,
) -> Result<InitResult> {
    dict_learn_with(trials, &DictLearnParams::new(n_components, gamma1_init, n_iters, seed))
}

pub fn dict_learn_with(trials: &TrialSet, params: &DictLearnParams) -> Result<InitResult> {
    let p = params.n_components;
    if p == 0 {
        return Err(Error::parameter("dictionary needs at least one component"));
    }
    if params.n_iters == 0 {
        return Err(Error::parameter("n_iters must be >= 1"));
    }
    if !(params.gamma1.is_finite() && params.gamma1 >= 0.0) {
        return Err(Error::parameter(format!(
            "gamma1_init must be finite and >= 0, got {}",
            params.gamma1
        )));
    }
    let n = trials.n_channels();
    let zero_codes = || -> Vec<Array2<f64>> {
        trials
            .trials
            .iter()
            .map(|t| Array2::zeros((p, t.n_times())))
            .collect()
    };

    let all_zero = trials.trials.iter().all(|t| {
        t.data
            .indexed_iter()
            .all(|((r, c), &v)| v == 0.0 || !t.observed(r, c))
    });
    if all_zero {
        return Ok(InitResult {
            dictionary: Array2::zeros((n, p)),
            codes: zero_codes(),
            n_iters_run: 0,
            recon_history: Vec::new(),
            warning: Some("all observed data are zero; dictionary left at zero".into()),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let low = if params.nonneg_dictionary { 0.01 } else { 0.0 };
    let mut dictionary = Array2::from_shape_fn((n, p), |_| rng.random_range(low..1.0));
    normalize_columns(&mut dictionary, None);
    let mut codes = zero_codes();
    let mut recon_history = Vec::with_capacity(params.n_iters);

    for _ in 0..params.n_iters {
        codes = code_step(trials, &dictionary, &codes, params)?;
        dictionary = dictionary_step(trials, &dictionary, &codes, params)?;
        normalize_columns(&mut dictionary, Some(&mut codes));
        recon_history.push(reconstruction_error(trials, &dictionary, &codes));
    }
    let dead = (0..p)
        .filter(|&j| dictionary.column(j).iter().all(|&v| v == 0.0))
        .count();
    let warning = (dead > 0).then(|| format!("{dead} dictionary column(s) are zero"));
    Ok(InitResult {
        dictionary,
        codes,
        n_iters_run: params.n_iters,
        recon_history,
        warning,
    })
}

/// Codes per trial: the transposed problem `Yᵀ ≈ Φᵀ Dᵀ` has time points as
/// rows, so the coordinate-descent solver applies unchanged.
fn code_step(
    trials: &TrialSet,
    dictionary: &Array2<f64>,
    codes: &[Array2<f64>],
    params: &DictLearnParams,
) -> Result<Vec<Array2<f64>>> {
    let dt = dictionary.t();
    trials
        .trials
        .par_iter()
        .zip(codes.par_iter())
        .map(|(trial, phi)| {
            let mask_t = trial.mask.as_ref().map(|m| m.t());
            let problem = LassoProblem::new(trial.data.t(), dt, mask_t)?.with_nonneg(params.nonneg_codes);
            let sol = cd_lasso_variant(&problem, phi.t(), params.cd_max_sweeps, params.cd_tol)?;
            Ok(sol.coef.reversed_axes())
        })
        .collect()
}

fn dictionary_step(
    trials: &TrialSet,
    dictionary: &Array2<f64>,
    codes: &[Array2<f64>],
    params: &DictLearnParams,
) -> Result<Array2<f64>> {
    let blocks = trials.trials.iter().zip(codes).map(|(trial, phi)| LassoBlock {
        residual: trial.data.view(),
        traces: phi.view(),
        mask: trial.mask.as_ref().map(|m| m.view()),
    });
    let problem = LassoProblem::from_blocks(dictionary.nrows(), dictionary.ncols(), blocks)?
        .with_gamma1(params.gamma1)
        .with_nonneg(params.nonneg_dictionary);
    Ok(cd_lasso_variant(&problem, dictionary.view(), params.cd_max_sweeps, params.cd_tol)?.coef)
}

fn normalize_columns(dictionary: &mut Array2<f64>, mut codes: Option<&mut Vec<Array2<f64>>>) {
    for j in 0..dictionary.ncols() {
        let s: f64 = dictionary.column(j).iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            dictionary.column_mut(j).mapv_inplace(|v| v / s);
            if let Some(codes) = codes.as_deref_mut() {
                for phi in codes.iter_mut() {
                    phi.row_mut(j).mapv_inplace(|v| v * s);
                }
            }
        }
    }
}

fn reconstruction_error(trials: &TrialSet, dictionary: &Array2<f64>, codes: &[Array2<f64>]) -> f64 {
    trials
        .trials
        .iter()
        .zip(codes)
        .map(|(trial, phi)| {
            let r = &trial.data - &dictionary.dot(phi);
            r.indexed_iter()
                .filter(|(ix, _)| trial.observed(ix.0, ix.1))
                .map(|(_, v)| v * v)
                .sum::<f64>()
        })
        .sum()
}

impl InitResult {
    /// Reorders dictionary columns (and code rows): column `s` of the result
    /// is column `order[s]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> InitResult {
        InitResult {
            dictionary: self.dictionary.select(Axis(1), order),
            codes: self.codes.iter().map(|c| c.select(Axis(0), order)).collect(),
            n_iters_run: self.n_iters_run,
            recon_history: self.recon_history.clone(),
            warning: self.warning.clone(),
        }
    }
}

/// Every distinct way to hand `Σ sizes` dictionary columns to groups of the
/// given sizes, as column orders (group `k` takes the next `sizes[k]`
/// entries, each group's columns ascending). `None` when there are more than
/// `cap`. Declaration order comes first.
pub fn category_assignments(sizes: &[usize], cap: usize) -> Option<Vec<Vec<usize>>> {
    let total: usize = sizes.iter().sum();
    // multinomial coefficient, bailing out once it exceeds the cap
    let mut count = 1u128;
    let mut left = total as u128;
    for &s in sizes {
        let mut binom = 1u128;
        for i in 0..s as u128 {
            binom = binom * (left - i) / (i + 1);
            if binom > cap as u128 {
                return None;
            }
        }
        count *= binom;
        if count > cap as u128 {
            return None;
        }
        left -= s as u128;
    }
    let mut out = Vec::new();
    let mut order = Vec::with_capacity(total);
    let mut used = vec![false; total];
    fill_groups(sizes, 0, 0, &mut used, &mut order, &mut out);
    Some(out)
}

fn fill_groups(
    sizes: &[usize],
    group: usize,
    min_next: usize,
    used: &mut Vec<bool>,
    order: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if group == sizes.len() {
        out.push(order.clone());
        return;
    }
    let taken_in_group = order.len() - sizes[..group].iter().sum::<usize>();
    if taken_in_group == sizes[group] {
        fill_groups(sizes, group + 1, 0, used, order, out);
        return;
    }
    for c in min_next..used.len() {
        if !used[c] {
            used[c] = true;
            order.push(c);
            fill_groups(sizes, group, c + 1, used, order, out);
            order.pop();
            used[c] = false;
        }
    }
}

/// Splits the dictionary across categories in declaration order and
/// replicates each block over all variants. Codes become the initial traces.
pub fn seed_model(init: &InitResult, trials: &TrialSet) -> Result<ModelState> {
    let groups = trials.group_index();
    if groups.total() != init.dictionary.ncols() {
        return Err(Error::schema(format!(
            "categories declare {} components, dictionary has {}",
            groups.total(),
            init.dictionary.ncols()
        )));
    }
    if init.dictionary.nrows() != trials.n_channels() {
        return Err(Error::schema("dictionary rows do not match the channel count"));
    }
    if init.codes.len() != trials.n_trials() {
        return Err(Error::schema("one code matrix per trial is required"));
    }
    let components = trials
        .categories
        .iter()
        .enumerate()
        .map(|(k, cat)| {
            let block = init.dictionary.slice(s![.., groups.range(k)]);
            ComponentTensor::replicated(block, cat.n_values())
        })
        .collect();
    Ok(ModelState {
        channel_names: trials.channel_names.clone(),
        categories: trials.categories.clone(),
        components,
        traces: TraceSet::new(init.codes.clone(), groups)?,
        transitions: None,
        trials: trials
            .trials
            .iter()
            .map(|t| TrialMeta {
                id: t.id.clone(),
                label: t.label.clone(),
            })
            .collect(),
        objective_history: Vec::new(),
        converged: false,
        noise_variance: f64::NAN,
    })
}
