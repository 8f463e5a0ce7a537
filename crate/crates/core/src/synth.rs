//! Synthetic multi-label trials with known components and traces.
//!
//! Two categories: an ordinal "difficulty" and a categorical "choice". Each
//! category gets a reference map per component; every variant blends the
//! reference with graph-smoothed per-variant innovations and is then
//! hard-thresholded per column. Traces are Gaussian-process draws per
//! (label combination, component), perturbed per trial with the same
//! covariance, with the last component(s) redrawn independently per trial.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{s, Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    CategorySpec, ComponentTensor, GroupIndex, Label, ModelState, Preprocess, TraceSet, Trial,
    TrialMeta, TrialSet,
};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::rng::stream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_channels: usize,
    pub n_timepoints: usize,
    pub n_trials: usize,
    pub difficulty_levels: usize,
    pub choice_levels: usize,
    pub components_per_category: (usize, usize),
    pub map_init_range: (f64, f64),
    /// Weight of the shared reference map in every variant.
    pub map_blend: f64,
    pub sparsity_percentile: f64,
    pub amplitude_range: (f64, f64),
    /// In normalized time, `u ∈ [0, 1]`.
    pub lengthscale_range: (f64, f64),
    pub gp_jitter: f64,
    pub trial_noise_sigma: f64,
    pub n_random_components: usize,
    pub rescale_percentile: f64,
    pub difficulty_bandwidth: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self::full()
    }
}

impl SynthParams {
    /// Full scale: 80 channels, 500 time points, 250 trials.
    pub fn full() -> Self {
        SynthParams {
            n_channels: 80,
            n_timepoints: 500,
            n_trials: 250,
            difficulty_levels: 5,
            choice_levels: 2,
            components_per_category: (2, 2),
            map_init_range: (0.5, 1.0),
            map_blend: 0.8,
            sparsity_percentile: 60.0,
            amplitude_range: (0.2, 1.533),
            lengthscale_range: (0.05, 0.2),
            gp_jitter: 1e-8,
            trial_noise_sigma: 0.15,
            n_random_components: 1,
            rescale_percentile: 98.0,
            difficulty_bandwidth: 1.0,
            seed: 0,
        }
    }

    /// 40 channels, 200 time points, 100 trials.
    pub fn desk() -> Self {
        SynthParams {
            n_channels: 40,
            n_timepoints: 200,
            n_trials: 100,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" | "paper" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::parameter(format!("unknown preset '{other}' (expected full or desk)"))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64), min: f64| {
            if lo.is_finite() && hi.is_finite() && lo >= min && lo <= hi {
                Ok(())
            } else {
                Err(Error::parameter(format!("{name} must satisfy {min} <= lo <= hi, got ({lo}, {hi})")))
            }
        };
        ordered("map_init_range", self.map_init_range, f64::MIN)?;
        ordered("amplitude_range", self.amplitude_range, 0.0)?;
        ordered("lengthscale_range", self.lengthscale_range, f64::MIN_POSITIVE)?;
        for (name, p) in [
            ("sparsity_percentile", self.sparsity_percentile),
            ("rescale_percentile", self.rescale_percentile),
        ] {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::parameter(format!("{name} must be in (0, 100), got {p}")));
            }
        }
        if !(self.trial_noise_sigma.is_finite() && self.trial_noise_sigma >= 0.0) {
            return Err(Error::parameter("trial_noise_sigma must be >= 0"));
        }
        if !(self.gp_jitter.is_finite() && self.gp_jitter >= 0.0) {
            return Err(Error::parameter("gp_jitter must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.map_blend) {
            return Err(Error::parameter("map_blend must be in [0, 1]"));
        }
        if !(self.difficulty_bandwidth.is_finite() && self.difficulty_bandwidth > 0.0) {
            return Err(Error::parameter("difficulty_bandwidth must be > 0"));
        }
        if self.n_channels == 0 || self.n_trials == 0 || self.n_timepoints < 2 {
            return Err(Error::parameter("need >= 1 channel, >= 1 trial and >= 2 time points"));
        }
        if self.difficulty_levels == 0 || self.choice_levels == 0 || self.choice_levels > CHOICE_TOKENS.len() {
            return Err(Error::parameter(format!(
                "difficulty_levels must be >= 1 and choice_levels in [1, {}]",
                CHOICE_TOKENS.len()
            )));
        }
        let (pa, pb) = self.components_per_category;
        if pa == 0 || pb == 0 {
            return Err(Error::parameter("each category needs at least one component"));
        }
        if self.n_random_components > pa + pb {
            return Err(Error::parameter("more random components than components"));
        }
        Ok(())
    }

    pub fn categories(&self) -> Result<Vec<CategorySpec>> {
        let levels: Vec<String> = (1..=self.difficulty_levels).map(|v| v.to_string()).collect();
        let level_refs: Vec<&str> = levels.iter().map(String::as_str).collect();
        Ok(vec![
            CategorySpec::ordinal(
                "difficulty",
                &level_refs,
                self.components_per_category.0,
                self.difficulty_bandwidth,
            )?,
            CategorySpec::categorical(
                "choice",
                &CHOICE_TOKENS[..self.choice_levels],
                self.components_per_category.1,
            )?,
        ])
    }
}

const CHOICE_TOKENS: [&str; 10] = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"];

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub categories: Vec<CategorySpec>,
    pub components: Vec<ComponentTensor>,
    pub traces: Vec<Array2<f64>>,
    pub labels: Vec<Label>,
    /// Trace rows redrawn independently on every trial.
    pub random_components: Vec<usize>,
}

impl GroundTruth {
    /// The ground truth packaged as a model over `trials`.
    pub fn to_state(&self, trials: &TrialSet) -> Result<ModelState> {
        let groups = GroupIndex::from_categories(&self.categories);
        Ok(ModelState {
            channel_names: trials.channel_names.clone(),
            categories: self.categories.clone(),
            components: self.components.clone(),
            traces: TraceSet::new(self.traces.clone(), groups)?,
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
            converged: true,
            noise_variance: 0.0,
        })
    }
}

/// Lower Cholesky factor of the RBF covariance on `linspace(0, 1, T)`.
/// The diagonal jitter is multiplied by 10 up to three times on failure.
pub fn gp_factor(t_len: usize, lengthscale: f64, amplitude: f64, jitter: f64) -> Result<DMatrix<f64>> {
    if t_len < 2 {
        return Err(Error::parameter("GP sample needs at least 2 time points"));
    }
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(Error::parameter(format!("lengthscale must be > 0, got {lengthscale}")));
    }
    let u: Vec<f64> = (0..t_len).map(|t| t as f64 / (t_len - 1) as f64).collect();
    let amp2 = amplitude * amplitude;
    let kernel = DMatrix::from_fn(t_len, t_len, |a, b| {
        let d = u[a] - u[b];
        amp2 * (-d * d / (2.0 * lengthscale * lengthscale)).exp()
    });
    let mut jit = jitter;
    for _ in 0..4 {
        let k = &kernel + DMatrix::identity(t_len, t_len) * jit;
        if let Some(c) = Cholesky::new(k) {
            return Ok(c.l());
        }
        jit = if jit > 0.0 { jit * 10.0 } else { 1e-12 };
    }
    Err(Error::numeric("GP covariance is not positive definite"))
}

fn draw(factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let z = DVector::from_fn(factor.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Array1::from((factor * z).as_slice().to_vec())
}

/// One draw from `N(0, K)`, `K_st = amplitude² exp(−(u_s − u_t)² / 2ℓ²) + jitter δ_st`.
pub fn sample_gp(t_len: usize, lengthscale: f64, amplitude: f64, jitter: f64, seed: u64) -> Result<Array1<f64>> {
    let factor = gp_factor(t_len, lengthscale, amplitude, jitter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw(&factor, &mut rng))
}

/// Linear-interpolation percentile (`q` in (0, 100)).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn variant_maps(
    params: &SynthParams,
    category: &CategorySpec,
    rng: &mut ChaCha8Rng,
) -> Result<ComponentTensor> {
    let n = params.n_channels;
    let p = category.n_components;
    let v = category.n_values();
    let (lo, hi) = params.map_init_range;
    let uniform = |rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let reference = Array2::from_shape_fn((n, p), |_| uniform(rng));
    let innovations: Vec<Array2<f64>> = (0..v)
        .map(|_| Array2::from_shape_fn((n, p), |_| uniform(rng)))
        .collect();
    // each variant mixes its own innovation with its graph neighbours'
    let lambda = build_graph(category)?.weights;
    let mut values = Array3::zeros((n, p, v));
    for i in 0..v {
        let mut mixed = &innovations[i] * 1.0;
        let mut total = 1.0;
        for (j, inn) in innovations.iter().enumerate() {
            if lambda[[i, j]] > 0.0 {
                mixed.scaled_add(lambda[[i, j]], inn);
                total += lambda[[i, j]];
            }
        }
        let map = &reference * params.map_blend + &(mixed / total) * (1.0 - params.map_blend);
        values.slice_mut(s![.., .., i]).assign(&map);
    }
    // hard threshold each column of each variant at the sparsity percentile
    for i in 0..v {
        for j in 0..p {
            let mut col = values.slice_mut(s![.., j, i]);
            let q = percentile(&col.to_vec(), params.sparsity_percentile);
            col.mapv_inplace(|x| if x < q { 0.0 } else { x });
        }
    }
    Ok(ComponentTensor { values })
}

pub fn generate(params: &SynthParams) -> Result<(TrialSet, GroundTruth)> {
    params.validate()?;
    let categories = params.categories()?;
    let groups = GroupIndex::from_categories(&categories);
    let p_total = groups.total();
    let t_len = params.n_timepoints;
    let (amp_lo, amp_hi) = params.amplitude_range;
    let (ls_lo, ls_hi) = params.lengthscale_range;
    let range = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };

    let components = categories
        .iter()
        .enumerate()
        .map(|(k, cat)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(params.seed, 1, k as u64, 0));
            variant_maps(params, cat, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    // balanced labels: cycle through all combinations, then shuffle
    let combos: Vec<Label> = (0..params.difficulty_levels)
        .flat_map(|d| (0..params.choice_levels).map(move |c| Label::new(vec![d, c])))
        .collect();
    let mut labels: Vec<Label> = (0..params.n_trials).map(|m| combos[m % combos.len()].clone()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(params.seed, 2, 0, 0)));

    let random: Vec<usize> = (p_total - params.n_random_components..p_total).collect();
    // one GP per (label combination, structured component), kept with its factor
    let base = combos
        .par_iter()
        .enumerate()
        .map(|(c, _)| {
            (0..p_total)
                .map(|j| {
                    if random.contains(&j) {
                        return Ok(None);
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(params.seed, 3, c as u64, j as u64));
                    let amp = range(&mut rng, amp_lo, amp_hi);
                    let ls = range(&mut rng, ls_lo, ls_hi);
                    let factor = gp_factor(t_len, ls, amp, params.gp_jitter)?;
                    let mean = draw(&factor, &mut rng);
                    Ok(Some((mean, factor)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let combo_index = |l: &Label| l.get(0) * params.choice_levels + l.get(1);
    let mut traces = labels
        .par_iter()
        .enumerate()
        .map(|(m, label)| {
            let c = combo_index(label);
            let mut phi = Array2::zeros((p_total, t_len));
            for j in 0..p_total {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(params.seed, 4, m as u64, j as u64));
                let row = match &base[c][j] {
                    Some((mean, factor)) => {
                        if params.trial_noise_sigma > 0.0 {
                            mean + &(draw(factor, &mut rng) * params.trial_noise_sigma)
                        } else {
                            mean.clone()
                        }
                    }
                    None => {
                        let amp = range(&mut rng, amp_lo, amp_hi);
                        let ls = range(&mut rng, ls_lo, ls_hi);
                        let factor = gp_factor(t_len, ls, amp, params.gp_jitter)?;
                        draw(&factor, &mut rng)
                    }
                };
                phi.row_mut(j).assign(&row);
            }
            Ok(phi)
        })
        .collect::<Result<Vec<_>>>()?;

    // shift each component nonnegative, then match the maps' upper percentile
    let map_values: Vec<f64> = components.iter().flat_map(|c| c.values.iter().copied()).collect();
    let map_q = percentile(&map_values, params.rescale_percentile);
    for j in 0..p_total {
        let min = traces
            .iter()
            .flat_map(|phi| phi.row(j).to_vec())
            .fold(f64::INFINITY, f64::min);
        for phi in traces.iter_mut() {
            phi.row_mut(j).mapv_inplace(|v| v - min);
        }
        let all: Vec<f64> = traces.iter().flat_map(|phi| phi.row(j).to_vec()).collect();
        let q = percentile(&all, params.rescale_percentile);
        if q > 0.0 {
            for phi in traces.iter_mut() {
                phi.row_mut(j).mapv_inplace(|v| v * map_q / q);
            }
        }
    }

    let width = (params.n_trials.max(2) - 1).to_string().len();
    let trials = labels
        .iter()
        .zip(&traces)
        .enumerate()
        .map(|(m, (label, phi))| {
            let mut loading = Array2::zeros((params.n_channels, p_total));
            for (k, tensor) in components.iter().enumerate() {
                loading
                    .slice_mut(s![.., groups.range(k)])
                    .assign(&tensor.variant(label.get(k)));
            }
            Trial::new(format!("trial{m:0width$}"), loading.dot(phi), label.clone())
        })
        .collect();
    let cwidth = (params.n_channels.max(2) - 1).to_string().len();
    let channel_names = (0..params.n_channels).map(|n| format!("ch{n:0cwidth$}")).collect();
    let trial_set = TrialSet::new(channel_names, categories.clone(), trials, Preprocess::None)?;
    Ok((
        trial_set,
        GroundTruth {
            categories,
            components,
            traces,
            labels,
            random_components: random,
        },
    ))
}
