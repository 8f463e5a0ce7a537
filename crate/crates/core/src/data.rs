//! Dataset schema, model parameters and the shared domain types.
//!
//! A dataset is a set of trials `Y^(m)` (channels × time) that share one
//! channel set. Every trial carries a label: one value per category. Each
//! category owns a 3-D component tensor (channels × components × values)
//! whose value slices ("variants") are selected per trial and concatenated
//! into that trial's loading matrix.

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryKind {
    Categorical,
    Ordinal,
}

/// One label dimension, e.g. task difficulty or choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub kind: CategoryKind,
    pub values: Vec<String>,
    pub n_components: usize,
    /// Kernel bandwidth; required for ordinal categories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Value indices whose similarity row is zeroed, so those variants are
    /// never pulled toward their siblings.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub free_variants: BTreeSet<usize>,
}

impl CategorySpec {
    pub fn categorical(name: &str, values: &[&str], n_components: usize) -> Result<Self> {
        let spec = CategorySpec {
            name: name.to_string(),
            kind: CategoryKind::Categorical,
            values: values.iter().map(|v| v.to_string()).collect(),
            n_components,
            bandwidth: None,
            free_variants: BTreeSet::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn ordinal(name: &str, values: &[&str], n_components: usize, bandwidth: f64) -> Result<Self> {
        let spec = CategorySpec {
            name: name.to_string(),
            kind: CategoryKind::Ordinal,
            values: values.iter().map(|v| v.to_string()).collect(),
            n_components,
            bandwidth: Some(bandwidth),
            free_variants: BTreeSet::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::schema("category name must be non-empty"));
        }
        if self.values.is_empty() {
            return Err(Error::schema(format!("category '{}' has no values", self.name)));
        }
        let unique: BTreeSet<&str> = self.values.iter().map(String::as_str).collect();
        if unique.len() != self.values.len() {
            return Err(Error::schema(format!(
                "category '{}' has duplicate values",
                self.name
            )));
        }
        if self.n_components == 0 {
            return Err(Error::schema(format!(
                "category '{}' needs at least one component",
                self.name
            )));
        }
        if let Some(&bad) = self.free_variants.iter().find(|&&i| i >= self.values.len()) {
            return Err(Error::schema(format!(
                "category '{}': free variant index {bad} out of range",
                self.name
            )));
        }
        if self.kind == CategoryKind::Ordinal {
            match self.bandwidth {
                Some(bw) if bw.is_finite() && bw > 0.0 => {}
                Some(bw) => {
                    return Err(Error::parameter(format!(
                        "category '{}': bandwidth must be finite and > 0, got {bw}",
                        self.name
                    )))
                }
                None => {
                    return Err(Error::schema(format!(
                        "ordinal category '{}' requires a bandwidth",
                        self.name
                    )))
                }
            }
            self.numeric_values()?;
        }
        Ok(())
    }

    /// Position of `token` in the ordered value list.
    pub fn value_index(&self, token: &str) -> Result<usize> {
        self.values.iter().position(|v| v == token).ok_or_else(|| {
            Error::schema(format!(
                "unknown value '{token}' for category '{}'",
                self.name
            ))
        })
    }

    /// Ordinal values parsed as reals.
    pub fn numeric_values(&self) -> Result<Vec<f64>> {
        self.values
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        Error::schema(format!(
                            "ordinal category '{}' has non-numeric value '{v}'",
                            self.name
                        ))
                    })
            })
            .collect()
    }
}

/// Free-function form of [`CategorySpec::value_index`].
pub fn value_index(category: &CategorySpec, token: &str) -> Result<usize> {
    category.value_index(token)
}

/// Per-category value indices, in category declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label(pub Vec<usize>);

impl Label {
    pub fn new(entries: Vec<usize>) -> Self {
        Label(entries)
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, category: usize) -> usize {
        self.0[category]
    }

    pub fn from_tokens<S: AsRef<str>>(categories: &[CategorySpec], tokens: &[S]) -> Result<Self> {
        if tokens.len() != categories.len() {
            return Err(Error::schema(format!(
                "label has {} entries but {} categories are declared",
                tokens.len(),
                categories.len()
            )));
        }
        let entries = categories
            .iter()
            .zip(tokens)
            .map(|(c, t)| c.value_index(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Label(entries))
    }

    pub fn to_tokens(&self, categories: &[CategorySpec]) -> Vec<String> {
        categories
            .iter()
            .zip(&self.0)
            .map(|(c, &i)| c.values[i].clone())
            .collect()
    }

    pub fn validate(&self, categories: &[CategorySpec]) -> Result<()> {
        if self.0.len() != categories.len() {
            return Err(Error::schema(format!(
                "label has {} entries but {} categories are declared",
                self.0.len(),
                categories.len()
            )));
        }
        for (c, &i) in categories.iter().zip(&self.0) {
            if i >= c.n_values() {
                return Err(Error::schema(format!(
                    "label index {i} out of range for category '{}' ({} values)",
                    c.name,
                    c.n_values()
                )));
            }
        }
        Ok(())
    }
}

/// One multichannel time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: String,
    /// Channels × time.
    pub data: Array2<f64>,
    /// `true` marks an observed entry. `None` means fully observed.
    pub mask: Option<Array2<bool>>,
    pub label: Label,
}

impl Trial {
    pub fn new(id: impl Into<String>, data: Array2<f64>, label: Label) -> Self {
        Trial {
            id: id.into(),
            data,
            mask: None,
            label,
        }
    }

    pub fn with_mask(mut self, mask: Array2<bool>) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn n_times(&self) -> usize {
        self.data.ncols()
    }

    #[inline]
    pub fn observed(&self, n: usize, t: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[[n, t]])
    }

    pub fn n_observed(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.data.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    #[default]
    None,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub channel_names: Vec<String>,
    pub categories: Vec<CategorySpec>,
    pub trials: Vec<Trial>,
    pub preprocess: Preprocess,
}

impl TrialSet {
    /// Builds and validates a trial set. Preprocessing is applied here, so
    /// `trials` must hold raw values.
    pub fn new(
        channel_names: Vec<String>,
        categories: Vec<CategorySpec>,
        mut trials: Vec<Trial>,
        preprocess: Preprocess,
    ) -> Result<Self> {
        if preprocess == Preprocess::Tanh {
            for trial in &mut trials {
                trial.data.mapv_inplace(f64::tanh);
            }
        }
        let set = TrialSet {
            channel_names,
            categories,
            trials,
            preprocess,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn group_index(&self) -> GroupIndex {
        GroupIndex::from_categories(&self.categories)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_channels();
        if n == 0 {
            return Err(Error::schema("dataset has no channels"));
        }
        if self.trials.is_empty() {
            return Err(Error::schema("dataset has no trials"));
        }
        if self.categories.is_empty() {
            return Err(Error::schema("dataset declares no categories"));
        }
        for c in &self.categories {
            c.validate()?;
        }
        let mut ids = BTreeSet::new();
        for trial in &self.trials {
            if !ids.insert(trial.id.as_str()) {
                return Err(Error::schema(format!("duplicate trial id '{}'", trial.id)));
            }
            if trial.data.nrows() != n {
                return Err(Error::schema(format!(
                    "trial '{}' has {} rows, expected {n} channels",
                    trial.id,
                    trial.data.nrows()
                )));
            }
            if trial.n_times() < 2 {
                return Err(Error::schema(format!(
                    "trial '{}' needs at least 2 time points",
                    trial.id
                )));
            }
            if let Some(mask) = &trial.mask {
                if mask.dim() != trial.data.dim() {
                    return Err(Error::schema(format!(
                        "trial '{}': mask shape does not match data",
                        trial.id
                    )));
                }
            }
            for ((n_i, t_i), &v) in trial.data.indexed_iter() {
                if trial.observed(n_i, t_i) && !v.is_finite() {
                    return Err(Error::schema(format!(
                        "trial '{}': non-finite value at ({n_i}, {t_i})",
                        trial.id
                    )));
                }
            }
            trial.label.validate(&self.categories)?;
        }
        Ok(())
    }

    /// Indices of trials whose value for `category` equals `value`.
    pub fn trials_with_value(&self, category: usize, value: usize) -> Vec<usize> {
        self.trials
            .iter()
            .enumerate()
            .filter(|(_, t)| t.label.get(category) == value)
            .map(|(m, _)| m)
            .collect()
    }
}

/// Contiguous trace-row ranges, one per category, covering `0..P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    ranges: Vec<Range<usize>>,
}

impl GroupIndex {
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut start = 0;
        let ranges = sizes
            .iter()
            .map(|&p| {
                let r = start..start + p;
                start += p;
                r
            })
            .collect();
        GroupIndex { ranges }
    }

    pub fn from_categories(categories: &[CategorySpec]) -> Self {
        let sizes: Vec<usize> = categories.iter().map(|c| c.n_components).collect();
        Self::from_sizes(&sizes)
    }

    pub fn range(&self, category: usize) -> Range<usize> {
        self.ranges[category].clone()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn total(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn n_groups(&self) -> usize {
        self.ranges.len()
    }

    /// Category and within-category component for a stacked trace row.
    pub fn locate(&self, row: usize) -> Option<(usize, usize)> {
        self.ranges
            .iter()
            .enumerate()
            .find(|(_, r)| r.contains(&row))
            .map(|(k, r)| (k, row - r.start))
    }
}

/// Channels × components × values tensor for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTensor {
    pub values: Array3<f64>,
}

impl ComponentTensor {
    pub fn zeros(n_channels: usize, n_components: usize, n_values: usize) -> Self {
        ComponentTensor {
            values: Array3::zeros((n_channels, n_components, n_values)),
        }
    }

    /// Replicates one channels × components block across every variant.
    pub fn replicated(block: ArrayView2<f64>, n_values: usize) -> Self {
        let (n, p) = block.dim();
        let mut values = Array3::zeros((n, p, n_values));
        for i in 0..n_values {
            values.slice_mut(s![.., .., i]).assign(&block);
        }
        ComponentTensor { values }
    }

    pub fn n_channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_components(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_variants(&self) -> usize {
        self.values.dim().2
    }

    pub fn variant(&self, value: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(2), value)
    }

    pub fn variant_mut(&mut self, value: usize) -> ArrayViewMut2<'_, f64> {
        self.values.index_axis_mut(Axis(2), value)
    }
}

/// Per-trial traces `Φ^(m)` (P × T^(m)).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub traces: Vec<Array2<f64>>,
    pub groups: GroupIndex,
}

impl TraceSet {
    pub fn new(traces: Vec<Array2<f64>>, groups: GroupIndex) -> Result<Self> {
        let p = groups.total();
        for (m, phi) in traces.iter().enumerate() {
            if phi.nrows() != p {
                return Err(Error::schema(format!(
                    "trace matrix {m} has {} rows, expected {p}",
                    phi.nrows()
                )));
            }
        }
        Ok(TraceSet { traces, groups })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSolverParams {
    pub max_grad_iters: usize,
    /// Fixed initial step for the gradient path; `None` starts from `1/L`.
    pub step_size: Option<f64>,
    pub huber_eps: f64,
}

impl Default for TraceSolverParams {
    fn default() -> Self {
        TraceSolverParams {
            max_grad_iters: 500,
            step_size: None,
            huber_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Component sparsity.
    pub gamma1: f64,
    /// Cross-variant consistency.
    pub gamma2: f64,
    /// Temporal smoothness, or LDS weight when `lds_enabled`.
    pub gamma3: f64,
    /// Within-trial trace decorrelation.
    pub gamma4: f64,
    /// Ridge pulling transition matrices toward identity.
    pub gamma5: f64,
    pub nonneg_components: bool,
    pub nonneg_traces: bool,
    pub max_outer_iters: usize,
    pub tol: f64,
    pub trace_solver: TraceSolverParams,
    pub lds_enabled: bool,
    pub lds_inner_iters: usize,
    pub cd_max_sweeps: usize,
    pub cd_tol: f64,
    pub init_iters: usize,
    /// Outer iterations spent probing each column-to-category assignment of
    /// the initial dictionary; 0 keeps declaration order.
    pub assignment_probe_iters: usize,
    /// Above this many assignments only declaration order is used.
    pub max_assignment_candidates: usize,
    /// Sparsity used during initialization; defaults to `gamma1`.
    pub gamma1_init: Option<f64>,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma1: 0.05,
            gamma2: 0.05,
            gamma3: 0.1,
            gamma4: 0.0,
            gamma5: 0.1,
            nonneg_components: false,
            nonneg_traces: false,
            max_outer_iters: 50,
            tol: 1e-6,
            trace_solver: TraceSolverParams::default(),
            lds_enabled: false,
            lds_inner_iters: 3,
            cd_max_sweeps: 200,
            cd_tol: 1e-7,
            init_iters: 30,
            assignment_probe_iters: 20,
            max_assignment_candidates: 24,
            gamma1_init: None,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let gammas = [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("gamma4", self.gamma4),
            ("gamma5", self.gamma5),
        ];
        for (name, g) in gammas {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::parameter(format!("{name} must be finite and >= 0, got {g}")));
            }
        }
        if let Some(g) = self.gamma1_init {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::parameter(format!("gamma1_init must be >= 0, got {g}")));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::parameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.cd_tol.is_finite() && self.cd_tol > 0.0) {
            return Err(Error::parameter("cd_tol must be > 0"));
        }
        if !(self.trace_solver.huber_eps.is_finite() && self.trace_solver.huber_eps > 0.0) {
            return Err(Error::parameter("huber_eps must be > 0"));
        }
        if let Some(step) = self.trace_solver.step_size {
            if !(step.is_finite() && step > 0.0) {
                return Err(Error::parameter("step_size must be > 0"));
            }
        }
        if self.trace_solver.max_grad_iters == 0 {
            return Err(Error::parameter("max_grad_iters must be >= 1"));
        }
        if self.cd_max_sweeps == 0 {
            return Err(Error::parameter("cd_max_sweeps must be >= 1"));
        }
        if self.init_iters == 0 {
            return Err(Error::parameter("init_iters must be >= 1"));
        }
        if self.lds_enabled && !(3..=5).contains(&self.lds_inner_iters) {
            return Err(Error::parameter(format!(
                "lds_inner_iters must be in [3, 5], got {}",
                self.lds_inner_iters
            )));
        }
        Ok(())
    }
}

/// Trial identity as carried by a fitted model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialMeta {
    pub id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub channel_names: Vec<String>,
    pub categories: Vec<CategorySpec>,
    /// One tensor per category, in declaration order.
    pub components: Vec<ComponentTensor>,
    pub traces: TraceSet,
    /// Per-trial transition matrices (LDS trace prior only).
    pub transitions: Option<Vec<Array2<f64>>>,
    pub trials: Vec<TrialMeta>,
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub noise_variance: f64,
}

impl ModelState {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_traces(&self) -> usize {
        self.traces.groups.total()
    }

    pub fn loading(&self, label: &Label) -> Result<Array2<f64>> {
        build_loading(self, label)
    }

    /// `A^(L^(m)) Φ^(m)` for trial `m`.
    pub fn reconstruct(&self, m: usize) -> Array2<f64> {
        let loading = loading_from(&self.components, &self.traces.groups, &self.trials[m].label);
        loading.dot(&self.traces.traces[m])
    }

    /// Total number of component entries over all tensors.
    pub fn n_component_entries(&self) -> usize {
        self.components.iter().map(|c| c.values.len()).sum()
    }
}

/// Builds the per-trial loading matrix: for every category, the slice
/// selected by the label fills that category's column range.
pub fn build_loading(state: &ModelState, label: &Label) -> Result<Array2<f64>> {
    label.validate(&state.categories)?;
    Ok(loading_from(&state.components, &state.traces.groups, label))
}

/// Unchecked core of [`build_loading`].
pub(crate) fn loading_from(
    components: &[ComponentTensor],
    groups: &GroupIndex,
    label: &Label,
) -> Array2<f64> {
    let n = components.first().map_or(0, |c| c.n_channels());
    let mut loading = Array2::zeros((n, groups.total()));
    for (k, tensor) in components.iter().enumerate() {
        let r = groups.range(k);
        loading
            .slice_mut(s![.., r])
            .assign(&tensor.variant(label.get(k)));
    }
    loading
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_category_state() -> ModelState {
        let cats = vec![
            CategorySpec::categorical("a", &["x", "y"], 1).unwrap(),
            CategorySpec::categorical("b", &["u", "v"], 1).unwrap(),
        ];
        let mut ta = ComponentTensor::zeros(2, 1, 2);
        ta.values[[0, 0, 0]] = 1.0;
        ta.values[[1, 0, 1]] = 2.0;
        let mut tb = ComponentTensor::zeros(2, 1, 2);
        tb.values[[0, 0, 0]] = 3.0;
        tb.values[[1, 0, 1]] = 4.0;
        ModelState {
            channel_names: vec!["c0".into(), "c1".into()],
            components: vec![ta, tb],
            traces: TraceSet::new(vec![], GroupIndex::from_categories(&cats)).unwrap(),
            categories: cats,
            transitions: None,
            trials: vec![],
            objective_history: vec![],
            converged: false,
            noise_variance: 0.0,
        }
    }

    #[test]
    fn loading_concatenates_selected_slices() {
        let state = two_category_state();
        let loading = build_loading(&state, &Label::new(vec![0, 1])).unwrap();
        assert_eq!(loading, array![[1.0, 0.0], [0.0, 4.0]]);
        let again = build_loading(&state, &Label::new(vec![0, 1])).unwrap();
        assert_eq!(loading, again);
    }

    #[test]
    fn loading_single_variant_is_identity_case() {
        let cats = vec![CategorySpec::categorical("only", &["x"], 2).unwrap()];
        let block = array![[0.5, 0.1], [0.5, 0.9]];
        let tensor = ComponentTensor::replicated(block.view(), 1);
        let state = ModelState {
            channel_names: vec!["a".into(), "b".into()],
            components: vec![tensor],
            traces: TraceSet::new(vec![], GroupIndex::from_categories(&cats)).unwrap(),
            categories: cats,
            transitions: None,
            trials: vec![],
            objective_history: vec![],
            converged: false,
            noise_variance: 0.0,
        };
        assert_eq!(build_loading(&state, &Label::new(vec![0])).unwrap(), block);
    }

    #[test]
    fn loading_rejects_out_of_range_label() {
        let state = two_category_state();
        let err = build_loading(&state, &Label::new(vec![2, 0])).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn value_index_lookup() {
        let c = CategorySpec::categorical("difficulty", &["easy", "hard"], 1).unwrap();
        assert_eq!(value_index(&c, "hard").unwrap(), 1);
        let roman = CategorySpec::categorical("d", &["I", "II", "III", "VI", "V"], 2).unwrap();
        assert_eq!(value_index(&roman, "I").unwrap(), 0);
        let err = value_index(&c, "medium").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("difficulty") && msg.contains("medium"), "{msg}");
    }

    #[test]
    fn category_validation() {
        assert!(CategorySpec::categorical("a", &["x", "x"], 1).is_err());
        assert!(CategorySpec::categorical("a", &[], 1).is_err());
        assert!(CategorySpec::categorical("a", &["x"], 0).is_err());
        assert!(matches!(
            CategorySpec::ordinal("a", &["1", "2"], 1, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            CategorySpec::ordinal("a", &["1", "two"], 1, 1.0),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn group_index_partitions_rows() {
        let g = GroupIndex::from_sizes(&[2, 3, 1]);
        assert_eq!(g.total(), 6);
        assert_eq!(g.range(1), 2..5);
        let mut covered = vec![0; 6];
        for r in g.ranges() {
            for j in r.clone() {
                covered[j] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert_eq!(g.locate(4), Some((1, 2)));
        assert_eq!(g.locate(6), None);
    }

    #[test]
    fn tanh_preprocess_bounds_values() {
        let cats = vec![CategorySpec::categorical("a", &["x"], 1).unwrap()];
        let trial = Trial::new("t0", array![[1e6, -3.0, 0.2]], Label::new(vec![0]));
        let set = TrialSet::new(vec!["c".into()], cats, vec![trial], Preprocess::Tanh).unwrap();
        let data = &set.trials[0].data;
        assert!(data.iter().all(|v| v.abs() < 1.0 || *v == 1.0));
        assert!(data[[0, 0]] > 0.9999);
    }

    #[test]
    fn trial_set_rejects_bad_shapes() {
        let cats = vec![CategorySpec::categorical("a", &["x"], 1).unwrap()];
        let short = Trial::new("t0", array![[1.0]], Label::new(vec![0]));
        assert!(TrialSet::new(vec!["c".into()], cats.clone(), vec![short], Preprocess::None).is_err());
        let wrong_rows = Trial::new("t0", array![[1.0, 2.0], [3.0, 4.0]], Label::new(vec![0]));
        assert!(
            TrialSet::new(vec!["c".into()], cats.clone(), vec![wrong_rows], Preprocess::None).is_err()
        );
        let masked_nan = Trial::new("t0", array![[f64::NAN, 2.0]], Label::new(vec![0]))
            .with_mask(array![[false, true]]);
        assert!(TrialSet::new(vec!["c".into()], cats, vec![masked_nan], Preprocess::None).is_ok());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let bad = Hyperparams {
            gamma2: -1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
        let bad_lds = Hyperparams {
            lds_enabled: true,
            lds_inner_iters: 7,
            ..Default::default()
        };
        assert!(bad_lds.validate().is_err());
    }
}
