#![allow(dead_code)]

use milcci::data::{
    CategorySpec, ComponentTensor, GroupIndex, Label, ModelState, Preprocess, TraceSet, Trial, TrialMeta, TrialSet,
};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn two_categories(p_a: usize, p_b: usize) -> Vec<CategorySpec> {
    vec![
        CategorySpec::ordinal("level", &["1", "2", "3"], p_a, 1.0).unwrap(),
        CategorySpec::categorical("side", &["L", "R"], p_b).unwrap(),
    ]
}

/// Random dataset over `two_categories`, optionally with missing entries.
pub fn random_trials(seed: u64, n: usize, n_trials: usize, t_len: usize, p: (usize, usize), missing: f64) -> TrialSet {
    let mut rng = rng(seed);
    let cats = two_categories(p.0, p.1);
    let trials = (0..n_trials)
        .map(|m| {
            let label = Label::new(vec![m % 3, (m / 3) % 2]);
            let data = normal_matrix(&mut rng, n, t_len);
            let mut trial = Trial::new(format!("t{m}"), data, label);
            if missing > 0.0 {
                let mut mask = Array2::from_shape_fn((n, t_len), |_| rng.random::<f64>() >= missing);
                mask[[0, 0]] = true;
                trial.mask = Some(mask);
            }
            trial
        })
        .collect();
    TrialSet::new(
        (0..n).map(|i| format!("c{i}")).collect(),
        cats,
        trials,
        Preprocess::None,
    )
    .unwrap()
}

/// Model over `trials` with iid standard normal components and traces.
pub fn random_state(seed: u64, trials: &TrialSet) -> ModelState {
    let mut rng = rng(seed);
    let n = trials.n_channels();
    let components: Vec<ComponentTensor> = trials
        .categories
        .iter()
        .map(|c| ComponentTensor {
            values: Array3::from_shape_fn((n, c.n_components, c.n_values()), |_| StandardNormal.sample(&mut rng)),
        })
        .collect();
    let groups = GroupIndex::from_categories(&trials.categories);
    let traces = trials
        .trials
        .iter()
        .map(|t| normal_matrix(&mut rng, groups.total(), t.n_times()))
        .collect();
    ModelState {
        channel_names: trials.channel_names.clone(),
        categories: trials.categories.clone(),
        components,
        traces: TraceSet::new(traces, groups).unwrap(),
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
    }
}

/// Pooled MSE of `components` with the model's traces, computed directly.
pub fn direct_mse(components: &[ComponentTensor], state: &ModelState, trials: &TrialSet) -> f64 {
    let groups = &state.traces.groups;
    let (mut sse, mut count) = (0.0, 0usize);
    for (m, trial) in trials.trials.iter().enumerate() {
        let n = trial.data.nrows();
        let mut loading = Array2::zeros((n, groups.total()));
        for (k, tensor) in components.iter().enumerate() {
            let v = trial.label.get(k);
            for (j, col) in groups.range(k).enumerate() {
                for r in 0..n {
                    loading[[r, col]] = tensor.values[[r, j, v]];
                }
            }
        }
        let recon = loading.dot(&state.traces.traces[m]);
        for ((r, c), &y) in trial.data.indexed_iter() {
            if trial.observed(r, c) {
                sse += (y - recon[[r, c]]).powi(2);
                count += 1;
            }
        }
    }
    sse / count as f64
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}
