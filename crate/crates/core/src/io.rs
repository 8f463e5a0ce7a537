//! On-disk formats: CSV matrices, the dataset manifest, model archives and
//! fit configuration files.
//!
//! Matrices are plain CSV without a header, one matrix row per line. An
//! empty cell marks a missing entry. Numbers are written in the shortest
//! form that parses back to the same `f64`, so a write/read cycle is exact.
//! Every file is written to a temporary sibling first and renamed into
//! place, so a reader never sees a partially written file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{
    CategorySpec, ComponentTensor, GroupIndex, Hyperparams, Label, ModelState, Preprocess, TraceSet,
    Trial, TrialMeta, TrialSet,
};
use crate::error::{Error, Result};
use crate::synth::GroundTruth;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const OBJECTIVE_FILE: &str = "objective.csv";
pub const TRUTH_DIR: &str = "truth";
const TRUTH_EXTRA_FILE: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub id: String,
    /// Path of the trial CSV, relative to the manifest.
    pub file: String,
    /// One value token per category.
    pub label: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_channels: usize,
    pub channel_names: Vec<String>,
    pub categories: Vec<CategorySpec>,
    #[serde(default)]
    pub preprocess: Preprocess,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveTrial {
    id: String,
    label: Vec<String>,
    n_times: usize,
    traces: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveCategory {
    #[serde(flatten)]
    spec: CategorySpec,
    /// Component CSV per value, in value order.
    files: Vec<String>,
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveIndex {
    format_version: u32,
    channel_names: Vec<String>,
    categories: Vec<ArchiveCategory>,
    trials: Vec<ArchiveTrial>,
    converged: bool,
    /// Absent when the model was never fitted.
    noise_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthExtra {
    format_version: u32,
    random_components: Vec<usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::schema(format!("{}: {e}", path.display())))
}

/// Reads a JSON file whose top level carries `format_version`.
fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    let value: serde_json::Value = parse_json(path, &text)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::schema(format!("{}: missing format_version", path.display())))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: found.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::schema(format!("{}: {e}", path.display())))
}

/// Parsed CSV matrix; `mask` is `None` when no cell was empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMatrix {
    pub values: Array2<f64>,
    pub mask: Option<Array2<bool>>,
}

pub fn parse_matrix(text: &str, origin: &Path) -> Result<CsvMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut observed = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::schema(format!("{}: {e}", origin.display())))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        // whitespace-only lines are skipped; a quoted empty cell is a
        // missing entry of a one-column matrix
        if record.len() == 1 && record[0].is_empty() {
            let start = record.position().map_or(0, |p| p.byte() as usize);
            if !text[start..].trim_start_matches([' ', '\t']).starts_with('"') {
                continue;
            }
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::schema(format!(
                    "{}:{line}: ragged row with {} cells, expected {w}",
                    origin.display(),
                    record.len()
                )))
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                values.push(0.0);
                observed.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::schema(format!(
                        "{}:{line}:{}: non-numeric cell '{cell}'",
                        origin.display(),
                        col + 1
                    ))
                })?;
                values.push(v);
                observed.push(true);
            }
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    let values = Array2::from_shape_vec((rows, cols), values).expect("row widths checked");
    let mask = if observed.iter().all(|&b| b) {
        None
    } else {
        Some(Array2::from_shape_vec((rows, cols), observed).expect("row widths checked"))
    };
    Ok(CsvMatrix { values, mask })
}

pub fn read_matrix(path: &Path) -> Result<CsvMatrix> {
    parse_matrix(&read_text(path)?, path)
}

/// CSV text of `values`; entries with a `false` mask become empty cells.
pub fn format_matrix(values: ArrayView2<f64>, mask: Option<ArrayView2<bool>>) -> String {
    let mut out = String::new();
    for (r, row) in values.axis_iter(Axis(0)).enumerate() {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            if mask.as_ref().is_none_or(|m| m[[r, c]]) {
                out.push_str(&format!("{v:?}"));
            } else if row.len() == 1 {
                // a bare empty line would be read as no row at all
                out.push_str("\"\"");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, values: ArrayView2<f64>, mask: Option<ArrayView2<bool>>) -> Result<()> {
    write_atomic(path, format_matrix(values, mask).as_bytes())
}

/// Characters outside `[A-Za-z0-9._-]` are replaced so names are safe as
/// file-name fragments.
pub fn file_fragment(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

fn relative_file(root: &Path, file: &str) -> Result<PathBuf> {
    let rel = Path::new(file);
    let safe = rel
        .components()
        .all(|c| matches!(c, std::path::Component::Normal(_) | std::path::Component::CurDir));
    if file.is_empty() || !safe {
        return Err(Error::schema(format!("file reference '{file}' must be a relative path inside {}", root.display())));
    }
    Ok(root.join(rel))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    read_versioned(&dir.join(MANIFEST_FILE))
}

/// Loads `manifest.json` and every trial CSV it lists, then applies the
/// declared preprocessing.
pub fn load_dataset(dir: &Path) -> Result<TrialSet> {
    let manifest = read_manifest(dir)?;
    if manifest.channel_names.len() != manifest.n_channels {
        return Err(Error::schema(format!(
            "manifest lists {} channel names for n_channels = {}",
            manifest.channel_names.len(),
            manifest.n_channels
        )));
    }
    for c in &manifest.categories {
        c.validate()?;
    }
    let mut trials = Vec::with_capacity(manifest.trials.len());
    for entry in &manifest.trials {
        let path = relative_file(dir, &entry.file)?;
        let m = read_matrix(&path)?;
        if m.values.nrows() != manifest.n_channels {
            return Err(Error::schema(format!(
                "{}: {} rows, expected {} channels",
                path.display(),
                m.values.nrows(),
                manifest.n_channels
            )));
        }
        let label = Label::from_tokens(&manifest.categories, &entry.label)
            .map_err(|e| Error::schema(format!("trial '{}': {e}", entry.id)))?;
        let mut trial = Trial::new(entry.id.clone(), m.values, label);
        trial.mask = m.mask;
        trials.push(trial);
    }
    TrialSet::new(manifest.channel_names, manifest.categories, trials, manifest.preprocess)
}

/// Writes the trial set as stored in memory. Values are already
/// preprocessed, so the manifest declares no further preprocessing.
pub fn save_dataset(dir: &Path, trials: &TrialSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let width = trials.n_trials().saturating_sub(1).to_string().len();
    let mut entries = Vec::with_capacity(trials.n_trials());
    for (m, trial) in trials.trials.iter().enumerate() {
        let file = format!("trials/{m:0width$}_{}.csv", file_fragment(&trial.id));
        write_matrix(&dir.join(&file), trial.data.view(), trial.mask.as_ref().map(|x| x.view()))?;
        entries.push(TrialEntry {
            id: trial.id.clone(),
            file,
            label: trial.label.to_tokens(&trials.categories),
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        n_channels: trials.n_channels(),
        channel_names: trials.channel_names.clone(),
        categories: trials.categories.clone(),
        preprocess: Preprocess::None,
        trials: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Writes a model archive. `config` is echoed to `config.json` when given.
/// Metrics are written separately with [`write_json`] into
/// [`METRICS_FILE`].
pub fn save_model(dir: &Path, state: &ModelState, config: Option<&Hyperparams>) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut categories = Vec::with_capacity(state.categories.len());
    for (k, (spec, tensor)) in state.categories.iter().zip(&state.components).enumerate() {
        let mut files = Vec::with_capacity(spec.n_values());
        for (i, value) in spec.values.iter().enumerate() {
            let (cat, val) = (file_fragment(&spec.name), file_fragment(value));
            // indices keep sanitized names from colliding
            let file = if cat == spec.name && val == *value {
                format!("A_{cat}_{val}.csv")
            } else {
                format!("A_{cat}_{val}_{k}_{i}.csv")
            };
            write_matrix(&dir.join(&file), tensor.variant(i), None)?;
            files.push(file);
        }
        categories.push(ArchiveCategory {
            spec: spec.clone(),
            files,
        });
    }
    let mut trials = Vec::with_capacity(state.trials.len());
    let mut stems = std::collections::HashSet::new();
    for (m, meta) in state.trials.iter().enumerate() {
        let frag = file_fragment(&meta.id);
        // sanitized or colliding ids get the trial index prepended
        let mut stem = if frag == meta.id { frag.clone() } else { format!("{m}_{frag}") };
        while !stems.insert(stem.clone()) {
            stem = format!("{m}_{stem}");
        }
        let traces = format!("phi_{stem}.csv");
        write_matrix(&dir.join(&traces), state.traces.traces[m].view(), None)?;
        let transition = match &state.transitions {
            Some(ws) => {
                let file = format!("W_{stem}.csv");
                write_matrix(&dir.join(&file), ws[m].view(), None)?;
                Some(file)
            }
            None => None,
        };
        trials.push(ArchiveTrial {
            id: meta.id.clone(),
            label: meta.label.to_tokens(&state.categories),
            n_times: state.traces.traces[m].ncols(),
            traces,
            transition,
        });
    }
    let mut objective = String::from("iteration,objective\n");
    for (i, v) in state.objective_history.iter().enumerate() {
        objective.push_str(&format!("{},{v:?}\n", i + 1));
    }
    write_atomic(&dir.join(OBJECTIVE_FILE), objective.as_bytes())?;
    if let Some(config) = config {
        write_json(&dir.join(CONFIG_FILE), config)?;
    }
    let index = ArchiveIndex {
        format_version: FORMAT_VERSION,
        channel_names: state.channel_names.clone(),
        categories,
        trials,
        converged: state.converged,
        noise_variance: state.noise_variance.is_finite().then_some(state.noise_variance),
    };
    // written last: a complete model.json implies every file it names exists
    write_json(&dir.join(MODEL_FILE), &index)
}

fn read_objective(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let value = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::schema(format!("{}:{}: malformed row", path.display(), line_no + 1)))?;
        out.push(value);
    }
    Ok(out)
}

fn read_full_matrix(path: &Path, shape: (usize, usize)) -> Result<Array2<f64>> {
    let m = read_matrix(path)?;
    if m.mask.is_some() {
        return Err(Error::schema(format!("{}: empty cells are not allowed here", path.display())));
    }
    if m.values.dim() != shape {
        return Err(Error::schema(format!(
            "{}: shape {:?}, expected {shape:?}",
            path.display(),
            m.values.dim()
        )));
    }
    Ok(m.values)
}

pub fn load_model(dir: &Path) -> Result<ModelState> {
    let index: ArchiveIndex = read_versioned(&dir.join(MODEL_FILE))?;
    let n = index.channel_names.len();
    let categories: Vec<CategorySpec> = index.categories.iter().map(|c| c.spec.clone()).collect();
    for c in &categories {
        c.validate()?;
    }
    let mut components = Vec::with_capacity(categories.len());
    for cat in &index.categories {
        if cat.files.len() != cat.spec.n_values() {
            return Err(Error::schema(format!(
                "category '{}' lists {} component files for {} values",
                cat.spec.name,
                cat.files.len(),
                cat.spec.n_values()
            )));
        }
        let mut tensor = ComponentTensor::zeros(n, cat.spec.n_components, cat.spec.n_values());
        for (i, file) in cat.files.iter().enumerate() {
            let block = read_full_matrix(&relative_file(dir, file)?, (n, cat.spec.n_components))?;
            tensor.variant_mut(i).assign(&block);
        }
        components.push(tensor);
    }
    let groups = GroupIndex::from_categories(&categories);
    let p = groups.total();
    let mut traces = Vec::with_capacity(index.trials.len());
    let mut metas = Vec::with_capacity(index.trials.len());
    let mut transitions = Vec::new();
    let has_transitions = index.trials.first().is_some_and(|t| t.transition.is_some());
    for t in &index.trials {
        traces.push(read_full_matrix(&relative_file(dir, &t.traces)?, (p, t.n_times))?);
        match (&t.transition, has_transitions) {
            (Some(file), true) => transitions.push(read_full_matrix(&relative_file(dir, file)?, (p, p))?),
            (None, false) => {}
            _ => {
                return Err(Error::schema("transition matrices must be given for all trials or none"));
            }
        }
        metas.push(TrialMeta {
            id: t.id.clone(),
            label: Label::from_tokens(&categories, &t.label)?,
        });
    }
    Ok(ModelState {
        channel_names: index.channel_names,
        categories,
        components,
        traces: TraceSet::new(traces, groups)?,
        transitions: has_transitions.then_some(transitions),
        trials: metas,
        objective_history: read_objective(&dir.join(OBJECTIVE_FILE))?,
        converged: index.converged,
        noise_variance: index.noise_variance.unwrap_or(f64::NAN),
    })
}

/// Ground truth is stored as a model archive plus the list of random
/// components.
pub fn save_truth(dir: &Path, truth: &GroundTruth, trials: &TrialSet) -> Result<()> {
    save_model(dir, &truth.to_state(trials)?, None)?;
    write_json(
        &dir.join(TRUTH_EXTRA_FILE),
        &TruthExtra {
            format_version: FORMAT_VERSION,
            random_components: truth.random_components.clone(),
        },
    )
}

pub fn load_truth(dir: &Path) -> Result<GroundTruth> {
    let state = load_model(dir)?;
    let extra_path = dir.join(TRUTH_EXTRA_FILE);
    let random_components = if extra_path.exists() {
        read_versioned::<TruthExtra>(&extra_path)?.random_components
    } else {
        Vec::new()
    };
    Ok(GroundTruth {
        categories: state.categories,
        components: state.components,
        traces: state.traces.traces,
        labels: state.trials.into_iter().map(|t| t.label).collect(),
        random_components,
    })
}

/// Reads a fit configuration. Every γ must be present; other fields take
/// their defaults, and unknown fields are rejected.
pub fn parse_config(text: &str, origin: &Path) -> Result<Hyperparams> {
    let value: serde_json::Value = parse_json(origin, text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::schema(format!("{}: config must be a JSON object", origin.display())))?;
    let missing: Vec<&str> = ["gamma1", "gamma2", "gamma3", "gamma4", "gamma5"]
        .into_iter()
        .filter(|g| !obj.contains_key(*g))
        .collect();
    if !missing.is_empty() {
        return Err(Error::parameter(format!(
            "{}: missing required field(s) {}",
            origin.display(),
            missing.join(", ")
        )));
    }
    let hyper: Hyperparams =
        serde_json::from_value(value).map_err(|e| Error::parameter(format!("{}: {e}", origin.display())))?;
    hyper.validate()?;
    Ok(hyper)
}

pub fn load_config(path: &Path) -> Result<Hyperparams> {
    parse_config(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_text_round_trip() {
        let a = array![[0.1, -1e-300, 1.0 / 3.0], [f64::MAX, 5e-324, -0.0]];
        let text = format_matrix(a.view(), None);
        let back = parse_matrix(&text, Path::new("mem")).unwrap();
        assert!(back.mask.is_none());
        for (x, y) in a.iter().zip(back.values.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn empty_cells_become_mask() {
        let m = parse_matrix("1,,3\n4,5,6\n", Path::new("mem")).unwrap();
        let mask = m.mask.unwrap();
        assert!(!mask[[0, 1]] && mask[[0, 0]] && mask[[1, 1]]);
        assert_eq!(m.values[[0, 1]], 0.0);
    }

    #[test]
    fn one_column_missing_entries_survive() {
        let values = array![[1.0], [2.0], [3.0]];
        let mask = array![[true], [false], [true]];
        let text = format_matrix(values.view(), Some(mask.view()));
        let back = parse_matrix(&text, Path::new("mem")).unwrap();
        assert_eq!(back.values, array![[1.0], [0.0], [3.0]]);
        assert_eq!(back.mask.unwrap(), mask);
        let skipped = parse_matrix("1\n  \n2\n", Path::new("mem")).unwrap();
        assert_eq!(skipped.values.dim(), (2, 1));
    }

    #[test]
    fn ragged_and_non_numeric_rows_report_location() {
        let e = parse_matrix("1,2\n3\n", Path::new("f.csv")).unwrap_err();
        assert!(matches!(e, Error::Schema(ref s) if s.contains("f.csv:2")));
        let e = parse_matrix("1,x\n", Path::new("f.csv")).unwrap_err();
        assert!(matches!(e, Error::Schema(ref s) if s.contains("f.csv:1:2")));
    }

    #[test]
    fn config_requires_every_gamma() {
        let ok = r#"{"gamma1":0.1,"gamma2":0.2,"gamma3":0.3,"gamma4":0,"gamma5":1}"#;
        let h = parse_config(ok, Path::new("c")).unwrap();
        assert_eq!(h.gamma2, 0.2);
        let e = parse_config(r#"{"gamma2":0.2,"gamma3":0.3,"gamma4":0,"gamma5":1}"#, Path::new("c")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = parse_config(
            r#"{"gamma1":0.1,"gamma2":0.2,"gamma3":0.3,"gamma4":0,"gamma5":1,"gama6":1}"#,
            Path::new("c"),
        )
        .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn fragments_are_path_safe() {
        assert_eq!(file_fragment("a/b c"), "a_b_c");
        assert_eq!(file_fragment("I"), "I");
        assert!(relative_file(Path::new("/x"), "../y").is_err());
        assert!(relative_file(Path::new("/x"), "/etc/passwd").is_err());
    }
}
