//! Command-line front end.
//!
//! Every subcommand writes a `run.json` next to its output recording the
//! arguments, seed, versions and wall time. Failures print one line
//! `error[<kind>]: <message>` to stderr and exit with 2 (schema or
//! parameter), 3 (numeric) or 4 (I/O).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::data::{ModelState, TrialSet};
use crate::error::{Error, Result};
use crate::eval::{
    information_criteria, match_and_score, mean_variant_distance, reconstruction_metrics, validate_model, DfMode,
    ValidationOptions,
};
use crate::fit::fit_with_progress;
use crate::graph::build_graphs;
use crate::io;
use crate::synth::{generate, SynthParams};

pub const THREADS_ENV: &str = "MILCCI_THREADS";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "milcci", version, about = "Label-aware sparse factorization of multi-trial time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Nulls {
    All,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DfArg {
    Components,
    ComponentsPlusTraces,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth
    Generate {
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file overriding generator parameters
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the similarity matrices of a dataset's categories as JSON
    Graph {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `<data>/graphs.json`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON hyperparameters; every gamma is required
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config
        #[arg(long)]
        seed: Option<u64>,
        /// Print the objective after every iteration
        #[arg(long)]
        verbose: bool,
    },
    /// Score a model against ground truth
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory holding `truth/`, or a truth archive
        #[arg(long)]
        truth: PathBuf,
        /// Dataset for reconstruction metrics; defaults to `--truth` when it
        /// holds a manifest
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "components")]
        df: DfArg,
        /// Defaults to `<model>/metrics.json`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Channel contributions and permutation tests
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        nulls: Nulls,
        #[arg(long, default_value_t = 1000)]
        n_perm: usize,
        #[arg(long, default_value_t = 500)]
        n_coalitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<model>/validation.json`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write SVG heatmaps of components and traces
    Render {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of trials whose traces are drawn
        #[arg(long, default_value_t = 5)]
        max_trials: usize,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    configure_threads();
    let start = Instant::now();
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let (result, run_dir, seed) = dispatch(cli.command);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            report(e);
            e.exit_code()
        }
    };
    if let Some(dir) = run_dir.filter(|d| d.is_dir()) {
        let record = json!({
            "args": args,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "format_version": io::FORMAT_VERSION,
            "threads": rayon::current_num_threads(),
            "wall_time_s": start.elapsed().as_secs_f64(),
            "exit_code": code,
        });
        if let Err(e) = append_run(&dir.join(RUN_FILE), record) {
            report(&e);
            return if code == 0 { e.exit_code() } else { code };
        }
    }
    code
}

fn report(e: &Error) {
    let text = e.to_string();
    let prefix = format!("{} error: ", e.kind());
    let text = text.strip_prefix(&prefix).unwrap_or(&text);
    eprintln!("error[{}]: {}", e.kind(), text.split_whitespace().collect::<Vec<_>>().join(" "));
}

/// `run.json` holds a list of records so later commands writing into the
/// same directory keep earlier ones.
fn append_run(path: &Path, record: Value) -> Result<()> {
    let mut runs = match std::fs::read_to_string(path) {
        Ok(text) => match serde_json::from_str::<Value>(&text) {
            Ok(Value::Array(runs)) => runs,
            Ok(other) => vec![other],
            Err(_) => Vec::new(),
        },
        Err(_) => Vec::new(),
    };
    runs.push(record);
    io::write_json(path, &runs)
}

/// Caps the global worker pool from `MILCCI_THREADS` (0 or unset = auto).
fn configure_threads() {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        // fails only when a pool already exists, which is then kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

type Dispatch = (Result<()>, Option<PathBuf>, Option<u64>);

fn dispatch(command: Command) -> Dispatch {
    match command {
        Command::Generate {
            preset,
            seed,
            params,
            out,
        } => (cmd_generate(&preset, seed, params.as_deref(), &out), Some(out), Some(seed)),
        Command::Graph { data, out } => {
            let out = out.unwrap_or_else(|| data.join("graphs.json"));
            let dir = out.parent().map(Path::to_path_buf);
            (cmd_graph(&data, &out), dir, None)
        }
        Command::Fit {
            data,
            out,
            config,
            seed,
            verbose,
        } => {
            let mut used_seed = seed;
            let r = cmd_fit(&data, &out, &config, seed, verbose, &mut used_seed);
            (r, Some(out), used_seed)
        }
        Command::Eval {
            model,
            truth,
            data,
            df,
            out,
        } => {
            let out = out.unwrap_or_else(|| model.join(io::METRICS_FILE));
            let dir = out.parent().map(Path::to_path_buf);
            (cmd_eval(&model, &truth, data.as_deref(), df, &out), dir, None)
        }
        Command::Validate {
            model,
            data,
            nulls,
            n_perm,
            n_coalitions,
            seed,
            out,
        } => {
            let out = out.unwrap_or_else(|| model.join("validation.json"));
            let dir = out.parent().map(Path::to_path_buf);
            let opts = ValidationOptions {
                n_perm,
                n_coalitions,
                seed,
                run_nulls: nulls == Nulls::All,
            };
            (cmd_validate(&model, &data, &opts, &out), dir, Some(seed))
        }
        Command::Render { model, out, max_trials } => (cmd_render(&model, &out, max_trials), Some(out), None),
    }
}

fn cmd_generate(preset: &str, seed: u64, params: Option<&Path>, out: &Path) -> Result<()> {
    let mut p = SynthParams::preset(preset)?;
    if let Some(path) = params {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: Value =
            serde_json::from_str(&text).map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
        let mut base = serde_json::to_value(&p).expect("params serialize");
        if let (Some(b), Some(o)) = (base.as_object_mut(), overrides.as_object()) {
            for (k, v) in o {
                b.insert(k.clone(), v.clone());
            }
        } else {
            return Err(Error::schema(format!("{}: expected a JSON object", path.display())));
        }
        p = serde_json::from_value(base).map_err(|e| Error::parameter(format!("{}: {e}", path.display())))?;
    }
    let p = p.with_seed(seed);
    let (trials, truth) = generate(&p)?;
    io::save_dataset(out, &trials)?;
    io::save_truth(&out.join(io::TRUTH_DIR), &truth, &trials)?;
    io::write_json(&out.join("synth.json"), &p)
}

fn cmd_graph(data: &Path, out: &Path) -> Result<()> {
    let manifest = io::read_manifest(data)?;
    let graphs = build_graphs(&manifest.categories)?;
    let doc: Vec<Value> = graphs
        .iter()
        .zip(&manifest.categories)
        .map(|(g, c)| {
            json!({
                "category": g.category,
                "values": c.values,
                "weights": rows(&g.weights),
                "symmetrized": rows(&g.symmetrized()),
            })
        })
        .collect();
    io::write_json(out, &doc)
}

fn rows(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn fit_metrics(state: &ModelState, trials: &TrialSet) -> Result<Value> {
    let recon = reconstruction_metrics(state, trials)?;
    let ic = information_criteria(state, trials, DfMode::default())?;
    let variant_distance: Vec<Value> = state
        .categories
        .iter()
        .zip(&state.components)
        .map(|(c, t)| json!({"category": c.name, "mean_variant_distance": mean_variant_distance(t)}))
        .collect();
    Ok(json!({
        "pooled_mse": recon.pooled_mse,
        "pooled_relative_mse": recon.pooled_relative_mse,
        "information_criteria": ic,
        "variant_distance": variant_distance,
    }))
}

fn cmd_fit(
    data: &Path,
    out: &Path,
    config: &Path,
    seed: Option<u64>,
    verbose: bool,
    used_seed: &mut Option<u64>,
) -> Result<()> {
    let mut hyper = io::load_config(config)?;
    if let Some(s) = seed {
        hyper.seed = s;
    }
    *used_seed = Some(hyper.seed);
    let trials = io::load_dataset(data)?;
    let start = Instant::now();
    let outcome = fit_with_progress(&trials, &hyper, |p| {
        if verbose {
            eprintln!("iter {:4}  objective {:.10e}  ({:.3}s)", p.iteration, p.objective, p.elapsed.as_secs_f64());
        }
    });
    let report = match outcome {
        Ok(r) => r,
        Err(Error::FitAborted {
            iters,
            source,
            last_state,
        }) => {
            // keep the last good state for inspection
            io::save_model(out, &last_state, Some(&hyper))?;
            return Err(Error::FitAborted {
                iters,
                source,
                last_state,
            });
        }
        Err(e) => return Err(e),
    };
    io::save_model(out, &report.state, Some(&hyper))?;
    let mut metrics = fit_metrics(&report.state, &trials)?;
    let extra = json!({
        "iters": report.iters,
        "converged": report.state.converged,
        "final_objective": report.final_objective,
        "fit_seconds": start.elapsed().as_secs_f64(),
        "per_iter_seconds": report.per_iter_timing.iter().map(|d| d.as_secs_f64()).collect::<Vec<_>>(),
        "warnings": report.warnings,
    });
    merge(&mut metrics, extra);
    io::write_json(&out.join(io::METRICS_FILE), &metrics)
}

fn merge(into: &mut Value, from: Value) {
    if let (Some(a), Value::Object(b)) = (into.as_object_mut(), from) {
        a.extend(b);
    }
}

fn cmd_eval(model: &Path, truth: &Path, data: Option<&Path>, df: DfArg, out: &Path) -> Result<()> {
    let state = io::load_model(model)?;
    let truth_dir = if truth.join(io::TRUTH_DIR).join(io::MODEL_FILE).exists() {
        truth.join(io::TRUTH_DIR)
    } else {
        truth.to_path_buf()
    };
    let gt = io::load_truth(&truth_dir)?;
    let matched = match_and_score(&state, &gt)?;
    let mut doc = if out.exists() {
        let text = std::fs::read_to_string(out).map_err(|e| Error::io(out, e))?;
        serde_json::from_str(&text).unwrap_or_else(|_| json!({}))
    } else {
        json!({})
    };
    merge(
        &mut doc,
        json!({
            "mean_component_corr": matched.mean_component_corr,
            "mean_trace_corr": matched.mean_trace_corr,
            "matching": matched,
        }),
    );
    let data_dir = data
        .map(Path::to_path_buf)
        .or_else(|| truth.join(io::MANIFEST_FILE).exists().then(|| truth.to_path_buf()));
    if let Some(dir) = data_dir {
        let trials = io::load_dataset(&dir)?;
        let recon = reconstruction_metrics(&state, &trials)?;
        let mode = match df {
            DfArg::Components => DfMode::ComponentsNnz,
            DfArg::ComponentsPlusTraces => DfMode::ComponentsPlusTraces,
        };
        let ic = information_criteria(&state, &trials, mode)?;
        merge(
            &mut doc,
            json!({
                "pooled_mse": recon.pooled_mse,
                "pooled_relative_mse": recon.pooled_relative_mse,
                "information_criteria": ic,
            }),
        );
    }
    io::write_json(out, &doc)
}

fn cmd_validate(model: &Path, data: &Path, opts: &ValidationOptions, out: &Path) -> Result<()> {
    if opts.n_perm == 0 {
        return Err(Error::parameter("--n-perm must be >= 1"));
    }
    if opts.n_coalitions == 0 {
        return Err(Error::parameter("--n-coalitions must be >= 1"));
    }
    let state = io::load_model(model)?;
    let trials = io::load_dataset(data)?;
    let report = validate_model(&state, &trials, opts)?;
    io::write_json(out, &report)
}

fn cmd_render(model: &Path, out: &Path, max_trials: usize) -> Result<()> {
    let state = io::load_model(model)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (k, (cat, tensor)) in state.categories.iter().zip(&state.components).enumerate() {
        for (i, value) in cat.values.iter().enumerate() {
            let name = format!("A_{}_{}_{k}_{i}.svg", io::file_fragment(&cat.name), io::file_fragment(value));
            let title = format!("{} = {}", cat.name, value);
            let svg = heatmap_svg(&title, tensor.variant(i));
            io::write_atomic(&out.join(name), svg.as_bytes())?;
        }
    }
    for (m, meta) in state.trials.iter().enumerate().take(max_trials) {
        let name = format!("phi_{m}_{}.svg", io::file_fragment(&meta.id));
        let svg = heatmap_svg(&format!("traces {}", meta.id), state.traces.traces[m].view());
        io::write_atomic(&out.join(name), svg.as_bytes())?;
    }
    Ok(())
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Diverging blue-white-red heatmap scaled to the largest magnitude.
pub fn heatmap_svg(title: &str, values: ndarray::ArrayView2<f64>) -> String {
    let (rows, cols) = values.dim();
    let cell_w = (600.0 / cols.max(1) as f64).clamp(1.0, 24.0);
    let cell_h = (400.0 / rows.max(1) as f64).clamp(2.0, 24.0);
    let top = 24.0;
    let width = cell_w * cols as f64;
    let height = top + cell_h * rows as f64;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(svg, r#"<text x="2" y="16" font-family="sans-serif" font-size="12">{}</text>"#, escape_xml(title));
    for ((r, c), &v) in values.indexed_iter() {
        let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
        let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
        let (red, green, blue) = if t >= 0.0 { (255, fade(t), fade(t)) } else { (fade(t), fade(t), 255) };
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{cell_w:.2}" height="{cell_h:.2}" fill="rgb({red},{green},{blue})"/>"#,
            c as f64 * cell_w,
            top + r as f64 * cell_h
        );
    }
    svg.push_str("</svg>\n");
    svg
}
