//! The `fogctl` command-line driver: dataset generation, training (single
//! run, seed sweeps, and the learning-rate/weight-decay grid), checkpoint
//! evaluation, finite-difference gradient checking, and parameter audits.
//!
//! Exit codes: 0 success, 1 validation error (bad flags or config), 2
//! runtime failure (io, divergence), 3 failed verification checks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::graph::generate::GeneratorConfig;
use crate::graph::{io, DatasetSplit, GraphError, TaskKind};
use crate::model::{presets, verify, Model, ModelConfig, ModelError};
use crate::train::{self, evaluate, metric_name, TrainConfig, TrainError, GRID_LR, GRID_WD};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

// ── errors ───────────────────────────────────────────────────────────────

/// A failure bundled with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn validation(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: message.into(),
    }
}

fn check_failed(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_CHECK_FAILED,
        message: message.into(),
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Config { .. } | GraphError::Parse { .. } => validation(e.to_string()),
            other => runtime(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config { .. } => validation(e.to_string()),
            other => runtime(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { .. } | TrainError::Data { .. } | TrainError::EmptySplit { .. } => {
                validation(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            other => runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

// ── run configuration file ───────────────────────────────────────────────

/// The model section of a run file: a preset name or a full inline config.
#[derive(Clone, Debug)]
pub enum ModelSection {
    Preset(String),
    Inline(Box<ModelConfig>),
}

impl ModelSection {
    pub fn resolve(&self) -> CliResult<ModelConfig> {
        match self {
            ModelSection::Inline(cfg) => Ok((**cfg).clone()),
            ModelSection::Preset(name) => presets::find(name)
                .map(|p| p.model)
                .ok_or_else(|| unknown_preset(name)),
        }
    }
}

fn unknown_preset(name: &str) -> CliError {
    validation(format!(
        "unknown preset `{name}`; available presets:\n  {}",
        presets::names().join("\n  ")
    ))
}

/// The data section: a dataset file on disk or a generator description.
#[derive(Clone, Debug)]
pub enum DataSection {
    Path(PathBuf),
    Generator(GeneratorConfig),
}

/// A parsed and schema-checked run file.
#[derive(Clone, Debug)]
pub struct RunConfigFile {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub output_dir: PathBuf,
}

/// Raw shape of the file; `model` and `data` are dispatched by hand so that
/// both arms keep strict unknown-key rejection (serde cannot combine
/// untagged enums with `deny_unknown_fields`).
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunFile {
    model: toml::Value,
    train: TrainConfig,
    data: toml::Value,
    output_dir: PathBuf,
}

fn parse_model_section(v: &toml::Value) -> CliResult<ModelSection> {
    let table = v
        .as_table()
        .ok_or_else(|| validation("[model] must be a table"))?;
    if let Some(preset) = table.get("preset") {
        let name = preset
            .as_str()
            .ok_or_else(|| validation("[model] preset must be a string"))?;
        if table.len() > 1 {
            return Err(validation(
                "[model] with `preset` takes no other keys; use an inline config to override dims",
            ));
        }
        // Fail now, not at build time.
        if presets::find(name).is_none() {
            return Err(unknown_preset(name));
        }
        return Ok(ModelSection::Preset(name.to_string()));
    }
    let cfg: ModelConfig = v
        .clone()
        .try_into()
        .map_err(|e| validation(format!("[model]: {e}")))?;
    Ok(ModelSection::Inline(Box::new(cfg)))
}

fn parse_data_section(v: &toml::Value) -> CliResult<DataSection> {
    let table = v
        .as_table()
        .ok_or_else(|| validation("[data] must be a table"))?;
    if let Some(path) = table.get("path") {
        let p = path
            .as_str()
            .ok_or_else(|| validation("[data] path must be a string"))?;
        if table.len() > 1 {
            return Err(validation("[data] with `path` takes no other keys"));
        }
        return Ok(DataSection::Path(PathBuf::from(p)));
    }
    let gen: GeneratorConfig = v
        .clone()
        .try_into()
        .map_err(|e| validation(format!("[data]: {e}")))?;
    Ok(DataSection::Generator(gen))
}

pub fn load_run_config(path: &Path) -> CliResult<RunConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
    let raw: RawRunFile =
        toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let file = RunConfigFile {
        model: parse_model_section(&raw.model)?,
        train: raw.train,
        data: parse_data_section(&raw.data)?,
        output_dir: raw.output_dir,
    };
    file.train.validate().map_err(CliError::from)?;
    file.model.resolve()?; // surface inline-config inconsistencies early
    Ok(file)
}

fn load_or_generate(data: &DataSection, seed: Option<u64>) -> CliResult<DatasetSplit> {
    match data {
        DataSection::Path(p) => {
            // A stored dataset has no randomness left; --seed does not apply.
            Ok(io::load_dataset(p)?)
        }
        DataSection::Generator(g) => {
            let mut g = g.clone();
            if let Some(s) = seed {
                g.set_seed(s);
            }
            Ok(g.generate()?)
        }
    }
}

// ── argument surface ─────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "fogctl",
    version,
    about = "Graph-network training driver with second-order feature-correlation layers"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file from the run config.
    Gen(GenArgs),
    /// Train a model; writes history files and the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split; prints metrics JSON.
    Eval(EvalArgs),
    /// Finite-difference gradient checks across the layer families.
    Gradcheck(GradcheckArgs),
    /// Audit preset parameter counts against the reference table values.
    Params(ParamsArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Run config (TOML) with a generator [data] section.
    #[arg(long)]
    config: PathBuf,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (default `<output_dir>/dataset.jsonl`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Single seed driving data generation, init, and batch order.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated training seeds; one run per seed under
    /// `<output_dir>/seed<N>` (the dataset stays fixed).
    #[arg(long)]
    seeds: Option<String>,
    /// Sweep the learning-rate/weight-decay grid, one run per cell under
    /// `<output_dir>/lr<LR>_wd<WD>`.
    #[arg(long)]
    grid: bool,
    /// Parallel worker threads for independent grid cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the run directory from the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow writing into an existing, non-empty run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run config (TOML); supplies the dataset and the default checkpoint.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to evaluate (default `<output_dir>/best.ckpt`).
    checkpoint: Option<PathBuf>,
    /// Also write the metrics JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Layer family (`fog`, `gcn`, `gcn+fog`, …) or `all`.
    #[arg(long, default_value = "all")]
    family: String,
    /// Random graphs per family.
    #[arg(long, default_value_t = 5)]
    graphs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ParamsArgs {
    /// Preset names (`pattern/gcn+fog`, …); empty means every preset.
    presets: Vec<String>,
}

// ── entry point ──────────────────────────────────────────────────────────

/// Parses arguments, runs the command, and maps failures to exit codes.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Params(a) => cmd_params(a),
    }
}

// ── gen ──────────────────────────────────────────────────────────────────

fn cmd_gen(a: GenArgs) -> CliResult<()> {
    let file = load_run_config(&a.config)?;
    let DataSection::Generator(mut gen) = file.data else {
        return Err(validation(
            "gen needs a generator [data] section, not a dataset path",
        ));
    };
    if let Some(seed) = a.seed {
        gen.set_seed(seed);
    }
    let out = a
        .out
        .unwrap_or_else(|| file.output_dir.join("dataset.jsonl"));
    if out.exists() && !a.force {
        return Err(validation(format!(
            "{} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    // Generate fully before touching the output path, so an invalid
    // configuration can never leave a partial file behind.
    let split = gen.generate()?;
    io::save_dataset(&split, &out)?;
    println!(
        "wrote {} ({} train / {} val / {} test graphs, task {}, generator {})",
        out.display(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        split.task,
        split.meta.generator,
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────────

/// Everything one training run produces, as written to `summary.json`.
#[derive(Serialize)]
struct RunSummary {
    model: ModelConfig,
    train: TrainConfig,
    best_epoch: usize,
    best_val_loss: f64,
    stop: train::StopReason,
    epochs_run: usize,
    test_metric_name: &'static str,
    test_metric: f64,
    test_loss: f64,
}

/// Trains one fully-specified run into `dir`.
fn run_one(
    dir: &Path,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split: &DatasetSplit,
) -> CliResult<RunSummary> {
    let mut model = Model::<f64>::build(model_cfg.clone())?;
    let outcome = train::train(&mut model, &split.train, &split.val, train_cfg)?;
    let test = evaluate(&mut model, &split.test, train_cfg.batch_size)?;

    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    train::write_history_csv(&dir.join("history.csv"), &outcome.history)?;
    train::write_history_jsonl(&dir.join("history.jsonl"), &outcome.history)?;
    model.save_checkpoint(&dir.join("best.ckpt"))?;

    let summary = RunSummary {
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stop: outcome.stop,
        epochs_run: outcome.history.len(),
        test_metric_name: metric_name(split.task),
        test_metric: test.metric,
        test_loss: test.loss,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| runtime(format!("summary serialization: {e}")))?;
    std::fs::write(dir.join("summary.json"), json)
        .map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    Ok(summary)
}

/// Refuses to reuse a non-empty run directory unless `--force` was given.
fn claim_run_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() && !force {
        let occupied = std::fs::read_dir(dir)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if occupied {
            return Err(validation(format!(
                "run directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    Ok(())
}

fn parse_seed_list(list: &str) -> CliResult<Vec<u64>> {
    let seeds: Result<Vec<u64>, _> = list
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect();
    let seeds = seeds.map_err(|e| validation(format!("--seeds: {e}")))?;
    if seeds.is_empty() {
        return Err(validation("--seeds needs at least one seed"));
    }
    Ok(seeds)
}

/// Compact cell label: `lr1e-2_wd1e-6`, `lr5e-3_wd0`.
fn cell_dir_name(lr: f64, wd: f64) -> String {
    let fmt = |x: f64| {
        if x == 0.0 {
            "0".to_string()
        } else {
            format!("{x:e}")
        }
    };
    format!("lr{}_wd{}", fmt(lr), fmt(wd))
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let file = load_run_config(&a.config)?;
    let base_model = file.model.resolve()?;
    let base_train = file.train.clone();
    let out_dir = a.out.clone().unwrap_or_else(|| file.output_dir.clone());

    if a.grid && a.seeds.is_some() {
        return Err(validation(
            "--grid and --seeds cannot be combined; sweep one axis at a time",
        ));
    }
    if a.jobs == 0 {
        return Err(validation("--jobs must be at least 1"));
    }

    // One dataset for every run: --seed reseeds the generator too, so the
    // whole experiment hangs off a single number.
    let split = load_or_generate(&file.data, a.seed)?;

    if a.grid {
        let seed = a.seed.unwrap_or(base_train.seed);
        return grid_sweep(&a, &out_dir, &base_model, &base_train, &split, seed);
    }

    let seeds = match (&a.seeds, a.seed) {
        (Some(list), _) => parse_seed_list(list)?,
        (None, Some(s)) => vec![s],
        (None, None) => vec![base_train.seed],
    };

    if seeds.len() == 1 {
        claim_run_dir(&out_dir, a.force)?;
        let mut model_cfg = base_model;
        let mut train_cfg = base_train;
        model_cfg.seed = seeds[0];
        train_cfg.seed = seeds[0];
        let s = run_one(&out_dir, &model_cfg, &train_cfg, &split)?;
        println!(
            "{}: best val loss {:.6} at epoch {}; test {} {:.6}",
            out_dir.display(),
            s.best_val_loss,
            s.best_epoch,
            s.test_metric_name,
            s.test_metric
        );
        return Ok(());
    }

    claim_run_dir(&out_dir, a.force)?;
    let mut metrics = Vec::new();
    for &seed in &seeds {
        let dir = out_dir.join(format!("seed{seed}"));
        claim_run_dir(&dir, a.force)?;
        let mut model_cfg = base_model.clone();
        let mut train_cfg = base_train.clone();
        model_cfg.seed = seed;
        train_cfg.seed = seed;
        let s = run_one(&dir, &model_cfg, &train_cfg, &split)?;
        println!(
            "seed {seed}: best val loss {:.6} at epoch {}; test {} {:.6}",
            s.best_val_loss, s.best_epoch, s.test_metric_name, s.test_metric
        );
        metrics.push(s.test_metric);
    }
    let mean = metrics.iter().sum::<f64>() / metrics.len() as f64;
    let var = metrics.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / metrics.len() as f64;
    println!(
        "{} seeds: test {} mean {:.6} ± {:.6}",
        seeds.len(),
        metric_name(split.task),
        mean,
        var.sqrt()
    );
    Ok(())
}

fn grid_sweep(
    a: &TrainArgs,
    out_dir: &Path,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    split: &DatasetSplit,
    seed: u64,
) -> CliResult<()> {
    claim_run_dir(out_dir, a.force)?;
    let cells: Vec<(f64, f64)> = GRID_LR
        .iter()
        .flat_map(|&lr| GRID_WD.iter().map(move |&wd| (lr, wd)))
        .collect();
    for &(lr, wd) in &cells {
        claim_run_dir(&out_dir.join(cell_dir_name(lr, wd)), a.force)?;
    }

    // Cells are independent and individually seeded, so any interleaving
    // yields identical files; threads only shorten the wall clock.
    let results: Vec<CliResult<(f64, f64, RunSummary)>> = std::thread::scope(|scope| {
        let workers = a.jobs.min(cells.len()).max(1);
        let mut handles = Vec::new();
        for w in 0..workers {
            let cells = &cells;
            let handle = scope.spawn(move || {
                let mut out = Vec::new();
                for &(lr, wd) in cells.iter().skip(w).step_by(workers) {
                    let dir = out_dir.join(cell_dir_name(lr, wd));
                    let mut model_cfg = base_model.clone();
                    let mut train_cfg = base_train.clone();
                    model_cfg.seed = seed;
                    train_cfg.seed = seed;
                    train_cfg.init_lr = lr;
                    train_cfg.weight_decay = wd;
                    out.push(run_one(&dir, &model_cfg, &train_cfg, split).map(|s| (lr, wd, s)));
                }
                out
            });
            handles.push(handle);
        }
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("grid worker panicked"))
            .collect()
    });

    let mut rows = Vec::new();
    for r in results {
        rows.push(r?);
    }
    rows.sort_by(|a, b| a.2.best_val_loss.total_cmp(&b.2.best_val_loss));
    println!("grid results (best first):");
    for (lr, wd, s) in &rows {
        println!(
            "  lr {lr:<7} wd {wd:<7} best val loss {:.6} (epoch {:>3})  test {} {:.6}",
            s.best_val_loss, s.best_epoch, s.test_metric_name, s.test_metric
        );
    }
    let (lr, wd, best) = &rows[0];
    println!(
        "best cell: lr {lr} wd {wd} → {}",
        out_dir.join(cell_dir_name(*lr, *wd)).display()
    );
    let _ = best;
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    task: TaskKind,
    metric_name: &'static str,
    metric: f64,
    loss: f64,
    n_graphs: usize,
    n_items: usize,
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let file = load_run_config(&a.config)?;
    let ckpt = a
        .checkpoint
        .unwrap_or_else(|| file.output_dir.join("best.ckpt"));
    if !ckpt.exists() {
        return Err(runtime(format!("checkpoint {} not found", ckpt.display())));
    }
    let mut model = Model::<f64>::load_checkpoint(&ckpt)?;
    let split = load_or_generate(&file.data, None)?;
    if split.task != model.config.task {
        return Err(validation(format!(
            "checkpoint was trained for {} but the dataset carries {}",
            model.config.task, split.task
        )));
    }
    let eval = evaluate(&mut model, &split.test, file.train.batch_size)?;
    let report = EvalReport {
        checkpoint: ckpt,
        task: split.task,
        metric_name: metric_name(split.task),
        metric: eval.metric,
        loss: eval.loss,
        n_graphs: split.test.len(),
        n_items: eval.n_items,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| runtime(format!("report serialization: {e}")))?;
    println!("{json}");
    if let Some(out) = a.out {
        std::fs::write(&out, json).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

// ── gradcheck ────────────────────────────────────────────────────────────

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    if a.graphs == 0 {
        return Err(validation("--graphs must be at least 1"));
    }
    let reports = if a.family == "all" {
        verify::check_all(a.graphs, a.seed)?
    } else {
        vec![verify::check_family(&a.family, a.graphs, a.seed)?]
    };
    let mut failures = 0;
    for r in &reports {
        let status = if r.passes(verify::TOLERANCE) {
            "pass"
        } else {
            failures += 1;
            "FAIL"
        };
        println!("{status}  {r}");
    }
    if failures > 0 {
        return Err(check_failed(format!(
            "{failures} of {} families exceeded the {:.0e} gradient tolerance",
            reports.len(),
            verify::TOLERANCE
        )));
    }
    println!(
        "all {} families within {:.0e}",
        reports.len(),
        verify::TOLERANCE
    );
    Ok(())
}

// ── params ───────────────────────────────────────────────────────────────

fn cmd_params(a: ParamsArgs) -> CliResult<()> {
    let names = if a.presets.is_empty() {
        presets::names()
    } else {
        a.presets.clone()
    };
    for name in &names {
        let preset = presets::find(name).ok_or_else(|| unknown_preset(name))?;
        let model = Model::<f64>::build(preset.model.clone())?;
        let computed = model.count_params();
        let delta = computed as i64 - preset.reference_params as i64;
        let pct = 100.0 * delta as f64 / preset.reference_params as f64;
        println!(
            "{name:<24} reference {:>8}  computed {:>8}  delta {delta:>+7} ({pct:+.2}%)",
            preset.reference_params, computed
        );
        if pct.abs() > 2.0 {
            // Outside the tolerance band: show where the scalars live.
            for (component, count) in model.params_breakdown() {
                println!("    {component:<22} {count:>8}");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_run_file(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("run.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    fn minimal_run_file(output_dir: &Path) -> String {
        format!(
            r#"
output_dir = "{}"

[model]
preset = "pattern/gcn+fog"

[train]
init_lr = 1e-3
patience = 5
max_epochs = 3

[data]
generator = "second_order"
nodes_per_graph = 16
seed = 3

[data.sizes]
n_train = 6
n_val = 2
n_test = 2
"#,
            output_dir.display()
        )
    }

    #[test]
    fn run_files_parse_and_reject_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_run_file(dir.path(), &minimal_run_file(&dir.path().join("run")));
        let file = load_run_config(&path).unwrap();
        assert!(matches!(file.model, ModelSection::Preset(ref p) if p == "pattern/gcn+fog"));
        assert!(matches!(file.data, DataSection::Generator(_)));

        for (needle, replacement) in [
            ("[train]", "[train]\nbogus = 1"),
            ("[model]", "[model]\nbogus = 1"),
            ("nodes_per_graph = 16", "nodes_per_graph = 16\nbogus = 1"),
            ("output_dir", "bogus = 1\noutput_dir"),
        ] {
            let body = minimal_run_file(&dir.path().join("run")).replace(needle, replacement);
            let path = write_run_file(dir.path(), &body);
            let err = load_run_config(&path).unwrap_err();
            assert_eq!(err.code, EXIT_VALIDATION, "{needle}: {}", err.message);
        }
    }

    #[test]
    fn inline_model_sections_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let body = minimal_run_file(&dir.path().join("run")).replace(
            "[model]\npreset = \"pattern/gcn+fog\"",
            r#"[model]
task = "node-class"
family = "gcn"
layers = 2
hidden = 8
fc1 = 8
fc2 = 8
node_input = { kind = "dense", dim = 2 }
n_outputs = 2"#,
        );
        let path = write_run_file(dir.path(), &body);
        let file = load_run_config(&path).unwrap();
        let cfg = file.model.resolve().unwrap();
        assert_eq!(cfg.hidden, 8);
        assert_eq!(cfg.layers, 2);
    }

    #[test]
    fn unknown_presets_list_the_alternatives() {
        let err = unknown_preset("pattern/nonexistent");
        assert_eq!(err.code, EXIT_VALIDATION);
        assert!(err.message.contains("pattern/gcn+fog"));
        assert!(err.message.contains("zinc/gatedgcn-e"));
    }

    #[test]
    fn preset_sections_with_extra_keys_are_rejected() {
        let v: toml::Value = toml::from_str("preset = \"pattern/fog\"\nhidden = 4\n").unwrap();
        let err = parse_model_section(&v).unwrap_err();
        assert_eq!(err.code, EXIT_VALIDATION);
        assert!(err.message.contains("no other keys"));
    }

    #[test]
    fn data_paths_and_generators_are_distinguished() {
        let v: toml::Value = toml::from_str("path = \"data/x.jsonl\"\n").unwrap();
        assert!(matches!(
            parse_data_section(&v).unwrap(),
            DataSection::Path(_)
        ));
        let v: toml::Value = toml::from_str("path = \"x\"\nseed = 1\n").unwrap();
        assert_eq!(parse_data_section(&v).unwrap_err().code, EXIT_VALIDATION);
        let v: toml::Value =
            toml::from_str("generator = \"sbm_pattern\"\np_intra = 1.5\n").unwrap();
        // Schema-valid; the probability range is generation-time validation.
        assert!(matches!(
            parse_data_section(&v).unwrap(),
            DataSection::Generator(_)
        ));
    }

    #[test]
    fn seed_lists_parse_or_complain() {
        assert_eq!(parse_seed_list("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seed_list("7").unwrap(), vec![7]);
        assert_eq!(parse_seed_list("1,x").unwrap_err().code, EXIT_VALIDATION);
    }

    #[test]
    fn cell_names_are_filesystem_friendly() {
        assert_eq!(cell_dir_name(1e-2, 1e-6), "lr1e-2_wd1e-6");
        assert_eq!(cell_dir_name(5e-4, 0.0), "lr5e-4_wd0");
    }

    #[test]
    fn error_codes_follow_the_severity_of_the_source() {
        let e: CliError = GraphError::Config {
            detail: "x".into(),
        }
        .into();
        assert_eq!(e.code, EXIT_VALIDATION);
        let e: CliError = GraphError::EmptyBatch.into();
        assert_eq!(e.code, EXIT_RUNTIME);
        let e: CliError = TrainError::Divergence { epoch: 3 }.into();
        assert_eq!(e.code, EXIT_RUNTIME);
        let e: CliError = TrainError::EmptySplit { what: "train" }.into();
        assert_eq!(e.code, EXIT_VALIDATION);
        let e: CliError = ModelError::Config { detail: "x".into() }.into();
        assert_eq!(e.code, EXIT_VALIDATION);
    }
}
