//! `brainstate` subcommands.
//!
//! Every command resolves its configuration in three layers: built-in defaults, then an
//! optional `--config` JSON file, then command-line flags. The resolved configuration is
//! written to `config.json` in the output directory before any work starts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brainstate_core::eval::{
    metrics_from_confusion, run_fold_a, run_repeat_b, split_b, subjects_from_series, volume_set_from_series, AlignMode,
    MetricsReport, PipelineAConfig, PipelineBConfig, Predictions,
};
use brainstate_core::hyperalign::{transform, SubjectMatrix};
use brainstate_core::linalg::Matrix;
use brainstate_core::models::{ModelAConfig, ModelBConfig};
use brainstate_core::synth::{synth_generate, SynthSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::bench_network;
use crate::dataset::{load_dataset, write_synth_dataset};
use crate::error::{Error, Result};
use crate::formats::{
    read_common_space, read_json, read_network, read_predictions, write_common_space, write_json, write_network,
    write_predictions, write_roc_csv, write_selection, Architecture,
};
use crate::StdClock;

#[derive(Debug, Parser)]
#[command(name = "brainstate", version, about = "Brain-state decoding experiments on volumetric data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Gen(GenArgs),
    /// Voxel selection, hyperalignment and the 1D network, leave-one-subject-out.
    RunA(RunAArgs),
    /// The 3D residual network on whole volumes, repeated over one random split.
    RunB(RunBArgs),
    /// Time single-sample and batched inference of a saved network.
    Bench(BenchArgs),
    /// Recompute a metrics report from stored predictions.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with configuration values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataPreset {
    PaperA,
    PaperB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelPreset {
    /// Narrow layers and a short schedule; minutes on one core.
    Desk,
    /// Full-size layers and schedule.
    Paper,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub preset: Option<DataPreset>,
    /// Noise standard deviation (0 gives a noiseless oracle set).
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunAArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory holding `manifest.jsonl`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelPreset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Skip alignment and use the selected voxels in each subject's own space.
    #[arg(long)]
    pub no_align: bool,
}

#[derive(Debug, Args)]
pub struct RunBArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelPreset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Keep whole runs on one side of the split.
    #[arg(long)]
    pub grouped: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Parameter file written by run-a or run-b (`model.nnet`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of samples to classify.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV with columns truth,predicted,p0,...
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub preset: DataPreset,
    pub seed: u64,
    pub noise_sigma: Option<f64>,
    /// Full generator settings; replaces the preset when given.
    pub spec: Option<SynthSpec>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { preset: DataPreset::PaperA, seed: 1, noise_sigma: None, spec: None }
    }
}

impl GenConfig {
    pub fn spec(&self) -> SynthSpec {
        let mut spec = match (&self.spec, self.preset) {
            (Some(s), _) => SynthSpec { seed: self.seed, ..s.clone() },
            (None, DataPreset::PaperA) => SynthSpec::paper_a(self.seed),
            (None, DataPreset::PaperB) => SynthSpec::paper_b(self.seed),
        };
        if let Some(s) = self.noise_sigma {
            spec.noise_sigma = s;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunAConfig {
    pub data: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub pipeline: PipelineAConfig,
}

impl Default for RunAConfig {
    fn default() -> Self {
        RunAConfig { data: PathBuf::from("data"), seed: 0, threads: 0, pipeline: PipelineAConfig::desk() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBConfig {
    pub data: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub pipeline: PipelineBConfig,
}

impl Default for RunBConfig {
    fn default() -> Self {
        RunBConfig { data: PathBuf::from("data"), seed: 0, threads: 0, pipeline: PipelineBConfig::desk() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub samples: usize,
    pub batch: usize,
    pub repeats: usize,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            checkpoint: PathBuf::from("model.nnet"),
            data: PathBuf::from("data"),
            samples: 600,
            batch: 600,
            repeats: 5,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub predictions: PathBuf,
    /// Inferred from the probability columns when absent.
    pub classes: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { predictions: PathBuf::from("predictions.csv"), classes: None }
    }
}

/// Accuracy of one fold or repeat, for the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAccuracy {
    pub name: String,
    pub accuracy: f64,
}

/// Aggregate over folds or repeats. Contains no timing, so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<RunAccuracy>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    /// Metrics of the confusion matrix averaged over runs.
    pub averaged: MetricsReport,
}

pub fn summarize_runs(names: Vec<String>, reports: &[MetricsReport]) -> Result<Summary> {
    let runs: Vec<RunAccuracy> =
        names.into_iter().zip(reports).map(|(name, m)| RunAccuracy { name, accuracy: m.accuracy }).collect();
    let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let (mean_accuracy, sd_accuracy) = brainstate_core::eval::mean_sd(&acc);
    let c = reports.first().map_or(0, |m| m.n_classes);
    let mut mean = vec![vec![0.0; c]; c];
    for m in reports {
        for (row, src) in mean.iter_mut().zip(&m.confusion) {
            for (a, b) in row.iter_mut().zip(src) {
                *a += b / reports.len() as f64;
            }
        }
    }
    Ok(Summary { runs, mean_accuracy, sd_accuracy, averaged: metrics_from_confusion(mean)? })
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Input(format!("thread pool: {e}")))
}

fn echo<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    write_json(&out.join("config.json"), cfg)
}

pub fn resolve_gen(a: &GenArgs) -> Result<GenConfig> {
    let mut cfg: GenConfig = load_config(a.common.config.as_deref())?;
    if let Some(p) = a.preset {
        cfg.preset = p;
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.noise {
        cfg.noise_sigma = Some(n);
    }
    Ok(cfg)
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let cfg = resolve_gen(a)?;
    let spec = cfg.spec();
    echo(&a.common.out, &cfg)?;
    let ds = synth_generate(&spec)?;
    write_synth_dataset(&a.common.out, &spec, &ds)?;
    eprintln!("wrote {} runs of {} subjects to {}", ds.series.len(), spec.n_subjects, a.common.out.display());
    Ok(())
}

fn model_a(p: ModelPreset) -> ModelAConfig {
    match p {
        ModelPreset::Desk => ModelAConfig::desk(),
        ModelPreset::Paper => ModelAConfig::default(),
    }
}

fn model_b(p: ModelPreset) -> ModelBConfig {
    match p {
        ModelPreset::Desk => ModelBConfig::tiny(),
        ModelPreset::Paper => ModelBConfig::default(),
    }
}

pub fn resolve_run_a(a: &RunAArgs) -> Result<RunAConfig> {
    let mut cfg: RunAConfig = load_config(a.common.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.data = d.clone();
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.common.threads {
        cfg.threads = t;
    }
    if let Some(p) = a.model {
        cfg.pipeline.model = model_a(p);
    }
    if let Some(e) = a.epochs {
        cfg.pipeline.model.train.epochs = e;
    }
    if a.no_align {
        cfg.pipeline.align = AlignMode::Identity;
    }
    Ok(cfg)
}

fn write_outcome(dir: &Path, metrics: &MetricsReport, predictions: &Predictions) -> Result<()> {
    write_json(&dir.join("metrics.json"), metrics)?;
    write_roc_csv(&dir.join("roc.csv"), metrics)?;
    write_predictions(&dir.join("predictions.csv"), predictions)
}

pub fn cmd_run_a(a: &RunAArgs) -> Result<Summary> {
    let cfg = resolve_run_a(a)?;
    let out = &a.common.out;
    echo(out, &cfg)?;
    let ds = load_dataset(&cfg.data)?;
    let subjects = subjects_from_series(&ds.series, &ds.mask)?;
    let folds = pool(cfg.threads)?.install(|| {
        (0..subjects.len())
            .into_par_iter()
            .map(|k| {
                let clock = StdClock::new();
                let mut o = run_fold_a(&subjects, k, &cfg.pipeline, cfg.seed, Some(&clock))?;
                let dir = out.join(format!("fold-{k:02}"));
                write_outcome(&dir, &o.report.metrics, &o.predictions)?;
                write_json(&dir.join("fold.json"), &o.report)?;
                write_selection(&dir.join("selection.json"), &o.selection)?;
                if let Some(space) = &o.space {
                    write_common_space(&dir.join("space.haln"), space)?;
                }
                write_network(&dir.join("model.nnet"), &Architecture::ModelA(cfg.pipeline.model.clone()), &mut o.network)?;
                eprintln!("fold {k} (held out {}): accuracy {:.4}", o.report.held_out_subject, o.report.metrics.accuracy);
                Ok(o.report)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let names = folds.iter().map(|f| f.held_out_subject.clone()).collect();
    let metrics: Vec<MetricsReport> = folds.into_iter().map(|f| f.metrics).collect();
    let summary = summarize_runs(names, &metrics)?;
    write_json(&out.join("summary.json"), &summary)?;
    eprintln!("mean accuracy {:.4} ± {:.4} over {} folds", summary.mean_accuracy, summary.sd_accuracy, metrics.len());
    Ok(summary)
}

pub fn resolve_run_b(a: &RunBArgs) -> Result<RunBConfig> {
    let mut cfg: RunBConfig = load_config(a.common.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.data = d.clone();
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.common.threads {
        cfg.threads = t;
    }
    if let Some(p) = a.model {
        cfg.pipeline.model = model_b(p);
    }
    if let Some(e) = a.epochs {
        cfg.pipeline.model.train.epochs = e;
    }
    if let Some(r) = a.repeats {
        cfg.pipeline.repeats = r;
    }
    if a.grouped {
        cfg.pipeline.grouped_split = true;
    }
    Ok(cfg)
}

pub fn cmd_run_b(a: &RunBArgs) -> Result<Summary> {
    let cfg = resolve_run_b(a)?;
    let out = &a.common.out;
    echo(out, &cfg)?;
    let ds = load_dataset(&cfg.data)?;
    let set = volume_set_from_series(&ds.series, &ds.mask)?;
    let split = split_b(&set, &cfg.pipeline, cfg.seed)?;
    write_json(&out.join("split.json"), &split)?;
    let repeats = pool(cfg.threads)?.install(|| {
        (0..cfg.pipeline.repeats)
            .into_par_iter()
            .map(|k| {
                let clock = StdClock::new();
                let mut o = run_repeat_b(&set, &split, &cfg.pipeline, cfg.seed, k, Some(&clock))?;
                let dir = out.join(format!("repeat-{k:02}"));
                write_outcome(&dir, &o.report.metrics, &o.predictions)?;
                write_json(&dir.join("repeat.json"), &o.report)?;
                write_network(&dir.join("model.nnet"), &Architecture::ModelB(cfg.pipeline.model.clone()), &mut o.network)?;
                eprintln!("repeat {k}: test accuracy {:.4}, validation {:.4}", o.report.metrics.accuracy, o.report.val_accuracy);
                Ok(o.report)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let names = repeats.iter().map(|r| format!("repeat-{:02}", r.repeat)).collect();
    let metrics: Vec<MetricsReport> = repeats.into_iter().map(|r| r.metrics).collect();
    let summary = summarize_runs(names, &metrics)?;
    write_json(&out.join("summary.json"), &summary)?;
    eprintln!("mean test accuracy {:.4} ± {:.4} over {} repeats", summary.mean_accuracy, summary.sd_accuracy, metrics.len());
    Ok(summary)
}

pub fn resolve_bench(a: &BenchArgs) -> Result<BenchConfig> {
    let mut cfg: BenchConfig = load_config(a.common.config.as_deref())?;
    if let Some(c) = &a.checkpoint {
        cfg.checkpoint = c.clone();
    }
    if let Some(d) = &a.data {
        cfg.data = d.clone();
    }
    if let Some(n) = a.samples {
        cfg.samples = n;
    }
    if let Some(b) = a.batch {
        cfg.batch = b;
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    if let Some(t) = a.common.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

/// Inputs for the checkpoint's architecture. The 1D model needs the fold's common space
/// (`space.haln` next to the checkpoint); the first subject's volumes are projected into it.
fn bench_inputs(cfg: &BenchConfig, arch: &Architecture) -> Result<Matrix> {
    let ds = load_dataset(&cfg.data)?;
    let x = match arch {
        Architecture::ModelA(_) => {
            let space_path = cfg.checkpoint.with_file_name("space.haln");
            let space = read_common_space(&space_path)?;
            let subjects = subjects_from_series(&ds.series, &ds.mask)?;
            let s = &subjects[0];
            let raw = s.x.select_columns(&space.selection.indices)?;
            let aligned = transform(&space, &SubjectMatrix::new(s.subject_id.clone(), &raw)?)?;
            let (rows, m) = aligned.shape();
            aligned.scale(((rows * m) as f64).sqrt())
        }
        Architecture::ModelB(_) => volume_set_from_series(&ds.series, &ds.mask)?.x,
    };
    let n = cfg.samples.min(x.rows());
    let rows: Vec<&[f64]> = (0..n).map(|i| x.row(i)).collect();
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, x.cols()));
    }
    Ok(Matrix::from_rows(&rows)?)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<crate::bench::BenchReport> {
    let cfg = resolve_bench(a)?;
    let out = &a.common.out;
    echo(out, &cfg)?;
    let (arch, net) = read_network(&cfg.checkpoint)?;
    let x = bench_inputs(&cfg, &arch)?;
    let rows: Vec<&[f64]> = (0..x.rows()).map(|i| x.row(i)).collect();
    let report = pool(cfg.threads)?.install(|| bench_network(&net, &rows, cfg.batch, cfg.repeats, &StdClock::new()))?;
    write_json(&out.join("bench.json"), &report)?;
    eprintln!(
        "{} samples: single {:.3} ± {:.3} ms/sample; batch of {} {:.3} ms/sample ({:.3} ± {:.3} s total)",
        report.samples,
        report.single.mean * 1e3,
        report.single.sd * 1e3,
        report.batch_size,
        report.batch_per_sample * 1e3,
        report.batch_total.mean,
        report.batch_total.sd
    );
    Ok(report)
}

pub fn resolve_metrics(a: &MetricsArgs) -> Result<MetricsConfig> {
    let mut cfg: MetricsConfig = load_config(a.common.config.as_deref())?;
    if let Some(p) = &a.predictions {
        cfg.predictions = p.clone();
    }
    if a.classes.is_some() {
        cfg.classes = a.classes;
    }
    Ok(cfg)
}

pub fn cmd_metrics(a: &MetricsArgs) -> Result<MetricsReport> {
    let cfg = resolve_metrics(a)?;
    let out = &a.common.out;
    echo(out, &cfg)?;
    let p = read_predictions(&cfg.predictions)?;
    let classes = match cfg.classes {
        Some(c) => c,
        None => p.probabilities.first().map(Vec::len).filter(|&c| c > 0).ok_or_else(|| {
            Error::Input(format!("{}: no probability columns; pass --classes", cfg.predictions.display()))
        })?,
    };
    let report = p.metrics(classes)?;
    write_json(&out.join("metrics.json"), &report)?;
    write_roc_csv(&out.join("roc.csv"), &report)?;
    eprintln!("accuracy {:.4} over {} samples", report.accuracy, p.truth.len());
    Ok(report)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::RunA(a) => cmd_run_a(a).map(drop),
        Command::RunB(a) => cmd_run_b(a).map(drop),
        Command::Bench(a) => cmd_bench(a).map(drop),
        Command::Metrics(a) => cmd_metrics(a).map(drop),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
