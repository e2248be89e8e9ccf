use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, mean_sd, LatencyStats, MetricsReport};
use super::split::{bootstrap_balance, split_grouped, split_random, Split};
use super::train::{train, TrainReport};
use crate::anova::{f_scores, select_top_m, FeatureSelection, DEFAULT_M};
use crate::error::{shape_err, Error, Result};
use crate::hyperalign::{self, CommonSpace, HyperalignConfig, SubjectMatrix};
use crate::linalg::Matrix;
use crate::math;
use crate::models::{build_model_a, build_model_b, predict_batch, predict_timed, Clock, ModelAConfig, ModelBConfig};
use crate::nn::{Network, Tensor};
use crate::rng::{self, SeededRng};
use crate::volume::{apply_mask, BrainMask, Label, VolumeSeries};

/// All runs of one subject, masked and stacked in run order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    /// Timepoints × kept voxels.
    pub x: Matrix,
    pub labels: Vec<Label>,
}

/// Groups series by subject (first-appearance order) and applies the brain mask.
pub fn subjects_from_series(series: &[VolumeSeries], mask: &BrainMask) -> Result<Vec<SubjectData>> {
    let mut out: Vec<(String, Vec<Matrix>, Vec<Label>)> = Vec::new();
    for s in series {
        let m = apply_mask(s, mask)?;
        match out.iter_mut().find(|(id, _, _)| *id == s.subject_id) {
            Some((_, mats, labels)) => {
                mats.push(m);
                labels.extend_from_slice(s.labels());
            }
            None => out.push((s.subject_id.clone(), vec![m], s.labels().to_vec())),
        }
    }
    out.into_iter()
        .map(|(subject_id, mats, labels)| {
            let refs: Vec<&Matrix> = mats.iter().collect();
            Ok(SubjectData { subject_id, x: Matrix::vstack(&refs)?, labels })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    Hyperalign,
    /// Ablation: selected voxels are used in each subject's native space.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineAConfig {
    /// Voxels kept by the ANOVA selection.
    pub m: usize,
    pub hyperalign: HyperalignConfig,
    pub align: AlignMode,
    pub model: ModelAConfig,
    /// Bootstrap-balance the held-out subject as well as the training subjects.
    pub balance_test: bool,
}

impl Default for PipelineAConfig {
    fn default() -> Self {
        PipelineAConfig {
            m: DEFAULT_M,
            hyperalign: HyperalignConfig::default(),
            align: AlignMode::Hyperalign,
            model: ModelAConfig::default(),
            balance_test: true,
        }
    }
}

impl PipelineAConfig {
    pub fn desk() -> Self {
        PipelineAConfig { model: ModelAConfig::desk(), ..PipelineAConfig::default() }
    }
}

/// Which subjects fed each data-dependent stage of a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub held_out: String,
    pub anova: Vec<String>,
    pub hyperalign: Vec<String>,
    pub bootstrap: Vec<String>,
    pub training: Vec<String>,
}

impl FoldTrace {
    /// True when the held-out subject reached no fitting stage.
    pub fn is_clean(&self) -> bool {
        [&self.anova, &self.hyperalign, &self.bootstrap, &self.training]
            .iter()
            .all(|ids| !ids.contains(&self.held_out))
    }
}

/// A fold's model inputs after selection, alignment and balancing.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFold {
    pub selection: FeatureSelection,
    /// Fitted common space; `None` under the identity ablation.
    pub space: Option<CommonSpace>,
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    /// Index into the subject list for every training row.
    pub train_subject: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    pub trace: FoldTrace,
}

fn codes(labels: &[Label]) -> Vec<usize> {
    labels.iter().map(|l| l.code() as usize).collect()
}

fn unique_ids(subjects: &[SubjectData], idx: impl IntoIterator<Item = usize>) -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for i in idx {
        if !v.contains(&subjects[i].subject_id) {
            v.push(subjects[i].subject_id.clone());
        }
    }
    v
}

fn check_uniform(subjects: &[SubjectData]) -> Result<()> {
    if subjects.len() < 2 {
        return Err(Error::InsufficientData("leave-one-subject-out needs at least 2 subjects".into()));
    }
    let shape = subjects[0].x.shape();
    for s in subjects {
        if s.x.shape() != shape || s.labels.len() != s.x.rows() {
            return Err(shape_err!(
                "subject {} has shape {:?}, expected {:?}; every subject needs the same runs and timepoints",
                s.subject_id,
                s.x.shape(),
                shape
            ));
        }
    }
    Ok(())
}

/// ANOVA, alignment and balancing for the fold that holds out subject `held_out`.
/// Only the training subjects' data and labels reach the fitted stages.
pub fn prepare_fold_a(
    subjects: &[SubjectData],
    held_out: usize,
    cfg: &PipelineAConfig,
    rng: &mut SeededRng,
) -> Result<PreparedFold> {
    check_uniform(subjects)?;
    if held_out >= subjects.len() {
        return Err(Error::Config(format!("fold {held_out} out of range for {} subjects", subjects.len())));
    }
    let train_ids: Vec<usize> = (0..subjects.len()).filter(|&j| j != held_out).collect();

    let stacked: Vec<&Matrix> = train_ids.iter().map(|&j| &subjects[j].x).collect();
    let labels: Vec<usize> = train_ids.iter().flat_map(|&j| codes(&subjects[j].labels)).collect();
    let f = f_scores(&Matrix::vstack(&stacked)?, &labels)?;
    let selection = select_top_m(&f, cfg.m)?;

    let selected = |j: usize| -> Result<SubjectMatrix> {
        SubjectMatrix::new(subjects[j].subject_id.clone(), &subjects[j].x.select_columns(&selection.indices)?)
    };
    let train_mats: Vec<SubjectMatrix> = train_ids.iter().map(|&j| selected(j)).collect::<Result<_>>()?;
    let test_mat = selected(held_out)?;
    let (rows, m) = test_mat.shape();
    // normalised matrices have entries of order 1/√(rows·m); bring them back to order 1
    let scale = math::sqrt((rows * m) as f64);

    let (aligned, test_aligned, space) = match cfg.align {
        AlignMode::Hyperalign => {
            let space = hyperalign::fit(&train_mats, selection.clone(), cfg.hyperalign)?;
            let aligned = train_mats
                .iter()
                .zip(&space.rotations)
                .map(|(s, r)| s.data().matmul(r))
                .collect::<Result<Vec<_>>>()?;
            let test = hyperalign::transform(&space, &test_mat)?;
            (aligned, test, Some(space))
        }
        AlignMode::Identity => (train_mats.iter().map(|s| s.data().clone()).collect(), test_mat.data().clone(), None),
    };

    let mut train_rows: Vec<&[f64]> = Vec::new();
    let mut train_y = Vec::new();
    let mut train_subject = Vec::new();
    for (k, &j) in train_ids.iter().enumerate() {
        let y = codes(&subjects[j].labels);
        for i in bootstrap_balance(&y, Label::ALL.len(), rng)? {
            train_rows.push(aligned[k].row(i));
            train_y.push(y[i]);
            train_subject.push(j);
        }
    }
    let train_x = Matrix::from_rows(&train_rows)?.scale(scale);

    let y = codes(&subjects[held_out].labels);
    let test_idx: Vec<usize> =
        if cfg.balance_test { bootstrap_balance(&y, Label::ALL.len(), rng)? } else { (0..y.len()).collect() };
    let test_rows: Vec<&[f64]> = test_idx.iter().map(|&i| test_aligned.row(i)).collect();
    let test_x = Matrix::from_rows(&test_rows)?.scale(scale);
    let test_y = test_idx.iter().map(|&i| y[i]).collect();

    let fitted = unique_ids(subjects, train_ids.iter().copied());
    let trace = FoldTrace {
        held_out: subjects[held_out].subject_id.clone(),
        anova: fitted.clone(),
        hyperalign: if cfg.align == AlignMode::Hyperalign { fitted } else { Vec::new() },
        bootstrap: unique_ids(subjects, train_subject.iter().copied()),
        training: unique_ids(subjects, train_subject.iter().copied()),
    };
    Ok(PreparedFold { selection, space, train_x, train_y, train_subject, test_x, test_y, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub held_out_subject: String,
    pub metrics: MetricsReport,
    pub train: TrainReport,
    pub trace: FoldTrace,
}

/// Mean and standard deviation of accuracy over folds or repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport<R> {
    pub runs: Vec<R>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
}

pub fn summarize<R>(runs: Vec<R>, accuracy: impl Fn(&R) -> f64) -> PipelineReport<R> {
    let acc: Vec<f64> = runs.iter().map(accuracy).collect();
    let (mean_accuracy, sd_accuracy) = mean_sd(&acc);
    PipelineReport { runs, mean_accuracy, sd_accuracy }
}

/// Hard predictions and class probabilities for an evaluated set, in row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

impl Predictions {
    /// Recomputes the metric report (without latency).
    pub fn metrics(&self, n_classes: usize) -> Result<MetricsReport> {
        compute_metrics(&self.truth, &self.predicted, Some(&self.probabilities), n_classes)
    }
}

/// Classifies every row of `x`, optionally timing each sample on its own.
fn evaluate(
    net: &Network,
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    clock: Option<&dyn Clock>,
) -> Result<(MetricsReport, Predictions)> {
    let mut pred = Vec::with_capacity(x.rows());
    let mut probs = Vec::with_capacity(x.rows());
    let mut times = Vec::new();
    match clock {
        Some(c) => {
            for i in 0..x.rows() {
                let (p, dt) = predict_timed(net, x.row(i), c)?;
                pred.push(p.class);
                probs.push(p.probabilities);
                times.push(dt);
            }
        }
        None => {
            let shape = net.input_shape().to_vec();
            let all: Vec<usize> = (0..x.rows()).collect();
            for chunk in all.chunks(64) {
                let rows: Vec<&[f64]> = chunk.iter().map(|&i| x.row(i)).collect();
                for p in predict_batch(net, &Tensor::stack(&rows, &shape)?)? {
                    pred.push(p.class);
                    probs.push(p.probabilities);
                }
            }
        }
    }
    let predictions = Predictions { truth: y.to_vec(), predicted: pred, probabilities: probs };
    let mut report = predictions.metrics(n_classes)?;
    if clock.is_some() {
        report.latency = Some(LatencyStats::from_samples(&times));
    }
    Ok((report, predictions))
}

/// A fold's report together with what it fitted.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub network: Network,
    pub space: Option<CommonSpace>,
    pub selection: FeatureSelection,
    pub predictions: Predictions,
}

/// One leave-one-subject-out fold. The fold's randomness comes from its own stream of
/// `seed`, so folds can run in any order or concurrently.
pub fn run_fold_a(
    subjects: &[SubjectData],
    fold: usize,
    cfg: &PipelineAConfig,
    seed: u64,
    clock: Option<&dyn Clock>,
) -> Result<FoldOutcome> {
    let mut r = rng::substream(seed, fold as u64 + 1);
    let prep = prepare_fold_a(subjects, fold, cfg, &mut r)?;
    if prep.train_x.cols() != cfg.model.input_len {
        return Err(Error::Config(format!(
            "model input length {} but {} voxels were selected",
            cfg.model.input_len,
            prep.train_x.cols()
        )));
    }
    let mut net = build_model_a(&cfg.model, r.next_u64())?;
    let report = train(&mut net, &prep.train_x, &prep.train_y, &cfg.model.train, &mut r)?;
    let (metrics, predictions) = evaluate(&net, &prep.test_x, &prep.test_y, cfg.model.n_classes, clock)?;
    Ok(FoldOutcome {
        report: FoldReport { held_out_subject: prep.trace.held_out.clone(), metrics, train: report, trace: prep.trace },
        network: net,
        space: prep.space,
        selection: prep.selection,
        predictions,
    })
}

/// All folds in order.
pub fn run_pipeline_a(
    subjects: &[SubjectData],
    cfg: &PipelineAConfig,
    seed: u64,
    clock: Option<&dyn Clock>,
) -> Result<PipelineReport<FoldReport>> {
    check_uniform(subjects)?;
    let folds = (0..subjects.len())
        .map(|k| run_fold_a(subjects, k, cfg, seed, clock).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(folds, |f| f.metrics.accuracy))
}

/// Whole volumes of the two emotional conditions, flattened in `(z, y, x)` order with
/// voxels outside the brain mask zeroed. Class 0 is neutral, class 1 negative.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSet {
    pub dims: [usize; 3],
    pub x: Matrix,
    pub labels: Vec<usize>,
    /// Source run (series index) of every volume.
    pub groups: Vec<usize>,
}

pub fn volume_set_from_series(series: &[VolumeSeries], mask: &BrainMask) -> Result<VolumeSet> {
    let dims = mask.dims();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (g, s) in series.iter().enumerate() {
        if s.dims() != dims {
            return Err(shape_err!("series {} has dims {:?}, mask {:?}", s.run_id, s.dims(), dims));
        }
        for (v, &l) in s.volumes().iter().zip(s.labels()) {
            let class = match l {
                Label::Neutral => 0,
                Label::Negative => 1,
                Label::Rest => continue,
            };
            data.extend(v.voxels().iter().zip(mask.keep()).map(|(&x, &k)| if k { x as f64 } else { 0.0 }));
            labels.push(class);
            groups.push(g);
        }
    }
    let n = labels.len();
    let set = VolumeSet { dims: [dims.nx, dims.ny, dims.nz], x: Matrix::from_vec(n, dims.voxel_count(), data)?, labels, groups };
    if !(set.labels.contains(&0) && set.labels.contains(&1)) {
        return Err(Error::InsufficientData("both neutral and negative volumes are needed".into()));
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineBConfig {
    pub model: ModelBConfig,
    pub repeats: usize,
    /// Keep whole runs on one side of the split.
    pub grouped_split: bool,
    pub balance_train: bool,
}

impl Default for PipelineBConfig {
    fn default() -> Self {
        PipelineBConfig { model: ModelBConfig::default(), repeats: 10, grouped_split: false, balance_train: true }
    }
}

impl PipelineBConfig {
    pub fn desk() -> Self {
        PipelineBConfig { model: ModelBConfig::tiny(), ..PipelineBConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub metrics: MetricsReport,
    pub val_accuracy: f64,
    pub train: TrainReport,
}

/// A repeat's report together with its trained network.
#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub report: RepeatReport,
    pub network: Network,
    pub predictions: Predictions,
}

fn rows_of(x: &Matrix, idx: &[usize]) -> Result<Matrix> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| x.row(i)).collect();
    Matrix::from_rows(&rows)
}

/// The shared split used by every repeat.
pub fn split_b(set: &VolumeSet, cfg: &PipelineBConfig, seed: u64) -> Result<Split> {
    let mut r = rng::substream(seed, 0);
    if cfg.grouped_split {
        split_grouped(&set.groups, &mut r)
    } else {
        split_random(set.labels.len(), &mut r)
    }
}

/// One reseeded training of the volume model on a fixed split.
pub fn run_repeat_b(
    set: &VolumeSet,
    split: &Split,
    cfg: &PipelineBConfig,
    seed: u64,
    repeat: usize,
    clock: Option<&dyn Clock>,
) -> Result<RepeatOutcome> {
    if cfg.model.input_dims != set.dims {
        return Err(Error::Config(format!(
            "model expects volumes {:?}, data has {:?}",
            cfg.model.input_dims, set.dims
        )));
    }
    let mut r = rng::substream(seed, repeat as u64 + 1);
    let train_labels: Vec<usize> = split.train.iter().map(|&i| set.labels[i]).collect();
    let order: Vec<usize> = if cfg.balance_train {
        bootstrap_balance(&train_labels, cfg.model.n_classes, &mut r)?
    } else {
        (0..train_labels.len()).collect()
    };
    let train_idx: Vec<usize> = order.iter().map(|&k| split.train[k]).collect();
    let train_x = rows_of(&set.x, &train_idx)?;
    let train_y: Vec<usize> = train_idx.iter().map(|&i| set.labels[i]).collect();
    let mut net = build_model_b(&cfg.model, r.next_u64())?;
    let report = train(&mut net, &train_x, &train_y, &cfg.model.train, &mut r)?;
    let val_y: Vec<usize> = split.val.iter().map(|&i| set.labels[i]).collect();
    let (val, _) = evaluate(&net, &rows_of(&set.x, &split.val)?, &val_y, cfg.model.n_classes, None)?;
    let test_y: Vec<usize> = split.test.iter().map(|&i| set.labels[i]).collect();
    let (metrics, predictions) = evaluate(&net, &rows_of(&set.x, &split.test)?, &test_y, cfg.model.n_classes, clock)?;
    Ok(RepeatOutcome {
        report: RepeatReport { repeat, metrics, val_accuracy: val.accuracy, train: report },
        network: net,
        predictions,
    })
}

/// One split, then `cfg.repeats` independently seeded trainings evaluated on its test part.
pub fn run_pipeline_b(
    set: &VolumeSet,
    cfg: &PipelineBConfig,
    seed: u64,
    clock: Option<&dyn Clock>,
) -> Result<PipelineReport<RepeatReport>> {
    let split = split_b(set, cfg, seed)?;
    let runs = (0..cfg.repeats)
        .map(|k| run_repeat_b(set, &split, cfg, seed, k, clock).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(runs, |r| r.metrics.accuracy))
}
