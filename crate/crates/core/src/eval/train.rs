use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::models::TrainConfig;
use crate::nn::{softmax_xent, Adam, AdamHyper, LrSchedule, Network, Tensor};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean data loss of each epoch (without the weight penalty).
    pub epoch_losses: Vec<f64>,
    pub final_lr: f64,
    pub lr_decays: usize,
}

/// Mini-batch Adam training on the rows of `x`.
///
/// Rows are reshuffled every epoch. A trailing batch of one sample is skipped because
/// batch statistics need two. The learning-rate schedule is stepped on the epoch loss.
pub fn train(net: &mut Network, x: &Matrix, labels: &[usize], cfg: &TrainConfig, rng: &mut SeededRng) -> Result<TrainReport> {
    let sample_len: usize = net.input_shape().iter().product();
    if x.cols() != sample_len {
        return Err(shape_err!("samples have {} values, network expects {sample_len}", x.cols()));
    }
    if labels.len() != x.rows() {
        return Err(shape_err!("{} labels for {} samples", labels.len(), x.rows()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    if x.rows() < 2 {
        return Err(Error::InsufficientData("training needs at least 2 samples".into()));
    }
    let mut schedule = LrSchedule::new(cfg.lr0, cfg.decay, cfg.patience)?;
    let mut adam = Adam::new(AdamHyper::default(), cfg.l2);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut report = TrainReport { epoch_losses: Vec::with_capacity(cfg.epochs), final_lr: cfg.lr0, lr_decays: 0 };
    let shape = net.input_shape().to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let rows: Vec<&[f64]> = batch.iter().map(|&i| x.row(i)).collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let input = Tensor::stack(&rows, &shape)?;
            net.zero_grads();
            let logits = net.forward_train(&input, rng)?;
            let (loss, grad) = softmax_xent(&logits, &y)?;
            if !loss.is_finite() {
                net.clear_caches();
                return Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")));
            }
            net.backward(&grad)?;
            adam.step(&mut net.params_mut(), schedule.lr)?;
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        let epoch_loss = total / seen.max(1) as f64;
        report.epoch_losses.push(epoch_loss);
        if schedule.step(epoch_loss) {
            report.lr_decays += 1;
        }
    }
    report.final_lr = schedule.lr;
    Ok(report)
}
