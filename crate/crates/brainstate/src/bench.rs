//! Inference latency of a trained network, one sample at a time and in batches.

use brainstate_core::eval::LatencyStats;
use brainstate_core::models::{predict_batch, predict_timed, Clock};
use brainstate_core::nn::{Network, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: usize,
    pub repeats: usize,
    /// Seconds per single-sample call, over every sample of every repeat.
    pub single: LatencyStats,
    /// Seconds to classify all samples one by one, per repeat.
    pub single_total: LatencyStats,
    pub batch_size: usize,
    /// Seconds to classify all samples in batches, per repeat.
    pub batch_total: LatencyStats,
    /// Mean batched time divided by the sample count; 0 for no samples.
    pub batch_per_sample: f64,
}

pub fn bench_network(
    net: &Network,
    samples: &[&[f64]],
    batch_size: usize,
    repeats: usize,
    clock: &dyn Clock,
) -> Result<BenchReport> {
    if batch_size == 0 || repeats == 0 {
        return Err(Error::Input("batch size and repeats must be positive".into()));
    }
    let want: usize = net.input_shape().iter().product();
    if let Some(s) = samples.iter().find(|s| s.len() != want) {
        return Err(Error::Input(format!("sample has {} values, checkpoint expects {want}", s.len())));
    }
    let mut single = Vec::with_capacity(samples.len() * repeats);
    let mut single_total = Vec::with_capacity(repeats);
    let mut batch_total = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = clock.now();
        for s in samples {
            let (_, dt) = predict_timed(net, s, clock)?;
            single.push(dt);
        }
        single_total.push(clock.now() - t0);

        let t0 = clock.now();
        for chunk in samples.chunks(batch_size) {
            predict_batch(net, &Tensor::stack(chunk, net.input_shape())?)?;
        }
        batch_total.push(clock.now() - t0);
    }
    let batch_total = LatencyStats::from_samples(&batch_total);
    let batch_per_sample = if samples.is_empty() { 0.0 } else { batch_total.mean / samples.len() as f64 };
    Ok(BenchReport {
        samples: samples.len(),
        repeats,
        single: LatencyStats::from_samples(&single),
        single_total: LatencyStats::from_samples(&single_total),
        batch_size,
        batch_total,
        batch_per_sample,
    })
}
