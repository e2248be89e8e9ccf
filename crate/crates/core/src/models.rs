//! The two concrete classifiers and single-sample prediction.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{argmax, softmax, BatchNorm, Bottleneck, Conv, Dense, Dropout, Layer, Network, Tensor};
use crate::rng;

/// Training knobs shared by both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    pub lr0: f64,
    pub decay: f64,
    pub patience: u32,
    pub epochs: usize,
    pub batch_size: usize,
}

/// 1D CNN over a hyperaligned voxel vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAConfig {
    pub input_len: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    /// Dropout after each convolution block.
    pub conv_dropout: Vec<f64>,
    /// Hidden dense widths followed by the class count.
    pub fc_widths: Vec<usize>,
    /// Dropout after each hidden dense layer (one entry per hidden layer).
    pub fc_dropout: Vec<f64>,
    pub n_classes: usize,
    /// Width the conv stack must flatten to; construction fails otherwise.
    pub flatten_width: usize,
    pub train: TrainConfig,
}

impl Default for ModelAConfig {
    fn default() -> Self {
        ModelAConfig {
            input_len: 300,
            conv_filters: vec![64; 6],
            kernel: 10,
            conv_dropout: vec![0.25; 6],
            fc_widths: vec![32, 32, 32, 16, 16, 16, 3],
            fc_dropout: vec![0.5, 0.5, 0.25, 0.25, 0.0, 0.0],
            n_classes: 3,
            flatten_width: 15744,
            train: TrainConfig { l2: 5e-2, lr0: 4.5e-3, decay: 0.2, patience: 50, epochs: 500, batch_size: 32 },
        }
    }
}

impl ModelAConfig {
    /// Same topology with narrow layers and a short budget, sized for a single laptop core.
    pub fn desk() -> Self {
        ModelAConfig {
            conv_filters: vec![4; 6],
            conv_dropout: vec![0.0; 6],
            fc_widths: vec![32, 32, 16, 16, 16, 16, 3],
            fc_dropout: vec![0.25, 0.0, 0.0, 0.0, 0.0, 0.0],
            flatten_width: 246 * 4,
            train: TrainConfig { l2: 1e-4, lr0: 2e-3, decay: 0.2, patience: 50, epochs: 3, batch_size: 32 },
            ..ModelAConfig::default()
        }
    }

    pub fn conv_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.input_len;
        let mut out = Vec::with_capacity(self.conv_filters.len());
        for i in 0..self.conv_filters.len() {
            if len < self.kernel {
                return Err(shape_err!("conv layer {i} gets length {len}, shorter than kernel {}", self.kernel));
            }
            len = len - self.kernel + 1;
            out.push(len);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.len() != 6 || self.conv_dropout.len() != 6 {
            return Err(Error::Config("model A has exactly 6 convolution blocks".into()));
        }
        if self.fc_widths.len() != 7 || self.fc_dropout.len() != 6 {
            return Err(Error::Config("model A has exactly 7 dense layers (6 hidden + output)".into()));
        }
        if self.fc_widths.last() != Some(&self.n_classes) {
            return Err(Error::Config(format!("last dense width must be {} classes", self.n_classes)));
        }
        let len = *self.conv_lengths()?.last().expect("six lengths");
        let flat = len * self.conv_filters[5];
        if flat != self.flatten_width {
            return Err(shape_err!("conv stack flattens to {len}×{} = {flat}, expected {}", self.conv_filters[5], self.flatten_width));
        }
        Ok(())
    }
}

/// 6 × [conv1d → BN → ReLU → dropout] → flatten → 6 × [dense → ReLU → dropout] → dense.
pub fn build_model_a(cfg: &ModelAConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut r = rng::seeded(seed);
    let mut layers = Vec::new();
    let mut ch = 1;
    for (&f, &p) in cfg.conv_filters.iter().zip(&cfg.conv_dropout) {
        layers.push(Layer::Conv(Conv::new(1, ch, f, cfg.kernel, 1, 0, &mut r)?));
        layers.push(Layer::BatchNorm(BatchNorm::new(f)));
        layers.push(Layer::relu());
        layers.push(Layer::Dropout(Dropout::new(p)?));
        ch = f;
    }
    layers.push(Layer::flatten());
    let mut width = cfg.flatten_width;
    for (i, &w) in cfg.fc_widths.iter().enumerate() {
        layers.push(Layer::Dense(Dense::new(width, w, &mut r)?));
        if i + 1 < cfg.fc_widths.len() {
            layers.push(Layer::relu());
            if cfg.fc_dropout[i] > 0.0 {
                layers.push(Layer::Dropout(Dropout::new(cfg.fc_dropout[i])?));
            }
        }
        width = w;
    }
    Network::new(vec![1, cfg.input_len], layers)
}

/// 3D bottleneck residual network over whole volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBConfig {
    pub in_channels: usize,
    /// Volume extent `(nx, ny, nz)`; tensors store it as `(nz, ny, nx)`.
    pub input_dims: [usize; 3],
    pub stem_width: usize,
    pub stage_blocks: Vec<usize>,
    /// Bottleneck (reduced) width of each stage; block outputs are `expansion` times wider.
    pub stage_widths: Vec<usize>,
    pub expansion: usize,
    pub head_width: usize,
    pub n_classes: usize,
    /// Start every residual branch silent (last batch-norm scale 0).
    pub zero_init_residual: bool,
    pub train: TrainConfig,
}

impl Default for ModelBConfig {
    fn default() -> Self {
        ModelBConfig {
            in_channels: 1,
            input_dims: [64, 64, 44],
            stem_width: 64,
            stage_blocks: vec![3, 4, 6, 3],
            stage_widths: vec![64, 128, 256, 512],
            expansion: 4,
            head_width: 1000,
            n_classes: 2,
            zero_init_residual: false,
            train: TrainConfig { l2: 2e-4, lr0: 5e-4, decay: 0.3, patience: 30, epochs: 100, batch_size: 32 },
        }
    }
}

impl ModelBConfig {
    /// One block per stage and narrow widths.
    pub fn tiny() -> Self {
        ModelBConfig {
            input_dims: [16, 16, 11],
            stem_width: 8,
            stage_blocks: vec![1, 1, 1, 1],
            stage_widths: vec![4, 8, 8, 16],
            expansion: 2,
            head_width: 32,
            train: TrainConfig { l2: 2e-4, lr0: 2e-3, decay: 0.3, patience: 30, epochs: 5, batch_size: 16 },
            ..ModelBConfig::default()
        }
    }

    /// Per-sample tensor shape `(channels, nz, ny, nx)`.
    pub fn input_shape(&self) -> Vec<usize> {
        let [nx, ny, nz] = self.input_dims;
        vec![self.in_channels, nz, ny, nx]
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_blocks.is_empty() || self.stage_blocks.len() != self.stage_widths.len() {
            return Err(Error::Config("stage_blocks and stage_widths need equal, non-zero length".into()));
        }
        if self.stage_blocks.contains(&0) || self.stage_widths.contains(&0) || self.expansion == 0 {
            return Err(Error::Config("stage sizes must be positive".into()));
        }
        if self.n_classes < 2 || self.head_width == 0 {
            return Err(Error::Config("head needs a positive width and at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Stem → bottleneck stages → global average pool → dense(head) → ReLU → dense(classes).
pub fn build_model_b(cfg: &ModelBConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let mut r = rng::seeded(seed);
    let mut layers = vec![
        Layer::Conv(Conv::new(3, cfg.in_channels, cfg.stem_width, 7, 2, 3, &mut r)?),
        Layer::BatchNorm(BatchNorm::new(cfg.stem_width)),
        Layer::relu(),
    ];
    let mut ch = cfg.stem_width;
    for (s, (&n, &w)) in cfg.stage_blocks.iter().zip(&cfg.stage_widths).enumerate() {
        for b in 0..n {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let mut block = Bottleneck::new(ch, w, w * cfg.expansion, stride, &mut r)?;
            if cfg.zero_init_residual {
                block.zero_residual();
            }
            layers.push(Layer::Bottleneck(Box::new(block)));
            ch = w * cfg.expansion;
        }
    }
    layers.push(Layer::global_avg_pool());
    layers.push(Layer::Dense(Dense::new(ch, cfg.head_width, &mut r)?));
    layers.push(Layer::relu());
    layers.push(Layer::Dense(Dense::new(cfg.head_width, cfg.n_classes, &mut r)?));
    Network::new(cfg.input_shape(), layers)
}

/// Width of the feature vector feeding the classification layer.
pub fn penultimate_width(net: &Network) -> usize {
    let shapes = net.layer_shapes();
    shapes[shapes.len() - 2][0]
}

/// Outcome of classifying one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Class probabilities and the arg-max class (lowest index on ties) for each sample in a batch.
pub fn predict_batch(net: &Network, x: &Tensor) -> Result<Vec<Prediction>> {
    let probs = softmax(&net.forward_eval(x)?)?;
    let c = probs.shape()[1];
    Ok(probs
        .data()
        .chunks(c)
        .map(|p| Prediction { class: argmax(p), probabilities: p.to_vec() })
        .collect())
}

/// Classifies a single sample given as its flat values.
pub fn predict(net: &Network, sample: &[f64]) -> Result<Prediction> {
    let x = Tensor::stack(&[sample], net.input_shape())?;
    Ok(predict_batch(net, &x)?.remove(0))
}

/// Source of monotonic time in seconds, supplied by the host.
pub trait Clock {
    fn now(&self) -> f64;
}

/// [`predict`] plus the wall time it took.
pub fn predict_timed(net: &Network, sample: &[f64], clock: &dyn Clock) -> Result<(Prediction, f64)> {
    let t0 = clock.now();
    let p = predict(net, sample)?;
    Ok((p, clock.now() - t0))
}
