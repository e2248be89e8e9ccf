use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{BatchNorm, Bottleneck, Conv, Dense, Dropout, Param, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;

/// One stage of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    BatchNorm(BatchNorm),
    Relu { out: Option<Tensor> },
    Dropout(Dropout),
    Flatten { in_shape: Option<Vec<usize>> },
    GlobalAvgPool { in_shape: Option<Vec<usize>> },
    Dense(Dense),
    Bottleneck(Box<Bottleneck>),
}

/// Checkpoint type tag for each layer kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum LayerTag {
    Conv = 1,
    BatchNorm = 2,
    Relu = 3,
    Dropout = 4,
    Flatten = 5,
    GlobalAvgPool = 6,
    Dense = 7,
    Bottleneck = 8,
}

impl LayerTag {
    pub fn from_u8(v: u8) -> Option<LayerTag> {
        use LayerTag::*;
        [Conv, BatchNorm, Relu, Dropout, Flatten, GlobalAvgPool, Dense, Bottleneck]
            .into_iter()
            .find(|t| *t as u8 == v)
    }
}

/// Serialisable state of one layer: its tag and every stored tensor (parameters, then
/// batch-norm running statistics) in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub tag: LayerTag,
    pub tensors: Vec<(Vec<usize>, Vec<f64>)>,
}

impl Layer {
    pub fn relu() -> Layer {
        Layer::Relu { out: None }
    }

    pub fn flatten() -> Layer {
        Layer::Flatten { in_shape: None }
    }

    pub fn global_avg_pool() -> Layer {
        Layer::GlobalAvgPool { in_shape: None }
    }

    pub fn tag(&self) -> LayerTag {
        match self {
            Layer::Conv(_) => LayerTag::Conv,
            Layer::BatchNorm(_) => LayerTag::BatchNorm,
            Layer::Relu { .. } => LayerTag::Relu,
            Layer::Dropout(_) => LayerTag::Dropout,
            Layer::Flatten { .. } => LayerTag::Flatten,
            Layer::GlobalAvgPool { .. } => LayerTag::GlobalAvgPool,
            Layer::Dense(_) => LayerTag::Dense,
            Layer::Bottleneck(_) => LayerTag::Bottleneck,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu { .. } => "relu",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten { .. } => "flatten",
            Layer::GlobalAvgPool { .. } => "gap",
            Layer::Dense(_) => "dense",
            Layer::Bottleneck(_) => "block",
        }
    }

    pub fn output_shape(&self, s: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(c) => c.output_shape(s),
            Layer::BatchNorm(b) => b.output_shape(s),
            Layer::Relu { .. } | Layer::Dropout(_) => Ok(s.to_vec()),
            Layer::Flatten { .. } => Ok(vec![s.iter().product()]),
            Layer::GlobalAvgPool { .. } => {
                if s.len() < 2 {
                    return Err(shape_err!("global average pool needs spatial axes, got {:?}", s));
                }
                Ok(vec![s[0]])
            }
            Layer::Dense(d) => d.output_shape(s),
            Layer::Bottleneck(b) => b.output_shape(s),
        }
    }

    fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(c) => c.forward_eval(x),
            Layer::BatchNorm(b) => b.forward_eval(x),
            Layer::Relu { .. } => Ok(x.map(|v| v.max(0.0))),
            Layer::Dropout(_) => Ok(x.clone()),
            Layer::Flatten { .. } => x.clone().reshape(vec![x.batch(), x.sample_len()]),
            Layer::GlobalAvgPool { .. } => Ok(global_avg_pool(x)),
            Layer::Dense(d) => d.forward_eval(x),
            Layer::Bottleneck(b) => b.forward_eval(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        match self {
            Layer::Conv(c) => c.forward_train(x),
            Layer::BatchNorm(b) => b.forward_train(x),
            Layer::Relu { out } => {
                let y = x.map(|v| v.max(0.0));
                *out = Some(y.clone());
                Ok(y)
            }
            Layer::Dropout(d) => Ok(d.forward_train(x, rng)),
            Layer::Flatten { in_shape } => {
                *in_shape = Some(x.shape().to_vec());
                x.clone().reshape(vec![x.batch(), x.sample_len()])
            }
            Layer::GlobalAvgPool { in_shape } => {
                *in_shape = Some(x.shape().to_vec());
                Ok(global_avg_pool(x))
            }
            Layer::Dense(d) => d.forward_train(x),
            Layer::Bottleneck(b) => b.forward_train(x),
        }
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let missing = |what: &str| Error::State(format!("{what} backward called without a cached forward"));
        match self {
            Layer::Conv(c) => c.backward(g),
            Layer::BatchNorm(b) => b.backward(g),
            Layer::Relu { out } => {
                let y = out.take().ok_or_else(|| missing("relu"))?;
                if y.shape() != g.shape() {
                    return Err(shape_err!("relu gradient shape {:?}, expected {:?}", g.shape(), y.shape()));
                }
                let mut dx = g.clone();
                for (d, &a) in dx.data_mut().iter_mut().zip(y.data()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                Ok(dx)
            }
            Layer::Dropout(d) => d.backward(g),
            Layer::Flatten { in_shape } => {
                let s = in_shape.take().ok_or_else(|| missing("flatten"))?;
                g.clone().reshape(s)
            }
            Layer::GlobalAvgPool { in_shape } => {
                let s = in_shape.take().ok_or_else(|| missing("global average pool"))?;
                let (b, c) = (s[0], s[1]);
                if g.shape() != [b, c] {
                    return Err(shape_err!("pool gradient shape {:?}, expected [{b}, {c}]", g.shape()));
                }
                let inner: usize = s[2..].iter().product();
                let mut dx = Tensor::zeros(s);
                let inv = 1.0 / inner as f64;
                for (chunk, &gv) in dx.data_mut().chunks_mut(inner).zip(g.data()) {
                    chunk.iter_mut().for_each(|v| *v = gv * inv);
                }
                Ok(dx)
            }
            Layer::Dense(d) => d.backward(g),
            Layer::Bottleneck(b) => b.backward(g),
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.clear_cache(),
            Layer::BatchNorm(b) => b.clear_cache(),
            Layer::Relu { out } => *out = None,
            Layer::Dropout(d) => d.clear_cache(),
            Layer::Flatten { in_shape } | Layer::GlobalAvgPool { in_shape } => *in_shape = None,
            Layer::Dense(d) => d.clear_cache(),
            Layer::Bottleneck(b) => b.clear_cache(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Bottleneck(b) => b.params_mut(),
            _ => Vec::new(),
        }
    }

    /// Parameters and running statistics, in checkpoint order.
    fn state_mut(&mut self) -> Vec<(Vec<usize>, &mut Vec<f64>)> {
        fn bn_state(bn: &mut BatchNorm) -> [(Vec<usize>, &mut Vec<f64>); 4] {
            let c = bn.channels();
            let BatchNorm { gamma, beta, running_mean, running_var, .. } = bn;
            [
                (gamma.shape.clone(), &mut gamma.value),
                (beta.shape.clone(), &mut beta.value),
                (vec![c], running_mean),
                (vec![c], running_var),
            ]
        }
        let mut out: Vec<(Vec<usize>, &mut Vec<f64>)> = Vec::new();
        match self {
            Layer::BatchNorm(b) => {
                out.extend(bn_state(b));
            }
            Layer::Bottleneck(b) => {
                let bk = &mut **b;
                let (mut convs, mut bns): (Vec<&mut Conv>, Vec<&mut BatchNorm>) =
                    (vec![&mut bk.reduce, &mut bk.spatial, &mut bk.expand], vec![&mut bk.bn1, &mut bk.bn2, &mut bk.bn3]);
                if let Some((c, bn)) = &mut bk.projection {
                    convs.push(c);
                    bns.push(bn);
                }
                for (c, bn) in convs.into_iter().zip(bns) {
                    out.push((c.weight.shape.clone(), &mut c.weight.value));
                    out.push((c.bias.shape.clone(), &mut c.bias.value));
                    out.extend(bn_state(bn));
                }
            }
            other => {
                for p in other.params_mut() {
                    out.push((p.shape.clone(), &mut p.value));
                }
            }
        }
        out
    }
}

fn global_avg_pool(x: &Tensor) -> Tensor {
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let inner = x.sample_len() / c;
    let inv = 1.0 / inner as f64;
    let data = x.data().chunks(inner).map(|ch| ch.iter().sum::<f64>() * inv).collect();
    Tensor::new(vec![b, c], data).expect("pool output shape")
}

/// A sequential stack of layers with a fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Validates shape propagation through every layer and names all parameters.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut s = input_shape.clone();
        for (i, l) in layers.iter().enumerate() {
            s = l.output_shape(&s).map_err(|e| match e {
                Error::Shape(m) => Error::Shape(format!("layer {i} ({}): {m}", l.kind())),
                other => other,
            })?;
            if s.contains(&0) {
                return Err(shape_err!("layer {i} ({}) produces an empty shape {:?}", l.kind(), s));
            }
            shapes.push(s.clone());
        }
        let mut net = Network { input_shape, layers, shapes };
        for (i, l) in net.layers.iter_mut().enumerate() {
            let kind = l.kind();
            let params = l.params_mut();
            let tag_names: &[&str] = if params.len() == 2 && kind == "bn" { &["gamma", "beta"] } else { &["weight", "bias"] };
            for (k, p) in params.into_iter().enumerate() {
                p.name = if kind == "block" {
                    format!("{i}.{kind}.{k}")
                } else {
                    format!("{i}.{kind}.{}", tag_names[k % 2])
                };
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty network")
    }

    /// Per-sample output shape after each layer.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if &x.shape()[1..] != self.input_shape.as_slice() {
            return Err(shape_err!(
                "network expects samples of shape {:?}, got {:?}",
                self.input_shape,
                &x.shape()[1..]
            ));
        }
        Ok(())
    }

    /// Inference pass; no caches, no running-statistics updates.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.layers[0].forward_eval(x)?;
        for l in &self.layers[1..] {
            h = l.forward_eval(&h)?;
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            match self.layers[i].forward_train(&h, rng) {
                Ok(y) => h = y,
                Err(e) => {
                    self.clear_caches();
                    return Err(e);
                }
            }
        }
        Ok(h)
    }

    /// Back-propagates a loss gradient, accumulating parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Number of layers of a given kind at the top level.
    pub fn count(&self, tag: LayerTag) -> usize {
        self.layers.iter().filter(|l| l.tag() == tag).count()
    }

    pub fn records(&mut self) -> Vec<LayerRecord> {
        self.layers
            .iter_mut()
            .map(|l| LayerRecord {
                tag: l.tag(),
                tensors: l.state_mut().into_iter().map(|(s, v)| (s, v.clone())).collect(),
            })
            .collect()
    }

    /// Loads records written by [`Network::records`] from an identically built network.
    pub fn load_records(&mut self, records: &[LayerRecord]) -> Result<()> {
        if records.len() != self.layers.len() {
            return Err(shape_err!("checkpoint has {} layers, network {}", records.len(), self.layers.len()));
        }
        let check = |i: usize, msg: String| Error::Shape(format!("layer {i}: {msg}"));
        for (i, (l, r)) in self.layers.iter().zip(records).enumerate() {
            if l.tag() != r.tag {
                return Err(check(i, format!("checkpoint tag {:?}, network {:?}", r.tag, l.tag())));
            }
        }
        for (i, (l, r)) in self.layers.iter_mut().zip(records).enumerate() {
            let state = l.state_mut();
            if state.len() != r.tensors.len() {
                return Err(check(i, format!("{} tensors in checkpoint, {} expected", r.tensors.len(), state.len())));
            }
            for ((shape, dst), (rs, rv)) in state.into_iter().zip(&r.tensors) {
                if &shape != rs || dst.len() != rv.len() {
                    return Err(check(i, format!("tensor shape {:?} in checkpoint, {:?} expected", rs, shape)));
                }
                if rv.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("layer {i}: non-finite value in checkpoint")));
                }
                dst.copy_from_slice(rv);
            }
        }
        Ok(())
    }
}
