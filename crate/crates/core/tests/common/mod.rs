#![allow(dead_code)]

pub mod oracle;

use brainstate_core::nn::{softmax_xent, Layer, Network, Tensor};
use brainstate_core::rng::{self, SeededRng};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale of `tol * FLOOR`.
pub const FLOOR: f64 = 1e-2;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_tensor(shape: Vec<usize>, r: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar objective used for the check: a fixed random projection of the output, or
/// softmax cross-entropy against `labels`.
pub enum Objective {
    Projection(Vec<f64>),
    Xent(Vec<usize>),
}

impl Objective {
    fn eval(&self, out: &Tensor) -> (f64, Tensor) {
        match self {
            Objective::Projection(w) => {
                let v = out.data().iter().zip(w).map(|(a, b)| a * b).sum();
                (v, Tensor::new(out.shape().to_vec(), w.clone()).unwrap())
            }
            Objective::Xent(y) => softmax_xent(out, y).unwrap(),
        }
    }
}

/// Forward in training mode with a fixed dropout stream, so repeated calls see the same masks.
fn loss(net: &mut Network, x: &Tensor, obj: &Objective, mask_seed: u64) -> f64 {
    let out = net.forward_train(x, &mut rng::seeded(mask_seed)).unwrap();
    net.clear_caches();
    obj.eval(&out).0
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradReport {
    fn record(&mut self, what: String, a: f64, n: f64) {
        let e = rel_err(a, n);
        self.checked += 1;
        if e > self.worst || self.worst_at.is_empty() {
            self.worst = e;
            self.worst_at = format!("{what} analytic {a:.9e} numeric {n:.9e}");
        }
    }
}

/// Central differences against backprop, over up to `per_tensor` coordinates of every
/// parameter and of the input.
pub fn check_network(net: &mut Network, x: &Tensor, obj: &Objective, per_tensor: usize, seed: u64) -> GradReport {
    let mut pick = rng::seeded(seed ^ 0x5eed);
    let mask_seed = seed.wrapping_add(17);
    let out = net.forward_train(x, &mut rng::seeded(mask_seed)).unwrap();
    let (_, g) = obj.eval(&out);
    net.zero_grads();
    let gx = net.backward(&g).unwrap();
    let analytic: Vec<(String, Vec<f64>, usize)> = net
        .params_mut()
        .into_iter()
        .map(|p| (p.name.clone(), if p.grad.is_empty() { vec![0.0; p.len()] } else { p.grad.clone() }, p.len()))
        .collect();
    let mut rep = GradReport::default();
    for (pi, (name, grad, len)) in analytic.iter().enumerate() {
        for c in coords(*len, per_tensor, &mut pick) {
            let orig = net.params_mut()[pi].value[c];
            net.params_mut()[pi].value[c] = orig + FD_STEP;
            let lp = loss(net, x, obj, mask_seed);
            net.params_mut()[pi].value[c] = orig - FD_STEP;
            let lm = loss(net, x, obj, mask_seed);
            net.params_mut()[pi].value[c] = orig;
            rep.record(format!("{name}[{c}]"), grad[c], (lp - lm) / (2.0 * FD_STEP));
        }
    }
    for c in coords(x.data().len(), per_tensor, &mut pick) {
        let mut xp = x.clone();
        xp.data_mut()[c] += FD_STEP;
        let lp = loss(net, &xp, obj, mask_seed);
        xp.data_mut()[c] -= 2.0 * FD_STEP;
        let lm = loss(net, &xp, obj, mask_seed);
        rep.record(format!("input[{c}]"), gx.data()[c], (lp - lm) / (2.0 * FD_STEP));
    }
    rep
}

fn coords(len: usize, k: usize, r: &mut SeededRng) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        (0..k).map(|_| r.random_range(0..len)).collect()
    }
}

/// Checks one layer in isolation with a random projection objective.
pub fn check_layer(layer: Layer, sample_shape: Vec<usize>, batch: usize, seed: u64) -> GradReport {
    let mut net = Network::new(sample_shape.clone(), vec![layer]).unwrap();
    let mut r = rng::seeded(seed);
    let mut shape = vec![batch];
    shape.extend(sample_shape);
    let x = random_tensor(shape, &mut r);
    let out_len = batch * net.output_shape().iter().product::<usize>();
    let w = (0..out_len).map(|_| r.random_range(-1.0..1.0)).collect();
    check_network(&mut net, &x, &Objective::Projection(w), 400, seed)
}

/// The per-layer cases of the suite, by name.
pub fn layer_cases() -> Vec<(&'static str, GradReport)> {
    use brainstate_core::nn::{BatchNorm, Bottleneck, Conv, Dense, Dropout};
    let mut r = rng::seeded(3);
    vec![
        ("dense", check_layer(Layer::Dense(Dense::new(7, 5, &mut r).unwrap()), vec![7], 3, 1)),
        ("dense-large-batch", check_layer(Layer::Dense(Dense::new(6, 4, &mut r).unwrap()), vec![6], 9, 2)),
        ("conv1d", check_layer(Layer::Conv(Conv::new(1, 2, 3, 10, 1, 0, &mut r).unwrap()), vec![2, 24], 2, 3)),
        ("conv1d-stride-pad", check_layer(Layer::Conv(Conv::new(1, 2, 2, 3, 2, 1, &mut r).unwrap()), vec![2, 11], 2, 4)),
        ("conv3d-4x4x4-k2", check_layer(Layer::Conv(Conv::new(3, 1, 2, 2, 1, 0, &mut r).unwrap()), vec![1, 4, 4, 4], 2, 5)),
        ("conv3d-stride-pad", check_layer(Layer::Conv(Conv::new(3, 2, 2, 3, 2, 1, &mut r).unwrap()), vec![2, 5, 4, 3], 2, 6)),
        ("batchnorm-1d", check_layer(Layer::BatchNorm(BatchNorm::new(3)), vec![3, 5], 4, 7)),
        ("batchnorm-3d", check_layer(Layer::BatchNorm(BatchNorm::new(2)), vec![2, 2, 3, 2], 3, 8)),
        ("batchnorm-dense", check_layer(Layer::BatchNorm(BatchNorm::new(4)), vec![4], 5, 9)),
        ("relu", check_layer(Layer::relu(), vec![3, 7], 2, 10)),
        ("dropout", check_layer(Layer::Dropout(Dropout::new(0.4).unwrap()), vec![2, 9], 3, 11)),
        ("flatten", check_layer(Layer::flatten(), vec![2, 3, 4], 2, 12)),
        ("global-avg-pool", check_layer(Layer::global_avg_pool(), vec![3, 2, 3, 2], 2, 13)),
        (
            "bottleneck-projection",
            check_layer(Layer::Bottleneck(Box::new(Bottleneck::new(2, 2, 4, 2, &mut r).unwrap())), vec![2, 4, 4, 3], 2, 14),
        ),
        (
            "bottleneck-identity",
            check_layer(Layer::Bottleneck(Box::new(Bottleneck::new(4, 2, 4, 1, &mut r).unwrap())), vec![4, 3, 3, 2], 2, 15),
        ),
    ]
}

/// End-to-end loss gradient of a full model on a random labelled batch.
pub fn check_model(net: &mut Network, batch: usize, n_classes: usize, per_tensor: usize, seed: u64) -> GradReport {
    let mut r = rng::seeded(seed);
    let mut shape = vec![batch];
    shape.extend_from_slice(net.input_shape());
    let x = random_tensor(shape, &mut r);
    let y = (0..batch).map(|i| i % n_classes).collect();
    check_network(net, &x, &Objective::Xent(y), per_tensor, seed)
}
