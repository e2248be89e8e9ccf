use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{fan_in_uniform, Param, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::linalg::gemm;
use crate::math;
use crate::rng::SeededRng;

/// Running-statistics momentum: `running ← m·running + (1 − m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;
/// Variance floor inside the batch-norm square root.
pub const BN_EPS: f64 = 1e-12;

/// Fully connected layer, `y = x·Wᵀ + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_features: usize,
    out_features: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let j = 8 * i;
        for l in 0..8 {
            acc[l] += a[j + l] * b[j + l];
        }
    }
    let mut tail = 0.0;
    for j in 8 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    acc.iter().sum::<f64>() + tail
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config("dense layer sizes must be positive".into()));
        }
        Ok(Dense {
            in_features,
            out_features,
            weight: Param::new(
                vec![out_features, in_features],
                fan_in_uniform(in_features * out_features, in_features, rng),
                true,
            ),
            bias: Param::new(vec![out_features], vec![0.0; out_features], false),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn output_shape(&self, sample_shape: &[usize]) -> Result<Vec<usize>> {
        if sample_shape != [self.in_features] {
            return Err(shape_err!("dense layer expects [{}], got {:?}", self.in_features, sample_shape));
        }
        Ok(vec![self.out_features])
    }

    fn run(&self, x: &Tensor) -> Result<Tensor> {
        self.output_shape(&x.shape()[1..])?;
        let b = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        let mut y = Tensor::zeros(vec![b, o]);
        if b <= 4 {
            // matrix-vector products are memory bound; plain dots beat the packed GEMM
            for s in 0..b {
                let xs = x.sample(s);
                let ys = &mut y.data_mut()[s * o..(s + 1) * o];
                for (k, yk) in ys.iter_mut().enumerate() {
                    *yk = dot(&self.weight.value[k * i..(k + 1) * i], xs) + self.bias.value[k];
                }
            }
        } else {
            for row in y.data_mut().chunks_mut(o) {
                row.copy_from_slice(&self.bias.value);
            }
            gemm(b, i, o, 1.0, (x.data(), i as isize, 1), (&self.weight.value, 1, i as isize), 1.0, (y.data_mut(), o as isize, 1));
        }
        Ok(y)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.run(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dense backward called without a cached forward".into()))?;
        let b = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        if grad_out.shape() != [b, o] {
            return Err(shape_err!("dense gradient shape {:?}, expected [{b}, {o}]", grad_out.shape()));
        }
        // dW += dYᵀ · X
        gemm(o, b, i, 1.0, (grad_out.data(), 1, o as isize), (x.data(), i as isize, 1), 1.0, (self.weight.grad_mut(), i as isize, 1));
        let db = self.bias.grad_mut();
        for row in grad_out.data().chunks(o) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        let mut dx = Tensor::zeros(vec![b, i]);
        gemm(b, o, i, 1.0, (grad_out.data(), o as isize, 1), (&self.weight.value, i as isize, 1), 0.0, (dx.data_mut(), i as isize, 1));
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Per-channel batch normalisation over the batch and all spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: Param::new(vec![channels], vec![1.0; channels], false),
            beta: Param::new(vec![channels], vec![0.0; channels], false),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn output_shape(&self, sample_shape: &[usize]) -> Result<Vec<usize>> {
        if sample_shape.first() != Some(&self.channels) {
            return Err(shape_err!("batch norm over {} channels got sample shape {:?}", self.channels, sample_shape));
        }
        Ok(sample_shape.to_vec())
    }

    fn inner(&self, x: &Tensor) -> Result<usize> {
        self.output_shape(&x.shape()[1..])?;
        Ok(x.sample_len() / self.channels)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let inner = self.inner(x)?;
        let mut y = x.clone();
        for (idx, chunk) in y.data_mut().chunks_mut(inner).enumerate() {
            let c = idx % self.channels;
            let inv = 1.0 / math::sqrt(self.running_var[c] + self.eps);
            let (g, b, m) = (self.gamma.value[c], self.beta.value[c], self.running_mean[c]);
            for v in chunk {
                *v = g * (*v - m) * inv + b;
            }
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let inner = self.inner(x)?;
        let batch = x.batch();
        if batch < 2 {
            return Err(Error::Degenerate("batch norm in training mode needs a batch of at least 2".into()));
        }
        let count = (batch * inner) as f64;
        let mut mean = vec![0.0; self.channels];
        let mut var = vec![0.0; self.channels];
        for (idx, chunk) in x.data().chunks(inner).enumerate() {
            mean[idx % self.channels] += chunk.iter().sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for (idx, chunk) in x.data().chunks(inner).enumerate() {
            let c = idx % self.channels;
            var[c] += chunk.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + self.eps)).collect();

        let mut xhat = x.data().to_vec();
        let mut y = Tensor::zeros(x.shape().to_vec());
        for (idx, (xh, yc)) in xhat.chunks_mut(inner).zip(y.data_mut().chunks_mut(inner)).enumerate() {
            let c = idx % self.channels;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for (h, out) in xh.iter_mut().zip(yc) {
                *h = (*h - mean[c]) * inv_std[c];
                *out = g * *h + b;
            }
        }
        let unbias = count / (count - 1.0);
        for c in 0..self.channels {
            self.running_mean[c] = self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean[c];
            self.running_var[c] = self.momentum * self.running_var[c] + (1.0 - self.momentum) * var[c] * unbias;
        }
        self.cache = Some(BnCache { shape: x.shape().to_vec(), xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batch norm backward called without a cached forward".into()))?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(shape_err!("batch norm gradient shape {:?}, expected {:?}", grad_out.shape(), cache.shape));
        }
        let inner = grad_out.sample_len() / self.channels;
        let count = (grad_out.batch() * inner) as f64;
        let mut sum_dy = vec![0.0; self.channels];
        let mut sum_dy_xhat = vec![0.0; self.channels];
        for (idx, (dy, xh)) in grad_out.data().chunks(inner).zip(cache.xhat.chunks(inner)).enumerate() {
            let c = idx % self.channels;
            for (&d, &h) in dy.iter().zip(xh) {
                sum_dy[c] += d;
                sum_dy_xhat[c] += d * h;
            }
        }
        {
            let dg = self.gamma.grad_mut();
            for c in 0..dg.len() {
                dg[c] += sum_dy_xhat[c];
            }
        }
        {
            let db = self.beta.grad_mut();
            for c in 0..db.len() {
                db[c] += sum_dy[c];
            }
        }
        let mut dx = Tensor::zeros(cache.shape.clone());
        for (idx, ((dxc, dy), xh)) in dx
            .data_mut()
            .chunks_mut(inner)
            .zip(grad_out.data().chunks(inner))
            .zip(cache.xhat.chunks(inner))
            .enumerate()
        {
            let c = idx % self.channels;
            let scale = self.gamma.value[c] * cache.inv_std[c];
            let mdy = sum_dy[c] / count;
            let mdyx = sum_dy_xhat[c] / count;
            for ((o, &d), &h) in dxc.iter_mut().zip(dy).zip(xh) {
                *o = scale * (d - mdy - h * mdyx);
            }
        }
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Inverted dropout: survivors are scaled by `1/(1 − rate)` in training, identity in eval.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    rate: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(alloc::format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward_train(&mut self, x: &Tensor, rng: &mut SeededRng) -> Tensor {
        let mask: Vec<f64> = if self.rate == 0.0 {
            vec![1.0; x.data().len()]
        } else {
            let keep = 1.0 / (1.0 - self.rate);
            (0..x.data().len()).map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep }).collect()
        };
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::State("dropout backward called without a cached forward".into()))?;
        if mask.len() != grad_out.data().len() {
            return Err(shape_err!("dropout gradient has {} values, mask {}", grad_out.data().len(), mask.len()));
        }
        let mut dx = grad_out.clone();
        for (v, m) in dx.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.mask = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut d = Dropout::new(0.0).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        assert_eq!(d.forward_train(&x, &mut rng::seeded(1)), x);
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut d = Dropout::new(0.5).unwrap();
        let mut r = rng::seeded(2);
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let trials = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..trials {
            let y = d.forward_train(&x, &mut r);
            for (s, v) in sums.iter_mut().zip(y.data()) {
                *s += v;
            }
        }
        for (s, &e) in sums.iter().zip(x.data()) {
            let mean = s / trials as f64;
            assert!((mean - e).abs() <= 0.02 * e.abs(), "mean {mean} vs {e}");
        }
    }

    #[test]
    fn batchnorm_identity_on_standardised_input() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(vec![4, 1], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = bn.forward_train(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn batchnorm_single_sample_rejected() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!(matches!(bn.forward_train(&x), Err(Error::Degenerate(_))));
        assert!(bn.forward_eval(&x).is_ok());
    }

    #[test]
    fn batchnorm_running_stats() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(vec![2, 1], vec![2.0, 4.0]).unwrap();
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean[0] - 0.3).abs() < 1e-15);
        // unbiased batch variance is 2
        assert!((bn.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn dense_small_and_large_batches_agree() {
        let mut r = rng::seeded(3);
        let d = Dense::new(7, 5, &mut r).unwrap();
        let mut x = Tensor::zeros(vec![6, 7]);
        rng::fill_normal(&mut r, x.data_mut(), 1.0);
        let full = d.forward_eval(&x).unwrap();
        for s in 0..6 {
            let one = Tensor::stack(&[x.sample(s)], &[7]).unwrap();
            let y = d.forward_eval(&one).unwrap();
            for (a, b) in y.data().iter().zip(full.sample(s)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
