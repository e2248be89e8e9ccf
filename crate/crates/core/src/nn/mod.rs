//! Layer primitives with exact backward passes, softmax cross-entropy, Adam and the
//! patience learning-rate schedule.
//!
//! Layers run in one of two ways. `forward_train` caches what `backward` needs and may
//! mutate running statistics; `forward_eval` takes `&self`, caches nothing and can run
//! from many threads at once on a frozen network.

mod block;
mod conv;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use block::Bottleneck;
pub use conv::Conv;
pub use layers::{BatchNorm, Dense, Dropout, BN_EPS, BN_MOMENTUM};
pub use loss::{softmax, softmax_xent};
pub(crate) use loss::argmax;
pub use network::{Layer, LayerRecord, LayerTag, Network};
pub use optim::{adam_update, Adam, AdamHyper, LrSchedule};
pub use tensor::Tensor;

/// A learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    /// Empty until the first backward pass touches it.
    pub grad: Vec<f64>,
    /// Whether L2 weight decay applies (weights yes, biases and batch-norm affine no).
    pub decay: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f64>, decay: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Param { name: String::new(), shape, value, grad: Vec::new(), decay }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = tensor::zeroed(self.value.len());
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// He-style uniform initialisation, `U(−√(6/fan_in), √(6/fan_in))`.
pub(crate) fn fan_in_uniform(len: usize, fan_in: usize, rng: &mut crate::rng::SeededRng) -> Vec<f64> {
    use rand::Rng;
    let bound = crate::math::sqrt(6.0 / fan_in.max(1) as f64);
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}
