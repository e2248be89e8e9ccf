use alloc::vec::Vec;

use super::{BatchNorm, Conv, Param, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;

/// 3D bottleneck residual block.
///
/// Branch: 1³ reduce → BN → ReLU → 3³ (stride `s`, pad 1) → BN → ReLU → 1³ expand → BN.
/// Shortcut: identity, or a strided 1³ projection with BN when the shape changes.
/// Output: `relu(branch + shortcut)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub reduce: Conv,
    pub bn1: BatchNorm,
    pub spatial: Conv,
    pub bn2: BatchNorm,
    pub expand: Conv,
    pub bn3: BatchNorm,
    pub projection: Option<(Conv, BatchNorm)>,
    cache: Option<BlockCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockCache {
    a1: Tensor,
    a2: Tensor,
    out: Tensor,
}

fn relu_in_place(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `grad` wherever `activation` (a ReLU output) is not positive.
fn relu_mask(grad: &mut Tensor, activation: &Tensor) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn add_into(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

impl Bottleneck {
    pub fn new(in_ch: usize, mid: usize, out_ch: usize, stride: usize, rng: &mut SeededRng) -> Result<Self> {
        let projection = if stride != 1 || in_ch != out_ch {
            Some((Conv::new(3, in_ch, out_ch, 1, stride, 0, rng)?, BatchNorm::new(out_ch)))
        } else {
            None
        };
        Ok(Bottleneck {
            reduce: Conv::new(3, in_ch, mid, 1, 1, 0, rng)?,
            bn1: BatchNorm::new(mid),
            spatial: Conv::new(3, mid, mid, 3, stride, 1, rng)?,
            bn2: BatchNorm::new(mid),
            expand: Conv::new(3, mid, out_ch, 1, 1, 0, rng)?,
            bn3: BatchNorm::new(out_ch),
            projection,
            cache: None,
        })
    }

    /// Sets the last batch-norm scale to zero so the residual branch starts silent.
    pub fn zero_residual(&mut self) {
        self.bn3.gamma.value.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn output_shape(&self, sample_shape: &[usize]) -> Result<Vec<usize>> {
        let s = self.reduce.output_shape(sample_shape)?;
        let s = self.spatial.output_shape(&s)?;
        let s = self.expand.output_shape(&s)?;
        let short = match &self.projection {
            Some((c, _)) => c.output_shape(sample_shape)?,
            None => sample_shape.to_vec(),
        };
        if s != short {
            return Err(shape_err!("residual branch {:?} and shortcut {:?} disagree", s, short));
        }
        if s[1..].contains(&0) {
            return Err(shape_err!("bottleneck collapses the volume to {:?}", s));
        }
        Ok(s)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.bn1.forward_eval(&self.reduce.forward_eval(x)?)?;
        relu_in_place(&mut h);
        let mut h = self.bn2.forward_eval(&self.spatial.forward_eval(&h)?)?;
        relu_in_place(&mut h);
        let mut y = self.bn3.forward_eval(&self.expand.forward_eval(&h)?)?;
        match &self.projection {
            Some((c, bn)) => add_into(&mut y, &bn.forward_eval(&c.forward_eval(x)?)?),
            None => add_into(&mut y, x),
        }
        relu_in_place(&mut y);
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let r = self.reduce.forward_train(x)?;
        let mut a1 = self.bn1.forward_train(&r)?;
        relu_in_place(&mut a1);
        let s = self.spatial.forward_train(&a1)?;
        let mut a2 = self.bn2.forward_train(&s)?;
        relu_in_place(&mut a2);
        let e = self.expand.forward_train(&a2)?;
        let mut y = self.bn3.forward_train(&e)?;
        match &mut self.projection {
            Some((c, bn)) => {
                let p = c.forward_train(x)?;
                add_into(&mut y, &bn.forward_train(&p)?)
            }
            None => add_into(&mut y, x),
        }
        relu_in_place(&mut y);
        self.cache = Some(BlockCache { a1, a2, out: y.clone() });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("bottleneck backward called without a cached forward".into()))?;
        let mut g = grad_out.clone();
        relu_mask(&mut g, &cache.out);
        let mut gb = self.expand.backward(&self.bn3.backward(&g)?)?;
        relu_mask(&mut gb, &cache.a2);
        let mut gb = self.spatial.backward(&self.bn2.backward(&gb)?)?;
        relu_mask(&mut gb, &cache.a1);
        let mut dx = self.reduce.backward(&self.bn1.backward(&gb)?)?;
        match &mut self.projection {
            Some((c, bn)) => add_into(&mut dx, &c.backward(&bn.backward(&g)?)?),
            None => add_into(&mut dx, &g),
        }
        Ok(dx)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (c, bn) in [
            (&mut self.reduce, &mut self.bn1),
            (&mut self.spatial, &mut self.bn2),
            (&mut self.expand, &mut self.bn3),
        ] {
            v.extend([&mut c.weight, &mut c.bias, &mut bn.gamma, &mut bn.beta]);
        }
        if let Some((c, bn)) = &mut self.projection {
            v.extend([&mut c.weight, &mut c.bias, &mut bn.gamma, &mut bn.beta]);
        }
        v
    }

    pub(crate) fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut v = alloc::vec![&mut self.bn1, &mut self.bn2, &mut self.bn3];
        if let Some((_, bn)) = &mut self.projection {
            v.push(bn);
        }
        v
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
        self.reduce.clear_cache();
        self.spatial.clear_cache();
        self.expand.clear_cache();
        for bn in self.batch_norms_mut() {
            bn.clear_cache();
        }
        if let Some((c, _)) = &mut self.projection {
            c.clear_cache();
        }
    }
}
