use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};

/// Dense row-major tensor; axis 0 is the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 5 {
            return Err(shape_err!("tensors have 1 to 5 axes, got {}", shape.len()));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(shape_err!("shape {:?} needs {} values, got {}", shape, shape.iter().product::<usize>(), data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: zeroed(n) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Values per batch element.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Stacks equally shaped samples into a batch.
    pub fn stack(samples: &[&[f64]], sample_shape: &[usize]) -> Result<Tensor> {
        let n: usize = sample_shape.iter().product();
        let mut data = Vec::with_capacity(n * samples.len());
        for s in samples {
            if s.len() != n {
                return Err(shape_err!("sample of {} values, expected {}", s.len(), n));
            }
            data.extend_from_slice(s);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(sample_shape);
        Tensor::new(shape, data)
    }
}

/// Zero buffer filled explicitly. `vec![0.0; n]` goes through `calloc`, which hands large
/// requests fresh pages from the OS, so every forward pass would page-fault its outputs.
pub(crate) fn zeroed(n: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n);
    v.resize(n, 0.0);
    v
}

