use alloc::vec;
use alloc::vec::Vec;

use super::tensor::zeroed;
use super::{fan_in_uniform, Param, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::linalg::gemm;
use crate::rng::SeededRng;

/// 1D or 3D cross-correlation (no kernel flip) with zero padding.
///
/// Inputs are `(batch, channels, length)` for rank 1 and
/// `(batch, channels, d0, d1, d2)` for rank 3. Rank 1 runs through the same code as a
/// 3D convolution over `(1, 1, length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    rank: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    /// `(out_ch, in_ch, k0[, k1, k2])`.
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

fn expand(rank: usize, v: usize, fill: usize) -> [usize; 3] {
    if rank == 1 {
        [fill, fill, v]
    } else {
        [v, v, v]
    }
}

/// Output positions `lo..hi` on a stride-1 axis whose input index `i + e − pad` is in bounds.
fn inner_range(e: usize, pad: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(e).min(out);
    let hi = (len + pad).saturating_sub(e).min(out).max(lo);
    (lo, hi)
}

impl Conv {
    /// Cube (or segment) kernel of side `kernel` with uniform stride and padding.
    pub fn new(
        rank: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if rank != 1 && rank != 3 {
            return Err(Error::Config(alloc::format!("convolution rank must be 1 or 3, got {rank}")));
        }
        if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Config("convolution sizes must be positive".into()));
        }
        let kernel = expand(rank, kernel, 1);
        let ksize: usize = kernel.iter().product();
        let mut wshape = vec![out_ch, in_ch];
        wshape.extend_from_slice(&kernel[3 - rank..]);
        let fan_in = in_ch * ksize;
        Ok(Conv {
            rank,
            in_ch,
            out_ch,
            kernel,
            stride: expand(rank, stride, 1),
            pad: expand(rank, pad, 0),
            weight: Param::new(wshape, fan_in_uniform(out_ch * fan_in, fan_in, rng), true),
            bias: Param::new(vec![out_ch], vec![0.0; out_ch], false),
            cache: None,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    fn spatial_in(&self, sample_shape: &[usize]) -> Result<[usize; 3]> {
        if sample_shape.len() != 1 + self.rank || sample_shape[0] != self.in_ch {
            return Err(shape_err!(
                "rank-{} convolution with {} input channels cannot take sample shape {:?}",
                self.rank,
                self.in_ch,
                sample_shape
            ));
        }
        Ok(if self.rank == 1 {
            [1, 1, sample_shape[1]]
        } else {
            [sample_shape[1], sample_shape[2], sample_shape[3]]
        })
    }

    fn spatial_out(&self, sp: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = sp[a] + 2 * self.pad[a];
            if padded < self.kernel[a] {
                return Err(shape_err!(
                    "kernel {:?} larger than padded input {:?}",
                    &self.kernel[3 - self.rank..],
                    &sp[3 - self.rank..]
                ));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, sample_shape: &[usize]) -> Result<Vec<usize>> {
        let o = self.spatial_out(self.spatial_in(sample_shape)?)?;
        let mut shape = vec![self.out_ch];
        shape.extend_from_slice(&o[3 - self.rank..]);
        Ok(shape)
    }

    /// Unfolds one sample into a `(in_ch·K) × P` patch matrix.
    fn im2col(&self, x: &[f64], sp: [usize; 3], o: [usize; 3], cols: &mut [f64]) {
        let [k0, k1, k2] = self.kernel;
        let [s0, s1, s2] = self.stride;
        let [p0, p1, p2] = self.pad;
        let p = o[0] * o[1] * o[2];
        let plane = sp[1] * sp[2];
        let vol = sp[0] * plane;
        let mut row = 0;
        for c in 0..self.in_ch {
            let xc = &x[c * vol..(c + 1) * vol];
            for a in 0..k0 {
                for b in 0..k1 {
                    for e in 0..k2 {
                        let dst = &mut cols[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for i0 in 0..o[0] {
                            let z0 = (i0 * s0 + a) as isize - p0 as isize;
                            for i1 in 0..o[1] {
                                let z1 = (i1 * s1 + b) as isize - p1 as isize;
                                let valid01 = z0 >= 0 && (z0 as usize) < sp[0] && z1 >= 0 && (z1 as usize) < sp[1];
                                if !valid01 {
                                    dst[idx..idx + o[2]].iter_mut().for_each(|v| *v = 0.0);
                                    idx += o[2];
                                    continue;
                                }
                                let base = z0 as usize * plane + z1 as usize * sp[2];
                                let row_out = &mut dst[idx..idx + o[2]];
                                if s2 == 1 {
                                    // contiguous run: zero the padded edges, copy the middle
                                    let (lo, hi) = inner_range(e, p2, sp[2], o[2]);
                                    row_out[..lo].iter_mut().for_each(|v| *v = 0.0);
                                    row_out[hi..].iter_mut().for_each(|v| *v = 0.0);
                                    if lo < hi {
                                        let src0 = base + lo + e - p2;
                                        row_out[lo..hi].copy_from_slice(&xc[src0..src0 + hi - lo]);
                                    }
                                } else {
                                    for (i2, v) in row_out.iter_mut().enumerate() {
                                        let z2 = (i2 * s2 + e) as isize - p2 as isize;
                                        *v = if z2 >= 0 && (z2 as usize) < sp[2] { xc[base + z2 as usize] } else { 0.0 };
                                    }
                                }
                                idx += o[2];
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the input grid.
    fn col2im(&self, cols: &[f64], sp: [usize; 3], o: [usize; 3], dx: &mut [f64]) {
        let [k0, k1, k2] = self.kernel;
        let [s0, s1, s2] = self.stride;
        let [p0, p1, p2] = self.pad;
        let p = o[0] * o[1] * o[2];
        let plane = sp[1] * sp[2];
        let vol = sp[0] * plane;
        let mut row = 0;
        for c in 0..self.in_ch {
            let dxc = &mut dx[c * vol..(c + 1) * vol];
            for a in 0..k0 {
                for b in 0..k1 {
                    for e in 0..k2 {
                        let src = &cols[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for i0 in 0..o[0] {
                            let z0 = (i0 * s0 + a) as isize - p0 as isize;
                            for i1 in 0..o[1] {
                                let z1 = (i1 * s1 + b) as isize - p1 as isize;
                                if !(z0 >= 0 && (z0 as usize) < sp[0] && z1 >= 0 && (z1 as usize) < sp[1]) {
                                    idx += o[2];
                                    continue;
                                }
                                let base = z0 as usize * plane + z1 as usize * sp[2];
                                let row_in = &src[idx..idx + o[2]];
                                if s2 == 1 {
                                    let (lo, hi) = inner_range(e, p2, sp[2], o[2]);
                                    if lo < hi {
                                        let dst0 = base + lo + e - p2;
                                        for (d, g) in dxc[dst0..dst0 + hi - lo].iter_mut().zip(&row_in[lo..hi]) {
                                            *d += g;
                                        }
                                    }
                                } else {
                                    for (i2, g) in row_in.iter().enumerate() {
                                        let z2 = (i2 * s2 + e) as isize - p2 as isize;
                                        if z2 >= 0 && (z2 as usize) < sp[2] {
                                            dxc[base + z2 as usize] += g;
                                        }
                                    }
                                }
                                idx += o[2];
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn run(&self, x: &Tensor) -> Result<Tensor> {
        let sp = self.spatial_in(&x.shape()[1..])?;
        let o = self.spatial_out(sp)?;
        let p: usize = o.iter().product();
        let ck = self.patch_len();
        let batch = x.batch();
        let mut out_shape = vec![batch, self.out_ch];
        out_shape.extend_from_slice(&o[3 - self.rank..]);
        let mut out = Tensor::zeros(out_shape);
        // unpadded 1D kernels read shifted strided views of the input instead of patches
        let direct = self.rank == 1 && self.pad == [0, 0, 0] && !self.is_pointwise();
        let mut cols = if self.is_pointwise() || direct { Vec::new() } else { zeroed(ck * p) };
        for bi in 0..batch {
            let xs = x.sample(bi);
            if direct {
                let ys = &mut out.data_mut()[bi * self.out_ch * p..(bi + 1) * self.out_ch * p];
                for (c, row) in ys.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v = self.bias.value[c]);
                }
                let k = self.kernel[2];
                for e in 0..k {
                    gemm(
                        self.out_ch,
                        self.in_ch,
                        p,
                        1.0,
                        (&self.weight.value[e..], ck as isize, k as isize),
                        (&xs[e..], sp[2] as isize, self.stride[2] as isize),
                        1.0,
                        (ys, p as isize, 1),
                    );
                }
                continue;
            }
            let patches: &[f64] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, sp, o, &mut cols);
                &cols
            };
            let ys = &mut out.data_mut()[bi * self.out_ch * p..(bi + 1) * self.out_ch * p];
            for (c, row) in ys.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[c]);
            }
            gemm(
                self.out_ch,
                ck,
                p,
                1.0,
                (&self.weight.value, ck as isize, 1),
                (patches, p as isize, 1),
                1.0,
                (ys, p as isize, 1),
            );
        }
        Ok(out)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.run(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::State("convolution backward called without a cached forward".into()))?;
        let sp = self.spatial_in(&x.shape()[1..])?;
        let o = self.spatial_out(sp)?;
        let p: usize = o.iter().product();
        let ck = self.patch_len();
        let batch = x.batch();
        if grad_out.batch() != batch || grad_out.sample_len() != self.out_ch * p {
            return Err(shape_err!("convolution gradient shape {:?} does not match output", grad_out.shape()));
        }
        let mut dx = Tensor::zeros(x.shape().to_vec());
        let in_len = x.sample_len();
        let mut cols = zeroed(ck * p);
        let mut dcols = if self.is_pointwise() { Vec::new() } else { zeroed(ck * p) };
        let mut dw = core::mem::take(&mut self.weight.grad);
        dw.resize(self.weight.value.len(), 0.0);
        let wvals = &self.weight.value;
        for bi in 0..batch {
            let gy = grad_out.sample(bi);
            let xs = x.sample(bi);
            let patches: &[f64] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, sp, o, &mut cols);
                &cols
            };
            // dW += dY · patchesᵀ
            gemm(self.out_ch, p, ck, 1.0, (gy, p as isize, 1), (patches, 1, p as isize), 1.0, (&mut dw, ck as isize, 1));
            let dxs = &mut dx.data_mut()[bi * in_len..(bi + 1) * in_len];
            if self.is_pointwise() {
                // dX = Wᵀ · dY directly
                gemm(ck, self.out_ch, p, 1.0, (wvals, 1, ck as isize), (gy, p as isize, 1), 0.0, (dxs, p as isize, 1));
            } else {
                gemm(ck, self.out_ch, p, 1.0, (wvals, 1, ck as isize), (gy, p as isize, 1), 0.0, (&mut dcols, p as isize, 1));
                self.col2im(&dcols, sp, o, dxs);
            }
        }
        self.weight.grad = dw;
        let db = self.bias.grad_mut();
        for bi in 0..batch {
            for (c, row) in grad_out.sample(bi).chunks(p).enumerate() {
                db[c] += row.iter().sum::<f64>();
            }
        }
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }
}
