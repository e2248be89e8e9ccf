use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::math;

/// Adam moment constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam step on a single parameter tensor at step `t ≥ 1`.
///
/// Weight decay enters the gradient, `g' = g + λθ`, for parameters flagged `decay`.
/// A missing gradient counts as zero.
pub fn adam_update(
    p: &mut Param,
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    l2: f64,
    h: &AdamHyper,
) -> Result<()> {
    if p.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(p.name.clone()));
    }
    let lambda = if p.decay { l2 } else { 0.0 };
    let c1 = 1.0 - math::powi(h.beta1, t);
    let c2 = 1.0 - math::powi(h.beta2, t);
    for i in 0..p.value.len() {
        let g = p.grad.get(i).copied().unwrap_or(0.0) + lambda * p.value[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p.value[i] -= lr * mh / (math::sqrt(vh) + h.eps);
    }
    Ok(())
}

/// Moment buffers for a fixed, ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub l2: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(hyper: AdamHyper, l2: f64) -> Self {
        Adam { hyper, l2, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter; the list must keep its order between calls.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::State(format!(
                "optimizer state tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        // validate everything before touching any value so a failed step leaves no half-update
        if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        self.t += 1;
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            adam_update(p, m, v, self.t, lr, self.l2, &self.hyper)?;
        }
        Ok(())
    }
}

/// Patience-based step decay driven by the epoch loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub lr0: f64,
    pub decay: f64,
    pub patience: u32,
    pub best_loss: f64,
    pub stall_count: u32,
}

impl LrSchedule {
    pub fn new(lr0: f64, decay: f64, patience: u32) -> Result<Self> {
        if !(lr0 > 0.0 && lr0.is_finite()) {
            return Err(Error::Config(format!("initial learning rate must be positive, got {lr0}")));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("decay factor must be in (0, 1), got {decay}")));
        }
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(LrSchedule { lr: lr0, lr0, decay, patience, best_loss: f64::INFINITY, stall_count: 0 })
    }

    /// Records an epoch loss; returns whether the rate decayed. Improvement is strict `<`.
    pub fn step(&mut self, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.stall_count = 0;
            return false;
        }
        self.stall_count += 1;
        if self.stall_count >= self.patience {
            self.lr *= self.decay;
            self.stall_count = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(value: f64, grad: f64, decay: bool) -> Param {
        let mut p = Param::new(vec![1], vec![value], decay);
        p.grad = vec![grad];
        p
    }

    #[test]
    fn zero_gradient_no_decay_is_fixed() {
        let mut p = param(0.7, 0.0, true);
        let mut a = Adam::new(AdamHyper::default(), 0.0);
        a.step(&mut [&mut p], 0.01).unwrap();
        assert_eq!(p.value[0], 0.7);
    }

    #[test]
    fn first_step_hand_value() {
        let mut p = param(0.0, 1.0, true);
        let mut a = Adam::new(AdamHyper::default(), 0.0);
        a.step(&mut [&mut p], 0.001).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.value[0] - expected).abs() < 1e-18, "{}", p.value[0]);
    }

    #[test]
    fn weight_decay_shrinks_weights_only() {
        let mut w = param(2.0, 0.0, true);
        let mut b = param(2.0, 0.0, false);
        let mut a = Adam::new(AdamHyper::default(), 0.05);
        for _ in 0..10 {
            a.step(&mut [&mut w, &mut b], 0.01).unwrap();
        }
        assert!(w.value[0] < 2.0 && w.value[0] > 0.0);
        assert_eq!(b.value[0], 2.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = param(1.0, f64::NAN, true);
        p.name = "dense3.weight".into();
        let mut a = Adam::new(AdamHyper::default(), 0.0);
        match a.step(&mut [&mut p], 0.1) {
            Err(Error::NonFiniteGradient(n)) => assert_eq!(n, "dense3.weight"),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.value[0], 1.0);
        assert_eq!(a.steps(), 0);
    }

    #[test]
    fn schedule_decreasing_losses_keep_rate() {
        let mut s = LrSchedule::new(4.5e-3, 0.2, 2).unwrap();
        for l in [1.0, 0.9, 0.8, 0.7] {
            assert!(!s.step(l));
        }
        assert_eq!(s.lr, 4.5e-3);
    }

    #[test]
    fn schedule_decay_and_reset() {
        let mut s = LrSchedule::new(4.5e-3, 0.2, 2).unwrap();
        s.step(1.0);
        assert!(!s.step(1.1));
        assert!(s.step(1.2));
        assert!((s.lr - 9.0e-4).abs() < 1e-18);
        assert_eq!(s.stall_count, 0);
        assert_eq!(s.best_loss, 1.0);
        // an equal loss is not an improvement
        assert!(!s.step(1.0));
        assert!(s.step(1.0));
        assert!((s.lr - 1.8e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule::new(0.0, 0.2, 2).is_err());
        assert!(LrSchedule::new(1e-3, 1.0, 2).is_err());
        assert!(LrSchedule::new(1e-3, 0.5, 0).is_err());
    }
}
