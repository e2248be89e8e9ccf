//! Independent reference computations shared by the oracle tests and the acceptance run.

use std::collections::BTreeMap;

use brainstate_core::anova::f_scores;
use brainstate_core::hyperalign::{level1_align, level2_refine, procrustes_rotation, SubjectMatrix};
use brainstate_core::linalg::{random_orthogonal, Matrix};
use brainstate_core::rng::{self, SeededRng};
use rand::Rng;

/// Between/within decomposition computed per voxel from grouped values.
pub fn brute_force_f(column: &[f64], labels: &[usize]) -> f64 {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&v, &l) in column.iter().zip(labels) {
        groups.entry(l).or_default().push(v);
    }
    let n = column.len() as f64;
    let k = groups.len() as f64;
    let grand = column.iter().sum::<f64>() / n;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups.values() {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (mean - grand).powi(2);
        ssw += g.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    let sst: f64 = column.iter().map(|v| (v - grand).powi(2)).sum();
    assert!((sst - ssb - ssw).abs() <= 1e-9 * sst.max(1.0));
    if ssw == 0.0 {
        return if ssb > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (ssb / (k - 1.0)) / (ssw / (n - k))
}

fn anova_instance(r: &mut SeededRng) -> (Matrix, Vec<usize>) {
    let classes = r.random_range(2..=4);
    let per: Vec<usize> = (0..classes).map(|_| r.random_range(2..=12)).collect();
    let labels: Vec<usize> = per.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c * 3 + 1, k)).collect();
    let p = r.random_range(1..=25);
    let shifts: Vec<f64> = (0..classes * p).map(|_| r.random_range(-2.0..2.0)).collect();
    let x = Matrix::from_fn(labels.len(), p, |i, j| {
        let c = (labels[i] - 1) / 3;
        shifts[c * p + j] * f64::from(u8::from(j % 3 != 0)) + rng::normal(r) * r.random_range(0.1..3.0)
    });
    (x, labels)
}

/// Largest relative deviation of `f_scores` from the brute force over `n` seeded instances.
pub fn anova_max_deviation(n: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (x, labels) = anova_instance(&mut r);
        let f = f_scores(&x, &labels).unwrap();
        for (j, &got) in f.iter().enumerate() {
            let want = brute_force_f(&x.column(j), &labels);
            let dev = if want.is_infinite() { if got == want { 0.0 } else { f64::INFINITY } } else { (got - want).abs() / want.abs().max(1.0) };
            worst = worst.max(dev);
        }
    }
    worst
}

/// `(max ‖R − Q‖_F, max ‖RᵀR − I‖)` over noise-free instances `X = T·Qᵀ`.
pub fn procrustes_recovery(instances: usize, n: usize, m: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::seeded(seed);
    let (mut dist, mut orth): (f64, f64) = (0.0, 0.0);
    for k in 0..instances {
        let t = Matrix::random_normal(n, m, &mut r);
        let q = random_orthogonal(m, seed.wrapping_mul(1000) + k as u64);
        let x = t.matmul_t(&q).unwrap();
        let sol = procrustes_rotation(&x, &t).unwrap();
        dist = dist.max(sol.rotation.sub(&q).unwrap().frobenius_norm());
        orth = orth.max(sol.rotation.orthogonality_error()).max(q.orthogonality_error());
    }
    (dist, orth)
}

/// Subjects sharing one response, each seen through its own rotation plus noise.
pub fn rotated_subjects(p: usize, n: usize, m: usize, noise: f64, seed: u64) -> Vec<SubjectMatrix> {
    let mut r = rng::seeded(seed);
    let shared = Matrix::random_normal(n, m, &mut r);
    (0..p)
        .map(|j| {
            let q = random_orthogonal(m, seed * 100 + j as u64);
            let mut x = shared.matmul_t(&q).unwrap();
            for v in x.as_mut_slice() {
                *v += noise * rng::normal(&mut r);
            }
            SubjectMatrix::new(format!("s{j}"), &x).unwrap()
        })
        .collect()
}

/// Mean pairwise correlation after Level 1 and after each of `q` Level-2 passes.
pub fn level2_trace(subjects: &[SubjectMatrix], q: usize) -> Vec<f64> {
    let mut trace = Vec::new();
    level2_refine(level1_align(subjects, 0).unwrap(), q, Some(&mut trace)).unwrap();
    trace
}

/// Largest decrease between consecutive entries (0 when non-decreasing).
pub fn max_drop(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

/// Expands an integer confusion matrix (rows true, columns predicted) into label vectors.
pub fn expand_confusion(c: &[[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, row) in c.iter().enumerate() {
        for (p, &k) in row.iter().enumerate() {
            truth.extend(std::iter::repeat_n(t, k));
            pred.extend(std::iter::repeat_n(p, k));
        }
    }
    (truth, pred)
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Two-class test-set confusion of the volume classifier.
pub const BINARY_CONFUSION: [[usize; 2]; 2] = [[250, 53], [59, 248]];

/// Per-class (precision, recall, F1) reported for [`BINARY_CONFUSION`].
pub const BINARY_REPORTED: [[f64; 3]; 2] = [[0.809, 0.825, 0.817], [0.824, 0.808, 0.816]];

/// Fold-averaged three-class confusion (rest, neutral, negative).
pub fn three_class_confusion() -> Vec<Vec<f64>> {
    vec![vec![182.7, 9.7, 7.5], vec![12.6, 164.8, 22.5], vec![9.7, 28.4, 161.9]]
}

/// Fold-averaged per-class (precision, recall, F1) reported alongside it.
pub const THREE_CLASS_REPORTED: [[f64; 3]; 3] = [[0.892, 0.914, 0.902], [0.820, 0.824, 0.819], [0.849, 0.810, 0.825]];
