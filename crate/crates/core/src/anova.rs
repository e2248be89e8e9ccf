//! One-way ANOVA voxel scoring and top-m selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;

/// Default number of selected voxels.
pub const DEFAULT_M: usize = 300;

/// Selected voxel columns of the masked voxel space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub m: usize,
    /// Ascending indices into the masked voxel space.
    pub indices: Vec<usize>,
    /// F value for every masked voxel; `+inf` marks zero within-class variance.
    #[serde(with = "crate::inf_json")]
    pub f_scores: Vec<f64>,
}

/// Per-voxel one-way ANOVA F statistic.
///
/// `F = [Σ_c n_c (x̄_c − x̄)² / (C − 1)] / [Σ_c Σ_i (x_ci − x̄_c)² / (N − C)]`.
/// Zero within-class variance gives `+inf` when the between-class term is positive and
/// `0` when both vanish. Labels may be any `usize`; classes are the distinct values seen.
pub fn f_scores(x: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if labels.len() != n {
        return Err(shape_err!("{} labels for {} samples", labels.len(), n));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InsufficientData("ANOVA needs at least 2 classes".into()));
    }
    let class_of: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let c = classes.len();
    let mut counts = vec![0usize; c];
    for &k in &class_of {
        counts[k] += 1;
    }
    if let Some(k) = counts.iter().position(|&cnt| cnt < 2) {
        return Err(Error::InsufficientData(format!(
            "class {} has {} sample(s); ANOVA needs at least 2 per class",
            classes[k], counts[k]
        )));
    }

    // class sums per voxel
    let mut sums = vec![0.0; c * p];
    for (r, &k) in class_of.iter().enumerate() {
        let row = x.row(r);
        let acc = &mut sums[k * p..(k + 1) * p];
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let mut means = sums;
    for k in 0..c {
        let inv = 1.0 / counts[k] as f64;
        for v in &mut means[k * p..(k + 1) * p] {
            *v *= inv;
        }
    }
    let mut grand = vec![0.0; p];
    for k in 0..c {
        let w = counts[k] as f64 / n as f64;
        for (g, &m) in grand.iter_mut().zip(&means[k * p..(k + 1) * p]) {
            *g += w * m;
        }
    }
    // within-class sum of squares, centred on class means
    let mut ssw = vec![0.0; p];
    for (r, &k) in class_of.iter().enumerate() {
        let row = x.row(r);
        let mu = &means[k * p..(k + 1) * p];
        for ((s, &v), &m) in ssw.iter_mut().zip(row).zip(mu) {
            let d = v - m;
            *s += d * d;
        }
    }
    let df_between = (c - 1) as f64;
    let df_within = (n - c) as f64;
    let scores = (0..p)
        .map(|j| {
            let ssb: f64 = (0..c)
                .map(|k| {
                    let d = means[k * p + j] - grand[j];
                    counts[k] as f64 * d * d
                })
                .sum();
            let within = ssw[j] / df_within;
            let between = ssb / df_between;
            if within > 0.0 {
                between / within
            } else if between > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores)
}

/// The `m` highest-scoring voxels, ties broken by lower index, returned ascending.
pub fn select_top_m(f: &[f64], m: usize) -> Result<FeatureSelection> {
    if m > f.len() {
        return Err(Error::Config(format!("cannot select {m} of {} voxels", f.len())));
    }
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    let mut indices = order[..m].to_vec();
    indices.sort_unstable();
    Ok(FeatureSelection { m, indices, f_scores: f.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn hand_case() {
        let f = f_scores(&column(&[1.0, 2.0, 3.0, 4.0]), &[0, 0, 1, 1]).unwrap();
        assert_eq!(f[0], 8.0);
    }

    #[test]
    fn equal_means_give_zero() {
        let f = f_scores(&column(&[1.0, 3.0, 3.0, 1.0]), &[0, 0, 1, 1]).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn zero_within_variance() {
        let f = f_scores(&column(&[5.0, 5.0, 9.0, 9.0]), &[0, 0, 1, 1]).unwrap();
        assert_eq!(f[0], f64::INFINITY);
        let f = f_scores(&column(&[5.0, 5.0, 5.0, 5.0]), &[0, 0, 1, 1]).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn insufficient_classes() {
        assert!(matches!(
            f_scores(&column(&[1.0, 2.0, 3.0]), &[0, 0, 1]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(f_scores(&column(&[1.0, 2.0]), &[0, 0]), Err(Error::InsufficientData(_))));
        assert!(f_scores(&column(&[1.0, 2.0]), &[0]).is_err());
    }

    #[test]
    fn selection_cases() {
        assert_eq!(select_top_m(&[0.1, 5.0, 5.0, 2.0], 2).unwrap().indices, vec![1, 2]);
        assert_eq!(select_top_m(&[3.0, 1.0, 2.0], 1).unwrap().indices, vec![0]);
        assert_eq!(select_top_m(&[3.0, 1.0, 2.0], 3).unwrap().indices, vec![0, 1, 2]);
        assert_eq!(
            select_top_m(&[1.0, f64::INFINITY, 7.0, f64::INFINITY], 2).unwrap().indices,
            vec![1, 3]
        );
        assert!(select_top_m(&[1.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn affine_invariance(
            vals in proptest::collection::vec(-10.0f64..10.0, 12),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -100.0f64..100.0,
        ) {
            let labels = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
            let f0 = f_scores(&column(&vals), &labels).unwrap()[0];
            let moved: Vec<f64> = vals.iter().map(|v| a * v + b).collect();
            let f1 = f_scores(&column(&moved), &labels).unwrap()[0];
            prop_assert!((f0 - f1).abs() <= 1e-8 * f0.abs().max(1.0), "{} vs {}", f0, f1);
        }

        #[test]
        fn selected_dominate_unselected(f in proptest::collection::vec(0.0f64..10.0, 1..40), frac in 0.0f64..1.0) {
            let m = ((f.len() as f64) * frac) as usize;
            let sel = select_top_m(&f, m).unwrap();
            prop_assert_eq!(sel.indices.len(), m);
            prop_assert!(sel.indices.windows(2).all(|w| w[0] < w[1]));
            let min_sel = sel.indices.iter().map(|&i| f[i]).fold(f64::INFINITY, f64::min);
            for i in 0..f.len() {
                if !sel.indices.contains(&i) {
                    prop_assert!(f[i] <= min_sel);
                }
            }
        }
    }
}
