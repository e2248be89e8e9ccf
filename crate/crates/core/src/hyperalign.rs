//! Orthogonal Procrustes hyperalignment.
//!
//! Subjects are `n × m` matrices (timepoints × selected voxels) sharing one stimulus
//! timeline. Alignment looks for an orthogonal `m × m` rotation per subject so that the
//! rotated voxel patterns agree across subjects:
//!
//! 1. **Level 1** walks the subjects in order and aligns each to a running reference,
//!    which is then blended with the newly aligned subject.
//! 2. **Level 2** repeats for `q` passes: each subject is re-aligned to the mean of the
//!    *other* subjects, then the reference becomes the mean of all aligned subjects.
//! 3. **Level 3** freezes the reference and solves one Procrustes problem per subject.
//!    [`fit`] ends with this step for the training subjects, and [`transform`] applies it to
//!    held-out subjects, so test data never touches the reference.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::anova::FeatureSelection;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{svd, Matrix};
use crate::math;

/// Relative singular-value floor below which the Procrustes optimum is reported as
/// non-unique.
const UNIQUE_TOL: f64 = 1e-10;

/// One subject's `n × m` data, Frobenius-normalised on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMatrix {
    pub subject_id: String,
    data: Matrix,
}

impl SubjectMatrix {
    pub fn new(subject_id: impl Into<String>, raw: &Matrix) -> Result<Self> {
        Ok(SubjectMatrix { subject_id: subject_id.into(), data: raw.frobenius_normalize()? })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }
}

#[derive(Debug, Clone)]
pub struct Procrustes {
    /// Orthogonal `m × m` minimiser of `‖X·R − T‖_F`.
    pub rotation: Matrix,
    /// False when `Tᵀ X` is (numerically) singular and other optima exist.
    pub unique: bool,
}

/// Solves `min_R ‖X·R − T‖_F` subject to `RᵀR = I`.
///
/// With `TᵀX = U Σ Vᵀ` the minimiser is `R = V Uᵀ`.
pub fn procrustes_rotation(x: &Matrix, t: &Matrix) -> Result<Procrustes> {
    if x.shape() != t.shape() {
        return Err(shape_err!("Procrustes on {:?} and {:?}", x.shape(), t.shape()));
    }
    let cross = t.t_matmul(x)?;
    let d = svd(&cross)?;
    let smax = d.s.first().copied().unwrap_or(0.0);
    let smin = d.s.last().copied().unwrap_or(0.0);
    let unique = smax > 0.0 && smin > UNIQUE_TOL * smax;
    Ok(Procrustes { rotation: d.v.matmul_t(&d.u)?, unique })
}

/// Output of an alignment level.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Rotation per subject, mapping the subject's original data into the common space.
    pub rotations: Vec<Matrix>,
    /// `subject · rotation` per subject.
    pub aligned: Vec<Matrix>,
    /// Mean of the aligned subjects (not re-normalised).
    pub reference: Matrix,
    /// Subjects whose Procrustes optimum was not unique in the last solve.
    pub non_unique: Vec<usize>,
}

fn check_uniform(subjects: &[SubjectMatrix]) -> Result<(usize, usize)> {
    if subjects.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "alignment needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    let shape = subjects[0].shape();
    if let Some(s) = subjects.iter().find(|s| s.shape() != shape) {
        return Err(shape_err!(
            "subject {} has shape {:?}, expected {:?}",
            s.subject_id,
            s.shape(),
            shape
        ));
    }
    Ok(shape)
}

/// Level-1 alignment against a running reference.
///
/// The reference starts as subject `ref_index`. Every other subject, in order, is
/// rotated onto the current reference and then blended in with weight `1/(i+1)`, so the
/// final reference is the plain mean of all aligned subjects.
pub fn level1_align(subjects: &[SubjectMatrix], ref_index: usize) -> Result<Alignment> {
    let (n, m) = check_uniform(subjects)?;
    if ref_index >= subjects.len() {
        return Err(Error::Config(format!("reference index {ref_index} out of range")));
    }
    let p = subjects.len();
    let mut rotations = alloc::vec![Matrix::zeros(0, 0); p];
    let mut aligned = alloc::vec![Matrix::zeros(0, 0); p];
    let mut non_unique = Vec::new();
    let mut reference = subjects[ref_index].data().clone();
    rotations[ref_index] = Matrix::identity(m);
    aligned[ref_index] = reference.clone();

    let mut blended = 1usize;
    for (j, s) in subjects.iter().enumerate() {
        if j == ref_index {
            continue;
        }
        let sol = procrustes_rotation(s.data(), &reference)?;
        if !sol.unique {
            non_unique.push(j);
        }
        let a = s.data().matmul(&sol.rotation)?;
        let w = 1.0 / (blended as f64 + 1.0);
        reference = reference.scale(1.0 - w);
        reference.add_scaled_assign(w, &a)?;
        blended += 1;
        rotations[j] = sol.rotation;
        aligned[j] = a;
    }
    debug_assert_eq!(reference.shape(), (n, m));
    Ok(Alignment { rotations, aligned, reference, non_unique })
}

fn mean_of(mats: &[Matrix]) -> Result<Matrix> {
    let mut acc = Matrix::zeros(mats[0].rows(), mats[0].cols());
    for a in mats {
        acc.add_scaled_assign(1.0, a)?;
    }
    Ok(acc.scale(1.0 / mats.len() as f64))
}

/// Level-2 refinement: `q` passes of leave-one-out re-alignment.
///
/// Within a pass every subject is aligned to `(p·T − A_j)/(p − 1)` using the reference `T`
/// from the previous pass; `T` is replaced by the mean of the aligned subjects at the end
/// of the pass. Rotations are composed with the incoming ones, so the returned rotations
/// still map original subject data into the common space.
///
/// `trace`, when given, receives the mean pairwise correlation of the aligned subjects
/// before the first pass and after every pass.
pub fn level2_refine(input: Alignment, q: usize, mut trace: Option<&mut Vec<f64>>) -> Result<Alignment> {
    let p = input.aligned.len();
    if p < 2 {
        return Err(Error::InsufficientData("level-2 refinement needs at least 2 subjects".into()));
    }
    if q == 0 {
        return Err(Error::Config("level-2 refinement needs q >= 1".into()));
    }
    let Alignment { mut rotations, mut aligned, mut reference, .. } = input;
    let mut non_unique = Vec::new();
    if let Some(t) = trace.as_deref_mut() {
        t.push(mean_pairwise_correlation(&aligned));
    }
    for _ in 0..q {
        non_unique.clear();
        let total = reference.scale(p as f64);
        let mut next = Vec::with_capacity(p);
        for (j, a) in aligned.iter().enumerate() {
            let mut others = total.clone();
            others.add_scaled_assign(-1.0, a)?;
            let others = others.scale(1.0 / (p as f64 - 1.0));
            let sol = procrustes_rotation(a, &others)?;
            if !sol.unique {
                non_unique.push(j);
            }
            rotations[j] = rotations[j].matmul(&sol.rotation)?;
            next.push(a.matmul(&sol.rotation)?);
        }
        aligned = next;
        reference = mean_of(&aligned)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(mean_pairwise_correlation(&aligned));
        }
    }
    Ok(Alignment { rotations, aligned, reference, non_unique })
}

/// Level-3: one Procrustes solve per subject against a frozen reference.
pub fn level3_project(subjects: &[SubjectMatrix], reference: &Matrix) -> Result<Alignment> {
    let mut rotations = Vec::with_capacity(subjects.len());
    let mut aligned = Vec::with_capacity(subjects.len());
    let mut non_unique = Vec::new();
    for (j, s) in subjects.iter().enumerate() {
        let sol = procrustes_rotation(s.data(), reference)?;
        if !sol.unique {
            non_unique.push(j);
        }
        aligned.push(s.data().matmul(&sol.rotation)?);
        rotations.push(sol.rotation);
    }
    Ok(Alignment { rotations, aligned, reference: reference.clone(), non_unique })
}

/// Pearson correlation of two equally shaped matrices, flattened.
pub fn matrix_correlation(a: &Matrix, b: &Matrix) -> f64 {
    let x = a.as_slice();
    let y = b.as_slice();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&u, &v) in x.iter().zip(y) {
        let du = u - mx;
        let dv = v - my;
        sxy += du * dv;
        sxx += du * du;
        syy += dv * dv;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (math::sqrt(sxx) * math::sqrt(syy))
}

/// Mean Pearson correlation over all subject pairs.
pub fn mean_pairwise_correlation(mats: &[Matrix]) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..mats.len() {
        for j in i + 1..mats.len() {
            sum += matrix_correlation(&mats[i], &mats[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        sum / pairs as f64
    }
}

/// How the Level-1 reference absorbs each newly aligned subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendSchedule {
    /// `w = 1/(i+1)` for the `i`-th subject after the reference.
    RunningMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperalignConfig {
    pub ref_index: usize,
    /// Level-2 passes; 0 skips Level 2.
    pub q: usize,
    pub blend: BlendSchedule,
}

impl Default for HyperalignConfig {
    fn default() -> Self {
        HyperalignConfig { ref_index: 0, q: 3, blend: BlendSchedule::RunningMean }
    }
}

/// A fitted common space.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonSpace {
    /// Frobenius-normalised reference `T`, `n × m`.
    pub reference: Matrix,
    /// Training subjects' rotations, in fit order.
    pub rotations: Vec<Matrix>,
    pub subject_ids: Vec<String>,
    pub selection: FeatureSelection,
    /// Fitting hyperparameters; absent when loaded from a checkpoint.
    pub config: Option<HyperalignConfig>,
}

impl CommonSpace {
    pub fn shape(&self) -> (usize, usize) {
        self.reference.shape()
    }

    /// Fitted rotation of a training subject.
    pub fn rotation_of(&self, subject_id: &str) -> Option<&Matrix> {
        self.subject_ids.iter().position(|s| s == subject_id).map(|i| &self.rotations[i])
    }
}

/// Fits a common space on training subjects: Level 1, `q` Level-2 passes, then a
/// Level-3 projection of every training subject onto the final reference.
pub fn fit(
    subjects: &[SubjectMatrix],
    selection: FeatureSelection,
    config: HyperalignConfig,
) -> Result<CommonSpace> {
    let (_, m) = check_uniform(subjects)?;
    if selection.indices.len() != m {
        return Err(shape_err!("selection has {} voxels, subjects have {m}", selection.indices.len()));
    }
    let mut al = level1_align(subjects, config.ref_index)?;
    if config.q > 0 {
        al = level2_refine(al, config.q, None)?;
    }
    let reference = al.reference.frobenius_normalize()?;
    let projected = level3_project(subjects, &reference)?;
    Ok(CommonSpace {
        reference,
        rotations: projected.rotations,
        subject_ids: subjects.iter().map(|s| s.subject_id.clone()).collect(),
        selection,
        config: Some(config),
    })
}

/// Rotates a subject into a fitted space. The space is never modified.
pub fn transform(space: &CommonSpace, subject: &SubjectMatrix) -> Result<Matrix> {
    if subject.shape() != space.shape() {
        return Err(shape_err!(
            "subject {} has shape {:?}, space expects {:?}",
            subject.subject_id,
            subject.shape(),
            space.shape()
        ));
    }
    let sol = procrustes_rotation(subject.data(), &space.reference)?;
    subject.data().matmul(&sol.rotation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anova::select_top_m;
    use crate::linalg::random_orthogonal;
    use crate::rng;
    use alloc::vec;

    fn subj(id: &str, m: &Matrix) -> SubjectMatrix {
        SubjectMatrix::new(id, m).unwrap()
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn dummy_selection(m: usize) -> FeatureSelection {
        select_top_m(&vec![1.0; m], m).unwrap()
    }

    #[test]
    fn identity_when_equal() {
        let mut r = rng::seeded(1);
        let x = Matrix::random_normal(6, 4, &mut r).frobenius_normalize().unwrap();
        let sol = procrustes_rotation(&x, &x).unwrap();
        assert!(max_abs_diff(&sol.rotation, &Matrix::identity(4)) < 1e-12);
        assert!(sol.unique);
    }

    #[test]
    fn hand_two_by_two() {
        let s = 1.0 / 2f64.sqrt();
        let x = Matrix::from_rows(&[&[s, 0.0], &[0.0, s]]).unwrap();
        let t = Matrix::from_rows(&[&[0.0, s], &[s, 0.0]]).unwrap();
        let sol = procrustes_rotation(&x, &t).unwrap();
        let expected = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert!(max_abs_diff(&sol.rotation, &expected) < 1e-12);
    }

    #[test]
    fn recovers_rotation() {
        let mut r = rng::seeded(2);
        let t = Matrix::random_normal(12, 5, &mut r).frobenius_normalize().unwrap();
        let q = random_orthogonal(5, 3);
        let x = t.matmul_t(&q).unwrap();
        let sol = procrustes_rotation(&x, &t).unwrap();
        assert!(sol.rotation.sub(&q).unwrap().frobenius_norm() <= 1e-8);
    }

    #[test]
    fn sampled_optimality() {
        let mut r = rng::seeded(3);
        for inst in 0..5 {
            let x = Matrix::random_normal(5, 4, &mut r).frobenius_normalize().unwrap();
            let t = Matrix::random_normal(5, 4, &mut r).frobenius_normalize().unwrap();
            let best = x.matmul(&procrustes_rotation(&x, &t).unwrap().rotation).unwrap().sub(&t).unwrap().frobenius_norm();
            for k in 0..1000 {
                let q = random_orthogonal(4, 10_000 * inst + k);
                let other = x.matmul(&q).unwrap().sub(&t).unwrap().frobenius_norm();
                assert!(best <= other + 1e-12);
            }
        }
    }

    #[test]
    fn rank_deficient_flagged() {
        let x = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        let sol = procrustes_rotation(&x, &x).unwrap();
        assert!(!sol.unique);
        assert!(sol.rotation.orthogonality_error() < 1e-12);
        let residual = x.matmul(&sol.rotation).unwrap().sub(&x).unwrap().frobenius_norm();
        assert!(residual < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        assert!(procrustes_rotation(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
        let a = subj("a", &Matrix::identity(3));
        let b = subj("b", &Matrix::identity(2));
        assert!(matches!(level1_align(&[a.clone(), b], 0), Err(Error::Shape(_))));
        assert!(level1_align(&[a], 0).is_err());
    }

    #[test]
    fn level1_identical_subjects() {
        let mut r = rng::seeded(4);
        let base = Matrix::random_normal(10, 4, &mut r);
        let subjects: Vec<_> = (0..3).map(|i| subj(&format!("s{i}"), &base)).collect();
        let al = level1_align(&subjects, 0).unwrap();
        for rot in &al.rotations {
            assert!(max_abs_diff(rot, &Matrix::identity(4)) < 1e-12);
        }
        assert!(max_abs_diff(&al.reference, subjects[0].data()) < 1e-12);
    }

    #[test]
    fn level1_recovers_second_subject() {
        let mut r = rng::seeded(5);
        let base = Matrix::random_normal(10, 4, &mut r);
        let q = random_orthogonal(4, 6);
        let subjects = [subj("a", &base), subj("b", &base.matmul_t(&q).unwrap())];
        let al = level1_align(&subjects, 0).unwrap();
        assert!(al.rotations[1].sub(&q).unwrap().frobenius_norm() <= 1e-8);
    }

    #[test]
    fn level1_is_order_dependent() {
        let mut r = rng::seeded(6);
        let subjects: Vec<_> = (0..3).map(|i| subj(&format!("s{i}"), &Matrix::random_normal(8, 4, &mut r))).collect();
        let forward = level1_align(&subjects, 0).unwrap().reference;
        let permuted = [subjects[2].clone(), subjects[1].clone(), subjects[0].clone()];
        let backward = level1_align(&permuted, 0).unwrap().reference;
        assert!(forward.sub(&backward).unwrap().frobenius_norm() > 1e-3);
    }

    #[test]
    fn level2_fixed_point() {
        let mut r = rng::seeded(7);
        let base = Matrix::random_normal(9, 3, &mut r);
        let subjects: Vec<_> = (0..3).map(|i| subj(&format!("s{i}"), &base)).collect();
        let al = level1_align(&subjects, 0).unwrap();
        let refined = level2_refine(al.clone(), 1, None).unwrap();
        for (a, b) in al.aligned.iter().zip(&refined.aligned) {
            assert!(max_abs_diff(a, b) < 1e-13);
        }
    }

    #[test]
    fn level2_errors() {
        let mut r = rng::seeded(8);
        let subjects: Vec<_> = (0..2).map(|i| subj(&format!("s{i}"), &Matrix::random_normal(5, 2, &mut r))).collect();
        let al = level1_align(&subjects, 0).unwrap();
        assert!(level2_refine(al.clone(), 0, None).is_err());
        let single = Alignment { rotations: vec![al.rotations[0].clone()], aligned: vec![al.aligned[0].clone()], reference: al.reference.clone(), non_unique: vec![] };
        assert!(matches!(level2_refine(single, 1, None), Err(Error::InsufficientData(_))));
    }

    fn noisy_group(p: usize, n: usize, m: usize, noise: f64, seed: u64) -> (Matrix, Vec<SubjectMatrix>) {
        let mut r = rng::seeded(seed);
        let latent = Matrix::random_normal(n, m, &mut r);
        let subjects = (0..p)
            .map(|j| {
                let q = random_orthogonal(m, seed * 100 + j as u64);
                let mut x = latent.matmul(&q).unwrap();
                let e = Matrix::random_normal(n, m, &mut r).scale(noise);
                x.add_scaled_assign(1.0, &e).unwrap();
                subj(&format!("s{j}"), &x)
            })
            .collect();
        (latent, subjects)
    }

    #[test]
    fn level2_improves_correlation() {
        let (_, subjects) = noisy_group(4, 30, 8, 0.5, 9);
        let l1 = level1_align(&subjects, 0).unwrap();
        let mut trace = Vec::new();
        let l2 = level2_refine(l1, 3, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), 4);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace {trace:?}");
        }
        for (rot, s) in l2.rotations.iter().zip(&subjects) {
            assert!(rot.orthogonality_error() <= 1e-8);
            let a = s.data().matmul(rot).unwrap();
            assert!((a.frobenius_norm() - s.data().frobenius_norm()).abs() <= 1e-10);
        }
    }

    #[test]
    fn fit_transform_consistency() {
        let (_, subjects) = noisy_group(4, 20, 6, 0.3, 10);
        let space = fit(&subjects, dummy_selection(6), HyperalignConfig::default()).unwrap();
        for s in &subjects {
            let rot = space.rotation_of(&s.subject_id).unwrap();
            let expected = s.data().matmul(rot).unwrap();
            let got = transform(&space, s).unwrap();
            assert_eq!(got, expected);
            assert_eq!(transform(&space, s).unwrap(), got);
        }
        let wrong = subj("x", &Matrix::identity(5));
        assert!(transform(&space, &wrong).is_err());
    }

    #[test]
    fn noiseless_held_out_matches_consensus() {
        let (latent, subjects) = noisy_group(5, 25, 6, 0.0, 11);
        let space = fit(&subjects[..4], dummy_selection(6), HyperalignConfig::default()).unwrap();
        let held = transform(&space, &subjects[4]).unwrap();
        let consensus = transform(&space, &subjects[0]).unwrap();
        assert!(max_abs_diff(&held, &consensus) <= 1e-6);
        assert!(max_abs_diff(&held, &space.reference) <= 1e-6);
        let _ = latent;
        let corr = mean_pairwise_correlation(&subjects.iter().map(|s| transform(&space, s).unwrap()).collect::<Vec<_>>());
        assert!(corr >= 0.999);
    }
}
