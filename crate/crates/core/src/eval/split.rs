use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::SeededRng;

/// One leave-one-subject-out fold over sample indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_subject: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct subject, in order of first appearance.
pub fn loocv_folds(subject_of_sample: &[String]) -> Result<Vec<Fold>> {
    let mut subjects: Vec<&String> = Vec::new();
    for s in subject_of_sample {
        if !subjects.contains(&s) {
            subjects.push(s);
        }
    }
    if subjects.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    Ok(subjects
        .into_iter()
        .map(|h| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..subject_of_sample.len()).partition(|&i| &subject_of_sample[i] == h);
            Fold { held_out_subject: h.clone(), train, test }
        })
        .collect())
}

/// Indices that upsample every class to the majority count.
///
/// The result lists all original indices in order, followed by the with-replacement draws
/// for each minority class in class order, so a balanced input comes back unchanged.
pub fn bootstrap_balance(labels: &[usize], n_classes: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Config(format!("label {l} out of range for {n_classes} classes")));
        }
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InsufficientData(format!("class {c} has no samples to resample")));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for members in &by_class {
        for _ in members.len()..target {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(out)
}

/// Disjoint train / validation / test index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split sizes: `test = round(0.2·N)`, `val = round(0.2·(N − test))`, the rest trains.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = math::round(0.2 * n as f64) as usize;
    let val = math::round(0.2 * (n - test) as f64) as usize;
    (n - test - val, val, test)
}

/// Seeded shuffle of `0..n` cut into train, validation and test.
pub fn split_random(n: usize, rng: &mut SeededRng) -> Result<Split> {
    if n < 5 {
        return Err(Error::InsufficientData(format!("a random split needs at least 5 samples, got {n}")));
    }
    let (tr, va, _) = split_sizes(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let test = idx.split_off(tr + va);
    let val = idx.split_off(tr);
    Ok(Split { train: idx, val, test })
}

/// Like [`split_random`] but keeps every group (e.g. a scanner run) on one side.
///
/// Groups are shuffled and assigned whole to test, then validation, until each reaches
/// its target size, so the sizes are only approximately those of [`split_sizes`].
pub fn split_grouped(groups: &[usize], rng: &mut SeededRng) -> Result<Split> {
    let n = groups.len();
    if n < 5 {
        return Err(Error::InsufficientData(format!("a random split needs at least 5 samples, got {n}")));
    }
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 3 {
        return Err(Error::InsufficientData("a grouped split needs at least 3 groups".into()));
    }
    ids.shuffle(rng);
    let (_, va, te) = split_sizes(n);
    let size = |g: usize| groups.iter().filter(|&&x| x == g).count();
    let mut side = vec![0u8; ids.len()];
    let (mut n_test, mut n_val) = (0, 0);
    for (k, &g) in ids.iter().enumerate() {
        if k + 1 == ids.len() {
            break; // keep at least one group for training
        }
        if n_test < te.max(1) {
            side[k] = 2;
            n_test += size(g);
        } else if n_val < va.max(1) {
            side[k] = 1;
            n_val += size(g);
        }
    }
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (i, g) in groups.iter().enumerate() {
        match side[ids.iter().position(|x| x == g).expect("group listed")] {
            2 => split.test.push(i),
            1 => split.val.push(i),
            _ => split.train.push(i),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::string::ToString;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn folds_partition_samples() {
        let s = ids(&["a", "b", "a", "c", "b"]);
        let folds = loocv_folds(&s).unwrap();
        assert_eq!(folds.len(), 3);
        assert_eq!(folds[0].test, vec![0, 2]);
        assert_eq!(folds[0].train, vec![1, 3, 4]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(loocv_folds(&ids(&["a", "a"])).is_err());
    }

    #[test]
    fn eleven_subjects_eleven_folds() {
        let s: Vec<String> = (0..11).flat_map(|j| core::iter::repeat(format!("s{j}")).take(4)).collect();
        assert_eq!(loocv_folds(&s).unwrap().len(), 11);
    }

    #[test]
    fn balance_per_subject_counts() {
        let mut labels = vec![0; 200];
        labels.extend([1; 100]);
        labels.extend([2; 100]);
        let idx = bootstrap_balance(&labels, 3, &mut rng::seeded(1)).unwrap();
        let mut counts = [0; 3];
        for &i in &idx {
            counts[labels[i]] += 1;
        }
        assert_eq!(counts, [200, 200, 200]);
        assert_eq!(&idx[..400], &(0..400).collect::<Vec<_>>()[..]);
        assert_eq!(idx, bootstrap_balance(&labels, 3, &mut rng::seeded(1)).unwrap());
    }

    #[test]
    fn balanced_input_unchanged() {
        let labels = [0, 1, 2, 1, 0, 2];
        assert_eq!(bootstrap_balance(&labels, 3, &mut rng::seeded(2)).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert!(bootstrap_balance(&[0, 0, 1], 3, &mut rng::seeded(2)).is_err());
    }

    #[test]
    fn split_size_cases() {
        assert_eq!(split_sizes(3048), (1950, 488, 610));
        assert_eq!(split_sizes(10), (6, 2, 2));
        let s = split_random(10, &mut rng::seeded(3)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert!(split_random(4, &mut rng::seeded(3)).is_err());
    }

    #[test]
    fn grouped_split_keeps_groups_together() {
        let groups: Vec<usize> = (0..40).map(|i| i / 5).collect();
        let s = split_grouped(&groups, &mut rng::seeded(4)).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            for &i in part.iter() {
                for other in [&s.train, &s.val, &s.test] {
                    if !core::ptr::eq(other, part) {
                        assert!(other.iter().all(|&j| groups[j] != groups[i]));
                    }
                }
            }
        }
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 40);
        assert!(!s.test.is_empty() && !s.val.is_empty() && !s.train.is_empty());
    }
}
