//! Synthetic fMRI generator with known ground truth.
//!
//! The generator follows the generative assumption behind hyperalignment: all subjects
//! share one latent response space, and each subject sees it through its own orthogonal
//! mixing of a set of informative voxels.
//!
//! For run `k` and timepoint `t` the latent response is
//! `z_t = amplitude * μ[label_t] + shared_amplitude * ξ_{k,t}`, where `μ` holds one
//! pattern per condition and `ξ` is a stimulus-locked component common to all subjects.
//! Subject `j` observes `z_t · Q_j` on the informative voxels, plus i.i.d. Gaussian noise
//! on every voxel inside the brain mask.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal_with, Matrix};
use crate::rng::{self, SeededRng};
use crate::volume::{BrainMask, Dims, Label, Volume, VolumeSeries};

/// Volumes per condition block (20 s at TR = 2 s).
pub const DEFAULT_BLOCK_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub runs_per_subject: usize,
    /// Per-subject run counts; when non-empty it overrides `runs_per_subject`.
    #[serde(default)]
    pub run_counts: Vec<usize>,
    pub timepoints_per_run: usize,
    pub n_voxels_latent: usize,
    pub dims: Dims,
    pub class_signal_amplitude: f64,
    /// Amplitude of the stimulus-locked, class-independent latent component.
    #[serde(default = "default_shared")]
    pub shared_signal_amplitude: f64,
    pub noise_sigma: f64,
    #[serde(default = "default_block")]
    pub block_len: usize,
    pub seed: u64,
}

fn default_shared() -> f64 {
    0.5
}

fn default_block() -> usize {
    DEFAULT_BLOCK_LEN
}

impl SynthSpec {
    /// Route-A geometry: 11 subjects × 2 runs × 200 timepoints on a 16×16×11 grid.
    pub fn paper_a(seed: u64) -> Self {
        SynthSpec {
            n_subjects: 11,
            runs_per_subject: 2,
            run_counts: Vec::new(),
            timepoints_per_run: 200,
            n_voxels_latent: 64,
            dims: Dims::new(16, 16, 11),
            class_signal_amplitude: 1.0,
            shared_signal_amplitude: 0.5,
            noise_sigma: 0.1,
            block_len: DEFAULT_BLOCK_LEN,
            seed,
        }
    }

    /// Route-B geometry: 22 subjects with 1 to 3 runs each, 39 runs in total.
    pub fn paper_b(seed: u64) -> Self {
        let mut run_counts = vec![2; 11];
        run_counts.extend([1; 8]);
        run_counts.extend([3; 3]);
        SynthSpec {
            n_subjects: 22,
            runs_per_subject: 2,
            run_counts,
            ..SynthSpec::paper_a(seed)
        }
    }

    pub fn runs_for(&self, subject: usize) -> usize {
        if self.run_counts.is_empty() {
            self.runs_per_subject
        } else {
            self.run_counts[subject]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts_ok = self.n_subjects >= 1
            && self.timepoints_per_run >= 1
            && self.n_voxels_latent >= 1
            && self.block_len >= 1
            && self.dims.voxel_count() >= 1;
        if !counts_ok {
            return Err(Error::Config("synthetic counts must all be >= 1".into()));
        }
        if self.run_counts.is_empty() {
            if self.runs_per_subject == 0 {
                return Err(Error::Config("runs_per_subject must be >= 1".into()));
            }
        } else if self.run_counts.len() != self.n_subjects || self.run_counts.contains(&0) {
            return Err(Error::Config(format!(
                "run_counts needs {} entries, all >= 1",
                self.n_subjects
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.class_signal_amplitude.is_finite() {
            return Err(Error::Config("noise_sigma must be >= 0 and amplitude finite".into()));
        }
        if !(self.shared_signal_amplitude >= 0.0) {
            return Err(Error::Config("shared_signal_amplitude must be >= 0".into()));
        }
        let kept = BrainMask::ellipsoid(self.dims).kept_count();
        if self.n_voxels_latent > kept {
            return Err(Error::Config(format!(
                "{} latent voxels do not fit in a {kept}-voxel brain mask",
                self.n_voxels_latent
            )));
        }
        Ok(())
    }
}

/// Everything the generator drew, for oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// One latent pattern per condition (rest, neutral, negative), already scaled by the
    /// class amplitude.
    pub class_patterns: Vec<Vec<f64>>,
    /// Per-subject orthogonal mixing `Q_j` (latent × latent).
    pub mixing: Vec<Matrix>,
    /// Flat voxel indices (x-fastest) carrying the latent signal, in latent-axis order.
    pub informative_voxels: Vec<usize>,
    /// Stimulus-locked component per run index, timepoints × latent.
    pub shared_response: Vec<Matrix>,
    /// Label sequence per run index.
    pub run_labels: Vec<Vec<Label>>,
}

impl GroundTruth {
    /// Noise-free latent responses of run `run`, timepoints × latent.
    pub fn latent(&self, run: usize) -> Matrix {
        let shared = &self.shared_response[run];
        let mut z = shared.clone();
        for (t, label) in self.run_labels[run].iter().enumerate() {
            for (i, p) in self.class_patterns[label.code() as usize].iter().enumerate() {
                z[(t, i)] += p;
            }
        }
        z
    }

    /// Accuracy of the nearest-class-mean rule evaluated in the true latent space.
    ///
    /// Each volume's informative voxels are unmixed with the subject's `Q_jᵀ` and assigned
    /// to the closest class pattern among `classes`. Only timepoints whose label is in
    /// `classes` are scored.
    pub fn nearest_mean_accuracy(
        &self,
        series: &[VolumeSeries],
        subject_of: impl Fn(&VolumeSeries) -> usize,
        classes: &[Label],
    ) -> f64 {
        let v = self.informative_voxels.len();
        let mut correct = 0usize;
        let mut total = 0usize;
        for s in series {
            let q = &self.mixing[subject_of(s)];
            for (vol, &label) in s.volumes().iter().zip(s.labels()) {
                if !classes.contains(&label) {
                    continue;
                }
                let x: Vec<f64> = self.informative_voxels.iter().map(|&i| vol.voxels()[i] as f64).collect();
                // z = x Qᵀ
                let z: Vec<f64> = (0..v).map(|a| (0..v).map(|b| x[b] * q[(a, b)]).sum()).collect();
                let best = classes
                    .iter()
                    .map(|&c| {
                        let p = &self.class_patterns[c.code() as usize];
                        let d: f64 = z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                        (c, d)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(c, _)| c);
                total += 1;
                correct += usize::from(best == Some(label));
            }
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub series: Vec<VolumeSeries>,
    pub mask: BrainMask,
    pub truth: GroundTruth,
}

pub fn subject_id(j: usize) -> alloc::string::String {
    format!("sub-{j:02}")
}

pub fn run_id(k: usize) -> alloc::string::String {
    format!("run-{k}")
}

/// Block design: rest, emotional, rest, emotional, ... with the two emotional
/// conditions alternating. Odd runs start with the negative block.
pub fn block_labels(timepoints: usize, block_len: usize, run: usize) -> Vec<Label> {
    let (first, second) = if run % 2 == 0 {
        (Label::Neutral, Label::Negative)
    } else {
        (Label::Negative, Label::Neutral)
    };
    let cycle = [Label::Rest, first, Label::Rest, second];
    (0..timepoints).map(|t| cycle[(t / block_len) % 4]).collect()
}

/// Informative voxels: the `n` brain voxels closest to a seeded centre.
fn pick_informative(mask: &BrainMask, n: usize, rng: &mut SeededRng) -> Vec<usize> {
    use rand::Rng;
    let kept = mask.kept_indices();
    let dims = mask.dims();
    let centre = dims.coords(kept[rng.random_range(0..kept.len())]);
    let mut by_dist: Vec<(usize, usize)> = kept
        .iter()
        .map(|&i| {
            let (x, y, z) = dims.coords(i);
            let d = x.abs_diff(centre.0).pow(2) + y.abs_diff(centre.1).pow(2) + z.abs_diff(centre.2).pow(2);
            (d, i)
        })
        .collect();
    by_dist.sort_unstable();
    by_dist.truncate(n);
    let mut chosen: Vec<usize> = by_dist.into_iter().map(|(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let v = spec.n_voxels_latent;
    let mask = BrainMask::ellipsoid(spec.dims);
    let mut design_rng = rng::substream(spec.seed, 0);
    let informative = pick_informative(&mask, v, &mut design_rng);

    let class_patterns: Vec<Vec<f64>> = Label::ALL
        .iter()
        .map(|_| {
            let mut p = vec![0.0; v];
            rng::fill_normal(&mut design_rng, &mut p, spec.class_signal_amplitude);
            p
        })
        .collect();

    let max_runs = (0..spec.n_subjects).map(|j| spec.runs_for(j)).max().unwrap_or(0);
    let run_labels: Vec<Vec<Label>> =
        (0..max_runs).map(|k| block_labels(spec.timepoints_per_run, spec.block_len, k)).collect();
    let shared_response: Vec<Matrix> = (0..max_runs)
        .map(|_| {
            let mut m = Matrix::zeros(spec.timepoints_per_run, v);
            rng::fill_normal(&mut design_rng, m.as_mut_slice(), spec.shared_signal_amplitude);
            m
        })
        .collect();

    let mut truth = GroundTruth {
        class_patterns,
        mixing: Vec::with_capacity(spec.n_subjects),
        informative_voxels: informative,
        shared_response,
        run_labels,
    };
    let latents: Vec<Matrix> = (0..max_runs).map(|k| truth.latent(k)).collect();

    let kept = mask.kept_indices();
    let mut series = Vec::new();
    for j in 0..spec.n_subjects {
        let mut subj_rng = rng::substream(spec.seed, 1 + j as u64);
        let q = random_orthogonal_with(v, &mut subj_rng);
        for k in 0..spec.runs_for(j) {
            let mixed = latents[k].matmul(&q)?;
            let mut vols = Vec::with_capacity(spec.timepoints_per_run);
            for t in 0..spec.timepoints_per_run {
                let mut vox = vec![0.0f32; spec.dims.voxel_count()];
                if spec.noise_sigma > 0.0 {
                    for &i in &kept {
                        vox[i] = (spec.noise_sigma * rng::normal(&mut subj_rng)) as f32;
                    }
                }
                for (a, &i) in truth.informative_voxels.iter().enumerate() {
                    vox[i] += mixed[(t, a)] as f32;
                }
                vols.push(Volume::new(spec.dims, vox)?);
            }
            series.push(VolumeSeries::new(
                subject_id(j),
                run_id(k),
                spec.dims,
                vols,
                truth.run_labels[k].clone(),
            )?);
        }
        truth.mixing.push(q);
    }
    Ok(SynthDataset { series, mask, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthSpec {
        SynthSpec {
            n_subjects: 2,
            runs_per_subject: 1,
            run_counts: Vec::new(),
            timepoints_per_run: 40,
            n_voxels_latent: 8,
            dims: Dims::new(6, 6, 4),
            class_signal_amplitude: 1.0,
            shared_signal_amplitude: 0.5,
            noise_sigma: noise,
            block_len: 5,
            seed: 9,
        }
    }

    fn subject_index(s: &VolumeSeries) -> usize {
        s.subject_id[4..].parse().unwrap()
    }

    #[test]
    fn block_design_balance() {
        let labels = block_labels(200, 10, 0);
        let count = |l| labels.iter().filter(|&&x| x == l).count();
        assert_eq!((count(Label::Rest), count(Label::Neutral), count(Label::Negative)), (100, 50, 50));
        assert_eq!(&labels[..11], &[Label::Rest; 10].iter().copied().chain([Label::Neutral]).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn noiseless_data_is_exact_rotation_of_latent() {
        let spec = small(0.0);
        let d = synth_generate(&spec).unwrap();
        let z = d.truth.latent(0);
        for s in &d.series {
            let j = subject_index(s);
            let expected = z.matmul(&d.truth.mixing[j]).unwrap();
            let got = Matrix::from_fn(s.len(), 8, |t, a| {
                s.volumes()[t].voxels()[d.truth.informative_voxels[a]] as f64
            });
            // volumes are stored as f32
            let resid = got.sub(&expected).unwrap().frobenius_norm();
            assert!(resid <= 1e-5 * expected.frobenius_norm(), "residual {resid}");
            // non-informative voxels stay exactly zero
            let others: f32 = s.volumes()[0]
                .voxels()
                .iter()
                .enumerate()
                .filter(|(i, _)| !d.truth.informative_voxels.contains(i))
                .map(|(_, v)| v.abs())
                .sum();
            assert_eq!(others, 0.0);
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&small(0.3)).unwrap();
        let b = synth_generate(&small(0.3)).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.truth, b.truth);
        let mut other = small(0.3);
        other.seed = 10;
        assert_ne!(synth_generate(&other).unwrap().series, a.series);
    }

    #[test]
    fn oracle_accuracy_high_at_low_noise() {
        let mut spec = small(0.1);
        spec.n_voxels_latent = 32;
        spec.timepoints_per_run = 200;
        spec.dims = Dims::new(10, 10, 6);
        let d = synth_generate(&spec).unwrap();
        let acc = d.truth.nearest_mean_accuracy(&d.series, subject_index, &Label::ALL);
        assert!(acc >= 0.99, "oracle accuracy {acc}");
    }

    #[test]
    fn mixed_run_counts() {
        let spec = SynthSpec::paper_b(1);
        assert_eq!(spec.run_counts.iter().sum::<usize>(), 39);
        let mut bad = spec.clone();
        bad.run_counts.pop();
        assert!(bad.validate().is_err());
        let mut tiny = small(0.1);
        tiny.run_counts = vec![1, 3];
        let d = synth_generate(&tiny).unwrap();
        assert_eq!(d.series.len(), 4);
        assert_eq!(d.truth.shared_response.len(), 3);
    }

    #[test]
    fn rejects_bad_spec() {
        let mut s = small(0.1);
        s.noise_sigma = -1.0;
        assert!(synth_generate(&s).is_err());
        let mut s = small(0.1);
        s.n_voxels_latent = 10_000;
        assert!(synth_generate(&s).is_err());
    }
}
