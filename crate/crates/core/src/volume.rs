//! Volumes, labelled volume series and brain masks.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;

/// Experimental condition of one timepoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Rest = 0,
    Neutral = 1,
    Negative = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Rest, Label::Neutral, Label::Negative];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Rest),
            1 => Some(Label::Neutral),
            2 => Some(Label::Negative),
            _ => None,
        }
    }
}

/// Voxel grid extents `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Flat index with x varying fastest.
    pub fn flat_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn coords(&self, flat: usize) -> (usize, usize, usize) {
        (flat % self.nx, (flat / self.nx) % self.ny, flat / (self.nx * self.ny))
    }
}

/// One 3D image. Voxels are stored x-fastest as in the on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, voxels: Vec<f32>) -> Result<Self> {
        if voxels.len() != dims.voxel_count() {
            return Err(shape_err!(
                "{} voxels for dims {}x{}x{}",
                voxels.len(),
                dims.nx,
                dims.ny,
                dims.nz
            ));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("volume contains non-finite intensities".into()));
        }
        Ok(Volume { dims, voxels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }
}

/// One subject-run: volumes with a condition label per timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSeries {
    pub subject_id: String,
    pub run_id: String,
    dims: Dims,
    volumes: Vec<Volume>,
    labels: Vec<Label>,
}

impl VolumeSeries {
    pub fn new(
        subject_id: impl Into<String>,
        run_id: impl Into<String>,
        dims: Dims,
        volumes: Vec<Volume>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        if volumes.len() != labels.len() {
            return Err(shape_err!("{} volumes but {} labels", volumes.len(), labels.len()));
        }
        if let Some(i) = volumes.iter().position(|v| v.dims() != dims) {
            return Err(shape_err!("volume {i} has dims {:?}, series has {:?}", volumes[i].dims(), dims));
        }
        Ok(VolumeSeries {
            subject_id: subject_id.into(),
            run_id: run_id.into(),
            dims,
            volumes,
            labels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// Boolean brain-tissue mask over a voxel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMask {
    dims: Dims,
    keep: Vec<bool>,
}

impl BrainMask {
    pub fn new(dims: Dims, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != dims.voxel_count() {
            return Err(shape_err!("mask has {} entries for {} voxels", keep.len(), dims.voxel_count()));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::Degenerate("mask keeps no voxels".into()));
        }
        Ok(BrainMask { dims, keep })
    }

    pub fn full(dims: Dims) -> Self {
        BrainMask { dims, keep: alloc::vec![true; dims.voxel_count()] }
    }

    /// Voxels inside the ellipsoid inscribed in the grid.
    pub fn ellipsoid(dims: Dims) -> Self {
        let centre = |n: usize| (n as f64 - 1.0) / 2.0;
        let radius = |n: usize| (n as f64 / 2.0).max(0.5);
        let keep = (0..dims.voxel_count())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                let dx = (x as f64 - centre(dims.nx)) / radius(dims.nx);
                let dy = (y as f64 - centre(dims.ny)) / radius(dims.ny);
                let dz = (z as f64 - centre(dims.nz)) / radius(dims.nz);
                dx * dx + dy * dy + dz * dz <= 1.0
            })
            .collect();
        BrainMask { dims, keep }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Flat (x-fastest) indices of the kept voxels, ascending.
    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }
}

/// Timepoints × kept-voxels matrix; column `j` is the trace of the `j`-th kept voxel.
pub fn apply_mask(series: &VolumeSeries, mask: &BrainMask) -> Result<Matrix> {
    if series.dims() != mask.dims() {
        return Err(shape_err!("series dims {:?} vs mask dims {:?}", series.dims(), mask.dims()));
    }
    let kept = mask.kept_indices();
    let mut data = Vec::with_capacity(series.len() * kept.len());
    for vol in series.volumes() {
        let vox = vol.voxels();
        data.extend(kept.iter().map(|&i| vox[i] as f64));
    }
    Matrix::from_vec(series.len(), kept.len(), data)
}
