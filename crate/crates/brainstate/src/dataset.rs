//! Dataset directories: a JSON-lines manifest, one `BVOL` file per run, an optional
//! `BMSK` brain mask and, for generated data, the generator's ground truth.
//!
//! ```text
//! <dir>/manifest.jsonl   {"subject_id": "...", "run_id": "...", "path": "..."} per line
//! <dir>/mask.bmsk        absent means every voxel is kept
//! <dir>/truth.json       synthetic datasets only
//! <dir>/spec.json        synthetic datasets only
//! ```
//! Relative paths in the manifest are resolved against the manifest's directory.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use brainstate_core::synth::{GroundTruth, SynthDataset, SynthSpec};
use brainstate_core::volume::{BrainMask, VolumeSeries};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_json, read_mask_file, read_volume_file, write_all, write_json, write_mask_file, write_volume_file};

pub const MANIFEST: &str = "manifest.jsonl";
pub const MASK: &str = "mask.bmsk";
pub const TRUTH: &str = "truth.json";
pub const SPEC: &str = "spec.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub run_id: String,
    pub path: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Input(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let len = line.len() as u64 + 1;
        if !line.trim().is_empty() {
            let entry = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset,
                msg: format!("manifest line: {e}"),
            })?;
            out.push(entry);
        }
        offset += len;
    }
    if out.is_empty() {
        return Err(Error::Format { path: path.to_path_buf(), offset: 0, msg: "manifest lists no runs".into() });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).map_err(|err| Error::json(path, err))?);
        text.push('\n');
    }
    write_all(path, text.as_bytes())
}

/// Series in manifest order plus the brain mask.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: Vec<VolumeSeries>,
    pub mask: BrainMask,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST);
    if !manifest.is_file() {
        return Err(Error::Input(format!("manifest not found: {}", manifest.display())));
    }
    let entries = read_manifest(&manifest)?;
    let series = entries
        .iter()
        .map(|e| {
            let p = PathBuf::from(&e.path);
            let p = if p.is_absolute() { p } else { dir.join(p) };
            read_volume_file(&p, &e.subject_id, &e.run_id)
        })
        .collect::<Result<Vec<_>>>()?;
    let dims = series[0].dims();
    if let Some(s) = series.iter().find(|s| s.dims() != dims) {
        return Err(Error::Input(format!("run {}/{} has dims {:?}, first run {:?}", s.subject_id, s.run_id, s.dims(), dims)));
    }
    let mask_path = dir.join(MASK);
    let mask = if mask_path.exists() { read_mask_file(&mask_path)? } else { BrainMask::full(dims) };
    if mask.dims() != dims {
        return Err(Error::Input(format!("mask dims {:?} differ from volume dims {:?}", mask.dims(), dims)));
    }
    Ok(Dataset { series, mask })
}

/// Writes a generated dataset; file names are derived from subject and run ids.
pub fn write_synth_dataset(dir: &Path, spec: &SynthSpec, ds: &SynthDataset) -> Result<()> {
    let mut entries = Vec::with_capacity(ds.series.len());
    for s in &ds.series {
        let rel = format!("volumes/{}_{}.bvol", s.subject_id, s.run_id);
        write_volume_file(&dir.join(&rel), s)?;
        entries.push(ManifestEntry { subject_id: s.subject_id.clone(), run_id: s.run_id.clone(), path: rel });
    }
    write_manifest(&dir.join(MANIFEST), &entries)?;
    write_mask_file(&dir.join(MASK), &ds.mask)?;
    write_json(&dir.join(TRUTH), &ds.truth)?;
    write_json(&dir.join(SPEC), spec)
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    read_json(&dir.join(TRUTH))
}
