//! Network parameters (`NNET` plus a JSON architecture sidecar) and fitted common
//! spaces (`HALN`).
//!
//! ```text
//! NNET: "NNET" u32 version u32 n_layers
//!       per layer: u8 tag u32 n_tensors
//!         per tensor: u32 rank u32 × rank f64 × prod(shape)
//! HALN: "HALN" u32 version u32 n u32 m u32 p
//!       f64 × n·m (reference, row-major)  f64 × p·m·m (rotations, row-major)
//!       u32 len  FeatureSelection JSON × len
//! ```
//! Batch-norm layers carry four tensors: gamma, beta, running mean, running variance.

use std::path::{Path, PathBuf};

use brainstate_core::anova::FeatureSelection;
use brainstate_core::hyperalign::CommonSpace;
use brainstate_core::linalg::Matrix;
use brainstate_core::models::{build_model_a, build_model_b, ModelAConfig, ModelBConfig};
use brainstate_core::nn::{LayerRecord, LayerTag, Network};
use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{read_all, read_json, write_all, write_json, Reader};
use crate::error::{Error, Result};

pub const NNET_VERSION: u32 = 1;
pub const HALN_VERSION: u32 = 1;

/// Architecture sidecar: enough to rebuild the layer stack before loading parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "config", rename_all = "kebab-case")]
pub enum Architecture {
    ModelA(ModelAConfig),
    ModelB(ModelBConfig),
}

impl Architecture {
    pub fn build(&self) -> Result<Network> {
        Ok(match self {
            Architecture::ModelA(c) => build_model_a(c, 0)?,
            Architecture::ModelB(c) => build_model_b(c, 0)?,
        })
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Input(format!("{what} {n} does not fit in u32")))
}

pub fn encode_nnet(records: &[LayerRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(b"NNET");
    out.write_u32::<LittleEndian>(NNET_VERSION).unwrap();
    out.write_u32::<LittleEndian>(u32_of(records.len(), "layer count")?).unwrap();
    for rec in records {
        out.push(rec.tag as u8);
        out.write_u32::<LittleEndian>(u32_of(rec.tensors.len(), "tensor count")?).unwrap();
        for (shape, values) in &rec.tensors {
            out.write_u32::<LittleEndian>(u32_of(shape.len(), "rank")?).unwrap();
            for &d in shape {
                out.write_u32::<LittleEndian>(u32_of(d, "dimension")?).unwrap();
            }
            for &v in values {
                out.write_f64::<LittleEndian>(v).unwrap();
            }
        }
    }
    Ok(out)
}

pub fn write_nnet(path: &Path, records: &[LayerRecord]) -> Result<()> {
    write_all(path, &encode_nnet(records)?)
}

pub fn read_nnet(path: &Path) -> Result<Vec<LayerRecord>> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(b"NNET")?;
    r.version(NNET_VERSION)?;
    let n = r.usize()?;
    r.need(n, 5, "layers")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let code = r.u8()?;
        let tag = LayerTag::from_u8(code).ok_or_else(|| r.fail_at(at, format!("unknown layer tag {code}")))?;
        let k = r.usize()?;
        r.need(k, 4, "tensors")?;
        let mut tensors = Vec::with_capacity(k);
        for _ in 0..k {
            let rank = r.usize()?;
            r.need(rank, 4, "shape")?;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.fail("tensor too large"))?;
            tensors.push((shape, r.f64s(len, "tensor values")?));
        }
        out.push(LayerRecord { tag, tensors });
    }
    r.finish()?;
    Ok(out)
}

/// The sidecar lives next to the parameter file with a `.json` extension.
pub fn sidecar_path(nnet: &Path) -> PathBuf {
    nnet.with_extension("json")
}

pub fn write_network(path: &Path, arch: &Architecture, net: &mut Network) -> Result<()> {
    write_json(&sidecar_path(path), arch)?;
    write_nnet(path, &net.records())
}

pub fn read_network(path: &Path) -> Result<(Architecture, Network)> {
    let arch: Architecture = read_json(&sidecar_path(path))?;
    let mut net = arch.build()?;
    let records = read_nnet(path)?;
    net.load_records(&records)?;
    Ok((arch, net))
}

pub fn write_common_space(path: &Path, space: &CommonSpace) -> Result<()> {
    let (n, m) = space.shape();
    let mut out = Vec::with_capacity(20 + 8 * (n * m + space.rotations.len() * m * m));
    out.extend_from_slice(b"HALN");
    for v in [HALN_VERSION, u32_of(n, "rows")?, u32_of(m, "columns")?, u32_of(space.rotations.len(), "subjects")?] {
        out.write_u32::<LittleEndian>(v).unwrap();
    }
    for mat in std::iter::once(&space.reference).chain(&space.rotations) {
        for &v in mat.as_slice() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    let sel = serde_json::to_vec(&space.selection).map_err(|e| Error::json(path, e))?;
    out.write_u32::<LittleEndian>(u32_of(sel.len(), "selection length")?).unwrap();
    out.extend_from_slice(&sel);
    write_all(path, &out)
}

/// Subject identities and fitting hyperparameters are not stored; subjects are named
/// by their position.
pub fn read_common_space(path: &Path) -> Result<CommonSpace> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(b"HALN")?;
    r.version(HALN_VERSION)?;
    let (n, m, p) = (r.usize()?, r.usize()?, r.usize()?);
    let mut mat = |rows: usize, cols: usize, what: &str| -> Result<Matrix> {
        let at = r.offset();
        let v = r.f64s(rows * cols, what)?;
        Matrix::from_vec(rows, cols, v).map_err(|e| r.fail_at(at, format!("{what}: {e}")))
    };
    let reference = mat(n, m, "reference")?;
    let rotations = (0..p).map(|_| mat(m, m, "rotation")).collect::<Result<Vec<_>>>()?;
    let len = r.usize()?;
    let at = r.offset();
    let raw = r.bytes(len, "selection")?;
    let selection: FeatureSelection =
        serde_json::from_slice(&raw).map_err(|e| r.fail_at(at, format!("selection JSON: {e}")))?;
    if selection.indices.len() != m {
        return Err(r.fail_at(at, format!("selection has {} voxels, space has {m}", selection.indices.len())));
    }
    r.finish()?;
    Ok(CommonSpace { reference, rotations, subject_ids: (0..p).map(|j| j.to_string()).collect(), selection, config: None })
}

pub fn write_selection(path: &Path, selection: &FeatureSelection) -> Result<()> {
    write_json(path, selection)
}

pub fn read_selection(path: &Path) -> Result<FeatureSelection> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use brainstate_core::anova::select_top_m;
    use brainstate_core::linalg::random_orthogonal;
    use brainstate_core::nn::Tensor;

    #[test]
    fn network_round_trip_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nnet");
        let mut cfg = ModelBConfig::tiny();
        cfg.input_dims = [8, 8, 6];
        let mut net = build_model_b(&cfg, 5).unwrap();
        let arch = Architecture::ModelB(cfg);
        write_network(&p, &arch, &mut net).unwrap();
        let (back, loaded) = read_network(&p).unwrap();
        assert_eq!(back, arch);
        let x = Tensor::new(vec![2, 1, 6, 8, 8], (0..768).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(net.forward_eval(&x).unwrap(), loaded.forward_eval(&x).unwrap());
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nnet");
        let a = ModelAConfig::desk();
        write_network(&p, &Architecture::ModelA(a.clone()), &mut build_model_a(&a, 1).unwrap()).unwrap();
        let mut other = a;
        other.fc_widths[0] = 31;
        write_json(&sidecar_path(&p), &Architecture::ModelA(other)).unwrap();
        assert!(matches!(read_network(&p), Err(Error::Core(brainstate_core::Error::Shape(_)))));
    }

    #[test]
    fn unknown_tag_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.nnet");
        let mut bytes = encode_nnet(&[LayerRecord { tag: LayerTag::Relu, tensors: vec![] }]).unwrap();
        bytes[12] = 99;
        std::fs::write(&p, &bytes).unwrap();
        let e = read_nnet(&p).unwrap_err().to_string();
        assert!(e.contains("byte 12") && e.contains("99"), "{e}");
    }

    #[test]
    fn common_space_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.haln");
        let f: Vec<f64> = (0..10).map(|i| if i == 3 { f64::INFINITY } else { i as f64 }).collect();
        let selection = select_top_m(&f, 4).unwrap();
        let reference = Matrix::from_fn(5, 4, |i, j| (i * 4 + j) as f64 / 7.0);
        let space = CommonSpace {
            reference,
            rotations: vec![random_orthogonal(4, 1), random_orthogonal(4, 2)],
            subject_ids: vec!["0".into(), "1".into()],
            selection,
            config: None,
        };
        write_common_space(&p, &space).unwrap();
        assert_eq!(read_common_space(&p).unwrap(), space);
    }
}
