//! `BVOL` volume series and `BMSK` brain masks.
//!
//! ```text
//! BVOL: "BVOL" u32 version u32 nx u32 ny u32 nz u32 n_timepoints
//!       u8 label × n_timepoints
//!       f32 × n_timepoints·nx·ny·nz   (x fastest, timepoint-major)
//! BMSK: "BMSK" u32 version u32 nx u32 ny u32 nz  u8 {0,1} × nx·ny·nz
//! ```
//! Subject and run identity live in the dataset manifest, not in the file.

use std::path::Path;

use brainstate_core::volume::{BrainMask, Dims, Label, Volume, VolumeSeries};
use byteorder::{LittleEndian, WriteBytesExt};

use super::{read_all, write_all, Reader};
use crate::error::{Error, Result};

pub const BVOL_VERSION: u32 = 1;
pub const BMSK_VERSION: u32 = 1;

fn dims_u32(d: Dims) -> Result<[u32; 3]> {
    let conv = |n: usize| u32::try_from(n).map_err(|_| Error::Input(format!("dimension {n} does not fit in u32")));
    Ok([conv(d.nx)?, conv(d.ny)?, conv(d.nz)?])
}

pub fn encode_volume(series: &VolumeSeries) -> Result<Vec<u8>> {
    let dims = dims_u32(series.dims())?;
    let t = u32::try_from(series.len()).map_err(|_| Error::Input("too many timepoints".into()))?;
    let mut out = Vec::with_capacity(24 + series.len() * (1 + 4 * series.dims().voxel_count()));
    out.extend_from_slice(b"BVOL");
    for v in [BVOL_VERSION, dims[0], dims[1], dims[2], t] {
        out.write_u32::<LittleEndian>(v).unwrap();
    }
    out.extend(series.labels().iter().map(|l| l.code()));
    for vol in series.volumes() {
        for &x in vol.voxels() {
            out.write_f32::<LittleEndian>(x).unwrap();
        }
    }
    Ok(out)
}

pub fn write_volume_file(path: &Path, series: &VolumeSeries) -> Result<()> {
    write_all(path, &encode_volume(series)?)
}

/// Reads a series; identity fields are filled in by the caller.
pub fn read_volume_file(path: &Path, subject_id: &str, run_id: &str) -> Result<VolumeSeries> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(b"BVOL")?;
    r.version(BVOL_VERSION)?;
    let dims_at = r.offset();
    let dims = Dims::new(r.usize()?, r.usize()?, r.usize()?);
    if dims.voxel_count() == 0 {
        return Err(r.fail_at(dims_at, format!("dims {}x{}x{} hold no voxels", dims.nx, dims.ny, dims.nz)));
    }
    let t = r.usize()?;
    let labels_at = r.offset();
    let codes = r.bytes(t, "labels")?;
    let labels = codes
        .iter()
        .enumerate()
        .map(|(i, &c)| Label::from_code(c).ok_or_else(|| r.fail_at(labels_at + i as u64, format!("label code {c} is not 0, 1 or 2"))))
        .collect::<Result<Vec<_>>>()?;
    let n = dims.voxel_count();
    r.need(t, 4 * n, "voxel payload")?;
    let mut volumes = Vec::with_capacity(t);
    for k in 0..t {
        let at = r.offset();
        let vox = r.f32s(n, "voxels")?;
        if let Some(i) = vox.iter().position(|v| !v.is_finite()) {
            return Err(r.fail_at(at + 4 * i as u64, format!("non-finite voxel in timepoint {k}")));
        }
        volumes.push(Volume::new(dims, vox)?);
    }
    r.finish()?;
    Ok(VolumeSeries::new(subject_id, run_id, dims, volumes, labels)?)
}

pub fn write_mask_file(path: &Path, mask: &BrainMask) -> Result<()> {
    let dims = dims_u32(mask.dims())?;
    let mut out = Vec::with_capacity(20 + mask.keep().len());
    out.extend_from_slice(b"BMSK");
    for v in [BMSK_VERSION, dims[0], dims[1], dims[2]] {
        out.write_u32::<LittleEndian>(v).unwrap();
    }
    out.extend(mask.keep().iter().map(|&k| u8::from(k)));
    write_all(path, &out)
}

pub fn read_mask_file(path: &Path) -> Result<BrainMask> {
    let bytes = read_all(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(b"BMSK")?;
    r.version(BMSK_VERSION)?;
    let dims = Dims::new(r.usize()?, r.usize()?, r.usize()?);
    let at = r.offset();
    let raw = r.bytes(dims.voxel_count(), "mask")?;
    let keep = raw
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(r.fail_at(at + i as u64, format!("mask byte {b} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(BrainMask::new(dims, keep)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(t: usize, dims: Dims) -> VolumeSeries {
        let n = dims.voxel_count();
        let vols = (0..t).map(|k| Volume::new(dims, (0..n).map(|i| (k * n + i) as f32 * 0.5 - 3.0).collect()).unwrap()).collect();
        let labels = (0..t).map(|k| Label::ALL[k % 3]).collect();
        VolumeSeries::new("sub-01", "run-0", dims, vols, labels).unwrap()
    }

    #[test]
    fn empty_series_is_header_only() {
        let s = series(0, Dims::new(3, 2, 1));
        let bytes = encode_volume(&s).unwrap();
        assert_eq!(bytes.len(), 24);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bvol");
        write_volume_file(&p, &s).unwrap();
        assert_eq!(read_volume_file(&p, "sub-01", "run-0").unwrap(), s);
    }

    #[test]
    fn one_volume_payload_is_32_bytes() {
        let dims = Dims::new(2, 2, 2);
        let v = Volume::new(dims, (0..8).map(|i| i as f32).collect()).unwrap();
        let s = VolumeSeries::new("a", "b", dims, vec![v], vec![Label::Neutral]).unwrap();
        let bytes = encode_volume(&s).unwrap();
        assert_eq!(bytes.len(), 24 + 1 + 32);
        assert_eq!(&bytes[25..29], &0f32.to_le_bytes());
        assert_eq!(&bytes[29..33], &1f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bvol");
        let mut bytes = encode_volume(&series(2, Dims::new(2, 2, 2))).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        let err = read_volume_file(&p, "a", "b").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 26),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_magic_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bvol");
        let mut bytes = encode_volume(&series(1, Dims::new(1, 1, 1))).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_volume_file(&p, "a", "b").unwrap_err().to_string().contains("bad magic"));
        bytes[0] = b'B';
        bytes[24] = 7;
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_volume_file(&p, "a", "b").unwrap_err().to_string().contains("byte 24"));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bmsk");
        let m = BrainMask::ellipsoid(Dims::new(5, 4, 3));
        write_mask_file(&p, &m).unwrap();
        assert_eq!(read_mask_file(&p).unwrap(), m);
    }
}
