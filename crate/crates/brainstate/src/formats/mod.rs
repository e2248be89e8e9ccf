//! On-disk formats. Binary files are little-endian throughout.

mod checkpoint;
mod report;
mod volume;

pub use checkpoint::{
    read_common_space, read_network, read_nnet, read_selection, write_common_space, write_network, write_nnet,
    write_selection, Architecture, HALN_VERSION, NNET_VERSION,
};
pub use report::{
    read_json, read_predictions, write_json, write_predictions, write_roc_csv, RocRow,
};
pub use volume::{read_mask_file, read_volume_file, write_mask_file, write_volume_file, BMSK_VERSION, BVOL_VERSION};

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt};

use crate::error::{Error, Result};

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Byte reader whose errors name the file and the offset where decoding failed.
pub(crate) struct Reader<'a> {
    path: PathBuf,
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    pub fn new(path: &Path, bytes: &'a [u8]) -> Self {
        Reader { path: path.to_path_buf(), cur: Cursor::new(bytes) }
    }

    pub fn offset(&self) -> u64 {
        self.cur.position()
    }

    pub fn fail(&self, msg: impl Into<String>) -> Error {
        self.fail_at(self.offset(), msg)
    }

    pub fn fail_at(&self, offset: u64, msg: impl Into<String>) -> Error {
        Error::Format { path: self.path.clone(), offset, msg: msg.into() }
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let mut got = [0u8; 4];
        self.cur.read_exact(&mut got).map_err(|_| self.fail_at(0, "file too short for magic"))?;
        if &got != want {
            return Err(self.fail_at(0, format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&got), String::from_utf8_lossy(want))));
        }
        Ok(())
    }

    pub fn version(&mut self, want: u32) -> Result<()> {
        let at = self.offset();
        let v = self.u32()?;
        if v != want {
            return Err(self.fail_at(at, format!("unsupported version {v}, expected {want}")));
        }
        Ok(())
    }

    fn truncated(&self, what: &str) -> Error {
        self.fail(format!("truncated payload reading {what}"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.truncated("u8"))
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| self.truncated("u32"))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// Fails before allocating when fewer than `n` items of `size` bytes remain.
    pub fn need(&self, n: usize, size: usize, what: &str) -> Result<()> {
        let left = self.cur.get_ref().len() as u64 - self.offset().min(self.cur.get_ref().len() as u64);
        match n.checked_mul(size) {
            Some(b) if b as u64 <= left => Ok(()),
            _ => Err(self.fail(format!("truncated payload: {what} needs {n}×{size} bytes, {left} left"))),
        }
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        self.need(n, 1, what)?;
        let mut buf = vec![0u8; n];
        self.cur.read_exact(&mut buf).map_err(|_| self.truncated(what))?;
        Ok(buf)
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        self.need(n, 4, what)?;
        let mut out = vec![0f32; n];
        self.cur.read_f32_into::<LittleEndian>(&mut out).map_err(|_| self.truncated(what))?;
        Ok(out)
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        self.need(n, 8, what)?;
        let mut out = vec![0f64; n];
        self.cur.read_f64_into::<LittleEndian>(&mut out).map_err(|_| self.truncated(what))?;
        Ok(out)
    }

    pub fn finish(&self) -> Result<()> {
        let len = self.cur.get_ref().len() as u64;
        if self.offset() != len {
            return Err(self.fail(format!("{} trailing bytes", len - self.offset())));
        }
        Ok(())
    }
}
