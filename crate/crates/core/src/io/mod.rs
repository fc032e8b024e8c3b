//! Datasets, checkpoints, metrics logs, and figure exports.

pub mod checkpoint;
pub mod figures;
pub mod idx;
pub mod metrics;

use std::path::Path;

use crate::error::{Error, Result};

/// Read a file, naming it in the error on failure.
pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read {}: {e}", path.display()),
        ))
    })
}

/// Read a text file, naming it in the error on failure.
pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read {}: {e}", path.display()),
        ))
    })
}

/// Write a file atomically: the bytes land in a sibling temp file which is
/// renamed over the destination, so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other(format!(
            "path {} has no file name",
            path.display()
        ))))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(Error::Io(e))
        }
    }
}

/// Little-endian byte reader with offset-aware error messages, shared by
/// the binary readers in this module tree.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], what: &'a str) -> Self {
        ByteReader { bytes, pos: 0, what }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "{}: need {} bytes at offset {} but only {} remain",
                self.what,
                n,
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_le(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    /// A length as u64 that must also fit usize and pass a sanity cap,
    /// so corrupt length prefixes fail cleanly instead of attempting a
    /// multi-exabyte allocation.
    pub fn len_le(&mut self, cap: u64) -> Result<usize> {
        let at = self.pos;
        let n = self.u64_le()?;
        if n > cap {
            return Err(Error::Format(format!(
                "{}: implausible length {} at offset {} (cap {})",
                self.what, n, at, cap
            )));
        }
        Ok(n as usize)
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!(
                "{}: {} unexpected trailing bytes at offset {}",
                self.what,
                self.remaining(),
                self.pos
            )));
        }
        Ok(())
    }
}
