//! OODF (features) and OODL (labels) binary files.
//!
//! ```text
//! OODF: "OODF" | version u64 | n u64 | d u64 | n*d f32      (all little-endian)
//! OODL: "OODL" | version u64 | n u64 | n u32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"OODF";
pub const LABEL_MAGIC: &[u8; 4] = b"OODL";
pub const FORMAT_VERSION: u64 = 1;
pub const FEATURE_HEADER_LEN: usize = 28;
pub const LABEL_HEADER_LEN: usize = 20;

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Corrupt(format!("truncated {what}")),
        _ => Error::Corrupt(format!("reading {what}: {e}")),
    })
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_magic<R: Read>(r: &mut R, expected: &[u8; 4]) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != expected {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expected)
        )));
    }
    let version = read_u64(r, "header")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Incremental row reader over OODF framing; used for streaming from stdin.
pub struct FeatureReader<R> {
    inner: R,
    n: usize,
    d: usize,
    read: usize,
}

impl<R: Read> FeatureReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        read_magic(&mut inner, FEATURE_MAGIC)?;
        let n = read_u64(&mut inner, "header")? as usize;
        let d = read_u64(&mut inner, "header")? as usize;
        if d == 0 {
            return Err(Error::Validation("feature dimension must be at least 1".into()));
        }
        Ok(FeatureReader { inner, n, d, read: 0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Next row, or `None` once all `n` rows have been consumed.
    pub fn next_row(&mut self) -> Result<Option<Vec<f32>>> {
        if self.read == self.n {
            return Ok(None);
        }
        let mut buf = vec![0u8; 4 * self.d];
        read_exact_or(&mut self.inner, &mut buf, "payload")?;
        let row: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {j}",
                self.read
            )));
        }
        self.read += 1;
        Ok(Some(row))
    }

    fn into_matrix(mut self) -> Result<FeatureMatrix> {
        let total = self
            .n
            .checked_mul(self.d)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Corrupt("header sizes overflow".into()))?;
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(total as u64)
            .read_to_end(&mut buf)
            .map_err(|e| Error::Corrupt(format!("reading payload: {e}")))?;
        if buf.len() != total {
            return Err(Error::Corrupt(format!(
                "payload holds {} bytes, header declares {total}",
                buf.len()
            )));
        }
        let mut rest = [0u8; 1];
        if self.inner.read(&mut rest).unwrap_or(0) != 0 {
            return Err(Error::Corrupt("trailing bytes after payload".into()));
        }
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        FeatureMatrix::new(self.n, self.d, values)
    }
}

impl<R: Read> Iterator for FeatureReader<R> {
    type Item = Result<Vec<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_row().transpose()
    }
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let reader = FeatureReader::new(open(path)?).map_err(|e| with_path(e, path))?;
    reader.into_matrix().map_err(|e| with_path(e, path))
}

/// Reads only the `(n, d)` header fields.
pub(crate) fn read_feature_header(path: &Path) -> Result<(usize, usize)> {
    let reader = FeatureReader::new(open(path)?).map_err(|e| with_path(e, path))?;
    Ok((reader.n(), reader.d()))
}

pub fn write_feature_file(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(m.n() as u64).to_le_bytes())?;
        w.write_all(&(m.d() as u64).to_le_bytes())?;
        for v in m.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_label_file(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let parse = |r: &mut BufReader<File>| -> Result<LabelVector> {
        read_magic(r, LABEL_MAGIC)?;
        let n = read_u64(r, "header")? as usize;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::Corrupt(format!("reading payload: {e}")))?;
        if buf.len() != 4 * n {
            return Err(Error::Corrupt(format!(
                "label payload holds {} bytes, header declares {}",
                buf.len(),
                4 * n
            )));
        }
        Ok(LabelVector::new(
            buf.chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ))
    };
    parse(&mut r).map_err(|e| with_path(e, path))
}

pub fn write_label_file(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(LABEL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(labels.len() as u64).to_le_bytes())?;
        for l in labels.as_slice() {
            w.write_all(&l.to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

fn with_path(e: Error, path: &Path) -> Error {
    let p = path.display();
    match e {
        Error::Format(m) => Error::Format(format!("{p}: {m}")),
        Error::Corrupt(m) => Error::Corrupt(format!("{p}: {m}")),
        Error::Validation(m) => Error::Validation(format!("{p}: {m}")),
        other => other,
    }
}
