//! Head checkpoint files.
//!
//! ```text
//! "OODH" | version u64 | header_len u64 | header (UTF-8 JSON) | payload
//! header:  {"kind": "linear"|"cosine", "classes": C, "dim": d, "dtype": "f32"|"f64"}
//! payload: little-endian values of `dtype`
//!          linear: W (C×d, row-major), b (C)
//!          cosine: W (C×d, row-major), w_s (d), b_s (1)
//! ```
//!
//! The toolkit writes `f64`; external exporters may write `f32`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CosineHead, Head, HeadKind, LinearHead};
use crate::data::FORMAT_VERSION;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OODH";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: HeadKind,
    classes: usize,
    dim: usize,
    #[serde(default = "default_dtype")]
    dtype: String,
}

fn default_dtype() -> String {
    "f32".into()
}

pub fn write_checkpoint(head: &Head, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        kind: head.kind(),
        classes: head.classes(),
        dim: head.dim(),
        dtype: "f64".into(),
    };
    let header = serde_json::to_vec(&header)?;
    let params: Vec<f64> = match head {
        Head::Linear(h) => h.weights().iter().chain(h.bias()).copied().collect(),
        Head::Cosine(h) => h
            .weights()
            .iter()
            .chain(h.scale_weights())
            .copied()
            .chain(std::iter::once(h.scale_bias()))
            .collect(),
    };
    let mut bytes = Vec::with_capacity(20 + header.len() + 8 * params.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Head> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse(bytes: &[u8]) -> Result<Head> {
    if bytes.len() < 20 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a head checkpoint".into()));
    }
    let version = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(Error::Corrupt("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    let payload = &body[hlen..];
    let (c, d) = (header.classes, header.dim);
    let count = match header.kind {
        HeadKind::Linear => c * d + c,
        HeadKind::Cosine => c * d + d + 1,
    };
    let values: Vec<f64> = match header.dtype.as_str() {
        "f64" => decode(payload, count, 8, |b| f64::from_le_bytes(b.try_into().unwrap()))?,
        "f32" => decode(payload, count, 4, |b| f32::from_le_bytes(b.try_into().unwrap()) as f64)?,
        other => return Err(Error::Format(format!("unsupported dtype {other:?}"))),
    };
    let w = values[..c * d].to_vec();
    Ok(match header.kind {
        HeadKind::Linear => Head::Linear(LinearHead::new(c, d, w, values[c * d..].to_vec())?),
        HeadKind::Cosine => Head::Cosine(CosineHead::new(
            c,
            d,
            w,
            values[c * d..c * d + d].to_vec(),
            values[c * d + d],
        )?),
    })
}

fn decode(payload: &[u8], count: usize, width: usize, f: impl Fn(&[u8]) -> f64) -> Result<Vec<f64>> {
    if payload.len() != count * width {
        return Err(Error::Corrupt(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            count * width
        )));
    }
    Ok(payload.chunks_exact(width).map(f).collect())
}
