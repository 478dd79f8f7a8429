//! Fixed little-endian dataset format:
//!
//! ```text
//! "OCIL" | version u8 = 1 | n u32 | d u32 | C u32 | n·d f32 (row-major) | n u32 labels
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::Matrix;

const MAGIC: &[u8; 4] = b"OCIL";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 12;

/// A labelled dataset before it is split into tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4-byte slice"))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<RawDataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, expected \"OCIL\""));
    }
    match bytes.get(4) {
        Some(&VERSION) => {}
        Some(v) => return Err(format_err(4, format!("unsupported version {v}"))),
        None => return Err(format_err(4, "missing version byte")),
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let n = u32_at(bytes, 5) as usize;
    let d = u32_at(bytes, 9) as usize;
    let c = u32_at(bytes, 13) as usize;
    if n == 0 {
        return Err(format_err(5, "empty body: n = 0"));
    }
    if d == 0 {
        return Err(format_err(9, "feature dimension d = 0"));
    }
    if c == 0 {
        return Err(format_err(13, "class count C = 0"));
    }
    let feat_len = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| format_err(5, "n·d overflows"))?;
    let expected = HEADER_LEN + feat_len + 4 * n;
    if bytes.len() != expected {
        let off = bytes.len().min(expected);
        return Err(format_err(
            off,
            format!("shape mismatch: n={n}, d={d} needs {expected} bytes, file has {}", bytes.len()),
        ));
    }

    let mut data = Vec::with_capacity(n * d);
    for k in 0..n * d {
        let off = HEADER_LEN + 4 * k;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4-byte slice"));
        if !v.is_finite() {
            return Err(format_err(
                off,
                format!("non-finite feature in record {} coordinate {}", k / d, k % d),
            ));
        }
        data.push(v as f64);
    }
    let label_base = HEADER_LEN + feat_len;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let off = label_base + 4 * i;
        let y = u32_at(bytes, off) as usize;
        if y >= c {
            return Err(format_err(off, format!("record {i}: label {y} >= C = {c}")));
        }
        labels.push(y);
    }
    Ok(RawDataset {
        features: Matrix::from_vec(n, d, data)?,
        labels,
        num_classes: c,
    })
}

pub fn encode_dataset(ds: &RawDataset) -> Result<Vec<u8>> {
    let n = ds.len();
    let d = ds.dim();
    if ds.features.rows() != n {
        return Err(Error::dim("encode_dataset", n, ds.features.rows()));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Data(format!("{what} = {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (d + 1));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&to_u32(n, "n")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "d")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.num_classes, "C")?.to_le_bytes());
    for &v in ds.features.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &y in &ds.labels {
        out.extend_from_slice(&to_u32(y, "label")?.to_le_bytes());
    }
    Ok(out)
}

pub fn load_binary_dataset(path: &Path) -> Result<RawDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

pub fn write_binary_dataset(path: &Path, ds: &RawDataset) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
