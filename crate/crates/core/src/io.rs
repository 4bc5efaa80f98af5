//! Activation interchange formats.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! "SDEA" | u8 version = 1 | u8 dtype (0 = f32, 1 = f64) | u32 n | u32 d
//! | n·d values, row-major | u16 tag length | tag bytes (UTF-8)
//! ```
//!
//! The text alternative is a CSV whose first line is `dim=<d>`, followed by
//! one comma-separated row per sample.

use std::fs;
use std::path::Path;

use crate::data::ActivationMatrix;
use crate::error::{Result, SdeError};
use crate::scalar::{Dtype, Scalar};

pub const MAGIC: &[u8; 4] = b"SDEA";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4;

/// A loaded activation matrix in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyActivation {
    F32(ActivationMatrix<f32>),
    F64(ActivationMatrix<f64>),
}

impl AnyActivation {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyActivation::F32(_) => Dtype::F32,
            AnyActivation::F64(_) => Dtype::F64,
        }
    }

    /// Widens to double precision (exact for f32 input).
    pub fn to_f64(&self) -> ActivationMatrix<f64> {
        match self {
            AnyActivation::F32(m) => m.cast(),
            AnyActivation::F64(m) => m.clone(),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            AnyActivation::F32(m) => m.rows(),
            AnyActivation::F64(m) => m.rows(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyActivation::F32(m) => m.dim(),
            AnyActivation::F64(m) => m.dim(),
        }
    }
}

pub fn encode_sdea<T: Scalar>(m: &ActivationMatrix<T>) -> Result<Vec<u8>> {
    let tag = m.layer_tag().as_bytes();
    let tag_len = u16::try_from(tag.len())
        .map_err(|_| SdeError::InvalidParameter("layer tag longer than 65535 bytes".into()))?;
    let n = u32::try_from(m.rows()).map_err(|_| SdeError::InvalidParameter("too many rows".into()))?;
    let d = u32::try_from(m.dim()).map_err(|_| SdeError::InvalidParameter("dim too large".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + m.values().len() * T::DTYPE.size() + 2 + tag.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for &v in m.values() {
        v.write_le(&mut out);
    }
    out.extend_from_slice(&tag_len.to_le_bytes());
    out.extend_from_slice(tag);
    Ok(out)
}

fn decode_values<T: Scalar>(payload: &[u8], n: usize, d: usize, tag: String) -> Result<ActivationMatrix<T>> {
    let values = payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    ActivationMatrix::from_flat(n, d, values, tag)
}

/// Parses the binary format. Header fields are checked, and the total
/// length verified, before any buffer proportional to `n·d` is allocated.
pub fn decode_sdea(bytes: &[u8]) -> Result<AnyActivation> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(SdeError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(SdeError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    if bytes[4] != VERSION {
        return Err(SdeError::UnsupportedVersion(bytes[4]));
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or(SdeError::UnsupportedDtype(bytes[5]))?;
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let payload_len = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(dtype.size()))
        .ok_or_else(|| SdeError::InvalidParameter(format!("declared size {n}x{d} overflows")))?;
    let tag_at = HEADER_LEN + payload_len;
    if bytes.len() < tag_at + 2 {
        return Err(SdeError::Truncated { expected: tag_at + 2, actual: bytes.len() });
    }
    let tag_len = u16::from_le_bytes([bytes[tag_at], bytes[tag_at + 1]]) as usize;
    let expected = tag_at + 2 + tag_len;
    if bytes.len() < expected {
        return Err(SdeError::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(SdeError::InvalidParameter(format!(
            "{} trailing bytes after layer tag",
            bytes.len() - expected
        )));
    }
    let tag = std::str::from_utf8(&bytes[tag_at + 2..expected])
        .map_err(|_| SdeError::InvalidParameter("layer tag is not valid UTF-8".into()))?
        .to_string();
    let payload = &bytes[HEADER_LEN..tag_at];
    Ok(match dtype {
        Dtype::F32 => AnyActivation::F32(decode_values(payload, n, d, tag)?),
        Dtype::F64 => AnyActivation::F64(decode_values(payload, n, d, tag)?),
    })
}

/// Parses the headered CSV form into double precision.
pub fn parse_csv(text: &str) -> Result<ActivationMatrix<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(SdeError::BadMagic)?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or(SdeError::Parse { line: 1, msg: "expected header \"dim=<d>\"".into() })?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim {
            return Err(SdeError::DimensionMismatch(format!(
                "line {lineno}: {} fields, header declares dim={dim}",
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| SdeError::Parse { line: lineno, msg: format!("not a number: {:?}", f.trim()) })?;
            values.push(v);
        }
        rows += 1;
    }
    ActivationMatrix::from_flat(rows, dim, values, "")
}

pub fn format_csv<T: Scalar>(m: &ActivationMatrix<T>) -> String {
    let mut out = format!("dim={}\n", m.dim());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Reads either format, dispatching on the leading bytes.
pub fn read_activation_file(path: impl AsRef<Path>) -> Result<AnyActivation> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_sdea(&bytes)
    } else if bytes.starts_with(b"dim=") {
        let text = std::str::from_utf8(&bytes).map_err(|_| SdeError::Parse { line: 1, msg: "not UTF-8".into() })?;
        Ok(AnyActivation::F64(parse_csv(text)?))
    } else {
        Err(SdeError::BadMagic)
    }
}

pub fn write_activation_file<T: Scalar>(path: impl AsRef<Path>, m: &ActivationMatrix<T>) -> Result<()> {
    fs::write(path, encode_sdea(m)?)?;
    Ok(())
}
