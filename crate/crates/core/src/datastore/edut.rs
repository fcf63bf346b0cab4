//! The `EDUT` binary tensor format.
//!
//! ```text
//! "EDUT" | version u8 | dtype u8 (0 = f32, 1 = f64) | ndim u8 | dims: ndim × u64 LE | payload LE, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"EDUT";
pub const VERSION: u8 = 1;

const PREAMBLE: usize = 7;

/// Serialize a tensor at its storage precision.
pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::shape("edut", format!("rank {} exceeds 255", t.ndim())));
    }
    let dtype = t.dtype();
    let mut out = Vec::with_capacity(PREAMBLE + 8 * t.ndim() + dtype.size_of() * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Parse an `EDUT` byte buffer; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let format = |detail: String| Error::Format {
        path: origin.to_path_buf(),
        detail,
    };
    if bytes.len() < PREAMBLE {
        return Err(format(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(format(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| format(format!("unknown dtype code {}", bytes[5])))?;
    let ndim = bytes[6] as usize;
    let header = PREAMBLE + 8 * ndim;
    if bytes.len() < header {
        return Err(format(format!(
            "header declares {ndim} dims but the file ends after {} bytes",
            bytes.len()
        )));
    }
    let mut shape = Vec::with_capacity(ndim);
    for chunk in bytes[PREAMBLE..header].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        shape.push(usize::try_from(d).map_err(|_| format(format!("dimension {d} does not fit in memory")))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format(format!("element count of {shape:?} overflows")))?;
    let expected = count
        .checked_mul(dtype.size_of())
        .ok_or_else(|| format(format!("payload size of {shape:?} overflows")))?;
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: origin.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(format(format!(
            "{} trailing bytes after a {expected}-byte payload",
            payload.len() - expected
        )));
    }
    let data: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    Ok(Tensor::new(shape, data)?.cast(dtype))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes, path)
}
