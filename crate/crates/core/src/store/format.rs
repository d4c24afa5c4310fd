//! ACTV1 activation dump format.
//!
//! Little-endian, 32-byte header followed by a row-major float32 payload:
//!
//! | bytes  | field                 |
//! |--------|-----------------------|
//! | 0..4   | magic `ACTV`          |
//! | 4..8   | version `u32` = 1     |
//! | 8..16  | rows `u64`            |
//! | 16..24 | cols `u64`            |
//! | 24..28 | dtype `u32` (0 = f32) |
//! | 28..32 | reserved `u32` = 0    |

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"ACTV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const DTYPE_F32: u32 = 0;

pub(crate) fn encode_header(rows: usize, cols: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&(rows as u64).to_le_bytes());
    h[16..24].copy_from_slice(&(cols as u64).to_le_bytes());
    h[24..28].copy_from_slice(&DTYPE_F32.to_le_bytes());
    h
}

/// Appends one header + payload block to `out`. The caller guarantees finiteness.
pub(crate) fn write_block(out: &mut impl Write, m: &Matrix<f32>) -> std::io::Result<()> {
    out.write_all(&encode_header(m.nrows(), m.ncols()))?;
    for v in m.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Parses one block starting at `bytes[0]`; returns the matrix and the bytes consumed.
pub(crate) fn parse_block(path: &Path, bytes: &[u8]) -> Result<(Matrix<f32>, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let rows = u64_at(bytes, 8);
    let cols = u64_at(bytes, 16);
    let dtype = u32_at(bytes, 24);
    if dtype != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype {dtype} at byte 24")));
    }
    if u32_at(bytes, 28) != 0 {
        return Err(Error::format(path, "reserved field at byte 28 is nonzero"));
    }
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::format(path, "declared shape overflows"))?;
    let available = bytes.len() - HEADER_LEN;
    if available < payload_len {
        return Err(Error::format(
            path,
            format!("truncated payload: expected {payload_len} bytes, found {available}"),
        ));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let data: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + payload_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(p) = data.iter().position(|x| !x.is_finite()) {
        let (r, c) = (p / cols, p % cols);
        return Err(Error::format(
            path,
            format!(
                "non-finite value at ({r},{c}), byte offset {}",
                HEADER_LEN + 4 * p
            ),
        ));
    }
    Ok((Matrix::new(rows, cols, data)?, HEADER_LEN + payload_len))
}

/// Writes a single-block ACTV1 file.
pub fn write_matrix(path: &Path, m: &Matrix<f32>) -> Result<()> {
    if let Some((row, col)) = m.first_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_block(&mut w, m)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a single-block ACTV1 file, rejecting trailing bytes.
pub fn read_matrix(path: &Path) -> Result<Matrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, used) = parse_block(path, &bytes)?;
    if used != bytes.len() {
        return Err(Error::format(
            path,
            format!("payload length mismatch: {} trailing bytes", bytes.len() - used),
        ));
    }
    Ok(m)
}
