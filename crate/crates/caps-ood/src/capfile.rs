//! CAP1 files: per-class CAP matrix and sample counts.
//!
//! Layout (little-endian): magic `CAP1`, version `u8 = 1`, `C: u32`,
//! `D_latent: u32`, `q: f32`, then the `C x D_latent` CAP matrix as
//! row-major `f32`, then `C` `u32` counts. Core sets are recomputed on load.

use std::path::Path;

use caps_ood_core::caps::CapTable;
use caps_ood_core::linalg::Matrix;

use crate::bytes::{checked_len, put_f64s_as_f32, read_file, write_file, Reader};
use crate::{Error, Result};

pub const MAGIC: &str = "CAP1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

pub fn encode_caps(table: &CapTable) -> Result<Vec<u8>> {
    let (c, d) = (table.classes(), table.d_latent());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * c * (d + 1));
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(VERSION);
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(table.q() as f32).to_le_bytes());
    put_f64s_as_f32(&mut out, table.caps().as_slice());
    for &n in table.counts() {
        let n = u32::try_from(n)
            .map_err(|_| Error::InvalidHeader(format!("class count {n} exceeds u32")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_caps(bytes: &[u8]) -> Result<CapTable> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let c = r.u32()? as usize;
    let d = r.u32()? as usize;
    let q = r.f32()?;
    if c == 0 || d == 0 {
        return Err(Error::InvalidHeader(format!(
            "empty shape C={c}, D_latent={d}"
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidHeader(format!("q={q} outside (0, 1]")));
    }
    let len = checked_len(c as u64, d as u64)?;
    r.require(4 * (len as u64 + c as u64))?;
    let caps = Matrix::from_vec(c, d, r.f32s_as_f64(len)?)?;
    let counts = r.u32s(c)?.into_iter().map(u64::from).collect();
    r.finish()?;
    Ok(CapTable::from_parts(caps, counts, f64::from(q))?)
}

pub fn save_caps(table: &CapTable, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_caps(table)?)
}

pub fn load_caps(path: impl AsRef<Path>) -> Result<CapTable> {
    decode_caps(&read_file(path.as_ref())?)
}
