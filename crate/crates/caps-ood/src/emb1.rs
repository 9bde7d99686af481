//! EMB1 embedding files.
//!
//! Layout (little-endian): magic `EMB1`, version `u8 = 1`, flags `u8`
//! (bit 0 true labels, bit 1 predicted labels), `n: u64`, `d: u32`, then
//! `n * d` row-major `f32`, then `n` `i32` true labels if flagged, then `n`
//! `i32` predicted labels if flagged. The header is 18 bytes.

use std::path::Path;

use caps_ood_core::dataset::EmbeddingDataset;

use crate::bytes::{checked_len, put_f32s, read_file, write_file, Reader};
use crate::{Error, Result};

pub const MAGIC: &str = "EMB1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const FLAG_TRUE_LABELS: u8 = 1;
pub const FLAG_PRED_LABELS: u8 = 2;

pub fn flags(ds: &EmbeddingDataset) -> u8 {
    let mut f = 0;
    if ds.true_labels().is_some() {
        f |= FLAG_TRUE_LABELS;
    }
    if ds.pred_labels().is_some() {
        f |= FLAG_PRED_LABELS;
    }
    f
}

pub fn encode_embeddings(ds: &EmbeddingDataset) -> Vec<u8> {
    let n = ds.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (ds.dim() + 2));
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(VERSION);
    out.push(flags(ds));
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    put_f32s(&mut out, ds.data().iter().copied());
    for labels in [ds.true_labels(), ds.pred_labels()].into_iter().flatten() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], name: &str) -> Result<EmbeddingDataset> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let flags = r.u8()?;
    if flags & !(FLAG_TRUE_LABELS | FLAG_PRED_LABELS) != 0 {
        return Err(Error::InvalidHeader(format!(
            "unknown flag bits {flags:#04x}"
        )));
    }
    let n = r.u64()?;
    let d = r.u32()?;
    if n == 0 || d == 0 {
        return Err(Error::InvalidHeader(format!("empty shape {n}x{d}")));
    }
    let count = checked_len(n, u64::from(d))?;
    let labels =
        u64::from(flags & FLAG_TRUE_LABELS != 0) + u64::from(flags & FLAG_PRED_LABELS != 0);
    let payload = (count as u64)
        .checked_add(
            labels
                .checked_mul(n)
                .ok_or_else(|| Error::InvalidHeader("n too large".into()))?,
        )
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::InvalidHeader("n too large".into()))?;
    r.require(payload)?;
    let data = r.f32s(count)?;
    let n = n as usize;
    let true_labels = (flags & FLAG_TRUE_LABELS != 0)
        .then(|| r.i32s(n))
        .transpose()?;
    let pred_labels = (flags & FLAG_PRED_LABELS != 0)
        .then(|| r.i32s(n))
        .transpose()?;
    r.finish()?;
    Ok(EmbeddingDataset::new(
        name,
        n,
        d as usize,
        data,
        true_labels,
        pred_labels,
    )?)
}

/// Reads an EMB1 file; the dataset is named after the file stem.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    decode_embeddings(&read_file(path)?, &name)
}

pub fn write_embeddings(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_embeddings(ds))
}
