//! SAE1 checkpoints: model parameters plus the input normalizer.
//!
//! Layout (little-endian): magic `SAE1`, version `u8 = 1`, `D_in: u32`,
//! `D_latent: u32`, `k: u32`, then `f32` arrays `W_enc` (row-major
//! `D_latent x D_in`), `b_enc`, `W_dec` (row-major `D_in x D_latent`),
//! `b_dec`, normalizer mean (`D_in`) and normalizer scale (one value).

use std::path::Path;

use caps_ood_core::linalg::Matrix;
use caps_ood_core::sae::{InputNormalizer, SaeModel};

use crate::bytes::{checked_len, put_f64s_as_f32, read_file, write_file, Reader};
use crate::{Error, Result};

pub const MAGIC: &str = "SAE1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

pub fn encode_model(model: &SaeModel, normalizer: &InputNormalizer) -> Result<Vec<u8>> {
    if normalizer.dim() != model.d_in() {
        return Err(Error::InvalidHeader(format!(
            "normalizer width {} does not match D_in {}",
            normalizer.dim(),
            model.d_in()
        )));
    }
    let (d_in, d_latent) = (model.d_in(), model.d_latent());
    let mut out =
        Vec::with_capacity(HEADER_LEN + 4 * (2 * d_in * d_latent + d_latent + 2 * d_in + 1));
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(VERSION);
    for v in [d_in, d_latent, model.k()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in model.parameters() {
        put_f64s_as_f32(&mut out, p.as_slice());
    }
    put_f64s_as_f32(&mut out, &normalizer.mean);
    put_f64s_as_f32(&mut out, &[normalizer.scale]);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(SaeModel, InputNormalizer)> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let d_in = r.u32()? as usize;
    let d_latent = r.u32()? as usize;
    let k = r.u32()? as usize;
    if d_in == 0 || d_latent == 0 {
        return Err(Error::InvalidHeader(format!(
            "empty shape D_in={d_in}, D_latent={d_latent}"
        )));
    }
    if k == 0 || k > d_latent {
        return Err(Error::InvalidHeader(format!(
            "k={k} outside [1, D_latent={d_latent}]"
        )));
    }
    let weights = checked_len(d_in as u64, d_latent as u64)?;
    r.require(4 * (2 * weights as u64 + d_latent as u64 + 2 * d_in as u64 + 1))?;
    let w_enc = Matrix::from_vec(d_latent, d_in, r.f32s_as_f64(weights)?)?;
    let b_enc = r.f32s_as_f64(d_latent)?;
    let w_dec = Matrix::from_vec(d_in, d_latent, r.f32s_as_f64(weights)?)?;
    let b_dec = r.f32s_as_f64(d_in)?;
    let mean = r.f32s_as_f64(d_in)?;
    let scale = f64::from(r.f32()?);
    r.finish()?;
    if !(scale > 0.0) || !scale.is_finite() || mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidHeader(
            "normalizer must be finite with positive scale".into(),
        ));
    }
    let model = SaeModel::from_parts(w_enc, b_enc, w_dec, b_dec, k)?;
    Ok((model, InputNormalizer { mean, scale }))
}

pub fn save_model(
    model: &SaeModel,
    normalizer: &InputNormalizer,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(path.as_ref(), &encode_model(model, normalizer)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(SaeModel, InputNormalizer)> {
    decode_model(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use caps_ood_core::rng::seeded_rng;

    fn sample() -> (SaeModel, InputNormalizer) {
        let mut rng = seeded_rng(9);
        let model = SaeModel::init(3, 7, 2, &mut rng).unwrap();
        let nz = InputNormalizer {
            mean: vec![0.5, -1.0, 2.0],
            scale: 1.5,
        };
        (model, nz)
    }

    #[test]
    fn roundtrip_is_exact() {
        let (m, nz) = sample();
        let bytes = encode_model(&m, &nz).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4 * (2 * 21 + 7 + 3 + 3 + 1));
        let (m2, nz2) = decode_model(&bytes).unwrap();
        assert_eq!(m2, m);
        assert_eq!(nz2, nz);
        assert_eq!(encode_model(&m2, &nz2).unwrap(), bytes);
    }

    #[test]
    fn header_errors() {
        let (m, nz) = sample();
        let mut bytes = encode_model(&m, &nz).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::BadMagic { .. })));

        let mut bytes = encode_model(&m, &nz).unwrap();
        bytes[13..17].copy_from_slice(&8u32.to_le_bytes());
        assert!(matches!(decode_model(&bytes), Err(Error::InvalidHeader(_))));

        let bytes = encode_model(&m, &nz).unwrap();
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 4]),
            Err(Error::TruncatedFile { .. })
        ));
    }
}
