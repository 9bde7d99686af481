//! Class Activation Profiles and the structural analyses built on them.
//!
//! A CAP is the mean densified sparse code of all ID-train samples of one
//! class, zeros included. The class's core set is the top fraction `q` of
//! latents ranked by CAP value.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::dataset::EmbeddingDataset;
use crate::linalg::{dot, norm, Matrix};
use crate::sae::{encode_dataset, InputNormalizer, SaeModel, SparseCode};
use crate::{fraction_count, Error, Result};

/// Default core-set fraction.
pub const DEFAULT_CORE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CapTable {
    /// `C x D_latent`, `f32`-exact.
    caps: Matrix,
    counts: Vec<u64>,
    /// `f32`-exact core-set fraction.
    q: f64,
    core_sets: Vec<Vec<usize>>,
}

/// Indices of the `len` largest entries of `values`, ordered by descending
/// value with ties toward the lower index.
pub fn ranked_indices(values: &[f64], len: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let by_rank = |&a: &usize, &b: &usize| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    };
    let len = len.min(values.len());
    if len == 0 {
        return Vec::new();
    }
    if len < idx.len() {
        idx.select_nth_unstable_by(len - 1, by_rank);
        idx.truncate(len);
    }
    idx.sort_unstable_by(by_rank);
    idx
}

impl CapTable {
    /// Builds a table from stored CAPs; core sets are recomputed.
    pub fn from_parts(caps: Matrix, counts: Vec<u64>, q: f64) -> Result<Self> {
        if caps.rows() == 0 || caps.cols() == 0 {
            return Err(Error::InvalidConfig("CAP table must be non-empty"));
        }
        if counts.len() != caps.rows() {
            return Err(Error::LengthMismatch(caps.rows(), counts.len()));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidConfig("core fraction q must lie in (0, 1]"));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        if caps
            .as_slice()
            .iter()
            .any(|&v| !(v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidConfig("CAP entries must be finite and >= 0"));
        }
        let size = fraction_count(q, caps.cols());
        let core_sets = (0..caps.rows())
            .map(|c| {
                let mut set = ranked_indices(caps.row(c), size);
                set.sort_unstable();
                set
            })
            .collect();
        Ok(Self {
            caps,
            counts,
            q,
            core_sets,
        })
    }

    pub fn classes(&self) -> usize {
        self.caps.rows()
    }

    pub fn d_latent(&self) -> usize {
        self.caps.cols()
    }

    pub fn caps(&self) -> &Matrix {
        &self.caps
    }

    pub fn cap(&self, class: usize) -> &[f64] {
        self.caps.row(class)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Ascending core-set indices of `class`.
    pub fn core_set(&self, class: usize) -> &[usize] {
        &self.core_sets[class]
    }

    pub fn core_sets(&self) -> &[Vec<usize>] {
        &self.core_sets
    }

    pub fn check_class(&self, class: i64) -> Result<usize> {
        if class < 0 || class as usize >= self.classes() {
            return Err(Error::UnknownClass {
                class,
                classes: self.classes(),
            });
        }
        Ok(class as usize)
    }
}

/// Mean of densified codes, accumulated in `f64` in slice order and rounded
/// to `f32`.
fn mean_code<'a>(codes: impl Iterator<Item = &'a SparseCode>, d_latent: usize) -> (Vec<f64>, u64) {
    let mut sum = vec![0.0; d_latent];
    let mut count = 0u64;
    for code in codes {
        for (j, v) in code.iter() {
            sum[j] += v;
        }
        count += 1;
    }
    if count > 0 {
        for s in &mut sum {
            *s = f64::from((*s / count as f64) as f32);
        }
    }
    (sum, count)
}

/// CAPs from precomputed codes and dense labels in `[0, C)`.
pub fn build_caps_from_codes(codes: &[SparseCode], labels: &[i32], q: f64) -> Result<CapTable> {
    if codes.len() != labels.len() {
        return Err(Error::LengthMismatch(codes.len(), labels.len()));
    }
    let d_latent = codes.first().ok_or(Error::EmptyDataset)?.d_latent();
    if labels.iter().any(|&l| l < 0) {
        return Err(Error::InvalidDataset("negative class id"));
    }
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut caps = Matrix::zeros(classes, d_latent);
    let mut counts = vec![0; classes];
    for (c, slot) in counts.iter_mut().enumerate() {
        let members = codes
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l as usize == c)
            .map(|(code, _)| code);
        let (mean, count) = mean_code(members, d_latent);
        if count == 0 {
            return Err(Error::EmptyClass(c));
        }
        caps.row_mut(c).copy_from_slice(&mean);
        *slot = count;
    }
    CapTable::from_parts(caps, counts, f64::from(q as f32))
}

/// Encodes the ID-train split and averages codes per true class.
pub fn build_caps(
    model: &SaeModel,
    normalizer: &InputNormalizer,
    train: &EmbeddingDataset,
    q: f64,
) -> Result<CapTable> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidConfig("core fraction q must lie in (0, 1]"));
    }
    let labels = train.true_labels().ok_or(Error::MissingLabels("true"))?;
    train.class_count()?;
    let codes = encode_dataset(model, normalizer, train)?;
    build_caps_from_codes(&codes, labels, q)
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    // both ascending
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pairwise Jaccard similarity of core sets; symmetric with unit diagonal.
pub fn jaccard_matrix(table: &CapTable) -> Matrix {
    let c = table.classes();
    let mut out = Matrix::identity(c);
    for i in 0..c {
        for j in i + 1..c {
            let s = jaccard(table.core_set(i), table.core_set(j));
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Mean of the off-diagonal entries of a square matrix.
pub fn mean_off_diagonal(m: &Matrix) -> f64 {
    let c = m.rows();
    if c < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j {
                sum += m[(i, j)];
            }
        }
    }
    sum / (c * (c - 1)) as f64
}

/// Pairwise cosine similarity of full CAP vectors.
pub fn cap_cosine_matrix(table: &CapTable) -> Result<Matrix> {
    let c = table.classes();
    let norms: Vec<f64> = (0..c).map(|i| norm(table.cap(i))).collect();
    if let Some(z) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormCap(z));
    }
    let mut out = Matrix::identity(c);
    for i in 0..c {
        for j in i + 1..c {
            let s = (dot(table.cap(i), table.cap(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// Class whose core set receives the most activation mass; ties go to the
/// lower class id, so an empty code routes to class 0.
pub fn predict_class(table: &CapTable, code: &SparseCode) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..table.classes() {
        let set = table.core_set(c);
        let mass: f64 = code
            .iter()
            .filter(|(j, _)| set.binary_search(j).is_ok())
            .map(|(_, v)| v)
            .sum();
        if mass > best.1 {
            best = (c, mass);
        }
    }
    best.0
}

/// Predicted class per sample: `pred_labels` when the dataset carries them,
/// otherwise [`predict_class`].
pub fn route(table: &CapTable, ds: &EmbeddingDataset, codes: &[SparseCode]) -> Result<Vec<usize>> {
    match ds.pred_labels() {
        Some(preds) => preds
            .iter()
            .map(|&p| table.check_class(i64::from(p)))
            .collect(),
        None => Ok(codes.iter().map(|c| predict_class(table, c)).collect()),
    }
}

/// Core-set activation means of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Affinity {
    pub pred_class: usize,
    /// Mean activation over the predicted class's core set.
    pub matched_core_mean: f64,
    /// Mean activation over the union of every other class's core set.
    pub other_core_mean: f64,
}

/// Affinity statistics for precomputed codes and routed classes.
pub fn affinity_from_codes(
    table: &CapTable,
    codes: &[SparseCode],
    preds: &[usize],
) -> Vec<Affinity> {
    let d = table.d_latent();
    let mut membership = vec![0u32; d];
    for set in table.core_sets() {
        for &j in set {
            membership[j] += 1;
        }
    }
    let mut in_pred = vec![false; d];
    codes
        .iter()
        .zip(preds)
        .map(|(code, &pred)| {
            let set = table.core_set(pred);
            for &j in set {
                in_pred[j] = true;
            }
            let in_other = |j: usize| membership[j] > u32::from(in_pred[j]);
            let other_size = (0..d).filter(|&j| in_other(j)).count();
            let (mut matched, mut other) = (0.0, 0.0);
            for (j, v) in code.iter() {
                if in_pred[j] {
                    matched += v;
                }
                if in_other(j) {
                    other += v;
                }
            }
            for &j in set {
                in_pred[j] = false;
            }
            Affinity {
                pred_class: pred,
                matched_core_mean: matched / set.len() as f64,
                other_core_mean: if other_size == 0 {
                    0.0
                } else {
                    other / other_size as f64
                },
            }
        })
        .collect()
}

pub fn affinity_stats(
    table: &CapTable,
    model: &SaeModel,
    normalizer: &InputNormalizer,
    ds: &EmbeddingDataset,
) -> Result<Vec<Affinity>> {
    let codes = encode_dataset(model, normalizer, ds)?;
    let preds = route(table, ds, &codes)?;
    Ok(affinity_from_codes(table, &codes, &preds))
}

/// One row of a head-profile comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProfileRow {
    /// 1-based rank by descending CAP value.
    pub rank: usize,
    pub latent: usize,
    pub id_mean: f64,
    pub sample_mean: f64,
}

/// CAP head of `class` next to the mean code of the samples routed to it.
pub fn profile_from_codes(
    table: &CapTable,
    codes: &[SparseCode],
    preds: &[usize],
    class: usize,
    p: f64,
) -> Result<Vec<ProfileRow>> {
    let class = table.check_class(class as i64)?;
    let members = codes
        .iter()
        .zip(preds)
        .filter(|(_, &c)| c == class)
        .map(|(code, _)| code);
    let (sample_mean, count) = mean_code(members, table.d_latent());
    if count == 0 {
        return Err(Error::EmptyClass(class));
    }
    let cap = table.cap(class);
    let len = fraction_count(p, table.d_latent());
    Ok(ranked_indices(cap, len)
        .into_iter()
        .enumerate()
        .map(|(r, j)| ProfileRow {
            rank: r + 1,
            latent: j,
            id_mean: cap[j],
            sample_mean: sample_mean[j],
        })
        .collect())
}

pub fn profile_export(
    table: &CapTable,
    model: &SaeModel,
    normalizer: &InputNormalizer,
    ds: &EmbeddingDataset,
    class: usize,
    p: f64,
) -> Result<Vec<ProfileRow>> {
    let codes = encode_dataset(model, normalizer, ds)?;
    let preds = route(table, ds, &codes)?;
    profile_from_codes(table, &codes, &preds, class, p)
}
