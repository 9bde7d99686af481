//! Energy Profile Divergence scoring.
//!
//! For a sample routed to class `c`, the head `M` is the `L = ceil(p D_latent)`
//! latents with the largest CAP values. The CAP restricted to `M` gives the
//! core vector `C`, the sample's code restricted to `M` gives `S`. Both are
//! L1-normalized (with additive smoothing) into profiles `Q` and `P`, and the
//! score is `KL(P || Q)` in nats. Higher scores mean "more OOD" for every
//! metric.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::caps::{predict_class, ranked_indices, CapTable};
use crate::dataset::EmbeddingDataset;
use crate::linalg::{dot, norm};
use crate::sae::{InputNormalizer, SaeModel, SparseCode};
use crate::{fraction_count, Error, Result};

pub const DEFAULT_HEAD_FRACTION: f64 = 0.15;
pub const DEFAULT_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Metric {
    /// KL divergence between normalized head profiles.
    #[default]
    Epd,
    /// `||S - C||_2` on the raw core vectors.
    Euclidean,
    /// `1 - cos(S, C)` on the raw core vectors; 1 when either is zero.
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Epd => "epd",
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epd" => Ok(Metric::Epd),
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::InvalidConfig(
                "metric must be one of epd, euclidean, cosine",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreConfig {
    /// Head fraction in `(0, 1]`.
    pub p: f64,
    /// Additive smoothing applied to both profiles.
    pub epsilon: f64,
    pub metric: Metric,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            p: DEFAULT_HEAD_FRACTION,
            epsilon: DEFAULT_EPSILON,
            metric: Metric::Epd,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidConfig("head fraction p must lie in (0, 1]"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig("epsilon must be positive and finite"));
        }
        Ok(())
    }
}

/// Probability vector over the head latents.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    probs: Vec<f64>,
}

impl EnergyProfile {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `(v_i + eps) / (sum(v) + L eps)`.
pub fn normalize_profile(v: &[f64], epsilon: f64) -> Result<EnergyProfile> {
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, &x)| !(x >= 0.0)) {
        return Err(Error::NegativeEntry { index, value });
    }
    let denom = v.iter().sum::<f64>() + v.len() as f64 * epsilon;
    if !(denom > 0.0) {
        return Err(Error::InvalidConfig(
            "all-zero profile requires epsilon > 0",
        ));
    }
    Ok(EnergyProfile {
        probs: v.iter().map(|x| (x + epsilon) / denom).collect(),
    })
}

/// `KL(P || Q) = sum P_i ln(P_i / Q_i)`, with `0 ln 0 = 0`.
pub fn epd(p: &EnergyProfile, q: &EnergyProfile) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * libm::log(pi / qi))
        .sum())
}

/// Head indices and the two core vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreVectors {
    /// Head latents in descending CAP order.
    pub indices: Vec<usize>,
    /// CAP values on the head.
    pub cap: Vec<f64>,
    /// Sample activations on the head (0 where inactive).
    pub sample: Vec<f64>,
}

pub fn head_length(p: f64, d_latent: usize) -> usize {
    fraction_count(p, d_latent)
}

pub fn core_vectors(cap: &[f64], code: &SparseCode, p: f64) -> CoreVectors {
    let indices = ranked_indices(cap, head_length(p, cap.len()));
    core_vectors_on(&indices, cap, code)
}

fn core_vectors_on(indices: &[usize], cap: &[f64], code: &SparseCode) -> CoreVectors {
    CoreVectors {
        indices: indices.to_vec(),
        cap: indices.iter().map(|&j| cap[j]).collect(),
        sample: indices.iter().map(|&j| code.get(j)).collect(),
    }
}

/// Euclidean distance between raw core vectors.
pub fn euclidean_score(sample: &[f64], cap: &[f64]) -> f64 {
    libm::sqrt(sample.iter().zip(cap).map(|(s, c)| (s - c) * (s - c)).sum())
}

/// Cosine distance `1 - cos(S, C)`; 1 when either vector is zero.
pub fn cosine_score(sample: &[f64], cap: &[f64]) -> f64 {
    let (ns, nc) = (norm(sample), norm(cap));
    if ns == 0.0 || nc == 0.0 {
        return 1.0;
    }
    1.0 - (dot(sample, cap) / (ns * nc)).clamp(-1.0, 1.0)
}

/// Scores codes against a CAP table with per-class heads precomputed.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    table: &'a CapTable,
    cfg: ScoreConfig,
    heads: Vec<Vec<usize>>,
    cap_profiles: Vec<EnergyProfile>,
}

impl<'a> Scorer<'a> {
    pub fn new(table: &'a CapTable, cfg: ScoreConfig) -> Result<Self> {
        cfg.validate()?;
        let len = head_length(cfg.p, table.d_latent());
        let heads: Vec<Vec<usize>> = (0..table.classes())
            .map(|c| ranked_indices(table.cap(c), len))
            .collect();
        let cap_profiles = heads
            .iter()
            .enumerate()
            .map(|(c, head)| {
                let cap: Vec<f64> = head.iter().map(|&j| table.cap(c)[j]).collect();
                normalize_profile(&cap, cfg.epsilon)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            table,
            cfg,
            heads,
            cap_profiles,
        })
    }

    pub fn config(&self) -> &ScoreConfig {
        &self.cfg
    }

    pub fn table(&self) -> &CapTable {
        self.table
    }

    pub fn head(&self, class: usize) -> &[usize] {
        &self.heads[class]
    }

    pub fn core_vectors(&self, code: &SparseCode, class: usize) -> CoreVectors {
        core_vectors_on(&self.heads[class], self.table.cap(class), code)
    }

    /// Score of `code` against the CAP of `class`.
    pub fn score_code(&self, code: &SparseCode, class: i64) -> Result<f64> {
        let class = self.table.check_class(class)?;
        let core = self.core_vectors(code, class);
        match self.cfg.metric {
            Metric::Epd => {
                let p = normalize_profile(&core.sample, self.cfg.epsilon)?;
                epd(&p, &self.cap_profiles[class])
            }
            Metric::Euclidean => Ok(euclidean_score(&core.sample, &core.cap)),
            Metric::Cosine => Ok(cosine_score(&core.sample, &core.cap)),
        }
    }

    /// Routed class of a code: the given label, or [`predict_class`].
    pub fn route(&self, code: &SparseCode, pred: Option<i32>) -> Result<usize> {
        match pred {
            Some(p) => self.table.check_class(i64::from(p)),
            None => Ok(predict_class(self.table, code)),
        }
    }
}

/// Encodes a raw embedding and scores it against `CAP[pred]`.
pub fn score_sample(
    table: &CapTable,
    model: &SaeModel,
    normalizer: &InputNormalizer,
    x: &[f32],
    pred: i64,
    cfg: &ScoreConfig,
) -> Result<f64> {
    table.check_class(pred)?;
    let code = model.encode(&normalizer.normalize(x))?;
    Scorer::new(table, *cfg)?.score_code(&code, pred)
}

/// One `(routed class, score)` per row of `ds`, in row order.
pub fn score_dataset_routed(
    table: &CapTable,
    model: &SaeModel,
    normalizer: &InputNormalizer,
    ds: &EmbeddingDataset,
    cfg: &ScoreConfig,
) -> Result<Vec<(usize, f64)>> {
    check_dims(table, model, normalizer, ds)?;
    let scorer = Scorer::new(table, *cfg)?;
    let preds = ds.pred_labels();
    (0..ds.len())
        .map(|i| {
            let code = model.encode(&normalizer.normalize(ds.row(i)))?;
            let class = scorer.route(&code, preds.map(|p| p[i]))?;
            Ok((class, scorer.score_code(&code, class as i64)?))
        })
        .collect()
}

pub fn score_dataset(
    table: &CapTable,
    model: &SaeModel,
    normalizer: &InputNormalizer,
    ds: &EmbeddingDataset,
    cfg: &ScoreConfig,
) -> Result<Vec<f64>> {
    Ok(score_dataset_routed(table, model, normalizer, ds, cfg)?
        .into_iter()
        .map(|(_, s)| s)
        .collect())
}

/// Dimension agreement between dataset, normalizer, model and CAP table.
pub fn check_dims(
    table: &CapTable,
    model: &SaeModel,
    normalizer: &InputNormalizer,
    ds: &EmbeddingDataset,
) -> Result<()> {
    if ds.dim() != model.d_in() || normalizer.dim() != model.d_in() {
        return Err(Error::shape(model.d_in(), ds.dim()));
    }
    if table.d_latent() != model.d_latent() {
        return Err(Error::shape(model.d_latent(), table.d_latent()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::vec;

    fn code(dense: &[f64]) -> SparseCode {
        SparseCode::from_dense(dense).unwrap()
    }

    #[test]
    fn core_vector_examples() {
        let cv = core_vectors(&[4.0, 2.0, 0.0, 0.0], &code(&[2.0, 2.0, 0.0, 0.0]), 0.5);
        assert_eq!(cv.indices, vec![0, 1]);
        assert_eq!(cv.cap, vec![4.0, 2.0]);
        assert_eq!(cv.sample, vec![2.0, 2.0]);

        let cv = core_vectors(&[1.0, 3.0, 2.0, 3.0], &SparseCode::empty(4), 1.0);
        assert_eq!(cv.indices, vec![1, 3, 2, 0]);

        let cv = core_vectors(&[4.0, 2.0, 0.0, 0.0], &code(&[0.0, 0.0, 5.0, 1.0]), 0.5);
        assert_eq!(cv.sample, vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_profile_examples() {
        let p = normalize_profile(&[2.0, 2.0], 1e-300).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        let p = normalize_profile(&[0.0, 0.0, 0.0], 0.3).unwrap();
        assert!(p.probs().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = normalize_profile(&[3.0, 1.0], 0.0).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);
        assert!(matches!(
            normalize_profile(&[1.0, -1.0], 0.1),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
    }

    #[test]
    fn epd_examples() {
        let p = normalize_profile(&[1.0, 1.0], 0.0).unwrap();
        let q = normalize_profile(&[3.0, 1.0], 0.0).unwrap();
        assert_eq!(epd(&p, &p).unwrap(), 0.0);
        assert!((epd(&p, &q).unwrap() - 0.1438410362).abs() < 1e-9);

        let p = normalize_profile(&[1.0, 0.0], 1e-10).unwrap();
        let q = normalize_profile(&[1.0, 1.0], 1e-10).unwrap();
        assert!((epd(&p, &q).unwrap() - core::f64::consts::LN_2).abs() < 1e-5);

        let short = normalize_profile(&[1.0], 0.0).unwrap();
        assert_eq!(epd(&p, &short), Err(Error::LengthMismatch(2, 1)));
    }

    #[test]
    fn epd_argument_order_matters() {
        let p = normalize_profile(&[1.0, 1.0], 0.0).unwrap();
        let q = normalize_profile(&[9.0, 1.0], 0.0).unwrap();
        assert!((epd(&p, &q).unwrap() - epd(&q, &p).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn baseline_scores() {
        assert_eq!(euclidean_score(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(cosine_score(&[0.0, 0.0], &[0.0, 1.0]), 1.0);
        assert!(cosine_score(&[2.0, 4.0], &[1.0, 2.0]).abs() < 1e-15);
    }

    #[test]
    fn scorer_rejects_unknown_class() {
        let t =
            CapTable::from_parts(Matrix::from_rows(&[&[1.0, 0.0]]).unwrap(), vec![1], 0.5).unwrap();
        let cfg = ScoreConfig {
            p: 1.0,
            ..ScoreConfig::default()
        };
        let s = Scorer::new(&t, cfg).unwrap();
        assert!(matches!(
            s.score_code(&SparseCode::empty(2), 1),
            Err(Error::UnknownClass {
                class: 1,
                classes: 1
            })
        ));
        assert!(s.score_code(&SparseCode::empty(2), 0).unwrap() > 0.0);
    }

    #[test]
    fn proportional_sample_scores_near_zero() {
        let t = CapTable::from_parts(
            Matrix::from_rows(&[&[4.0, 2.0, 1.0, 0.5]]).unwrap(),
            vec![3],
            0.5,
        )
        .unwrap();
        let cfg = ScoreConfig {
            p: 1.0,
            ..ScoreConfig::default()
        };
        let s = Scorer::new(&t, cfg).unwrap();
        let score = s.score_code(&code(&[0.8, 0.4, 0.2, 0.1]), 0).unwrap();
        assert!(score < 1e-6, "{score}");
    }
}
