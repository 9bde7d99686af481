//! Dataset-level scoring and manifest evaluation.

use std::path::Path;

use caps_ood_core::caps::CapTable;
use caps_ood_core::dataset::EmbeddingDataset;
use caps_ood_core::epd::{check_dims, ScoreConfig, Scorer};
use caps_ood_core::metrics::{evaluate_scores, EvalReport};
use caps_ood_core::sae::{InputNormalizer, SaeModel};
use log::{info, warn};
use rayon::prelude::*;

use crate::bytes::write_file;
use crate::emb1::read_embeddings;
use crate::export::write_report_csv;
use crate::manifest::{DatasetManifest, ManifestEntry, Role};
use crate::{Error, Result};

/// Bundle of everything needed to score embeddings.
#[derive(Debug, Clone, Copy)]
pub struct Detector<'a> {
    pub model: &'a SaeModel,
    pub normalizer: &'a InputNormalizer,
    pub caps: &'a CapTable,
    pub config: ScoreConfig,
}

impl Detector<'_> {
    /// `(routed class, score)` for every row, in row order. Rows are scored
    /// in parallel; the result does not depend on the thread count.
    pub fn score(&self, ds: &EmbeddingDataset) -> Result<Vec<(usize, f64)>> {
        check_dims(self.caps, self.model, self.normalizer, ds)?;
        let scorer = Scorer::new(self.caps, self.config)?;
        let preds = ds.pred_labels();
        (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let code = self.model.encode(&self.normalizer.normalize(ds.row(i)))?;
                let class = scorer.route(&code, preds.map(|p| p[i]))?;
                Ok((class, scorer.score_code(&code, class as i64)?))
            })
            .collect()
    }

    pub fn scores(&self, ds: &EmbeddingDataset) -> Result<Vec<f64>> {
        Ok(self.score(ds)?.into_iter().map(|(_, s)| s).collect())
    }
}

/// Reads a manifest entry, naming the dataset after the entry.
pub fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<EmbeddingDataset> {
    let mut ds = read_embeddings(manifest.resolve(entry))?;
    ds.name = entry.name.clone();
    Ok(ds)
}

/// Scores every `id_test` entry (concatenated) once and each `ood` entry
/// against those shared ID scores.
pub fn evaluate(manifest: &DatasetManifest, detector: &Detector<'_>) -> Result<EvalReport> {
    let id_entries: Vec<_> = manifest.with_role(Role::IdTest).collect();
    if id_entries.is_empty() {
        return Err(Error::MissingSplit("id_test"));
    }
    let ood_entries: Vec<_> = manifest.with_role(Role::Ood).collect();
    if ood_entries.is_empty() {
        return Err(Error::MissingSplit("ood"));
    }

    let mut id_scores = Vec::new();
    for entry in id_entries {
        let ds = load_entry(manifest, entry)?;
        info!("scoring {} ({} rows)", entry.name, ds.len());
        id_scores.extend(detector.scores(&ds)?);
    }
    if id_scores.len() < 20 {
        warn!(
            "only {} ID scores; FPR95 is unreliable below 20",
            id_scores.len()
        );
    }

    let mut ood = Vec::with_capacity(ood_entries.len());
    for entry in ood_entries {
        let ds = load_entry(manifest, entry)?;
        info!("scoring {} ({} rows)", entry.name, ds.len());
        ood.push((entry.name.clone(), detector.scores(&ds)?));
    }
    Ok(evaluate_scores(
        detector.config.metric.as_str(),
        detector.config.p,
        &id_scores,
        ood.iter().map(|(n, s)| (n.as_str(), s.as_slice())),
    )?)
}

/// Writes `report.json` and a flat CSV next to it (same stem, `.csv`).
pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report)? + "\n";
    write_file(path, json.as_bytes())?;
    write_report_csv(report, path.with_extension("csv"))
}
