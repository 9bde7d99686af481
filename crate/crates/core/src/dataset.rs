//! In-memory embedding datasets.

use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// `n x d` matrix of backbone embeddings with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub name: String,
    n: usize,
    d: usize,
    data: Vec<f32>,
    true_labels: Option<Vec<i32>>,
    pred_labels: Option<Vec<i32>>,
}

impl EmbeddingDataset {
    /// Validates shape, finiteness and label arrays.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        d: usize,
        data: Vec<f32>,
        true_labels: Option<Vec<i32>>,
        pred_labels: Option<Vec<i32>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if d == 0 {
            return Err(Error::InvalidDataset("embedding dimension is zero"));
        }
        if data.len() != n * d {
            return Err(Error::shape(n * d, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        for labels in [&true_labels, &pred_labels].into_iter().flatten() {
            if labels.len() != n {
                return Err(Error::shape(n, labels.len()));
            }
            if labels.iter().any(|&l| l < 0) {
                return Err(Error::InvalidDataset("negative class id"));
            }
        }
        Ok(Self {
            name: name.into(),
            n,
            d,
            data,
            true_labels,
            pred_labels,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    /// Always false for a constructed dataset.
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn true_labels(&self) -> Option<&[i32]> {
        self.true_labels.as_deref()
    }

    pub fn pred_labels(&self) -> Option<&[i32]> {
        self.pred_labels.as_deref()
    }

    pub fn with_pred_labels(mut self, labels: Option<Vec<i32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n {
                return Err(Error::shape(self.n, l.len()));
            }
            if l.iter().any(|&c| c < 0) {
                return Err(Error::InvalidDataset("negative class id"));
            }
        }
        self.pred_labels = labels;
        Ok(self)
    }

    /// Number of classes `C` implied by dense true labels in `[0, C)`.
    ///
    /// Fails with [`Error::EmptyClass`] if any id below the maximum is unused.
    pub fn class_count(&self) -> Result<usize> {
        let labels = self.true_labels().ok_or(Error::MissingLabels("true"))?;
        let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut seen = alloc::vec![false; classes];
        for &l in labels {
            seen[l as usize] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(c) => Err(Error::EmptyClass(c)),
            None => Ok(classes),
        }
    }
}
