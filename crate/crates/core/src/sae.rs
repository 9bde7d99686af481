//! Top-k sparse autoencoder.
//!
//! The encoder computes `z = W_enc x + b_enc`, applies ReLU and keeps the `k`
//! largest positive entries (ties go to the lower latent index). The decoder
//! reconstructs `x_hat = W_dec h + b_dec` from the surviving latents only.
//!
//! Training minimizes `recon + alpha * aux`, where `recon` is the per-sample
//! squared error divided by `D_in` and averaged over the batch, and `aux`
//! measures how well the top `k_aux` currently-dead latents reconstruct the
//! residual `x - x_hat`. Gradients pass straight through the selected set;
//! unselected latents receive none.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::EmbeddingDataset;
use crate::linalg::{dot, AdamParams, AdamState, Matrix};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Lower bound for the normalizer scale.
pub const MIN_SCALE: f64 = 1e-12;

/// Mean-centering plus one global scale: `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InputNormalizer {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl InputNormalizer {
    /// `mean` is the column mean; `scale` is the average L2 norm of the
    /// centered rows, clamped to [`MIN_SCALE`].
    pub fn fit(ds: &EmbeddingDataset) -> Result<Self> {
        let (n, d) = (ds.len(), ds.dim());
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(ds.row(i)) {
                *m += f64::from(v);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut total = 0.0;
        for i in 0..n {
            let sq: f64 = ds
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(&v, m)| {
                    let c = f64::from(v) - m;
                    c * c
                })
                .sum();
            total += libm::sqrt(sq);
        }
        let scale = (total / n as f64).max(MIN_SCALE);
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .map(|(&v, m)| (f64::from(v) - m) / self.scale)
            .collect()
    }

    /// Rounds mean and scale to `f32` precision, the checkpoint storage width.
    pub fn round_to_f32(&mut self) {
        crate::linalg::round_slice_to_f32(&mut self.mean);
        self.scale = f64::from(self.scale as f32);
    }
}

pub fn fit_normalizer(train: &EmbeddingDataset) -> Result<InputNormalizer> {
    InputNormalizer::fit(train)
}

/// k-sparse latent activation: strictly increasing indices with positive
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    indices: Vec<usize>,
    values: Vec<f64>,
    d_latent: usize,
}

impl SparseCode {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, d_latent: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::LengthMismatch(indices.len(), values.len()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "sparse code indices must be strictly increasing",
            ));
        }
        if indices.last().is_some_and(|&i| i >= d_latent) {
            return Err(Error::shape(
                alloc::format!("indices < {d_latent}"),
                indices[indices.len() - 1],
            ));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "sparse code values must be positive and finite",
            ));
        }
        Ok(Self {
            indices,
            values,
            d_latent,
        })
    }

    pub fn empty(d_latent: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            d_latent,
        }
    }

    /// Sparse view of a dense nonnegative vector (zeros dropped).
    pub fn from_dense(dense: &[f64]) -> Result<Self> {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .unzip();
        Self::new(indices, values, dense.len())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn d_latent(&self) -> usize {
        self.d_latent
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    /// Activation at latent `j` (0 when inactive).
    pub fn get(&self, j: usize) -> f64 {
        self.indices
            .binary_search(&j)
            .map_or(0.0, |pos| self.values[pos])
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d_latent];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    /// Multiplies every activation by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0, "scale factor must be positive");
        Self {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            d_latent: self.d_latent,
        }
    }
}

/// Indices of the `k` largest positive entries of `z` that pass `keep`,
/// ordered by index. Ties break toward the lower index.
pub fn select_top_positive(z: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    // best-first buffer of (index, value); scanning in index order means an
    // equal value never displaces an earlier entry
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return Vec::new();
    }
    for (j, &v) in z.iter().enumerate() {
        if !(v > 0.0) || (best.len() == k && v <= best[k - 1].1) || !keep(j) {
            continue;
        }
        let pos = best.partition_point(|&(_, b)| b >= v);
        best.insert(pos, (j, v));
        best.truncate(k);
    }
    let mut idx: Vec<usize> = best.into_iter().map(|(j, _)| j).collect();
    idx.sort_unstable();
    idx
}

/// Single-hidden-layer overcomplete autoencoder with hard top-k sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    k: usize,
    /// `D_latent x D_in`
    w_enc: Matrix,
    /// `1 x D_latent`
    b_enc: Matrix,
    /// `D_in x D_latent`
    w_dec: Matrix,
    /// `1 x D_in`
    b_dec: Matrix,
}

impl SaeModel {
    pub fn from_parts(
        w_enc: Matrix,
        b_enc: Vec<f64>,
        w_dec: Matrix,
        b_dec: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        let (d_latent, d_in) = w_enc.shape();
        if d_in == 0 || d_latent == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive"));
        }
        if k == 0 || k > d_latent {
            return Err(Error::InvalidConfig("k must satisfy 1 <= k <= D_latent"));
        }
        if w_dec.shape() != (d_in, d_latent) {
            return Err(Error::shape(
                alloc::format!("W_dec {d_in}x{d_latent}"),
                alloc::format!("{:?}", w_dec.shape()),
            ));
        }
        if b_enc.len() != d_latent {
            return Err(Error::shape(d_latent, b_enc.len()));
        }
        if b_dec.len() != d_in {
            return Err(Error::shape(d_in, b_dec.len()));
        }
        let model = Self {
            k,
            w_enc,
            b_enc: Matrix::from_vec(1, d_latent, b_enc)?,
            w_dec,
            b_dec: Matrix::from_vec(1, d_in, b_dec)?,
        };
        if !model.is_finite() {
            return Err(Error::InvalidConfig("model parameters must be finite"));
        }
        Ok(model)
    }

    /// Decoder columns drawn as random unit directions, encoder initialized
    /// to the decoder transpose, zero biases. Parameters are `f32`-exact.
    pub fn init(d_in: usize, d_latent: usize, k: usize, rng: &mut RngStream) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let mut w_dec = Matrix::zeros(d_in, d_latent);
        for v in w_dec.as_mut_slice() {
            *v = StandardNormal.sample(rng);
        }
        let mut model = Self::from_parts(
            w_dec.transpose(),
            vec![0.0; d_latent],
            w_dec,
            vec![0.0; d_in],
            k,
        )?;
        model.normalize_decoder();
        model.w_enc = model.w_dec.transpose();
        model.round_to_f32();
        Ok(model)
    }

    pub fn d_in(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn d_latent(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[f64] {
        self.b_enc.as_slice()
    }

    pub fn w_dec(&self) -> &Matrix {
        &self.w_dec
    }

    pub fn b_dec(&self) -> &[f64] {
        self.b_dec.as_slice()
    }

    /// Parameter tensors in checkpoint order: `W_enc, b_enc, W_dec, b_dec`.
    pub fn parameters(&self) -> [&Matrix; 4] {
        [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec]
    }

    pub fn parameters_mut(&mut self) -> [&mut Matrix; 4] {
        [
            &mut self.w_enc,
            &mut self.b_enc,
            &mut self.w_dec,
            &mut self.b_dec,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.is_finite())
    }

    pub fn round_to_f32(&mut self) {
        for p in self.parameters_mut() {
            p.round_to_f32();
        }
    }

    /// Rescales each decoder column to unit L2 norm (zero columns are left
    /// alone).
    pub fn normalize_decoder(&mut self) {
        let (d_in, d_latent) = self.w_dec.shape();
        let mut norms = vec![0.0; d_latent];
        for i in 0..d_in {
            for (n, v) in norms.iter_mut().zip(self.w_dec.row(i)) {
                *n += v * v;
            }
        }
        for n in &mut norms {
            *n = libm::sqrt(*n);
        }
        for i in 0..d_in {
            for (v, &n) in self.w_dec.row_mut(i).iter_mut().zip(&norms) {
                if n > 0.0 {
                    *v /= n;
                }
            }
        }
    }

    pub fn decoder_column_norms(&self) -> Vec<f64> {
        (0..self.d_latent())
            .map(|j| {
                libm::sqrt(
                    (0..self.d_in())
                        .map(|i| self.w_dec[(i, j)] * self.w_dec[(i, j)])
                        .sum(),
                )
            })
            .collect()
    }

    /// `W_enc x + b_enc` (before ReLU).
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.w_enc.matvec(x)?;
        for (zi, b) in z.iter_mut().zip(self.b_enc.as_slice()) {
            *zi += b;
        }
        Ok(z)
    }

    /// Pre-activations of every row of a normalized batch (`B x D_latent`),
    /// bitwise equal to calling [`SaeModel::pre_activations`] per row.
    pub fn pre_activations_batch(&self, batch: &Matrix) -> Result<Matrix> {
        let mut z = batch.matmul(&self.w_enc.transpose())?;
        for r in 0..z.rows() {
            for (zi, b) in z.row_mut(r).iter_mut().zip(self.b_enc.as_slice()) {
                *zi += b;
            }
        }
        Ok(z)
    }

    /// Hard top-k code of a normalized input.
    pub fn encode(&self, x: &[f64]) -> Result<SparseCode> {
        let z = self.pre_activations(x)?;
        let indices = select_top_positive(&z, self.k, |_| true);
        let values = indices.iter().map(|&j| z[j]).collect();
        Ok(SparseCode {
            indices,
            values,
            d_latent: self.d_latent(),
        })
    }

    /// `W_dec h + b_dec`, touching only the active columns.
    pub fn decode(&self, code: &SparseCode) -> Result<Vec<f64>> {
        if code.d_latent != self.d_latent() {
            return Err(Error::shape(self.d_latent(), code.d_latent));
        }
        let mut out = self.b_dec.as_slice().to_vec();
        let active: Vec<(usize, f64)> = code.iter().collect();
        self.accumulate_columns(&active, &mut out);
        Ok(out)
    }

    fn accumulate_columns(&self, active: &[(usize, f64)], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.w_dec.row(i);
            *o += active.iter().map(|&(j, a)| row[j] * a).sum::<f64>();
        }
    }
}

/// Latents whose activations a loss evaluation uses for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Top-k active set.
    pub active: Vec<usize>,
    /// Dead latents feeding the auxiliary reconstruction.
    pub aux: Vec<usize>,
}

impl Selection {
    /// Top-k set plus the top `k_aux` positive pre-activations among latents
    /// marked dead.
    pub fn compute(z: &[f64], k: usize, dead_mask: &[bool], k_aux: usize) -> Self {
        let active = select_top_positive(z, k, |_| true);
        let dead = dead_mask.iter().filter(|&&d| d).count();
        let aux = if dead == 0 {
            Vec::new()
        } else {
            select_top_positive(z, k_aux.min(dead), |j| dead_mask[j])
        };
        Self { active, aux }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub aux: f64,
}

/// Gradients matching [`SaeModel::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: [Matrix; 4],
}

impl Gradients {
    fn zeros_like(model: &SaeModel) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let [a, b, c, d] = model.parameters();
        Self {
            tensors: [z(a), z(b), z(c), z(d)],
        }
    }
}

fn check_batch(model: &SaeModel, batch: &Matrix) -> Result<()> {
    if batch.cols() != model.d_in() {
        return Err(Error::shape(model.d_in(), batch.cols()));
    }
    if batch.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Total, reconstruction and auxiliary loss for a normalized batch.
///
/// `k_aux` is capped at the number of dead latents; with no dead latents the
/// auxiliary term is zero.
pub fn loss(
    model: &SaeModel,
    batch: &Matrix,
    dead_mask: &[bool],
    alpha: f64,
    k_aux: usize,
) -> Result<LossBreakdown> {
    let selections = select_batch(model, batch, dead_mask, k_aux)?;
    Ok(loss_and_gradients(model, batch, &selections, alpha, false)?.0)
}

/// Selections for every row of `batch`.
pub fn select_batch(
    model: &SaeModel,
    batch: &Matrix,
    dead_mask: &[bool],
    k_aux: usize,
) -> Result<Vec<Selection>> {
    check_batch(model, batch)?;
    if dead_mask.len() != model.d_latent() {
        return Err(Error::shape(model.d_latent(), dead_mask.len()));
    }
    let z = model.pre_activations_batch(batch)?;
    Ok((0..batch.rows())
        .map(|r| Selection::compute(z.row(r), model.k, dead_mask, k_aux))
        .collect())
}

/// Loss with the latent selections held fixed, and optionally its gradient.
///
/// Selected latents contribute their raw pre-activation (which the frozen
/// selection may keep even if it has since turned negative), so the loss is
/// a smooth function of the parameters and the gradient is exact.
pub fn loss_and_gradients(
    model: &SaeModel,
    batch: &Matrix,
    selections: &[Selection],
    alpha: f64,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    check_batch(model, batch)?;
    if selections.len() != batch.rows() {
        return Err(Error::LengthMismatch(batch.rows(), selections.len()));
    }
    let d_in = model.d_in();
    let c = 1.0 / (batch.rows() as f64 * d_in as f64);
    let mut grads = with_grad.then(|| Gradients::zeros_like(model));
    let mut recon_sum = 0.0;
    let mut aux_sum = 0.0;

    let mut x_hat = vec![0.0; d_in];
    let mut aux_rec = vec![0.0; d_in];
    let mut g_rec = vec![0.0; d_in];
    let mut g_aux = vec![0.0; d_in];
    for (r, sel) in selections.iter().enumerate() {
        let x = batch.row(r);
        let z_at = |j: usize| dot(model.w_enc.row(j), x) + model.b_enc.as_slice()[j];
        let active: Vec<(usize, f64)> = sel.active.iter().map(|&j| (j, z_at(j))).collect();
        let aux: Vec<(usize, f64)> = sel.aux.iter().map(|&j| (j, z_at(j))).collect();

        x_hat.copy_from_slice(model.b_dec.as_slice());
        model.accumulate_columns(&active, &mut x_hat);
        aux_rec.fill(0.0);
        model.accumulate_columns(&aux, &mut aux_rec);

        // residual r = x_hat - x; aux error e = (x - x_hat) - aux_rec.
        // With no dead latents the aux term is identically zero.
        let w_aux = if aux.is_empty() { 0.0 } else { alpha };
        let mut sample_recon = 0.0;
        let mut sample_aux = 0.0;
        for i in 0..d_in {
            let res = x_hat[i] - x[i];
            let e = -res - aux_rec[i];
            sample_recon += res * res;
            sample_aux += e * e;
            g_rec[i] = 2.0 * c * (res - w_aux * e);
            g_aux[i] = -2.0 * c * w_aux * e;
        }
        if aux.is_empty() {
            sample_aux = 0.0;
        }
        recon_sum += sample_recon;
        aux_sum += sample_aux;

        let Some(g) = grads.as_mut() else { continue };
        let [gw_enc, gb_enc, gw_dec, gb_dec] = &mut g.tensors;
        for (gb, &v) in gb_dec.as_mut_slice().iter_mut().zip(&g_rec) {
            *gb += v;
        }
        let parts = active
            .iter()
            .map(|&(j, a)| (j, a, &g_rec))
            .chain(aux.iter().map(|&(j, a)| (j, a, &g_aux)));
        for (j, a, up) in parts {
            let mut dz = 0.0;
            for i in 0..d_in {
                dz += model.w_dec[(i, j)] * up[i];
                gw_dec[(i, j)] += up[i] * a;
            }
            gb_enc.as_mut_slice()[j] += dz;
            for (gw, &xi) in gw_enc.row_mut(j).iter_mut().zip(x) {
                *gw += dz * xi;
            }
        }
    }
    let recon = recon_sum * c;
    let aux = aux_sum * c;
    Ok((
        LossBreakdown {
            total: recon + alpha * aux,
            recon,
            aux,
        },
        grads,
    ))
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub d_latent: usize,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    /// Weight of the auxiliary loss.
    pub alpha: f64,
    /// Dead latents used by the auxiliary loss; `None` means `2k`.
    pub k_aux: Option<usize>,
    /// Tokens without firing after which a latent counts as dead; `None`
    /// means `max(10 * batch_size, n)`.
    pub dead_window: Option<usize>,
    pub seed: u64,
    /// Fixed input statistics; fitted on the training set when `None`.
    pub normalizer: Option<InputNormalizer>,
}

impl TrainConfig {
    /// Defaults for a given input width: `D_latent = 10 D_in`, `k = 128`
    /// (8 when `D_in <= 64`), 100 epochs, batch 4096 (256 when `D_in <= 64`),
    /// `alpha = 1/32`.
    pub fn for_input_dim(d_in: usize) -> Self {
        let desk = d_in <= 64;
        Self {
            d_latent: 10 * d_in,
            k: if desk { 8 } else { 128 },
            epochs: 100,
            batch_size: if desk { 256 } else { 4096 },
            adam: AdamParams::default(),
            alpha: 1.0 / 32.0,
            k_aux: None,
            dead_window: None,
            seed: 0,
            normalizer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be finite and >= 0"));
        }
        if self.k_aux == Some(0) {
            return Err(Error::InvalidConfig("k_aux must be >= 1"));
        }
        if self.dead_window == Some(0) {
            return Err(Error::InvalidConfig("dead_window must be >= 1"));
        }
        if self.k == 0 || self.k > self.d_latent {
            return Err(Error::InvalidConfig("k must satisfy 1 <= k <= D_latent"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive"));
        }
        Ok(())
    }

    pub fn effective_k_aux(&self) -> usize {
        self.k_aux.unwrap_or(2 * self.k)
    }

    pub fn effective_dead_window(&self, n: usize) -> usize {
        self.dead_window.unwrap_or((10 * self.batch_size).max(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub aux: f64,
    pub total: f64,
    pub dead_latents: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: SaeModel,
    pub normalizer: InputNormalizer,
    /// Reconstruction loss of the initial model over the whole training set.
    pub initial_recon: f64,
    pub history: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_dead_latents(&self) -> usize {
        self.history.last().map_or(0, |h| h.dead_latents)
    }
}

/// Per-latent count of training tokens since it last fired.
#[derive(Debug, Clone)]
pub struct DeadTracker {
    since_fired: Vec<usize>,
    window: usize,
}

impl DeadTracker {
    pub fn new(d_latent: usize, window: usize) -> Self {
        Self {
            since_fired: vec![0; d_latent],
            window,
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.since_fired.iter().map(|&s| s >= self.window).collect()
    }

    pub fn dead_count(&self) -> usize {
        self.since_fired
            .iter()
            .filter(|&&s| s >= self.window)
            .count()
    }

    pub fn record_batch(&mut self, selections: &[Selection]) {
        let mut fired = vec![false; self.since_fired.len()];
        for sel in selections {
            for &j in &sel.active {
                fired[j] = true;
            }
        }
        for (s, f) in self.since_fired.iter_mut().zip(fired) {
            *s = if f {
                0
            } else {
                s.saturating_add(selections.len())
            };
        }
    }
}

/// Normalized copy of a dataset as an `n x D_in` matrix.
pub fn normalize_dataset(normalizer: &InputNormalizer, ds: &EmbeddingDataset) -> Result<Matrix> {
    if normalizer.dim() != ds.dim() {
        return Err(Error::shape(normalizer.dim(), ds.dim()));
    }
    let mut values = Vec::with_capacity(ds.len() * ds.dim());
    for i in 0..ds.len() {
        values.extend(normalizer.normalize(ds.row(i)));
    }
    Matrix::from_vec(ds.len(), ds.dim(), values)
}

/// Sparse codes of every row of `ds`.
pub fn encode_dataset(
    model: &SaeModel,
    normalizer: &InputNormalizer,
    ds: &EmbeddingDataset,
) -> Result<Vec<SparseCode>> {
    if normalizer.dim() != model.d_in() {
        return Err(Error::shape(model.d_in(), normalizer.dim()));
    }
    (0..ds.len())
        .map(|i| model.encode(&normalizer.normalize(ds.row(i))))
        .collect()
}

fn gather_rows(data: &Matrix, rows: &[usize]) -> Matrix {
    let mut values = Vec::with_capacity(rows.len() * data.cols());
    for &r in rows {
        values.extend_from_slice(data.row(r));
    }
    Matrix::from_vec(rows.len(), data.cols(), values).expect("gathered shape")
}

/// Trains a Top-k SAE with Adam, decoder renormalization and AuxK.
///
/// Deterministic for a fixed dataset and config: the same inputs produce
/// bit-identical parameters.
pub fn train(train_ds: &EmbeddingDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = train_ds.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut normalizer = match &cfg.normalizer {
        Some(nz) if nz.dim() != train_ds.dim() => {
            return Err(Error::shape(train_ds.dim(), nz.dim()))
        }
        Some(nz) => nz.clone(),
        None => InputNormalizer::fit(train_ds)?,
    };
    normalizer.round_to_f32();
    let data = normalize_dataset(&normalizer, train_ds)?;

    let mut rng = RngStream::derive(cfg.seed, 0x7261_696e);
    let mut model = SaeModel::init(train_ds.dim(), cfg.d_latent, cfg.k, &mut rng)?;
    let mut optim: Vec<AdamState> = model
        .parameters()
        .iter()
        .map(|p| AdamState::for_shape(p, cfg.adam))
        .collect();
    let k_aux = cfg.effective_k_aux();
    let window = cfg.effective_dead_window(n);
    let mut tracker = DeadTracker::new(cfg.d_latent, window);
    log::debug!("training: n={n}, k_aux={k_aux}, dead_window={window}");

    let no_dead = vec![false; cfg.d_latent];
    let initial_recon = loss(&model, &data, &no_dead, 0.0, 1)?.recon;

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sums = LossBreakdown::default();
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = gather_rows(&data, chunk);
            let dead_mask = tracker.mask();
            let selections = select_batch(&model, &batch, &dead_mask, k_aux)?;
            let (l, grads) = loss_and_gradients(&model, &batch, &selections, cfg.alpha, true)?;
            if !l.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    recon: l.recon,
                    aux: l.aux,
                });
            }
            let grads = grads.expect("requested gradients");
            for ((param, g), st) in model
                .parameters_mut()
                .into_iter()
                .zip(grads.tensors.iter())
                .zip(optim.iter_mut())
            {
                st.step(param, g)?;
            }
            model.normalize_decoder();
            model.round_to_f32();
            tracker.record_batch(&selections);

            let w = chunk.len() as f64;
            sums.recon += l.recon * w;
            sums.aux += l.aux * w;
            sums.total += l.total * w;
        }
        let stats = EpochStats {
            epoch,
            recon: sums.recon / n as f64,
            aux: sums.aux / n as f64,
            total: sums.total / n as f64,
            dead_latents: tracker.dead_count(),
        };
        log::debug!(
            "epoch {epoch}: recon={:.6} aux={:.6} dead={}",
            stats.recon,
            stats.aux,
            stats.dead_latents
        );
        history.push(stats);
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            step: 0,
            recon: f64::NAN,
            aux: f64::NAN,
        });
    }
    Ok(TrainReport {
        model,
        normalizer,
        initial_recon,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn model_with_bias(b_enc: Vec<f64>, d_in: usize, k: usize) -> SaeModel {
        let d_latent = b_enc.len();
        SaeModel::from_parts(
            Matrix::zeros(d_latent, d_in),
            b_enc,
            Matrix::zeros(d_in, d_latent),
            vec![0.0; d_in],
            k,
        )
        .unwrap()
    }

    #[test]
    fn fit_normalizer_examples() {
        let ds = EmbeddingDataset::new("t", 2, 2, vec![1.0, 1.0, 3.0, 3.0], None, None).unwrap();
        let nz = fit_normalizer(&ds).unwrap();
        assert_eq!(nz.mean, vec![2.0, 2.0]);
        assert!((nz.scale - core::f64::consts::SQRT_2).abs() < 1e-15);

        let single = EmbeddingDataset::new("t", 1, 2, vec![5.0, -1.0], None, None).unwrap();
        let nz = fit_normalizer(&single).unwrap();
        assert_eq!(nz.mean, vec![5.0, -1.0]);
        assert_eq!(nz.scale, MIN_SCALE);

        let centered =
            EmbeddingDataset::new("t", 2, 2, vec![1.0, -2.0, -1.0, 2.0], None, None).unwrap();
        let nz = fit_normalizer(&centered).unwrap();
        assert!(nz.mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn encode_selection_examples() {
        let m = model_with_bias(vec![3.0, 1.0, 2.0], 1, 2);
        let code = m.encode(&[0.0]).unwrap();
        assert_eq!(code.indices(), &[0, 2]);
        assert_eq!(code.values(), &[3.0, 2.0]);

        let m = model_with_bias(vec![1.0, 1.0, 1.0], 1, 1);
        assert_eq!(m.encode(&[0.0]).unwrap().indices(), &[0]);

        let m = model_with_bias(vec![-1.0, -0.5, -2.0], 1, 2);
        assert!(m.encode(&[0.0]).unwrap().is_empty());

        assert!(matches!(
            m.encode(&[0.0, 1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn decode_examples() {
        let mut rng = seeded_rng(11);
        let m = SaeModel::init(3, 6, 2, &mut rng).unwrap();
        assert_eq!(m.decode(&SparseCode::empty(6)).unwrap(), m.b_dec());
        let code = SparseCode::new(vec![4], vec![2.5], 6).unwrap();
        let got = m.decode(&code).unwrap();
        for (i, g) in got.iter().enumerate() {
            assert!((g - (2.5 * m.w_dec()[(i, 4)] + m.b_dec()[i])).abs() < 1e-15);
        }
        assert!(m.decode(&SparseCode::empty(5)).is_err());
    }

    #[test]
    fn init_has_unit_decoder_columns() {
        let mut rng = seeded_rng(1);
        let m = SaeModel::init(8, 32, 4, &mut rng).unwrap();
        for n in m.decoder_column_norms() {
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_eq!(m.w_enc(), &m.w_dec().transpose());
    }

    #[test]
    fn loss_examples() {
        // x = [1, 0] reconstructed as [0, 0] -> (1 + 0) / 2
        let m = model_with_bias(vec![0.0, 0.0], 2, 1);
        let batch = Matrix::from_rows(&[&[1.0, 0.0]]).unwrap();
        let l = loss(&m, &batch, &[false, false], 0.5, 2).unwrap();
        assert_eq!(l.recon, 0.5);
        assert_eq!(l.aux, 0.0);
        assert_eq!(l.total, l.recon);

        let zero = Matrix::from_rows(&[&[0.0, 0.0]]).unwrap();
        let l = loss(&m, &zero, &[false, false], 0.5, 2).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn dead_tracker_window() {
        let mut t = DeadTracker::new(3, 4);
        let sel = |a: Vec<usize>| Selection {
            active: a,
            aux: vec![],
        };
        t.record_batch(&[sel(vec![0]), sel(vec![1])]);
        assert_eq!(t.dead_count(), 0);
        t.record_batch(&[sel(vec![0]), sel(vec![0])]);
        assert_eq!(t.mask(), vec![false, false, true]);
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::for_input_dim(16);
        assert_eq!(cfg.d_latent, 160);
        assert_eq!(cfg.k, 8);
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::for_input_dim(768);
        assert_eq!((cfg.k, cfg.batch_size), (128, 4096));
        cfg.k = cfg.d_latent + 1;
        assert!(cfg.validate().is_err());
    }
}
