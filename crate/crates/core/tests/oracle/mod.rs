//! Reference implementations written independently of the library, used as
//! test oracles. Everything here is the slow, obvious formula.
#![allow(dead_code)]

use caps_ood_core::linalg::Matrix;
use caps_ood_core::sae::{SaeModel, Selection};

/// Dense copy of a model's parameters as nested vectors.
pub struct DenseSae {
    pub w_enc: Vec<Vec<f64>>,
    pub b_enc: Vec<f64>,
    pub w_dec: Vec<Vec<f64>>,
    pub b_dec: Vec<f64>,
}

fn nested(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl DenseSae {
    pub fn of(model: &SaeModel) -> Self {
        Self {
            w_enc: nested(model.w_enc()),
            b_enc: model.b_enc().to_vec(),
            w_dec: nested(model.w_dec()),
            b_dec: model.b_dec().to_vec(),
        }
    }

    pub fn pre_activation(&self, x: &[f64], j: usize) -> f64 {
        let mut s = self.b_enc[j];
        for (i, xi) in x.iter().enumerate() {
            s += self.w_enc[j][i] * xi;
        }
        s
    }

    /// `W_dec h + b_dec` with a dense `h`.
    pub fn decode_dense(&self, h: &[f64]) -> Vec<f64> {
        (0..self.b_dec.len())
            .map(|i| self.b_dec[i] + (0..h.len()).map(|j| self.w_dec[i][j] * h[j]).sum::<f64>())
            .collect()
    }

    /// Loss with fixed selections, recomputing every quantity from scratch.
    pub fn frozen_loss(&self, batch: &[Vec<f64>], selections: &[Selection], alpha: f64) -> f64 {
        let d_in = self.b_dec.len();
        let d_latent = self.b_enc.len();
        let mut recon = 0.0;
        let mut aux = 0.0;
        for (x, sel) in batch.iter().zip(selections) {
            let mut h = vec![0.0; d_latent];
            for &j in &sel.active {
                h[j] = self.pre_activation(x, j);
            }
            let x_hat = self.decode_dense(&h);
            let mut h_aux = vec![0.0; d_latent];
            for &j in &sel.aux {
                h_aux[j] = self.pre_activation(x, j);
            }
            for i in 0..d_in {
                let err = x[i] - x_hat[i];
                recon += err * err;
                if !sel.aux.is_empty() {
                    let a: f64 = (0..d_latent).map(|j| self.w_dec[i][j] * h_aux[j]).sum();
                    aux += (err - a) * (err - a);
                }
            }
        }
        let denom = (batch.len() * d_in) as f64;
        recon / denom + alpha * aux / denom
    }
}

/// Indices of the top `k` strictly positive values, ties to the lower index,
/// returned in ascending index order.
pub fn naive_top_k(z: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).filter(|&j| z[j] > 0.0).collect();
    idx.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// KL divergence by direct summation, natural log, `0 ln 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] != 0.0 {
            s += p[i] * (p[i] / q[i]).ln();
        }
    }
    s
}

/// `(v + eps) / sum(v + eps)`.
pub fn smooth(v: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = v.iter().map(|x| x + eps).sum();
    v.iter().map(|x| (x + eps) / total).collect()
}

/// Pair-counting AUROC: P(ood > id) + 0.5 P(ood == id).
pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in ood {
        for &i in id {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// FPR at 95% TPR by trying every ID score as a threshold and keeping the
/// smallest one that accepts at least 95% of ID samples.
pub fn brute_fpr95(id: &[f64], ood: &[f64]) -> f64 {
    let accepted = |t: f64, xs: &[f64]| xs.iter().filter(|&&x| x <= t).count();
    let mut best: Option<f64> = None;
    for &t in id {
        // integer form of accepted / n >= 0.95
        if accepted(t, id) * 100 >= 95 * id.len() && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    }
    let t = best.expect("the max ID score always qualifies");
    accepted(t, ood) as f64 / ood.len() as f64
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|t| row[t] * b[t][j]).sum())
                .collect()
        })
        .collect()
}

use caps_ood_core::rng::RngStream;
use caps_ood_core::sae::{loss_and_gradients, select_batch};

pub struct GradCase {
    pub model: SaeModel,
    pub batch: Vec<Vec<f64>>,
    pub dead_mask: Vec<bool>,
    pub k_aux: usize,
    pub alpha: f64,
}

fn sym(rng: &mut RngStream, r: f64) -> f64 {
    r * (2.0 * rng.uniform() - 1.0)
}

/// Random small model (`D_in <= 8`, `D_latent <= 16`, `k <= 4`) with
/// perturbed, untied parameters, a random batch and a random dead mask.
pub fn grad_case(seed: u64) -> GradCase {
    let mut rng = RngStream::new(seed);
    let d_in = 1 + rng.below(8);
    let d_latent = 1 + rng.below(16);
    let k = 1 + rng.below(4.min(d_latent));
    let mut model = SaeModel::init(d_in, d_latent, k, &mut rng).unwrap();
    for p in model.parameters_mut() {
        for v in p.as_mut_slice() {
            *v += sym(&mut rng, 0.5);
        }
    }
    let rows = 1 + rng.below(5);
    let batch = (0..rows)
        .map(|_| (0..d_in).map(|_| sym(&mut rng, 2.0)).collect())
        .collect();
    let dead_mask = (0..d_latent).map(|_| rng.uniform() < 0.5).collect();
    GradCase {
        model,
        batch,
        dead_mask,
        k_aux: 1 + rng.below(2 * k),
        alpha: rng.uniform(),
    }
}

pub struct GradCheck {
    /// Worst per-tensor relative error `|a - n| / max(|a|, |n|)` (L2 norms).
    pub max_rel_err: f64,
    /// `|library loss - oracle loss|`.
    pub loss_diff: f64,
}

/// Analytic gradients against central differences of the oracle loss with
/// the selections frozen at the unperturbed parameters.
pub fn check_gradients(case: &GradCase, h: f64) -> GradCheck {
    let flat: Vec<f64> = case.batch.iter().flatten().copied().collect();
    let batch = Matrix::from_vec(case.batch.len(), case.model.d_in(), flat).unwrap();
    let sel = select_batch(&case.model, &batch, &case.dead_mask, case.k_aux).unwrap();
    let (lb, grads) = loss_and_gradients(&case.model, &batch, &sel, case.alpha, true).unwrap();
    let grads = grads.unwrap();
    let oracle_loss = DenseSae::of(&case.model).frozen_loss(&case.batch, &sel, case.alpha);

    let mut max_rel_err: f64 = 0.0;
    for t in 0..4 {
        let analytic = grads.tensors[t].as_slice();
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (e, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut m = case.model.clone();
                m.parameters_mut()[t].as_mut_slice()[e] += delta;
                DenseSae::of(&m).frozen_loss(&case.batch, &sel, case.alpha)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            diff2 += (a - numeric).powi(2);
            a2 += a.powi(2);
            n2 += numeric.powi(2);
        }
        let scale = a2.sqrt().max(n2.sqrt());
        let rel = if scale < 1e-12 {
            diff2.sqrt()
        } else {
            diff2.sqrt() / scale
        };
        max_rel_err = max_rel_err.max(rel);
    }
    GradCheck {
        max_rel_err,
        loss_diff: (lb.total - oracle_loss).abs(),
    }
}
