//! Synthetic class-structured embeddings.
//!
//! Each class owns a disjoint block of `s` unit-norm dictionary directions.
//! An ID sample of class `c` is a positive combination of `c`'s block plus
//! isotropic Gaussian noise. OOD samples come in three flavours:
//!
//! * `diffuse`: a class sample whose block coefficients are scaled by
//!   `ood_intensity`, with a `ood_leakage` fraction of the original mass
//!   spread evenly over `2s` random columns of other classes;
//! * `mix`: a convex blend of two different classes' samples;
//! * `random`: isotropic Gaussian directions scaled to the mean ID norm.
//!
//! OOD predicted labels come from the generator's own router, the class
//! whose block receives the most positive projected energy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use crate::dataset::EmbeddingDataset;
use crate::linalg::{dot, norm, Matrix};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum OodMode {
    Diffuse,
    Mix,
    Random,
}

impl OodMode {
    pub const ALL: [OodMode; 3] = [OodMode::Diffuse, OodMode::Mix, OodMode::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            OodMode::Diffuse => "diffuse",
            OodMode::Mix => "mix",
            OodMode::Random => "random",
        }
    }
}

impl fmt::Display for OodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffuse" => Ok(OodMode::Diffuse),
            "mix" => Ok(OodMode::Mix),
            "random" => Ok(OodMode::Random),
            _ => Err(Error::InvalidConfig(
                "ood mode must be diffuse, mix or random",
            )),
        }
    }
}

/// Distribution of the positive per-column coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum Coefficients {
    Gamma { shape: f64, scale: f64 },
    Constant { value: f64 },
}

impl Default for Coefficients {
    fn default() -> Self {
        Coefficients::Gamma {
            shape: 2.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthConfig {
    pub classes: usize,
    pub d_in: usize,
    /// Dictionary columns per class.
    pub support_size: usize,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    /// Samples per OOD split.
    pub n_ood: usize,
    pub noise_sigma: f64,
    pub coefficients: Coefficients,
    /// Fraction of class-block mass kept by diffuse OOD samples.
    pub ood_intensity: f64,
    /// Fraction of class-block mass spread over leakage columns.
    pub ood_leakage: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            d_in: 64,
            support_size: 3,
            n_train_per_class: 200,
            n_test_per_class: 50,
            n_ood: 1000,
            noise_sigma: 0.05,
            coefficients: Coefficients::default(),
            ood_intensity: 0.5,
            ood_leakage: 0.5,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn dictionary_size(&self) -> usize {
        self.classes * self.support_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.support_size == 0 {
            return Err(Error::InvalidConfig(
                "classes and support_size must be >= 1",
            ));
        }
        if self.n_train_per_class == 0 || self.n_test_per_class == 0 || self.n_ood == 0 {
            return Err(Error::InvalidConfig("sample counts must be >= 1"));
        }
        if self.d_in < 4 {
            return Err(Error::DimTooSmall(self.d_in));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig("noise_sigma must be finite and >= 0"));
        }
        if !(self.ood_intensity > 0.0 && self.ood_intensity <= 1.0) {
            return Err(Error::InvalidConfig("ood_intensity must lie in (0, 1]"));
        }
        if !(self.ood_leakage >= 0.0) || !self.ood_leakage.is_finite() {
            return Err(Error::InvalidConfig("ood_leakage must be finite and >= 0"));
        }
        match self.coefficients {
            Coefficients::Gamma { shape, scale } if !(shape > 0.0 && scale > 0.0) => Err(
                Error::InvalidConfig("gamma shape and scale must be positive"),
            ),
            Coefficients::Constant { value } if !(value > 0.0) => Err(Error::InvalidConfig(
                "constant coefficient must be positive",
            )),
            _ => Ok(()),
        }
    }
}

/// Stream purposes, so each split draws from its own substream.
mod stream {
    pub const DICTIONARY: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const TEST: u64 = 3;
    pub const OOD_BASE: u64 = 16;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdSplit {
    Train,
    Test,
}

/// Unit-norm Gaussian directions, `D_in x (C s)`; class `c` owns columns
/// `c s .. (c + 1) s`.
pub fn gen_dictionary(cfg: &SynthConfig) -> Result<Matrix> {
    cfg.validate()?;
    let mut rng = RngStream::derive(cfg.seed, stream::DICTIONARY);
    let cols = cfg.dictionary_size();
    let mut dict = Matrix::zeros(cfg.d_in, cols);
    for j in 0..cols {
        let col: Vec<f64> = (0..cfg.d_in)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = norm(&col);
        for (i, v) in col.into_iter().enumerate() {
            dict[(i, j)] = v / n;
        }
    }
    Ok(dict)
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    dict: Matrix,
    noise: Option<Normal<f64>>,
    coef: CoefSampler,
}

enum CoefSampler {
    Gamma(Gamma<f64>),
    Constant(f64),
}

impl CoefSampler {
    fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            CoefSampler::Gamma(g) => g.sample(rng),
            CoefSampler::Constant(v) => *v,
        }
    }
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a SynthConfig) -> Result<Self> {
        let dict = gen_dictionary(cfg)?;
        let noise = (cfg.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, cfg.noise_sigma).expect("sigma validated"));
        let coef = match cfg.coefficients {
            Coefficients::Gamma { shape, scale } => {
                CoefSampler::Gamma(Gamma::new(shape, scale).expect("gamma parameters validated"))
            }
            Coefficients::Constant { value } => CoefSampler::Constant(value),
        };
        Ok(Self {
            cfg,
            dict,
            noise,
            coef,
        })
    }

    fn block(&self, class: usize) -> core::ops::Range<usize> {
        let s = self.cfg.support_size;
        class * s..(class + 1) * s
    }

    /// Coefficients over the full dictionary for one class sample.
    fn class_coefficients(&self, class: usize, rng: &mut RngStream) -> Vec<f64> {
        let mut w = vec![0.0; self.dict.cols()];
        for j in self.block(class) {
            w[j] = self.coef.sample(rng);
        }
        w
    }

    fn synthesize(&self, weights: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.cfg.d_in)
            .map(|i| dot(self.dict.row(i), weights))
            .collect();
        if let Some(noise) = &self.noise {
            for v in &mut x {
                *v += noise.sample(rng);
            }
        }
        x
    }

    /// Class whose block collects the most positive projected energy.
    fn route(&self, x: &[f64]) -> usize {
        let proj: Vec<f64> = (0..self.dict.cols())
            .map(|j| {
                (0..self.cfg.d_in)
                    .map(|i| self.dict[(i, j)] * x[i])
                    .sum::<f64>()
                    .max(0.0)
            })
            .collect();
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..self.cfg.classes {
            let e: f64 = proj[self.block(c)].iter().sum();
            if e > best.1 {
                best = (c, e);
            }
        }
        best.0
    }

    fn id_rows(&self, per_class: usize, rng: &mut RngStream) -> (Vec<f32>, Vec<i32>) {
        let n = per_class * self.cfg.classes;
        let mut data = Vec::with_capacity(n * self.cfg.d_in);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.cfg.classes;
            let w = self.class_coefficients(class, rng);
            data.extend(self.synthesize(&w, rng).into_iter().map(|v| v as f32));
            labels.push(class as i32);
        }
        (data, labels)
    }

    fn diffuse_sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let class = rng.below(self.cfg.classes);
        let mut w = self.class_coefficients(class, rng);
        let mass: f64 = w.iter().sum();
        for v in &mut w {
            *v *= self.cfg.ood_intensity;
        }
        let foreign: Vec<usize> = (0..self.dict.cols())
            .filter(|j| !self.block(class).contains(j))
            .collect();
        let leak_cols = (2 * self.cfg.support_size).min(foreign.len());
        if leak_cols > 0 && self.cfg.ood_leakage > 0.0 {
            let mut pool = foreign;
            // partial Fisher-Yates: first leak_cols entries are the sample
            for i in 0..leak_cols {
                let j = i + rng.below(pool.len() - i);
                pool.swap(i, j);
            }
            let each = self.cfg.ood_leakage * mass / leak_cols as f64;
            for &j in &pool[..leak_cols] {
                w[j] += each;
            }
        }
        self.synthesize(&w, rng)
    }

    fn mix_sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let a = rng.below(self.cfg.classes);
        let b = if self.cfg.classes > 1 {
            (a + 1 + rng.below(self.cfg.classes - 1)) % self.cfg.classes
        } else {
            a
        };
        let t = 0.3 + 0.4 * rng.uniform();
        let wa = self.class_coefficients(a, rng);
        let wb = self.class_coefficients(b, rng);
        let w: Vec<f64> = wa
            .iter()
            .zip(&wb)
            .map(|(x, y)| t * x + (1.0 - t) * y)
            .collect();
        self.synthesize(&w, rng)
    }

    fn random_sample(&self, target_norm: f64, rng: &mut RngStream) -> Vec<f64> {
        let g: Vec<f64> = (0..self.cfg.d_in)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let n = norm(&g).max(f64::MIN_POSITIVE);
        g.into_iter().map(|v| v * target_norm / n).collect()
    }
}

fn dataset_name(prefix: &str, cfg: &SynthConfig) -> String {
    format!("{prefix}_seed{}", cfg.seed)
}

/// ID split with true labels and oracle predicted labels (equal to truth).
pub fn gen_id(cfg: &SynthConfig, split: IdSplit) -> Result<EmbeddingDataset> {
    let gen = Generator::new(cfg)?;
    let (purpose, per_class, name) = match split {
        IdSplit::Train => (stream::TRAIN, cfg.n_train_per_class, "id_train"),
        IdSplit::Test => (stream::TEST, cfg.n_test_per_class, "id_test"),
    };
    let mut rng = RngStream::derive(cfg.seed, purpose);
    let (data, labels) = gen.id_rows(per_class, &mut rng);
    EmbeddingDataset::new(
        dataset_name(name, cfg),
        labels.len(),
        cfg.d_in,
        data,
        Some(labels.clone()),
        Some(labels),
    )
}

/// Mean L2 norm of the ID-train split.
pub fn mean_id_norm(cfg: &SynthConfig) -> Result<f64> {
    let ds = gen_id(cfg, IdSplit::Train)?;
    let total: f64 = (0..ds.len()).map(|i| norm(&ds.row_f64(i))).sum();
    Ok(total / ds.len() as f64)
}

/// OOD split of the given mode, with router-assigned predicted labels and no
/// true labels.
pub fn gen_ood(cfg: &SynthConfig, mode: OodMode) -> Result<EmbeddingDataset> {
    let gen = Generator::new(cfg)?;
    let purpose = stream::OOD_BASE + mode as u64;
    let mut rng = RngStream::derive(cfg.seed, purpose);
    let target_norm = match mode {
        OodMode::Random => mean_id_norm(cfg)?,
        _ => 0.0,
    };
    let mut data = Vec::with_capacity(cfg.n_ood * cfg.d_in);
    let mut preds = Vec::with_capacity(cfg.n_ood);
    for _ in 0..cfg.n_ood {
        let x = match mode {
            OodMode::Diffuse => gen.diffuse_sample(&mut rng),
            OodMode::Mix => gen.mix_sample(&mut rng),
            OodMode::Random => gen.random_sample(target_norm, &mut rng),
        };
        preds.push(gen.route(&x) as i32);
        data.extend(x.into_iter().map(|v| v as f32));
    }
    EmbeddingDataset::new(
        dataset_name(&format!("ood_{mode}"), cfg),
        cfg.n_ood,
        cfg.d_in,
        data,
        None,
        Some(preds),
    )
}
