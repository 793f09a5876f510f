//! Two-class Gaussian-process image world with known ground truth.
//!
//! Both classes share a squared-exponential covariance over pixel positions and
//! differ only in a 2-D sinusoidal mean, so the relevant pixels and the
//! redundancy between pixel sets can be computed exactly.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifiers::TrainConfig;
use crate::error::{Error, Result};
use crate::infotheory::{bias_ratio, GaussianModel};
use crate::masking::{rank_pixels, topk_mask, Part};
use crate::rng;
use crate::tensor::{Dataset, ImageTensor, SaliencyMap};

pub const COVARIANCE_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpDatasetConfig {
    pub height: usize,
    pub width: usize,
    /// Kernel length scale as a fraction of the image width.
    pub kernel_width_fraction: f64,
    pub n_samples: usize,
    pub class_priors: (f64, f64),
    pub mean_amplitude: f64,
    /// Sinusoid periods across the image.
    pub mean_frequency: f64,
    pub seed: u64,
}

impl Default for GpDatasetConfig {
    fn default() -> Self {
        Self {
            height: 28,
            width: 28,
            kernel_width_fraction: 0.2,
            n_samples: 2000,
            class_priors: (0.5, 0.5),
            mean_amplitude: 0.1,
            mean_frequency: 3.0,
            seed: 0,
        }
    }
}

impl GpDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if !(self.kernel_width_fraction > 0.0 && self.kernel_width_fraction < 1.0) {
            return Err(Error::Config(format!(
                "kernel_width_fraction {} outside (0, 1)",
                self.kernel_width_fraction
            )));
        }
        let (p0, p1) = self.class_priors;
        if p0 < 0.0 || p1 < 0.0 || (p0 + p1 - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "class priors ({p0}, {p1}) must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn length_scale(&self) -> f64 {
        self.kernel_width_fraction * self.width as f64
    }
}

/// `S_pq = exp(-|pos_p - pos_q|^2 / (2 l^2))` plus `COVARIANCE_JITTER` on the diagonal.
pub fn build_covariance(cfg: &GpDatasetConfig) -> DMatrix<f64> {
    let d = cfg.pixels();
    let l2 = cfg.length_scale().powi(2);
    let w = cfg.width;
    DMatrix::from_fn(d, d, |p, q| {
        let (dr, dc) = (
            (p / w) as f64 - (q / w) as f64,
            (p % w) as f64 - (q % w) as f64,
        );
        let k = (-(dr * dr + dc * dc) / (2.0 * l2)).exp();
        if p == q {
            k + COVARIANCE_JITTER
        } else {
            k
        }
    })
}

/// `mu_c(i, j) = A sin(2 pi f i / H + phi_c) sin(2 pi f j / W + phi_c)` with
/// `phi_0 = 0`, `phi_1 = pi / 2`.
pub fn class_means(cfg: &GpDatasetConfig) -> (Vec<f64>, Vec<f64>) {
    let mean = |phase: f64| -> Vec<f64> {
        (0..cfg.pixels())
            .map(|p| {
                let (i, j) = ((p / cfg.width) as f64, (p % cfg.width) as f64);
                cfg.mean_amplitude
                    * (2.0 * PI * cfg.mean_frequency * i / cfg.height as f64 + phase).sin()
                    * (2.0 * PI * cfg.mean_frequency * j / cfg.width as f64 + phase).sin()
            })
            .collect()
    };
    (mean(0.0), mean(PI / 2.0))
}

/// Draws `cfg.n_samples` labelled images. Labels and noise vectors come from
/// separate seeded streams per sample.
pub fn sample_dataset(cfg: &GpDatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let chol = build_covariance(cfg)
        .cholesky()
        .ok_or(Error::SingularCovariance)?;
    sample_with_factor(cfg, &chol.l())
}

fn sample_with_factor(cfg: &GpDatasetConfig, factor: &DMatrix<f64>) -> Result<Dataset> {
    let d = cfg.pixels();
    let n = cfg.n_samples;
    let (mu0, mu1) = class_means(cfg);
    let mut label_rng = rng::stream(cfg.seed, "toy-labels", 0);
    let labels: Vec<usize> = (0..n)
        .map(|_| usize::from(label_rng.random::<f64>() >= cfg.class_priors.0))
        .collect();
    let mut noise = DMatrix::zeros(d, n);
    for i in 0..n {
        let mut r = rng::stream(cfg.seed, "toy-draw", i as u64);
        for p in 0..d {
            noise[(p, i)] = StandardNormal.sample(&mut r);
        }
    }
    let correlated = factor * noise;
    let images = (0..n)
        .map(|i| {
            let mu = if labels[i] == 0 { &mu0 } else { &mu1 };
            let data = (0..d).map(|p| mu[p] + correlated[(p, i)]).collect();
            ImageTensor::new(cfg.height, cfg.width, 1, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, labels, 2)
}

/// Like [`sample_dataset`] with an arbitrary covariance (for degenerate checks).
pub fn sample_with_covariance(cfg: &GpDatasetConfig, cov: DMatrix<f64>) -> Result<Dataset> {
    cfg.validate()?;
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    sample_with_factor(cfg, &chol.l())
}

/// Classifier settings for the toy experiments. Strong shrinkage keeps the
/// 784-feature models close to a matched filter at 1333 training samples, and
/// with it the problem is well conditioned enough for 100 epochs.
pub fn experiment_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1.0,
        l2: 0.03,
        epochs: 100,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingKind {
    True,
    Worst,
    Rand,
    Semi,
    Gauss,
}

impl OrderingKind {
    pub const ALL: [OrderingKind; 5] = [
        OrderingKind::True,
        OrderingKind::Worst,
        OrderingKind::Rand,
        OrderingKind::Semi,
        OrderingKind::Gauss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OrderingKind::True => "true",
            OrderingKind::Worst => "worst",
            OrderingKind::Rand => "rand",
            OrderingKind::Semi => "semi",
            OrderingKind::Gauss => "gauss",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Fixed importance maps:
/// - `True`: `|mu_1 - mu_0|`, the pixels that separate the classes;
/// - `Worst`: the negation of `True`;
/// - `Rand`: uniform noise;
/// - `Gauss`: isotropic bump at the image centre with sigma = width / 4;
/// - `Semi`: `True` on the left half, noise scaled to the same range on the right.
pub fn handcrafted_ordering(
    kind: OrderingKind,
    cfg: &GpDatasetConfig,
    seed: u64,
) -> Result<SaliencyMap> {
    let (h, w) = (cfg.height, cfg.width);
    let (mu0, mu1) = class_means(cfg);
    let truth: Vec<f64> = mu0.iter().zip(&mu1).map(|(a, b)| (b - a).abs()).collect();
    let mut noise_rng = rng::stream(seed, "ordering-noise", 0);
    let mut noise = || noise_rng.random::<f64>();
    let scores = match kind {
        OrderingKind::True => truth,
        OrderingKind::Worst => truth.iter().map(|v| -v).collect(),
        OrderingKind::Rand => (0..h * w).map(|_| noise()).collect(),
        OrderingKind::Gauss => {
            let sigma = w as f64 / 4.0;
            let (ci, cj) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            (0..h * w)
                .map(|p| {
                    let (i, j) = ((p / w) as f64, (p % w) as f64);
                    (-((i - ci).powi(2) + (j - cj).powi(2)) / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        }
        OrderingKind::Semi => {
            let top = truth.iter().copied().fold(0.0, f64::max);
            (0..h * w)
                .map(|p| {
                    let r = noise();
                    if p % w < w / 2 {
                        truth[p]
                    } else {
                        r * top
                    }
                })
                .collect()
        }
    };
    SaliencyMap::new(h, w, scores)
}

/// Exact bias ratio of the `side` pixels for each `k` of the top-k masks of `ordering`.
pub fn analytic_bias(
    cov: &DMatrix<f64>,
    ordering: &SaliencyMap,
    k_grid: &[usize],
    side: Part,
    resolution: f64,
) -> Result<Vec<f64>> {
    let model = GaussianModel::new(DVector::zeros(cov.nrows()), cov.clone())?;
    let perm = rank_pixels(ordering)?;
    k_grid
        .iter()
        .map(|&k| {
            let mask = topk_mask(&perm, k, ordering.height(), ordering.width())?;
            Ok(bias_ratio(&model, &mask, side, resolution)?.beta)
        })
        .collect()
}
