//! Multinomial logistic regression trained by full-batch gradient descent,
//! plus the two leakage probes built on it: a classifier that only sees the
//! removal masks, and a per-pixel predictor of which pixels were imputed.
//!
//! Inputs are rescaled by a single factor so that the Gram matrix of the
//! bias-augmented design has unit spectral norm. The learning rate is then a
//! fraction of the curvature scale and the default schedule is stable for any
//! input scaling. The stored weights act on the raw inputs.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::BinaryMask;
use crate::npy::{self, NpyArray};
use crate::rng;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    /// Kept for configuration compatibility; training is always full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            epochs: 500,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    /// Step size at epoch `t`: `lr / (1 + t / 100)`.
    pub fn step(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + epoch as f64 / 100.0)
    }
}

/// Linear softmax classifier. `weights` is `(d + 1) x c`; the last row is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: DMatrix<f64>,
    pub num_classes: usize,
    pub train_config: TrainConfig,
}

impl LogisticModel {
    pub fn zeros(features: usize, num_classes: usize) -> Self {
        Self {
            weights: DMatrix::zeros(features + 1, num_classes),
            num_classes,
            train_config: TrainConfig::default(),
        }
    }

    pub fn features(&self) -> usize {
        self.weights.nrows() - 1
    }

    /// Class scores, one row per sample.
    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.features() {
            return Err(Error::shape(
                format!("{} features", self.features()),
                format!("{} features", x.ncols()),
            ));
        }
        let d = self.features();
        let mut z = x * self.weights.rows(0, d);
        let bias = self.weights.row(d);
        for mut row in z.row_iter_mut() {
            row += &bias;
        }
        Ok(z)
    }

    /// Arg-max class per sample; ties go to the lowest class index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok(z.row_iter().map(|row| argmax(row.iter().copied())).collect())
    }
}

/// Writes `<stem>.npy` (the weight matrix) and `<stem>.json` (class count and
/// training configuration).
pub fn save_model(model: &LogisticModel, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let (rows, cols) = model.weights.shape();
    let data = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| model.weights[(i, j)])
        .collect();
    npy::write_npy(&NpyArray::f64(vec![rows, cols], data), stem.with_extension("npy"))?;
    let meta = ModelMeta {
        num_classes: model.num_classes,
        train_config: model.train_config,
    };
    let json_path = stem.with_extension("json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
}

pub fn load_model(stem: impl AsRef<Path>) -> Result<LogisticModel> {
    let stem = stem.as_ref();
    let array = npy::read_npy(stem.with_extension("npy"))?;
    let [rows, cols] = array.shape[..] else {
        return Err(Error::Format(format!("weights must be 2-D, got shape {:?}", array.shape)));
    };
    let json_path = stem.with_extension("json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if cols != meta.num_classes || rows < 1 {
        return Err(Error::shape(
            format!("(d + 1) x {}", meta.num_classes),
            format!("{rows} x {cols}"),
        ));
    }
    if array.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite weight".into()));
    }
    Ok(LogisticModel {
        weights: DMatrix::from_row_slice(rows, cols, &array.data),
        num_classes: meta.num_classes,
        train_config: meta.train_config,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    num_classes: usize,
    train_config: TrainConfig,
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Stacks flattened images into an `n x (H*W*C)` matrix.
pub fn image_features(images: &[ImageTensor]) -> DMatrix<f64> {
    let d = images.first().map_or(0, |im| im.data().len());
    DMatrix::from_fn(images.len(), d, |i, j| images[i].data()[j])
}

pub fn mask_features(masks: &[BinaryMask]) -> DMatrix<f64> {
    let d = masks.first().map_or(0, BinaryMask::len);
    DMatrix::from_fn(masks.len(), d, |i, j| {
        if masks[i].get(j) {
            1.0
        } else {
            0.0
        }
    })
}

fn check_training_data(x: &DMatrix<f64>, y: &[usize], num_classes: usize) -> Result<()> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if num_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Config(format!("label {bad} outside 0..{num_classes}")));
    }
    Ok(())
}

/// Regularised mean cross-entropy, as reported in training histories.
pub fn regularised_loss(
    model: &LogisticModel,
    x: &DMatrix<f64>,
    y: &[usize],
) -> Result<f64> {
    let z = model.logits(x)?;
    let mut loss = 0.0;
    for (row, &label) in z.row_iter().zip(y) {
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    Ok(loss / y.len() as f64)
}

/// Result of training several models on the same data.
#[derive(Debug, Clone)]
pub struct EnsembleFit {
    pub models: Vec<LogisticModel>,
    /// Regularised loss (in the rescaled parameterisation) before each epoch
    /// and after the last one, per model.
    pub loss_history: Vec<Vec<f64>>,
}

struct Design {
    /// `s * [x, 1]`, n x (d + 1)
    xa: DMatrix<f64>,
    /// transpose of `xa`
    xa_t: DMatrix<f64>,
    scale: f64,
}

impl Design {
    fn new(x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut xa = DMatrix::from_element(n, d + 1, 1.0);
        xa.columns_mut(0, d).copy_from(x);
        let scale = 1.0 / gram_spectral_norm(&xa).sqrt().max(f64::MIN_POSITIVE);
        xa *= scale;
        let xa_t = xa.transpose();
        Self { xa, xa_t, scale }
    }
}

/// Largest eigenvalue of `A^T A / n` by power iteration from the all-ones vector.
fn gram_spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows() as f64;
    let mut v = nalgebra::DVector::from_element(a.ncols(), 1.0 / (a.ncols() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = a.tr_mul(&(a * &v)) / n;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-10 * norm;
        lambda = norm;
        v = w / norm;
        if converged {
            break;
        }
    }
    lambda
}

/// Trains one model per seed on the same data. All models advance in lockstep
/// so that each epoch costs two matrix products regardless of the ensemble size.
pub fn train_logistic_ensemble(
    x: &DMatrix<f64>,
    y: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<EnsembleFit> {
    check_training_data(x, y, num_classes)?;
    let n = x.nrows();
    let c = num_classes;
    let m = seeds.len();
    let design = Design::new(x);
    let rows = design.xa.ncols();

    // one block of c columns per model
    let init = Normal::new(0.0, 0.01).expect("valid");
    let mut w = DMatrix::zeros(rows, c * m);
    for (k, &seed) in seeds.iter().enumerate() {
        let mut r = rng::stream(seed, "logistic-init", 0);
        for j in 0..c {
            for i in 0..rows {
                w[(i, k * c + j)] = init.sample(&mut r);
            }
        }
    }

    let mut history = vec![Vec::with_capacity(cfg.epochs + 1); m];
    let mut residual = DMatrix::zeros(n, c * m);
    let mut grad = DMatrix::zeros(rows, c * m);
    let mut z = DMatrix::zeros(n, c * m);
    for epoch in 0..=cfg.epochs {
        design.xa.mul_to(&w, &mut z);
        let mut losses = vec![0.0; m];
        for i in 0..n {
            for (k, loss) in losses.iter_mut().enumerate() {
                let cols = k * c..(k + 1) * c;
                let max = cols.clone().map(|j| z[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in cols.clone() {
                    let e = (z[(i, j)] - max).exp();
                    residual[(i, j)] = e;
                    total += e;
                }
                *loss += max + total.ln() - z[(i, k * c + y[i])];
                for j in cols {
                    residual[(i, j)] /= total * n as f64;
                }
                residual[(i, k * c + y[i])] -= 1.0 / n as f64;
            }
        }
        for (k, loss) in losses.iter().enumerate() {
            let block = w.columns(k * c, c);
            let value = loss / n as f64 + 0.5 * cfg.l2 * block.norm_squared();
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            history[k].push(value);
        }
        if epoch == cfg.epochs {
            break;
        }
        design.xa_t.mul_to(&residual, &mut grad);
        grad += cfg.l2 * &w;
        w -= cfg.step(epoch) * &grad;
    }

    let models = (0..m)
        .map(|k| LogisticModel {
            weights: w.columns(k * c, c) * design.scale,
            num_classes: c,
            train_config: TrainConfig {
                seed: seeds[k],
                ..*cfg
            },
        })
        .collect();
    Ok(EnsembleFit {
        models,
        loss_history: history,
    })
}

pub fn train_logistic(
    x: &DMatrix<f64>,
    y: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<LogisticModel> {
    let mut fit = train_logistic_ensemble(x, y, num_classes, cfg, &[cfg.seed])?;
    Ok(fit.models.remove(0))
}

/// Fraction of samples whose arg-max class equals the label.
pub fn eval_accuracy(model: &LogisticModel, x: &DMatrix<f64>, y: &[usize]) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Config("cannot evaluate on zero samples".into()));
    }
    let predictions = model.predict(x)?;
    let correct = predictions.iter().zip(y).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / y.len() as f64)
}

/// Held-out accuracy of a classifier that sees only the binary masks.
/// The first `ceil(2n/3)` masks train, the rest test.
pub fn mask_only_accuracy(
    masks: &[BinaryMask],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    if masks.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: masks.len(),
            got: labels.len(),
        });
    }
    if let Some(first) = masks.first() {
        if masks
            .iter()
            .any(|m| m.height() != first.height() || m.width() != first.width())
        {
            return Err(Error::shape("masks of one shape", "mixed mask shapes"));
        }
    }
    let split = (2 * masks.len()).div_ceil(3);
    if split == 0 || split == masks.len() {
        return Err(Error::Config("need at least two masks for a train/test split".into()));
    }
    let x = mask_features(masks);
    let model = train_logistic(
        &x.rows(0, split).into_owned(),
        &labels[..split],
        num_classes,
        cfg,
    )?;
    eval_accuracy(
        &model,
        &x.rows(split, masks.len() - split).into_owned(),
        &labels[split..],
    )
}

/// Features of one pixel: its `(2r+1)^2 x C` neighbourhood with edge replication.
fn patch_features(image: &ImageTensor, radius: usize, out: &mut Vec<f64>) {
    let (h, w, c) = (image.height() as isize, image.width() as isize, image.channels());
    let r = radius as isize;
    for row in 0..h {
        for col in 0..w {
            for dr in -r..=r {
                for dc in -r..=r {
                    let rr = (row + dr).clamp(0, h - 1) as usize;
                    let cc = (col + dc).clamp(0, w - 1) as usize;
                    for ch in 0..c {
                        out.push(image.get(rr, cc, ch));
                    }
                }
            }
        }
    }
}

fn patch_design(pairs: &[(ImageTensor, BinaryMask)], radius: usize) -> (DMatrix<f64>, Vec<usize>) {
    let Some((first, _)) = pairs.first() else {
        return (DMatrix::zeros(0, 0), Vec::new());
    };
    let per_pixel = (2 * radius + 1).pow(2) * first.channels();
    let mut values = Vec::with_capacity(pairs.len() * first.pixels() * per_pixel);
    let mut labels = Vec::with_capacity(pairs.len() * first.pixels());
    for (image, mask) in pairs {
        patch_features(image, radius, &mut values);
        labels.extend(mask.bits().iter().map(|&b| b as usize));
    }
    let n = labels.len();
    (DMatrix::from_row_slice(n, per_pixel, &values), labels)
}

/// Held-out per-pixel misclassification rate of a logistic model that guesses,
/// from a local patch, whether a pixel was imputed (mask bit 1) or original.
/// The first `ceil(2n/3)` images train, the rest test.
pub fn imputation_predictor_missrate(
    pairs: &[(ImageTensor, BinaryMask)],
    patch_radius: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    for (image, mask) in pairs {
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::shape(
                format!("{}x{}", mask.height(), mask.width()),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
    }
    let split = (2 * pairs.len()).div_ceil(3);
    if split == 0 || split == pairs.len() {
        return Err(Error::Config("need at least two images for a train/test split".into()));
    }
    let (x_train, y_train) = patch_design(&pairs[..split], patch_radius);
    let (x_test, y_test) = patch_design(&pairs[split..], patch_radius);
    let model = train_logistic(&x_train, &y_train, 2, cfg)?;
    Ok(1.0 - eval_accuracy(&model, &x_test, &y_test)?)
}
