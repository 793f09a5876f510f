//! Accuracy-vs-removal curves, geometric debiasing and rank consistency.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{eval_accuracy, image_features, train_logistic_ensemble, LogisticModel, TrainConfig};
use crate::error::{Error, Result};
use crate::imputation::{impute, ImputationConfig, LinearImputer, Strategy};
use crate::infotheory::{bias_ratio, GaussianModel, DEFAULT_RESOLUTION};
use crate::masking::{rank_pixels, topk_mask, BinaryMask, Part, RemovalOrder};
use crate::rng;
use crate::tensor::{Dataset, ImageTensor, SaliencyMap};

pub const DEFAULT_ETA_GRID: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub order: RemovalOrder,
    pub retrain: bool,
    pub imputation: ImputationConfig,
    /// Removed fraction for MoRF, kept fraction for LeRF.
    pub eta_grid: Vec<f64>,
    pub n_models: usize,
    pub train: TrainConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            order: RemovalOrder::Morf,
            retrain: false,
            imputation: ImputationConfig::new(Strategy::noisy_linear(), 0),
            eta_grid: DEFAULT_ETA_GRID.to_vec(),
            n_models: 15,
            train: TrainConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.eta_grid)?;
        if self.n_models == 0 {
            return Err(Error::Config("n_models must be at least 1".into()));
        }
        self.imputation.validate()
    }

    /// Short identifier such as `morf-retrain-noisy_linear`.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-{}",
            self.order.name(),
            if self.retrain { "retrain" } else { "noretrain" },
            self.imputation.strategy.name()
        )
    }

    /// `train.seed, train.seed + 1, ...`, one per model.
    pub fn model_seeds(&self) -> Vec<u64> {
        (0..self.n_models as u64)
            .map(|i| self.train.seed.wrapping_add(i))
            .collect()
    }
}

fn validate_grid(eta: &[f64]) -> Result<()> {
    if eta.is_empty() {
        return Err(Error::Config("eta grid is empty".into()));
    }
    if eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Config("eta values must lie in [0, 1]".into()));
    }
    if eta.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("eta grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCurve {
    pub name: String,
    pub eta: Vec<f64>,
    pub acc_mean: Vec<f64>,
    pub acc_stderr: Vec<f64>,
}

impl EvaluationCurve {
    pub fn validate(&self) -> Result<()> {
        for len in [self.acc_mean.len(), self.acc_stderr.len()] {
            if len != self.eta.len() {
                return Err(Error::LengthMismatch {
                    expected: self.eta.len(),
                    got: len,
                });
            }
        }
        if self.acc_mean.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Domain(format!("curve {} has accuracy outside [0, 1]", self.name)));
        }
        Ok(())
    }

    pub fn auc(&self) -> f64 {
        trapezoid(&self.eta, &self.acc_mean)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Attribution maps for a dataset: one map shared by every image, or one per image.
#[derive(Debug, Clone, PartialEq)]
pub enum SaliencySource {
    Shared(SaliencyMap),
    PerImage(Vec<SaliencyMap>),
}

impl SaliencySource {
    fn check(&self, ds: &Dataset) -> Result<()> {
        let (h, w, _) = ds.image_shape().ok_or(Error::Config("empty dataset".into()))?;
        let maps: &[SaliencyMap] = match self {
            SaliencySource::Shared(s) => std::slice::from_ref(s),
            SaliencySource::PerImage(v) => {
                if v.len() != ds.len() {
                    return Err(Error::LengthMismatch {
                        expected: ds.len(),
                        got: v.len(),
                    });
                }
                v
            }
        };
        for s in maps {
            if (s.height(), s.width()) != (h, w) {
                return Err(Error::shape(
                    format!("{h}x{w}"),
                    format!("{}x{}", s.height(), s.width()),
                ));
            }
        }
        Ok(())
    }

    fn rankings(&self) -> Result<Rankings> {
        Ok(match self {
            SaliencySource::Shared(s) => Rankings::Shared(rank_pixels(s)?),
            SaliencySource::PerImage(v) => {
                Rankings::PerImage(v.iter().map(rank_pixels).collect::<Result<_>>()?)
            }
        })
    }
}

enum Rankings {
    Shared(Vec<usize>),
    PerImage(Vec<Vec<usize>>),
}

impl Rankings {
    fn get(&self, image: usize) -> &[usize] {
        match self {
            Rankings::Shared(p) => p,
            Rankings::PerImage(v) => &v[image],
        }
    }
}

fn mask_for(order: RemovalOrder, perm: &[usize], eta: f64, h: usize, w: usize) -> Result<(BinaryMask, Part)> {
    let k = crate::masking::k_for_fraction(eta, h * w)?;
    Ok((topk_mask(perm, k, h, w)?, order.kept_part()))
}

/// Imputes images `range` of the dataset for one grid point. Noise streams depend
/// only on the seed, the grid index and the image index, so the result does not
/// depend on how the work is scheduled.
fn impute_range(
    ds: &Dataset,
    rankings: &Rankings,
    range: std::ops::Range<usize>,
    order: RemovalOrder,
    eta: f64,
    eta_index: usize,
    cfg: &ImputationConfig,
) -> Result<Vec<ImageTensor>> {
    let (h, w, _) = ds.image_shape().expect("non-empty");
    let mean = ds.per_channel_mean();
    let noise = |i: usize| rng::stream(cfg.rng_seed, "impute", ((eta_index as u64) << 32) | i as u64);
    if let (Rankings::Shared(perm), Strategy::NoisyLinear { .. }) = (rankings, &cfg.strategy) {
        // one factorisation serves every image
        let (mask, part) = mask_for(order, perm, eta, h, w)?;
        let imputer = LinearImputer::new(&mask, part).factorised();
        return range
            .into_par_iter()
            .map(|i| imputer.impute(&ds.images()[i], cfg, &mut noise(i), mean))
            .collect();
    }
    range
        .into_par_iter()
        .map(|i| {
            let (mask, part) = mask_for(order, rankings.get(i), eta, h, w)?;
            impute(&ds.images()[i], &mask, part, cfg, &mut noise(i), mean)
        })
        .collect()
}

/// Imputes every image of `ds` for one removal fraction, as the evaluation
/// does at the first grid point.
pub fn impute_dataset(
    ds: &Dataset,
    saliency: &SaliencySource,
    order: RemovalOrder,
    eta: f64,
    cfg: &ImputationConfig,
) -> Result<Vec<ImageTensor>> {
    cfg.validate()?;
    saliency.check(ds)?;
    impute_range(ds, &saliency.rankings()?, 0..ds.len(), order, eta, 0, cfg)
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trains `cfg.n_models` classifiers on the unmodified training split.
pub fn train_baseline(ds: &Dataset, cfg: &StrategyConfig) -> Result<Vec<LogisticModel>> {
    let split = ds.split_point();
    let x = image_features(&ds.images()[..split]);
    Ok(train_logistic_ensemble(&x, &ds.labels()[..split], ds.num_classes(), &cfg.train, &cfg.model_seeds())?.models)
}

/// Accuracies of `models` on the test split.
pub fn test_accuracies(ds: &Dataset, models: &[LogisticModel]) -> Result<Vec<f64>> {
    let split = ds.split_point();
    let x = image_features(&ds.images()[split..]);
    models
        .iter()
        .map(|m| eval_accuracy(m, &x, &ds.labels()[split..]))
        .collect()
}

/// Accuracy curve over `cfg.eta_grid`. Without retraining, the baseline
/// ensemble (trained here unless supplied) is evaluated on imputed test images.
pub fn run_curve(
    ds: &Dataset,
    saliency: &SaliencySource,
    cfg: &StrategyConfig,
    name: &str,
) -> Result<EvaluationCurve> {
    run_curve_with_baseline(ds, saliency, cfg, name, None)
}

pub fn run_curve_with_baseline(
    ds: &Dataset,
    saliency: &SaliencySource,
    cfg: &StrategyConfig,
    name: &str,
    baseline: Option<&[LogisticModel]>,
) -> Result<EvaluationCurve> {
    cfg.validate()?;
    saliency.check(ds)?;
    let split = ds.split_point();
    if split == 0 || split == ds.len() {
        return Err(Error::Config("dataset too small for a train/test split".into()));
    }
    let rankings = saliency.rankings()?;
    let owned;
    let baseline = match (cfg.retrain, baseline) {
        (true, _) => None,
        (false, Some(b)) => Some(b),
        (false, None) => {
            owned = train_baseline(ds, cfg)?;
            Some(owned.as_slice())
        }
    };
    let train_labels = &ds.labels()[..split];
    let test_labels = &ds.labels()[split..];

    let mut acc_mean = Vec::with_capacity(cfg.eta_grid.len());
    let mut acc_stderr = Vec::with_capacity(cfg.eta_grid.len());
    for (t, &eta) in cfg.eta_grid.iter().enumerate() {
        let test = impute_range(ds, &rankings, split..ds.len(), cfg.order, eta, t, &cfg.imputation)?;
        let x_test = image_features(&test);
        let accs = match baseline {
            Some(models) => models
                .iter()
                .map(|m| eval_accuracy(m, &x_test, test_labels))
                .collect::<Result<Vec<_>>>()?,
            None => {
                let train = impute_range(ds, &rankings, 0..split, cfg.order, eta, t, &cfg.imputation)?;
                let fit = train_logistic_ensemble(
                    &image_features(&train),
                    train_labels,
                    ds.num_classes(),
                    &cfg.train,
                    &cfg.model_seeds(),
                )?;
                fit.models
                    .iter()
                    .map(|m| eval_accuracy(m, &x_test, test_labels))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let (m, s) = mean_stderr(&accs);
        acc_mean.push(m);
        acc_stderr.push(s);
    }
    Ok(EvaluationCurve {
        name: name.to_string(),
        eta: cfg.eta_grid.clone(),
        acc_mean,
        acc_stderr,
    })
}

/// Estimated bias indicator per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasIndicatorSeries {
    pub order: RemovalOrder,
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasedCurve {
    pub curve: EvaluationCurve,
    /// Grid points whose raw value fell outside [0, 1].
    pub clamped: Vec<bool>,
}

/// `acc' = baseline - (baseline - acc) / gamma`, clamped to [0, 1].
pub fn debias_curve(
    curve: &EvaluationCurve,
    baseline_acc: f64,
    gammas: &BiasIndicatorSeries,
    order: RemovalOrder,
) -> Result<DebiasedCurve> {
    curve.validate()?;
    if gammas.eta != curve.eta {
        return Err(Error::GridMismatch);
    }
    if gammas.order != order {
        return Err(Error::Config(format!(
            "bias indicators were estimated for {}, curve is {}",
            gammas.order.name(),
            order.name()
        )));
    }
    if !(0.0..=1.0).contains(&baseline_acc) {
        return Err(Error::Domain(format!("baseline accuracy {baseline_acc} outside [0, 1]")));
    }
    if let Some(&g) = gammas.gamma.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::InvalidGamma(g));
    }
    let mut clamped = Vec::with_capacity(curve.eta.len());
    let mut acc_mean = Vec::with_capacity(curve.eta.len());
    for (&acc, &g) in curve.acc_mean.iter().zip(&gammas.gamma) {
        let raw = baseline_acc - (baseline_acc - acc) / g;
        clamped.push(!(0.0..=1.0).contains(&raw));
        acc_mean.push(raw.clamp(0.0, 1.0));
    }
    let acc_stderr = curve
        .acc_stderr
        .iter()
        .zip(&gammas.gamma)
        .map(|(s, g)| s / g)
        .collect();
    Ok(DebiasedCurve {
        curve: EvaluationCurve {
            name: format!("{}-debiased", curve.name),
            eta: curve.eta.clone(),
            acc_mean,
            acc_stderr,
        },
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaConfig {
    /// Ridge added to the empirical covariance, relative to its mean variance.
    pub shrinkage: f64,
    pub resolution: f64,
    /// With per-image maps, indicators are averaged over this many evenly spaced images.
    pub max_masks: usize,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            shrinkage: 1e-3,
            resolution: DEFAULT_RESOLUTION,
            max_masks: 8,
        }
    }
}

pub const GAMMA_FLOOR: f64 = 1e-3;

/// Empirical covariance of all image values (pixel-major, channels innermost)
/// with `shrinkage * tr / d` added to the diagonal.
pub fn empirical_covariance(ds: &Dataset, shrinkage: f64) -> Result<GaussianModel> {
    let x = image_features(ds.images());
    let (n, d) = x.shape();
    if n < 2 * d {
        return Err(Error::Config(format!(
            "covariance estimation needs at least {} samples, got {n}",
            2 * d
        )));
    }
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    let mut centred = x;
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let mut cov: DMatrix<f64> = centred.tr_mul(&centred) / (n - 1) as f64;
    let ridge = shrinkage * cov.trace() / d as f64;
    if !(ridge > 0.0) && shrinkage > 0.0 {
        return Err(Error::SingularCovariance);
    }
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    cov = (&cov + cov.transpose()) * 0.5;
    GaussianModel::new(mean, cov)
}

fn expand_channels(mask: &BinaryMask, channels: usize) -> Result<BinaryMask> {
    if channels == 1 {
        return Ok(mask.clone());
    }
    let bits = mask
        .bits()
        .iter()
        .flat_map(|&b| std::iter::repeat(b).take(channels))
        .collect();
    BinaryMask::from_bits(mask.height(), mask.width() * channels, bits)
}

/// Bias indicator of the removed pixels for each grid point, from a Gaussian
/// fit to the dataset. Grid points that remove nothing or everything get 1.
pub fn estimate_gamma(
    ds: &Dataset,
    saliency: &SaliencySource,
    order: RemovalOrder,
    eta_grid: &[f64],
    cfg: &GammaConfig,
) -> Result<BiasIndicatorSeries> {
    validate_grid(eta_grid)?;
    saliency.check(ds)?;
    let (h, w, c) = ds.image_shape().expect("checked");
    let model = empirical_covariance(ds, cfg.shrinkage)?;
    let rankings = saliency.rankings()?;
    let images: Vec<usize> = match &rankings {
        Rankings::Shared(_) => vec![0],
        Rankings::PerImage(v) => {
            let m = cfg.max_masks.clamp(1, v.len());
            (0..m).map(|i| i * v.len() / m).collect()
        }
    };
    let removed = order.kept_part().complement();
    let gamma = eta_grid
        .iter()
        .map(|&eta| {
            let mut total = 0.0;
            for &i in &images {
                let (mask, _) = mask_for(order, rankings.get(i), eta, h, w)?;
                let g = if mask.count(removed) == 0 || mask.count(removed.complement()) == 0 {
                    1.0
                } else {
                    let mask = expand_channels(&mask, c)?;
                    bias_ratio(&model, &mask, removed, cfg.resolution)?.beta
                };
                total += g.clamp(GAMMA_FLOOR, 1.0);
            }
            Ok(total / images.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(BiasIndicatorSeries {
        order,
        eta: eta_grid.to_vec(),
        gamma,
    })
}

/// Average ranks (1 = smallest); ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub order: RemovalOrder,
    pub methods: Vec<String>,
    pub eta: Vec<f64>,
    /// `ranks[t][m]`: rank of method `m` at grid point `t`, 1 = best.
    pub ranks: Vec<Vec<f64>>,
}

fn shared_grid<'a>(curves: impl IntoIterator<Item = &'a EvaluationCurve>) -> Result<Vec<f64>> {
    let mut grid: Option<&[f64]> = None;
    for c in curves {
        c.validate()?;
        match grid {
            None => grid = Some(&c.eta),
            Some(g) if g != c.eta.as_slice() => return Err(Error::GridMismatch),
            _ => {}
        }
    }
    Ok(grid.unwrap_or_default().to_vec())
}

/// Per grid point, ranks methods by accuracy: lower is better for MoRF,
/// higher for LeRF.
pub fn strategy_ranking(
    curves: &BTreeMap<String, EvaluationCurve>,
    order: RemovalOrder,
) -> Result<RankMatrix> {
    if curves.len() < 2 {
        return Err(Error::Config("ranking needs at least two methods".into()));
    }
    let eta = shared_grid(curves.values())?;
    let ranks = (0..eta.len())
        .map(|t| {
            let accs: Vec<f64> = curves
                .values()
                .map(|c| match order {
                    RemovalOrder::Morf => c.acc_mean[t],
                    RemovalOrder::Lerf => -c.acc_mean[t],
                })
                .collect();
            average_ranks(&accs)
        })
        .collect();
    Ok(RankMatrix {
        order,
        methods: curves.keys().cloned().collect(),
        eta,
        ranks,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// Per-grid-point rank rows (zero removal excluded) joined into one vector.
    #[default]
    Concatenated,
    /// Ranks of the per-method mean accuracy over the grid (zero removal excluded).
    MeanCurve,
}

fn nonzero_rows(eta: &[f64]) -> Vec<usize> {
    (0..eta.len()).filter(|&t| eta[t] != 0.0).collect()
}

/// Spearman correlation between the method rankings of two strategies.
pub fn rank_consistency(
    a: &BTreeMap<String, EvaluationCurve>,
    order_a: RemovalOrder,
    b: &BTreeMap<String, EvaluationCurve>,
    order_b: RemovalOrder,
    mode: ConsistencyMode,
) -> Result<f64> {
    if !a.keys().eq(b.keys()) {
        return Err(Error::Config("strategies were run on different methods".into()));
    }
    let ra = strategy_ranking(a, order_a)?;
    let rb = strategy_ranking(b, order_b)?;
    if ra.eta.len() != rb.eta.len() {
        return Err(Error::GridMismatch);
    }
    match mode {
        ConsistencyMode::Concatenated => {
            let rows = nonzero_rows(&ra.eta);
            let flat = |r: &RankMatrix| -> Vec<f64> {
                rows.iter().flat_map(|&t| r.ranks[t].iter().copied()).collect()
            };
            spearman(&flat(&ra), &flat(&rb))
        }
        ConsistencyMode::MeanCurve => {
            let summary = |curves: &BTreeMap<String, EvaluationCurve>, order: RemovalOrder| -> Vec<f64> {
                curves
                    .values()
                    .map(|c| {
                        let rows = nonzero_rows(&c.eta);
                        let m = rows.iter().map(|&t| c.acc_mean[t]).sum::<f64>() / rows.len().max(1) as f64;
                        match order {
                            RemovalOrder::Morf => m,
                            RemovalOrder::Lerf => -m,
                        }
                    })
                    .collect()
            };
            spearman(&summary(a, order_a), &summary(b, order_b))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub size: usize,
    pub fraction: f64,
    pub unknowns: usize,
    pub median_secs: f64,
}

pub const MIN_REPETITIONS: usize = 5;

/// Median wall time of one imputation per (image size, removed fraction).
/// Images are smooth random fields; the removed pixels form a central blob.
pub fn runtime_benchmark(
    cfg: &ImputationConfig,
    sizes: &[usize],
    fractions: &[f64],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    cfg.validate()?;
    let reps = repetitions.max(MIN_REPETITIONS);
    let mut rows = Vec::new();
    for &size in sizes {
        let image = smooth_field(size, seed);
        let centre = (size as f64 - 1.0) / 2.0;
        let scores = (0..size * size)
            .map(|p| {
                let (i, j) = ((p / size) as f64, (p % size) as f64);
                -((i - centre).powi(2) + (j - centre).powi(2))
            })
            .collect();
        let perm = rank_pixels(&SaliencyMap::new(size, size, scores)?)?;
        for &fraction in fractions {
            let (mask, part) = mask_for(RemovalOrder::Morf, &perm, fraction, size, size)?;
            let mut times = Vec::with_capacity(reps);
            for r in 0..reps {
                let mut noise = rng::stream(seed, "benchmark", r as u64);
                let start = Instant::now();
                let out = impute(&image, &mask, part, cfg, &mut noise, &[0.0])?;
                times.push(start.elapsed().as_secs_f64());
                std::hint::black_box(out);
            }
            times.sort_by(f64::total_cmp);
            rows.push(TimingRow {
                size,
                fraction,
                unknowns: mask.count(part.complement()),
                median_secs: times[reps / 2],
            });
        }
    }
    Ok(rows)
}

fn smooth_field(size: usize, seed: u64) -> ImageTensor {
    use rand::Rng;
    let mut r = rng::stream(seed, "benchmark-image", size as u64);
    let waves: Vec<(f64, f64, f64)> = (0..8)
        .map(|_| (r.random::<f64>() * 4.0, r.random::<f64>() * 4.0, r.random::<f64>() * 6.3))
        .collect();
    let data = (0..size * size)
        .map(|p| {
            let (i, j) = ((p / size) as f64 / size as f64, (p % size) as f64 / size as f64);
            waves
                .iter()
                .map(|(a, b, ph)| (std::f64::consts::TAU * (a * i + b * j) + ph).sin())
                .sum::<f64>()
                / 8.0
        })
        .collect();
    ImageTensor::new(size, size, 1, data).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputation::NoiseScale;
    use rand::Rng;

    fn curve(name: &str, acc: &[f64]) -> EvaluationCurve {
        EvaluationCurve {
            name: name.into(),
            eta: (0..acc.len()).map(|i| i as f64 / 10.0).collect(),
            acc_mean: acc.to_vec(),
            acc_stderr: vec![0.01; acc.len()],
        }
    }

    fn series(order: RemovalOrder, eta: &[f64], gamma: &[f64]) -> BiasIndicatorSeries {
        BiasIndicatorSeries {
            order,
            eta: eta.to_vec(),
            gamma: gamma.to_vec(),
        }
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation)
        ));
        assert!(spearman(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[0.5, 0.5]), vec![1.5, 1.5]);
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0, 1.0]), vec![4.0, 1.5, 3.0, 1.5]);
    }

    #[test]
    fn ranking_examples() {
        let mut curves = BTreeMap::new();
        curves.insert("a".to_string(), curve("a", &[0.3]));
        curves.insert("b".to_string(), curve("b", &[0.7]));
        assert_eq!(strategy_ranking(&curves, RemovalOrder::Morf).unwrap().ranks, vec![vec![1.0, 2.0]]);
        assert_eq!(strategy_ranking(&curves, RemovalOrder::Lerf).unwrap().ranks, vec![vec![2.0, 1.0]]);
        curves.insert("b".to_string(), curve("b", &[0.3]));
        assert_eq!(strategy_ranking(&curves, RemovalOrder::Morf).unwrap().ranks, vec![vec![1.5, 1.5]]);
        curves.insert("c".to_string(), curve("c", &[0.3, 0.2]));
        assert!(matches!(strategy_ranking(&curves, RemovalOrder::Morf), Err(Error::GridMismatch)));
        let one: BTreeMap<_, _> = [("a".to_string(), curve("a", &[0.3]))].into();
        assert!(strategy_ranking(&one, RemovalOrder::Morf).is_err());
    }

    #[test]
    fn debias_examples() {
        let c = curve("m", &[0.8, 0.7]);
        let eta = c.eta.clone();
        let id = debias_curve(&c, 0.8, &series(RemovalOrder::Morf, &eta, &[1.0, 1.0]), RemovalOrder::Morf).unwrap();
        assert_eq!(id.curve.acc_mean, c.acc_mean);
        let half = debias_curve(&c, 0.8, &series(RemovalOrder::Morf, &eta, &[1.0, 0.5]), RemovalOrder::Morf).unwrap();
        assert!((half.curve.acc_mean[1] - 0.6).abs() < 1e-12);
        assert_eq!(half.clamped, vec![false, false]);
        let c2 = curve("m", &[0.8, 0.75]);
        let low = debias_curve(&c2, 0.8, &series(RemovalOrder::Morf, &eta, &[1.0, 0.05]), RemovalOrder::Morf).unwrap();
        assert_eq!(low.curve.acc_mean[1], 0.0);
        assert_eq!(low.clamped, vec![false, true]);
        assert!(matches!(
            debias_curve(&c, 0.8, &series(RemovalOrder::Morf, &eta, &[1.0, 0.0]), RemovalOrder::Morf),
            Err(Error::InvalidGamma(_))
        ));
        assert!(debias_curve(&c, 0.8, &series(RemovalOrder::Lerf, &eta, &[1.0, 1.0]), RemovalOrder::Morf).is_err());
        assert!(matches!(
            debias_curve(&c, 0.8, &series(RemovalOrder::Morf, &[0.0], &[1.0]), RemovalOrder::Morf),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn auc_is_trapezoid() {
        let c = EvaluationCurve {
            name: "x".into(),
            eta: vec![0.0, 0.5, 1.0],
            acc_mean: vec![1.0, 0.5, 0.0],
            acc_stderr: vec![0.0; 3],
        };
        assert!((c.auc() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        let mut cfg = StrategyConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.eta_grid = vec![0.0, 0.5, 0.5];
        assert!(cfg.validate().is_err());
        cfg.eta_grid = vec![0.0, 1.5];
        assert!(cfg.validate().is_err());
    }

    fn stripes(n: usize) -> Dataset {
        // class signal in the left column of a 4x4 image
        let mut r = rng::stream(1, "test-data", 0);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let data = (0..16)
                .map(|p| {
                    let signal = if p % 4 == 0 { label as f64 * 2.0 - 1.0 } else { 0.0 };
                    signal + 0.3 * (r.random::<f64>() - 0.5)
                })
                .collect();
            images.push(ImageTensor::new(4, 4, 1, data).unwrap());
            labels.push(label);
        }
        Dataset::new(images, labels, 2).unwrap()
    }

    fn small_cfg(order: RemovalOrder, retrain: bool) -> StrategyConfig {
        StrategyConfig {
            order,
            retrain,
            imputation: ImputationConfig::new(Strategy::fixed_mean(), 3),
            eta_grid: vec![0.0, 0.25, 0.5, 1.0],
            n_models: 3,
            train: TrainConfig {
                learning_rate: 1.0,
                epochs: 100,
                ..TrainConfig::default()
            },
        }
    }

    fn left_first() -> SaliencySource {
        SaliencySource::Shared(
            SaliencyMap::new(4, 4, (0..16).map(|p| if p % 4 == 0 { 1.0 } else { 0.0 }).collect()).unwrap(),
        )
    }

    #[test]
    fn zero_removal_matches_baseline() {
        let ds = stripes(90);
        let cfg = small_cfg(RemovalOrder::Morf, false);
        let base = train_baseline(&ds, &cfg).unwrap();
        let accs = test_accuracies(&ds, &base).unwrap();
        let c = run_curve_with_baseline(&ds, &left_first(), &cfg, "m", Some(&base)).unwrap();
        assert_eq!(c.acc_mean[0], mean_stderr(&accs).0);
        let lerf = run_curve_with_baseline(&ds, &left_first(), &small_cfg(RemovalOrder::Lerf, false), "l", Some(&base)).unwrap();
        assert_eq!(lerf.acc_mean[3], mean_stderr(&accs).0);
        assert!(c.acc_mean[0] > 0.95);
        // removing the signal column destroys the class information
        assert!(c.acc_mean[1] < 0.7);
    }

    #[test]
    fn retrain_curve_is_deterministic() {
        let ds = stripes(60);
        let mut cfg = small_cfg(RemovalOrder::Lerf, true);
        cfg.imputation = ImputationConfig::new(
            Strategy::NoisyLinear {
                noise: NoiseScale::default(),
                solver_tol: 1e-8,
                solver_max_iters: None,
            },
            5,
        );
        let a = run_curve(&ds, &left_first(), &cfg, "x").unwrap();
        let b = run_curve(&ds, &left_first(), &cfg, "x").unwrap();
        assert_eq!(a, b);
        assert!(a.validate().is_ok());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_curve(&ds, &left_first(), &cfg, "x")).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn per_image_source_length_checked() {
        let ds = stripes(30);
        let src = SaliencySource::PerImage(vec![SaliencyMap::new(4, 4, vec![0.0; 16]).unwrap()]);
        assert!(run_curve(&ds, &src, &small_cfg(RemovalOrder::Morf, false), "x").is_err());
    }

    #[test]
    fn independent_pixels_give_unit_gamma() {
        let mut r = rng::stream(2, "iid", 0);
        let n = 400;
        let images = (0..n)
            .map(|_| {
                let data = (0..36).map(|_| r.random::<f64>()).collect();
                ImageTensor::new(6, 6, 1, data).unwrap()
            })
            .collect();
        let ds = Dataset::new(images, vec![0; n], 1).unwrap();
        let src = SaliencySource::Shared(SaliencyMap::new(6, 6, (0..36).map(|p| p as f64).collect()).unwrap());
        let g = estimate_gamma(&ds, &src, RemovalOrder::Morf, &DEFAULT_ETA_GRID, &GammaConfig::default()).unwrap();
        assert_eq!(g.gamma[0], 1.0);
        for v in &g.gamma {
            assert!((v - 1.0).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn gamma_needs_enough_samples() {
        let ds = stripes(20);
        let r = estimate_gamma(&ds, &left_first(), RemovalOrder::Morf, &DEFAULT_ETA_GRID, &GammaConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn benchmark_shapes() {
        let rows = runtime_benchmark(
            &ImputationConfig::new(Strategy::noisy_linear(), 0),
            &[8],
            &[0.0, 0.5],
            1,
            0,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].unknowns, 0);
        assert_eq!(rows[1].unknowns, 32);
    }

    #[test]
    fn consistency_modes() {
        let mk = |accs: [[f64; 3]; 3]| -> BTreeMap<String, EvaluationCurve> {
            ["a", "b", "c"]
                .iter()
                .zip(accs)
                .map(|(n, a)| (n.to_string(), curve(n, &a)))
                .collect()
        };
        let morf = mk([[0.9, 0.2, 0.1], [0.9, 0.5, 0.4], [0.9, 0.7, 0.6]]);
        // LeRF prefers high accuracy, so the mirrored values give the same ranking
        let lerf = mk([[0.5, 0.8, 0.9], [0.5, 0.6, 0.7], [0.5, 0.3, 0.4]]);
        for mode in [ConsistencyMode::Concatenated, ConsistencyMode::MeanCurve] {
            let rho = rank_consistency(&morf, RemovalOrder::Morf, &lerf, RemovalOrder::Lerf, mode).unwrap();
            assert!((rho - 1.0).abs() < 1e-12);
        }
    }
}
