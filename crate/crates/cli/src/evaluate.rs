//! `road evaluate`: curves, bias indicators, debiased curves and rank
//! consistency for every configured strategy and saliency method.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use road_core::evaluation::{
    debias_curve, estimate_gamma, rank_consistency, run_curve_with_baseline, strategy_ranking,
    test_accuracies, train_baseline, BiasIndicatorSeries, ConsistencyMode, GammaConfig, RankMatrix,
    SaliencySource, StrategyConfig,
};
use road_core::report::{curves_to_csv, curves_to_svg, gamma_to_csv};
use road_core::toyworld::{handcrafted_ordering, sample_dataset, GpDatasetConfig, OrderingKind};
use road_core::{Dataset, EvaluationCurve, RemovalOrder};

use crate::commands::{load_dataset, load_saliency};
use crate::error::{CliError, CliResult};
use crate::outputs::{transactional, Outputs};
use crate::EvaluateArgs;

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SaliencySpec {
    /// `H×W` or `N×H×W` array; relative paths start at the config file.
    File(PathBuf),
    /// Handcrafted toy ordering; needs a `toy` dataset.
    Ordering(OrderingKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub toy: Option<GpDatasetConfig>,
    pub saliency: BTreeMap<String, SaliencySpec>,
    pub strategies: Vec<StrategyConfig>,
    pub output_dir: PathBuf,
    /// Root of every random stream unless `--seed` or `ROAD_SEED` is given.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub consistency: ConsistencyMode,
    #[serde(default)]
    pub gamma: GammaConfig,
    #[serde(default)]
    pub svg: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Usage(format!("run config {} does not exist", path.display())),
            _ => CliError::io(path, e),
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.dataset_path.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        for spec in cfg.saliency.values_mut() {
            if let SaliencySpec::File(p) = spec {
                resolve(p);
            }
        }
        Ok(cfg)
    }

    /// Seeds every module from `seed`; each derives its own streams by purpose.
    pub fn reseed(&mut self, seed: u64) {
        if let Some(t) = self.toy.as_mut() {
            t.seed = seed;
        }
        for s in &mut self.strategies {
            s.imputation.rng_seed = seed;
            s.train.seed = seed;
        }
        self.seed = Some(seed);
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        match (&self.dataset_path, &self.toy) {
            (Some(_), Some(_)) => return usage("give either dataset_path or toy, not both".into()),
            (None, None) => return usage("the run config needs dataset_path or toy".into()),
            _ => {}
        }
        if let Some(t) = &self.toy {
            t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if self.saliency.is_empty() {
            return usage("no saliency methods configured".into());
        }
        if self.strategies.is_empty() {
            return usage("no strategies configured".into());
        }
        for s in &self.strategies {
            s.validate().map_err(|e| CliError::Usage(format!("strategy {}: {e}", s.label())))?;
        }
        for (name, spec) in &self.saliency {
            if name.is_empty() || name.contains([',', '/', '\\']) {
                return usage(format!("method name {name:?} cannot be used as a column"));
            }
            if matches!(spec, SaliencySpec::Ordering(_)) && self.toy.is_none() {
                return usage(format!("method {name}: handcrafted orderings need a toy dataset"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct StrategyReport {
    label: String,
    config: StrategyConfig,
    /// Test accuracy of the ensemble trained on unmodified images.
    baseline_accuracy: f64,
    auc: BTreeMap<String, f64>,
    /// Best first: low area for MoRF, high area for LeRF.
    ranking: Vec<String>,
    /// Per grid point; needs at least two methods.
    #[serde(skip_serializing_if = "Option::is_none")]
    ranks: Option<RankMatrix>,
    /// Grid points per method where the debiased value had to be clamped.
    debias_clamped: BTreeMap<String, Vec<bool>>,
}

#[derive(Debug, Serialize)]
struct PairConsistency {
    a: String,
    b: String,
    /// `None` when the grids differ in length or a ranking is constant.
    rho: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    seed: u64,
    consistency_mode: ConsistencyMode,
    strategies: Vec<StrategyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spearman: Option<Vec<PairConsistency>>,
}

/// Distinct labels: repeated ones get `-2`, `-3`, ...
fn unique_labels(strategies: &[StrategyConfig]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    strategies
        .iter()
        .map(|s| {
            let base = s.label();
            let mut label = base.clone();
            let mut n = 1;
            while !seen.insert(label.clone()) {
                n += 1;
                label = format!("{base}-{n}");
            }
            label
        })
        .collect()
}

fn auc_ranking(curves: &BTreeMap<String, EvaluationCurve>, order: RemovalOrder) -> Vec<String> {
    let mut names: Vec<&String> = curves.keys().collect();
    names.sort_by(|a, b| {
        let (x, y) = (curves[*a].auc(), curves[*b].auc());
        match order {
            RemovalOrder::Morf => x.total_cmp(&y),
            RemovalOrder::Lerf => y.total_cmp(&x),
        }
    });
    names.into_iter().cloned().collect()
}

fn sources(cfg: &RunConfig, ds: &Dataset) -> CliResult<BTreeMap<String, SaliencySource>> {
    cfg.saliency
        .iter()
        .map(|(name, spec)| {
            let src = match spec {
                SaliencySpec::File(p) => load_saliency(p, ds)?,
                SaliencySpec::Ordering(kind) => {
                    let toy = cfg.toy.as_ref().expect("validated");
                    SaliencySource::Shared(handcrafted_ordering(*kind, toy, toy.seed)?)
                }
            };
            Ok((name.clone(), src))
        })
        .collect()
}

pub fn evaluate(args: &EvaluateArgs, cli_seed: Option<u64>) -> CliResult<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    let seed = cli_seed.or(cfg.seed).unwrap_or(0);
    cfg.reseed(seed);
    cfg.validate()?;
    let ds = match (&cfg.dataset_path, &cfg.toy) {
        (Some(p), _) => load_dataset(p)?,
        (None, Some(t)) => sample_dataset(t)?,
        (None, None) => unreachable!("validated"),
    };
    let sources = sources(&cfg, &ds)?;
    let labels = unique_labels(&cfg.strategies);

    let mut all_curves = Vec::new();
    let mut reports = Vec::new();
    let mut gamma_cache: BTreeMap<(RemovalOrder, Vec<u64>, String), BiasIndicatorSeries> = BTreeMap::new();
    let mut files: Vec<(String, String)> = Vec::new();
    for (strategy, label) in cfg.strategies.iter().zip(&labels) {
        eprintln!("road: running {label}");
        let baseline = train_baseline(&ds, strategy)?;
        let accs = test_accuracies(&ds, &baseline)?;
        let baseline_accuracy = accs.iter().sum::<f64>() / accs.len() as f64;
        let shared = (!strategy.retrain).then_some(baseline.as_slice());

        let mut curves = BTreeMap::new();
        let mut gammas = Vec::new();
        let mut debiased = Vec::new();
        let mut clamped = BTreeMap::new();
        for (name, src) in &sources {
            let curve = run_curve_with_baseline(&ds, src, strategy, name, shared)?;
            let key = (
                strategy.order,
                strategy.eta_grid.iter().map(|e| e.to_bits()).collect(),
                name.clone(),
            );
            if !gamma_cache.contains_key(&key) {
                let series = estimate_gamma(&ds, src, strategy.order, &strategy.eta_grid, &cfg.gamma)?;
                gamma_cache.insert(key.clone(), series);
            }
            let series = &gamma_cache[&key];
            let d = debias_curve(&curve, baseline_accuracy, series, strategy.order)?;
            gammas.push((name.clone(), series.clone()));
            clamped.insert(name.clone(), d.clamped);
            debiased.push(d.curve);
            curves.insert(name.clone(), curve);
        }
        let list: Vec<EvaluationCurve> = curves.values().cloned().collect();
        files.push((format!("curves_{label}.csv"), curves_to_csv(&list)?));
        files.push((format!("gamma_{label}.csv"), gamma_to_csv(&gammas)?));
        files.push((format!("debiased_{label}.csv"), curves_to_csv(&debiased)?));
        if cfg.svg {
            let title = format!("{label} ({})", if strategy.order == RemovalOrder::Morf { "removed fraction" } else { "kept fraction" });
            files.push((format!("curves_{label}.svg"), curves_to_svg(&list, &title)?));
        }
        reports.push(StrategyReport {
            label: label.clone(),
            config: strategy.clone(),
            baseline_accuracy,
            auc: curves.iter().map(|(n, c)| (n.clone(), c.auc())).collect(),
            ranking: auc_ranking(&curves, strategy.order),
            ranks: if curves.len() >= 2 {
                Some(strategy_ranking(&curves, strategy.order)?)
            } else {
                None
            },
            debias_clamped: clamped,
        });
        all_curves.push(curves);
    }

    let spearman = (cfg.strategies.len() >= 2 && sources.len() >= 2).then(|| {
        let mut pairs = Vec::new();
        for i in 0..cfg.strategies.len() {
            for j in i + 1..cfg.strategies.len() {
                let rho = rank_consistency(
                    &all_curves[i],
                    cfg.strategies[i].order,
                    &all_curves[j],
                    cfg.strategies[j].order,
                    cfg.consistency,
                )
                .ok();
                pairs.push(PairConsistency {
                    a: labels[i].clone(),
                    b: labels[j].clone(),
                    rho,
                });
            }
        }
        pairs
    });
    let report = Report {
        seed,
        consistency_mode: cfg.consistency,
        strategies: reports,
        spearman,
    };

    transactional(&cfg.output_dir, |out: &mut Outputs| {
        for (name, text) in &files {
            out.text(cfg.output_dir.join(name), text)?;
        }
        out.json(cfg.output_dir.join(REPORT_FILE), &report)
    })?;
    println!("wrote {} files to {}", files.len() + 1, cfg.output_dir.display());
    Ok(())
}
