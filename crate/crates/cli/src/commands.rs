use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use road_core::evaluation::{impute_dataset, runtime_benchmark, SaliencySource};
use road_core::infotheory::self_check;
use road_core::npy::{
    read_dataset, read_npy, read_saliency_stack, saliency_file, write_dataset, write_saliency_stack,
    IMAGES_FILE, LABELS_FILE,
};
use road_core::report::format_g6;
use road_core::toyworld::{handcrafted_ordering, sample_dataset, GpDatasetConfig, OrderingKind};
use road_core::{Dataset, ImputationConfig, NoiseScale, SaliencyMap, Strategy};

use crate::error::{require_file, CliError, CliResult};
use crate::outputs::{transactional, Outputs};
use crate::{BenchArgs, ImputeArgs, MiCheckArgs, StrategyArg, ToyArgs};

pub const TOY_CONFIG_FILE: &str = "config.json";

pub fn toy(args: &ToyArgs, seed: u64) -> CliResult<()> {
    let defaults = GpDatasetConfig::default();
    let cfg = GpDatasetConfig {
        height: args.height as usize,
        width: args.width as usize,
        n_samples: args.n as usize,
        kernel_width_fraction: args.kernel_width.unwrap_or(defaults.kernel_width_fraction),
        mean_amplitude: args.amplitude.unwrap_or(defaults.mean_amplitude),
        mean_frequency: args.frequency.unwrap_or(defaults.mean_frequency),
        seed,
        ..defaults
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = sample_dataset(&cfg)?;
    let orderings = OrderingKind::ALL
        .iter()
        .map(|&k| Ok((k, handcrafted_ordering(k, &cfg, seed)?)))
        .collect::<road_core::Result<Vec<_>>>()?;
    transactional(&args.out, |out| {
        write_toy(out, &args.out, &ds, &orderings)?;
        out.json(args.out.join(TOY_CONFIG_FILE), &cfg)
    })?;
    println!("wrote {} images and {} orderings to {}", ds.len(), orderings.len(), args.out.display());
    Ok(())
}

fn write_toy(
    out: &mut Outputs,
    dir: &Path,
    ds: &Dataset,
    orderings: &[(OrderingKind, SaliencyMap)],
) -> CliResult<()> {
    write_dataset_tracked(out, ds, dir)?;
    for (kind, map) in orderings {
        let stack = vec![map.clone(); ds.len()];
        out.npy_with(dir.join(saliency_file(kind.name())), |p| write_saliency_stack(&stack, p))?;
    }
    Ok(())
}

fn write_dataset_tracked(out: &mut Outputs, ds: &Dataset, dir: &Path) -> CliResult<()> {
    let files = [dir.join(IMAGES_FILE), dir.join(LABELS_FILE)];
    for f in &files {
        out.track(f.clone());
    }
    write_dataset(ds, dir)?;
    files.iter().try_for_each(|f| out.verify_npy(f))
}

pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    require_file(&dir.join(IMAGES_FILE), "image file")?;
    require_file(&dir.join(LABELS_FILE), "label file")?;
    Ok(read_dataset(dir)?)
}

/// A 2-D array is one map for every image; a stack whose maps are all equal
/// collapses to a shared map, which lets the imputation reuse one factorisation.
pub fn load_saliency(path: &Path, ds: &Dataset) -> CliResult<SaliencySource> {
    require_file(path, "saliency file")?;
    let array = read_npy(path)?;
    if let [h, w] = array.shape[..] {
        return Ok(SaliencySource::Shared(SaliencyMap::new(h, w, array.data)?));
    }
    let maps = read_saliency_stack(path)?;
    if maps.len() != ds.len() {
        return Err(CliError::Usage(format!(
            "{} holds {} maps for {} images",
            path.display(),
            maps.len(),
            ds.len()
        )));
    }
    match maps.first() {
        Some(first) if maps.iter().all(|m| m == first) => Ok(SaliencySource::Shared(first.clone())),
        _ => Ok(SaliencySource::PerImage(maps)),
    }
}

/// `name` is a path if such a file exists, otherwise a method name in `data`.
pub fn saliency_path(data: &Path, name: &str) -> PathBuf {
    let direct = PathBuf::from(name);
    if direct.is_file() {
        direct
    } else {
        data.join(saliency_file(name))
    }
}

pub fn impute(args: &ImputeArgs, seed: u64) -> CliResult<()> {
    if !(0.0..=1.0).contains(&args.eta) {
        return Err(CliError::Usage(format!("--eta {} is outside [0, 1]", args.eta)));
    }
    let ds = load_dataset(&args.data)?;
    let saliency = load_saliency(&saliency_path(&args.data, &args.saliency), &ds)?;
    let strategy = match args.strategy {
        StrategyArg::Fixed => Strategy::Fixed {
            value: args.fill.clone(),
        },
        StrategyArg::NoisyLinear => Strategy::NoisyLinear {
            noise: match (args.noise, args.sigma) {
                (_, Some(s)) => NoiseScale::Sigma(s),
                (Some(f), None) => NoiseScale::RangeFraction(f),
                (None, None) => NoiseScale::default(),
            },
            solver_tol: args.tol,
            solver_max_iters: None,
        },
    };
    let cfg = ImputationConfig::new(strategy, seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let images = impute_dataset(&ds, &saliency, args.order.into(), args.eta, &cfg)?;
    let imputed = Dataset::new(images, ds.labels().to_vec(), ds.num_classes())?;
    transactional(&args.out, |out| {
        write_dataset_tracked(out, &imputed, &args.out)
    })?;
    println!("imputed {} images into {}", imputed.len(), args.out.display());
    Ok(())
}

pub fn mi_check(args: &MiCheckArgs, seed: u64) -> CliResult<()> {
    let c = self_check(seed, args.trials as usize)?;
    let rows = [
        ("leakage identity residual", c.leakage_identity),
        ("accuracy bound violation", c.bound_violation),
        ("accuracy expansion residual", c.accuracy_expansion),
        ("mitigator for M = f(X')", c.mitigator),
    ];
    let mut ok = true;
    for (label, value) in rows {
        let pass = value <= args.tol;
        ok &= pass;
        println!("{label:<28} {value:.3e} {}", if pass { "ok" } else { "FAIL" });
    }
    println!("{} random joints per identity", c.trials);
    if ok {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "an identity exceeded the tolerance {:e}",
            args.tol
        )))
    }
}

pub fn bench(args: &BenchArgs, seed: u64) -> CliResult<()> {
    if args.sizes.iter().any(|&s| s == 0) || args.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(CliError::Usage("sizes must be positive and fractions in [0, 1]".into()));
    }
    let cfg = ImputationConfig::new(Strategy::noisy_linear(), seed);
    let rows = runtime_benchmark(&cfg, &args.sizes, &args.fractions, args.reps, seed)?;
    let mut csv = String::from("size,fraction,unknowns,median_secs\n");
    println!("{:>5} {:>8} {:>9} {:>12}", "size", "fraction", "unknowns", "median_ms");
    for r in &rows {
        println!("{:>5} {:>8.2} {:>9} {:>12.4}", r.size, r.fraction, r.unknowns, r.median_secs * 1e3);
        writeln!(csv, "{},{},{},{}", r.size, format_g6(r.fraction), r.unknowns, format_g6(r.median_secs)).unwrap();
    }
    if let Some(path) = &args.csv {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        transactional(dir, |out| out.text(path.clone(), &csv))?;
    }
    Ok(())
}
