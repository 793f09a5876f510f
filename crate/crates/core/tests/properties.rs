use nalgebra::DMatrix;
use proptest::prelude::*;

use road_core::classifiers::{image_features, train_logistic, train_logistic_ensemble, TrainConfig};
use road_core::evaluation::{spearman, EvaluationCurve};
use road_core::imputation::{assemble_system, impute_fixed, impute_noisy_linear, LinearImputer};
use road_core::infotheory::{
    accuracy_bounds_for, bayes_accuracy, leakage_decomposition, mi_from_conditional_accuracies,
    mutual_information, DiscreteJoint,
};
use road_core::masking::{k_for_fraction, rank_pixels, rank_scores, select, topk_mask};
use road_core::npy::{decode, encode, NpyArray};
use road_core::rng::stream;
use road_core::toyworld::{class_means, sample_dataset, GpDatasetConfig};
use road_core::{ImageTensor, ImputationConfig, NoiseScale, Part, SaliencyMap, Strategy as Fill};

fn image() -> impl Strategy<Value = ImageTensor> {
    (2usize..9, 2usize..9, 1usize..3).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(-5.0f64..5.0, h * w * c)
            .prop_map(move |data| ImageTensor::new(h, w, c, data).unwrap())
    })
}

/// An image with a saliency map of the same size and a removal count.
fn image_and_mask() -> impl Strategy<Value = (ImageTensor, road_core::BinaryMask)> {
    image().prop_flat_map(|x| {
        let d = x.pixels();
        (
            Just(x),
            prop::collection::vec(0u8..6, d),
            0..=d,
        )
            .prop_map(|(x, scores, k)| {
                let map = SaliencyMap::new(x.height(), x.width(), scores.into_iter().map(f64::from).collect())
                    .unwrap();
                let mask = topk_mask(&rank_pixels(&map).unwrap(), k, x.height(), x.width()).unwrap();
                (x, mask)
            })
    })
}

fn noiseless() -> ImputationConfig {
    ImputationConfig::new(
        Fill::NoisyLinear {
            noise: NoiseScale::Sigma(0.0),
            solver_tol: 1e-13,
            solver_max_iters: Some(10_000),
        },
        0,
    )
}

fn joint(cards: [usize; 3], weights: &[f64]) -> Option<DiscreteJoint> {
    let len: usize = cards.iter().product();
    DiscreteJoint::from_weights(&["C", "X", "M"], &cards, weights[..len].to_vec()).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn npy_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let len = shape.iter().product();
        let mut r = stream(seed, "npy", 0);
        let data: Vec<f64> = (0..len).map(|_| f64::from_bits(rand::Rng::random(&mut r))).collect();
        let array = NpyArray::f64(shape, data);
        let back = decode(&encode(&array).unwrap()).unwrap();
        prop_assert_eq!(&back.shape, &array.shape);
        let bits = |a: &NpyArray| a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&array));
    }

    #[test]
    fn mask_has_k_high_pixels((x, m) in image_and_mask()) {
        prop_assert_eq!(m.count(Part::High), m.k());
        prop_assert_eq!(m.count(Part::High) + m.count(Part::Low), x.pixels());
        prop_assert_eq!(m.complement().indices(Part::High), m.indices(Part::Low));
    }

    #[test]
    fn removing_top_k_equals_keeping_bottom(scores in prop::collection::vec(-3i32..3, 1..60), frac in 0.0f64..=1.0) {
        let d = scores.len();
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
        let perm = rank_scores(&s).unwrap();
        let k = k_for_fraction(frac, d).unwrap();
        let removed = topk_mask(&perm, k, 1, d).unwrap();
        let reversed: Vec<usize> = perm.iter().rev().copied().collect();
        let kept = topk_mask(&reversed, d - k, 1, d).unwrap();
        prop_assert_eq!(removed.complement(), kept);
    }

    #[test]
    fn ranking_ignores_monotone_transforms(scores in prop::collection::vec(-50i32..50, 1..80), a in 0.5f64..4.0, b in -10.0f64..10.0) {
        let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
        let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        prop_assert_eq!(rank_scores(&s).unwrap(), rank_scores(&t).unwrap());
    }

    #[test]
    fn select_partitions_pixels((x, m) in image_and_mask()) {
        let c = x.channels();
        let hi = select(&m, &x, Part::High).unwrap();
        let lo = select(&m, &x, Part::Low).unwrap();
        let mut all: Vec<usize> = hi.source_indices.iter().chain(&lo.source_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..x.pixels()).collect::<Vec<_>>());
        for v in [&hi, &lo] {
            for (i, &p) in v.source_indices.iter().enumerate() {
                prop_assert_eq!(&v.values[i * c..(i + 1) * c], x.pixel(p));
            }
        }
    }

    #[test]
    fn imputation_keeps_known_pixels((x, m) in image_and_mask(), seed in any::<u64>()) {
        let fill = vec![0.0; x.channels()];
        let cfg = ImputationConfig::new(Fill::noisy_linear(), seed);
        let mut r = stream(seed, "prop", 0);
        let linear = impute_noisy_linear(&x, &m, Part::Low, &cfg, &mut r, &fill).unwrap();
        let fixed = impute_fixed(&x, &m, Part::Low, &fill).unwrap();
        let c = x.channels();
        for p in m.indices(Part::Low) {
            for ch in 0..c {
                prop_assert_eq!(linear.data()[p * c + ch].to_bits(), x.data()[p * c + ch].to_bits());
                prop_assert_eq!(fixed.data()[p * c + ch].to_bits(), x.data()[p * c + ch].to_bits());
            }
        }
    }

    #[test]
    fn noiseless_solution_obeys_maximum_principle((x, m) in image_and_mask()) {
        let known = m.indices(Part::Low);
        prop_assume!(!known.is_empty());
        let c = x.channels();
        let lo: Vec<f64> = (0..c).map(|ch| known.iter().map(|&p| x.data()[p * c + ch]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..c).map(|ch| known.iter().map(|&p| x.data()[p * c + ch]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut r = stream(0, "prop", 0);
        let y = impute_noisy_linear(&x, &m, Part::Low, &noiseless(), &mut r, &lo).unwrap();
        for p in m.indices(Part::High) {
            for ch in 0..c {
                let v = y.data()[p * c + ch];
                prop_assert!(v >= lo[ch] - 1e-9 && v <= hi[ch] + 1e-9, "{} outside [{}, {}]", v, lo[ch], hi[ch]);
            }
        }
    }

    #[test]
    fn system_is_symmetric_and_diagonally_dominant((x, m) in image_and_mask()) {
        let unknown = m.indices(Part::High);
        let s = assemble_system(&x, &unknown, 0);
        let n = s.n_unknowns();
        let diag = s.diagonal();
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if i != j {
                    prop_assert_eq!(s.coefficient(i, j), s.coefficient(j, i));
                    off += s.coefficient(i, j).abs();
                }
            }
            prop_assert!(diag[i] >= off - 1e-12);
        }
    }

    #[test]
    fn imputation_is_deterministic((x, m) in image_and_mask(), seed in any::<u64>()) {
        let fill = vec![0.5; x.channels()];
        let cfg = ImputationConfig::new(Fill::noisy_linear(), seed);
        let a = impute_noisy_linear(&x, &m, Part::Low, &cfg, &mut stream(seed, "prop", 1), &fill).unwrap();
        let b = impute_noisy_linear(&x, &m, Part::Low, &cfg, &mut stream(seed, "prop", 1), &fill).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn factorised_imputer_agrees_with_iterative((x, m) in image_and_mask()) {
        let fill = vec![0.0; x.channels()];
        let cfg = noiseless();
        let iterative = impute_noisy_linear(&x, &m, Part::Low, &cfg, &mut stream(0, "p", 0), &fill).unwrap();
        let direct = LinearImputer::new(&m, Part::Low).factorised().impute(&x, &cfg, &mut stream(0, "p", 0), &fill).unwrap();
        for (a, b) in iterative.data().iter().zip(direct.data()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn leakage_identity_holds(cards in [1usize..5, 1usize..5, 1usize..5], weights in prop::collection::vec(0.0f64..1.0, 64)) {
        let Some(j) = joint(cards, &weights) else { return Ok(()) };
        let d = leakage_decomposition(&j).unwrap();
        prop_assert!(d.identity_residual().abs() < 1e-9);
        for v in [d.outcome, d.feature, d.mask, d.mitigator] {
            prop_assert!(v >= -1e-12);
        }
    }

    #[test]
    fn bayes_accuracy_lies_within_bounds(states in 1usize..8, weights in prop::collection::vec(0.01f64..1.0, 16)) {
        // equal priors: each class row sums to one half
        let mut probs = Vec::with_capacity(2 * states);
        for row in [&weights[..states], &weights[8..8 + states]] {
            let total: f64 = row.iter().sum();
            probs.extend(row.iter().map(|w| 0.5 * w / total));
        }
        let j = DiscreteJoint::new(&["C", "X"], &[2, states], probs).unwrap();
        let (lower, upper) = accuracy_bounds_for(&j).unwrap();
        let acc = bayes_accuracy(&j).unwrap();
        prop_assert!(acc >= lower - 1e-9 && acc <= upper + 1e-9, "{} not in [{}, {}]", acc, lower, upper);
        let mi = mutual_information(&j, &[0], &[1]).unwrap();
        prop_assert!((mi - mi_from_conditional_accuracies(&j).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn spearman_of_self_and_reverse(values in prop::collection::vec(-100.0f64..100.0, 2..40)) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        prop_assert!((spearman(&values, &values).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((spearman(&values, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_of_constant_curve_is_its_value(level in 0.0f64..1.0, n in 2usize..12) {
        let eta: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let curve = EvaluationCurve {
            name: "m".into(),
            eta,
            acc_mean: vec![level; n],
            acc_stderr: vec![0.0; n],
        };
        prop_assert!((curve.auc() - level).abs() < 1e-12);
    }
}

fn blobs(seed: u64, n: usize, d: usize) -> (DMatrix<f64>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let mut r = stream(seed, "blobs", 0);
    let g = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = DMatrix::from_fn(n, d, |i, j| g.sample(&mut r) + if j == 0 { 2.0 * y[i] as f64 - 1.0 } else { 0.0 });
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_loss_never_increases(seed in any::<u64>()) {
        let (x, y) = blobs(seed, 60, 5);
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
        let fit = train_logistic_ensemble(&x, &y, 2, &cfg, &[seed, seed + 1]).unwrap();
        for history in &fit.loss_history {
            for w in history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "loss rose from {} to {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn training_ignores_sample_order(seed in any::<u64>(), shift in 1usize..59) {
        let (x, y) = blobs(seed, 60, 4);
        let order: Vec<usize> = (0..60).map(|i| (i + shift) % 60).collect();
        let xp = DMatrix::from_fn(60, 4, |i, j| x[(order[i], j)]);
        let yp: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let cfg = TrainConfig { epochs: 100, ..TrainConfig::default() };
        let a = train_logistic(&x, &y, 2, &cfg).unwrap();
        let b = train_logistic(&xp, &yp, 2, &cfg).unwrap();
        prop_assert!((a.weights - b.weights).abs().max() < 1e-9);
    }
}

#[test]
fn toy_samples_follow_class_means() {
    let cfg = GpDatasetConfig {
        height: 6,
        width: 6,
        n_samples: 4000,
        mean_amplitude: 1.0,
        seed: 3,
        ..GpDatasetConfig::default()
    };
    let ds = sample_dataset(&cfg).unwrap();
    let (mu0, mu1) = class_means(&cfg);
    for (class, mu) in [(0, &mu0), (1, &mu1)] {
        let members: Vec<&ImageTensor> = ds.images().iter().zip(ds.labels()).filter(|(_, &l)| l == class).map(|(x, _)| x).collect();
        let n = members.len() as f64;
        assert!((n / 4000.0 - 0.5).abs() < 0.05);
        for p in 0..cfg.pixels() {
            let mean = members.iter().map(|x| x.data()[p]).sum::<f64>() / n;
            // unit marginal variance, so the standard error is 1/sqrt(n)
            assert!((mean - mu[p]).abs() < 5.0 / n.sqrt(), "pixel {p}: {mean} vs {}", mu[p]);
        }
        let var = members.iter().map(|x| (x.data()[0] - mu[0]).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
    }
}

#[test]
fn toy_classes_are_learnable() {
    for seed in 0..3 {
        let cfg = GpDatasetConfig {
            height: 8,
            width: 8,
            n_samples: 600,
            seed,
            ..GpDatasetConfig::default()
        };
        let ds = sample_dataset(&cfg).unwrap();
        let split = ds.split_point();
        let x = image_features(ds.images());
        let train = x.rows(0, split).into_owned();
        let test = x.rows(split, ds.len() - split).into_owned();
        let model = train_logistic(&train, &ds.labels()[..split], 2, &TrainConfig::default()).unwrap();
        let acc = road_core::classifiers::eval_accuracy(&model, &test, &ds.labels()[split..]).unwrap();
        assert!(acc > 0.55, "seed {seed}: accuracy {acc}");
    }
}
