//! Exact entropy and mutual information over small discrete joint tables,
//! the leakage decomposition of an evaluation outcome, and the bounds that
//! tie mutual information to Bayes accuracy in the binary equal-prior case.

mod gaussian;

pub use gaussian::{
    bias_ratio, gaussian_conditional_entropy, gaussian_entropy, nats_to_bits, BiasRatio,
    GaussianModel, DEFAULT_RESOLUTION,
};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

const NORMALISATION_TOL: f64 = 1e-12;
const EQUAL_PRIOR_TOL: f64 = 1e-9;

/// Probability table over named discrete axes, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    axis_names: Vec<String>,
    cardinalities: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(axis_names: &[&str], cardinalities: &[usize], probs: Vec<f64>) -> Result<Self> {
        if axis_names.len() != cardinalities.len() || axis_names.is_empty() {
            return Err(Error::InvalidAxes(
                "need one name per axis and at least one axis".into(),
            ));
        }
        let cells: usize = cardinalities.iter().product();
        if probs.len() != cells {
            return Err(Error::LengthMismatch {
                expected: cells,
                got: probs.len(),
            });
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALISATION_TOL {
            return Err(Error::Domain(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            axis_names: axis_names.iter().map(|s| s.to_string()).collect(),
            cardinalities: cardinalities.to_vec(),
            probs,
        })
    }

    /// Normalises non-negative weights into a joint.
    pub fn from_weights(
        axis_names: &[&str],
        cardinalities: &[usize],
        weights: Vec<f64>,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("weights must have a positive sum".into()));
        }
        Self::new(
            axis_names,
            cardinalities,
            weights.into_iter().map(|w| w / total).collect(),
        )
    }

    pub fn axis_names(&self) -> &[String] {
        &self.axis_names
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn axis(&self, name: &str) -> Result<usize> {
        self.axis_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidAxes(format!("no axis named {name:?}")))
    }

    fn check_axes(&self, axes: &[usize]) -> Result<()> {
        if axes.is_empty() {
            return Err(Error::InvalidAxes("empty axis set".into()));
        }
        for (i, &a) in axes.iter().enumerate() {
            if a >= self.cardinalities.len() {
                return Err(Error::InvalidAxes(format!("axis {a} out of range")));
            }
            if axes[..i].contains(&a) {
                return Err(Error::InvalidAxes(format!("axis {a} repeated")));
            }
        }
        Ok(())
    }

    /// Marginal table over `axes`, indexed row-major in the order given.
    pub fn marginal(&self, axes: &[usize]) -> Result<Vec<f64>> {
        self.check_axes(axes)?;
        let out_cards: Vec<usize> = axes.iter().map(|&a| self.cardinalities[a]).collect();
        let mut out = vec![0.0; out_cards.iter().product()];
        let mut idx = vec![0usize; self.cardinalities.len()];
        for &p in &self.probs {
            let mut flat = 0;
            for (&a, &card) in axes.iter().zip(&out_cards) {
                flat = flat * card + idx[a];
            }
            out[flat] += p;
            // advance the multi-index, last axis fastest
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.cardinalities[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}

fn shannon_bits(table: &[f64]) -> f64 {
    // -0.0 from an all-zero sum would print oddly
    0.0 - table
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

fn disjoint(a: &[usize], b: &[usize]) -> Result<()> {
    if a.iter().any(|x| b.contains(x)) {
        return Err(Error::InvalidAxes("axis sets overlap".into()));
    }
    Ok(())
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().chain(b).copied().collect()
}

/// Shannon entropy in bits of the marginal over `axes`.
pub fn entropy(j: &DiscreteJoint, axes: &[usize]) -> Result<f64> {
    Ok(shannon_bits(&j.marginal(axes)?))
}

/// `H(target | given) = H(target, given) - H(given)`.
pub fn conditional_entropy(j: &DiscreteJoint, target: &[usize], given: &[usize]) -> Result<f64> {
    disjoint(target, given)?;
    if given.is_empty() {
        return entropy(j, target);
    }
    Ok(entropy(j, &union(target, given))? - entropy(j, given)?)
}

/// `I(a; b) = H(a) + H(b) - H(a, b)`.
pub fn mutual_information(j: &DiscreteJoint, a: &[usize], b: &[usize]) -> Result<f64> {
    disjoint(a, b)?;
    Ok(entropy(j, a)? + entropy(j, b)? - entropy(j, &union(a, b))?)
}

/// `I(a; b | c)`.
pub fn conditional_mutual_information(
    j: &DiscreteJoint,
    a: &[usize],
    b: &[usize],
    c: &[usize],
) -> Result<f64> {
    if c.is_empty() {
        return mutual_information(j, a, b);
    }
    disjoint(a, b)?;
    disjoint(a, c)?;
    disjoint(b, c)?;
    let ac = union(a, c);
    let bc = union(b, c);
    let abc = union(&ac, b);
    Ok(entropy(j, &ac)? + entropy(j, &bc)? - entropy(j, &abc)? - entropy(j, c)?)
}

/// Terms of `I(X'; C) = I(C; X' | M) + I(C; M) - I(C; M | X')`, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageDecomposition {
    /// `I(X'; C)`, what a retrained classifier can exploit.
    pub outcome: f64,
    /// `I(C; X' | M)`, class information carried by the pixel values.
    pub feature: f64,
    /// `I(C; M)`, class information carried by the mask shape.
    pub mask: f64,
    /// `I(C; M | X')`.
    pub mitigator: f64,
}

impl LeakageDecomposition {
    /// `outcome - (feature + mask - mitigator)`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        self.outcome - (self.feature + self.mask - self.mitigator)
    }

    /// Mask information not compensated by the mitigator.
    pub fn leakage(&self) -> f64 {
        self.mask - self.mitigator
    }
}

/// Decomposes a joint whose axes are, in order, the class, the imputed image
/// and the mask.
pub fn leakage_decomposition(j: &DiscreteJoint) -> Result<LeakageDecomposition> {
    if j.cardinalities().len() != 3 {
        return Err(Error::InvalidAxes(format!(
            "expected axes (C, X', M), got {}",
            j.cardinalities().len()
        )));
    }
    let (c, x, m) = (&[0usize][..], &[1usize][..], &[2usize][..]);
    Ok(LeakageDecomposition {
        outcome: mutual_information(j, x, c)?,
        feature: conditional_mutual_information(j, c, x, m)?,
        mask: mutual_information(j, c, m)?,
        mitigator: conditional_mutual_information(j, c, m, x)?,
    })
}

/// Three-way interaction information computed both ways:
/// `(I(C;X'|M) - I(C;X'), I(C;M|X') - I(C;M))`. The two agree exactly in theory.
pub fn interaction_information(j: &DiscreteJoint) -> Result<(f64, f64)> {
    let d = leakage_decomposition(j)?;
    Ok((d.feature - d.outcome, d.mitigator - d.mask))
}

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p = {p} outside [0, 1]")));
    }
    Ok(shannon_bits(&[p, 1.0 - p]))
}

/// Inverse of the binary entropy on the branch `p in [1/2, 1]`, by bisection.
pub fn inv_binary_entropy(h: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::Domain(format!("h = {h} outside [0, 1]")));
    }
    // binary entropy decreases from 1 to 0 on [1/2, 1]
    let (mut lo, mut hi) = (0.5f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy(mid)? > h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `((I + 1) / 2, H2^-1(1 - I))`, the range of Bayes accuracy for a binary,
/// equal-prior class with `I` bits of mutual information.
pub fn accuracy_bounds(mi: f64) -> Result<(f64, f64)> {
    if !(-EQUAL_PRIOR_TOL..=1.0 + EQUAL_PRIOR_TOL).contains(&mi) {
        return Err(Error::Domain(format!("I = {mi} outside [0, 1]")));
    }
    let mi = mi.clamp(0.0, 1.0);
    Ok(((mi + 1.0) / 2.0, inv_binary_entropy(1.0 - mi)?))
}

fn check_binary_equal_prior(j: &DiscreteJoint) -> Result<()> {
    if j.cardinalities()[0] != 2 {
        return Err(Error::Domain("class axis must be binary".into()));
    }
    let prior = j.marginal(&[0])?;
    if (prior[0] - 0.5).abs() > EQUAL_PRIOR_TOL {
        return Err(Error::Domain(format!(
            "class priors {prior:?} are not equal"
        )));
    }
    Ok(())
}

/// Bounds for a joint over (C, X...), checking the binary equal-prior premise.
pub fn accuracy_bounds_for(j: &DiscreteJoint) -> Result<(f64, f64)> {
    check_binary_equal_prior(j)?;
    let rest: Vec<usize> = (1..j.cardinalities().len()).collect();
    accuracy_bounds(mutual_information(j, &[0], &rest)?)
}

/// `(p(s), max_c p(c | s))` for every state `s` of the non-class axes.
/// Axis 0 is the class.
pub fn conditional_accuracies(j: &DiscreteJoint) -> Result<Vec<(f64, f64)>> {
    let classes = j.cardinalities()[0];
    let states = j.probs().len() / classes;
    Ok((0..states)
        .map(|s| {
            let column = (0..classes).map(|c| j.probs()[c * states + s]);
            let (total, best) = column.fold((0.0, 0.0f64), |(t, b), p| (t + p, b.max(p)));
            (total, if total > 0.0 { best / total } else { 1.0 })
        })
        .collect())
}

/// Accuracy of the maximum-posterior classifier: `sum_x max_c p(c, x)`.
/// Axis 0 is the class, every other axis is observed.
pub fn bayes_accuracy(j: &DiscreteJoint) -> Result<f64> {
    Ok(conditional_accuracies(j)?
        .iter()
        .map(|(p, acc)| p * acc)
        .sum())
}

/// `sum_s p(s) (1 - H2(acc(C | s)))`, which equals `I(C; X)` for a binary class
/// with equal priors.
pub fn mi_from_conditional_accuracies(j: &DiscreteJoint) -> Result<f64> {
    check_binary_equal_prior(j)?;
    conditional_accuracies(j)?
        .iter()
        .map(|&(p, acc)| Ok(p * (1.0 - binary_entropy(acc.clamp(0.0, 1.0))?)))
        .sum()
}

/// Worst deviations seen by [`self_check`] on random tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfCheck {
    pub trials: usize,
    /// Largest `|identity_residual|` over joints with up to 4 states per axis.
    pub leakage_identity: f64,
    /// Largest excursion of the Bayes accuracy outside the MI bounds.
    pub bound_violation: f64,
    /// Largest gap between MI and its conditional-accuracy expansion.
    pub accuracy_expansion: f64,
    /// Largest `I(C; M | X')` when the mask is a function of the image.
    pub mitigator: f64,
}

/// Runs the exact identities on `trials` random joints of each kind.
pub fn self_check(seed: u64, trials: usize) -> Result<SelfCheck> {
    let mut r = rng::stream(seed, "mi-check", 0);
    let mut out = SelfCheck {
        trials,
        leakage_identity: 0.0,
        bound_violation: 0.0,
        accuracy_expansion: 0.0,
        mitigator: 0.0,
    };
    for _ in 0..trials {
        let cards = [r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4)];
        let len = cards.iter().product();
        let mut weights: Vec<f64> = (0..len)
            .map(|_| if r.random::<f64>() < 0.15 { 0.0 } else { r.random() })
            .collect();
        if weights.iter().all(|&w| w == 0.0) {
            weights = vec![1.0; len];
        }
        let j = DiscreteJoint::from_weights(&["C", "X", "M"], &cards, weights)?;
        let d = leakage_decomposition(&j)?;
        out.leakage_identity = out.leakage_identity.max(d.identity_residual().abs());

        let n = r.random_range(1..=8);
        let mut probs = Vec::with_capacity(2 * n);
        for _ in 0..2 {
            let w: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            probs.extend(w.iter().map(|v| 0.5 * v / total));
        }
        let j = DiscreteJoint::from_weights(&["C", "X"], &[2, n], probs)?;
        let mi = mutual_information(&j, &[0], &[1])?;
        let acc = bayes_accuracy(&j)?;
        let (lo, hi) = accuracy_bounds(mi)?;
        out.bound_violation = out.bound_violation.max(lo - acc).max(acc - hi);
        out.accuracy_expansion = out
            .accuracy_expansion
            .max((mi - mi_from_conditional_accuracies(&j)?).abs());

        let (nc, nx, nm) = (r.random_range(2..=4), r.random_range(2..=6), r.random_range(1..=4));
        let map: Vec<usize> = (0..nx).map(|_| r.random_range(0..nm)).collect();
        let mut probs = vec![0.0; nc * nx * nm];
        for c in 0..nc {
            for (x, &m) in map.iter().enumerate() {
                probs[(c * nx + x) * nm + m] = r.random::<f64>() + 1e-3;
            }
        }
        let j = DiscreteJoint::from_weights(&["C", "X", "M"], &[nc, nx, nm], probs)?;
        out.mitigator = out
            .mitigator
            .max(conditional_mutual_information(&j, &[0], &[2], &[1])?.abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn entropy_examples() {
        let uniform = DiscreteJoint::new(&["A"], &[2], vec![0.5, 0.5]).unwrap();
        close(entropy(&uniform, &[0]).unwrap(), 1.0, 1e-15);
        let point = DiscreteJoint::new(&["A"], &[3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(entropy(&point, &[0]).unwrap(), 0.0);
        let skew = DiscreteJoint::new(&["A"], &[2], vec![0.25, 0.75]).unwrap();
        close(entropy(&skew, &[0]).unwrap(), 0.811_278_124_459_132_8, 1e-12);
        assert!(matches!(entropy(&skew, &[]), Err(Error::InvalidAxes(_))));
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(DiscreteJoint::new(&["A"], &[2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::new(&["A"], &[2], vec![-0.1, 1.1]).is_err());
        assert!(DiscreteJoint::new(&["A", "B"], &[2], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn independence_and_determinism() {
        // A uniform over 2, B uniform over 3, independent
        let j = DiscreteJoint::new(&["A", "B"], &[2, 3], vec![1.0 / 6.0; 6]).unwrap();
        close(
            conditional_entropy(&j, &[0], &[1]).unwrap(),
            entropy(&j, &[0]).unwrap(),
            1e-12,
        );
        close(mutual_information(&j, &[0], &[1]).unwrap(), 0.0, 1e-12);
        // A = B
        let j = DiscreteJoint::new(&["A", "B"], &[2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        close(conditional_entropy(&j, &[0], &[1]).unwrap(), 0.0, 1e-12);
        close(mutual_information(&j, &[0], &[1]).unwrap(), 1.0, 1e-12);
        assert!(matches!(
            conditional_entropy(&j, &[0], &[0]),
            Err(Error::InvalidAxes(_))
        ));
    }

    #[test]
    fn conditional_entropy_matches_weighted_sum() {
        // fixed irregular 3x3x2 table; target axis 2, given axes 0 and 1
        let w: Vec<f64> = (1..=18).map(|i| ((i * 7) % 11 + 1) as f64).collect();
        let j = DiscreteJoint::from_weights(&["A", "B", "T"], &[3, 3, 2], w.clone()).unwrap();
        let total: f64 = w.iter().sum();
        let mut brute = 0.0;
        for g in 0..9 {
            let cell = [w[2 * g] / total, w[2 * g + 1] / total];
            let pg = cell[0] + cell[1];
            let h: f64 = cell.iter().map(|&p| -(p / pg) * (p / pg).log2()).sum();
            brute += pg * h;
        }
        close(conditional_entropy(&j, &[2], &[0, 1]).unwrap(), brute, 1e-12);
    }

    #[test]
    fn mask_reveals_class() {
        // axes (C, X', M): M = C, X' constant
        let j = DiscreteJoint::new(&["C", "X", "M"], &[2, 1, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let d = leakage_decomposition(&j).unwrap();
        close(d.outcome, 0.0, 1e-12);
        close(d.feature, 0.0, 1e-12);
        close(d.mask, 1.0, 1e-12);
        close(d.mitigator, 1.0, 1e-12);
        close(d.identity_residual(), 0.0, 1e-12);
    }

    #[test]
    fn invertible_imputation_kills_mitigator() {
        // X' = M = C
        let mut p = vec![0.0; 8];
        p[0] = 0.5; // c=0, x=0, m=0
        p[7] = 0.5; // c=1, x=1, m=1
        let j = DiscreteJoint::new(&["C", "X", "M"], &[2, 2, 2], p).unwrap();
        let d = leakage_decomposition(&j).unwrap();
        close(d.outcome, 1.0, 1e-12);
        close(d.feature, 0.0, 1e-12);
        close(d.mask, 1.0, 1e-12);
        close(d.mitigator, 0.0, 1e-12);
    }

    #[test]
    fn independent_axes_decompose_to_zero() {
        let j = DiscreteJoint::new(&["C", "X", "M"], &[2, 2, 2], vec![0.125; 8]).unwrap();
        let d = leakage_decomposition(&j).unwrap();
        for v in [d.outcome, d.feature, d.mask, d.mitigator] {
            close(v, 0.0, 1e-12);
        }
    }

    #[test]
    fn binary_entropy_and_inverse() {
        close(binary_entropy(0.5).unwrap(), 1.0, 1e-15);
        close(inv_binary_entropy(1.0).unwrap(), 0.5, 1e-12);
        close(inv_binary_entropy(0.0).unwrap(), 1.0, 1e-12);
        close(inv_binary_entropy(0.811_278_124_459_132_8).unwrap(), 0.75, 1e-12);
        assert!(binary_entropy(1.5).is_err());
        assert!(inv_binary_entropy(-0.1).is_err());
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(accuracy_bounds(0.0).unwrap().0, 0.5);
        close(accuracy_bounds(0.0).unwrap().1, 0.5, 1e-12);
        let (lo, hi) = accuracy_bounds(1.0).unwrap();
        close(lo, 1.0, 1e-15);
        close(hi, 1.0, 1e-12);
        let (lo, hi) = accuracy_bounds(0.5).unwrap();
        close(lo, 0.75, 1e-15);
        // H2(0.8899721...) = 0.5, root found independently with brentq
        close(hi, 0.889_972_135_561_640_6, 1e-11);
        close(binary_entropy(hi).unwrap(), 0.5, 1e-12);
        assert!(accuracy_bounds(1.2).is_err());
    }

    #[test]
    fn bayes_accuracy_examples() {
        let indep = DiscreteJoint::new(&["C", "X"], &[2, 2], vec![0.25; 4]).unwrap();
        close(bayes_accuracy(&indep).unwrap(), 0.5, 1e-15);
        let det = DiscreteJoint::new(&["C", "X"], &[2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        close(bayes_accuracy(&det).unwrap(), 1.0, 1e-15);
        // rows are classes: p(0,a)=0.4, p(0,b)=0.1, p(1,a)=0.1, p(1,b)=0.4
        let table = DiscreteJoint::new(&["C", "X"], &[2, 2], vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        close(bayes_accuracy(&table).unwrap(), 0.8, 1e-15);
    }

    #[test]
    fn unequal_priors_rejected() {
        let j = DiscreteJoint::new(&["C", "X"], &[2, 2], vec![0.4, 0.2, 0.1, 0.3]).unwrap();
        assert!(accuracy_bounds_for(&j).is_err());
        assert!(mi_from_conditional_accuracies(&j).is_err());
    }

    #[test]
    fn self_check_is_clean() {
        let c = self_check(3, 200).unwrap();
        assert_eq!(c.trials, 200);
        for v in [c.leakage_identity, c.bound_violation, c.accuracy_expansion, c.mitigator] {
            assert!(v < 1e-9, "{c:?}");
        }
    }
}
