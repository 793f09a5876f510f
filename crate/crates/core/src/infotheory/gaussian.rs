//! Entropies of multivariate Gaussians and the entropy ratio used as the
//! geometric bias term.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::masking::{BinaryMask, Part};

/// Resolution of the bias ratio, as a fraction of the mean pixel variance.
pub const DEFAULT_RESOLUTION: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Added to the diagonal of every block before factorisation.
    pub jitter: f64,
}

impl GaussianModel {
    /// Validates symmetry and positive semi-definiteness; jitter defaults to
    /// `1e-9 * trace / n`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n || mean.len() != n {
            return Err(Error::shape(
                format!("{n}x{n} covariance and mean of {n}"),
                format!("{}x{} and {}", cov.nrows(), cov.ncols(), mean.len()),
            ));
        }
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Domain(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let jitter = if n > 0 { 1e-9 * cov.trace() / n as f64 } else { 0.0 };
        Ok(Self { mean, cov, jitter })
    }

    pub fn centred(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        Self::new(DVector::zeros(n), cov)
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.cov[(rows[i], cols[j])])
    }

    fn jittered_block(&self, idx: &[usize]) -> DMatrix<f64> {
        let mut b = self.block(idx, idx);
        for i in 0..idx.len() {
            b[(i, i)] += self.jitter;
        }
        b
    }

    /// Covariance of `target` given `given`: `S_tt - S_tg S_gg^-1 S_gt`.
    pub fn conditional_cov(&self, target: &[usize], given: &[usize]) -> Result<DMatrix<f64>> {
        let stt = self.jittered_block(target);
        if given.is_empty() {
            return Ok(stt);
        }
        let sgg = self.jittered_block(given);
        let stg = self.block(target, given);
        let chol = sgg.cholesky().ok_or(Error::SingularCovariance)?;
        // S_tg S_gg^-1 S_gt = W^T W with W = L^-1 S_gt
        let w = chol
            .l()
            .solve_lower_triangular(&stg.transpose())
            .ok_or(Error::SingularCovariance)?;
        let mut cond = stt - w.transpose() * w;
        symmetrise(&mut cond);
        Ok(cond)
    }
}

fn symmetrise(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn log_det_spd(m: DMatrix<f64>) -> Result<f64> {
    let chol = m.cholesky().ok_or(Error::SingularCovariance)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

fn gaussian_entropy_of(cov: DMatrix<f64>) -> Result<f64> {
    let n = cov.nrows() as f64;
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    Ok(0.5 * (n * two_pi_e.ln() + log_det_spd(cov)?))
}

/// Differential entropy in nats, `1/2 logdet(2 pi e S_subset)`.
pub fn gaussian_entropy(g: &GaussianModel, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    gaussian_entropy_of(g.jittered_block(subset))
}

/// `h(target | given)` in nats via the Schur complement.
pub fn gaussian_conditional_entropy(
    g: &GaussianModel,
    target: &[usize],
    given: &[usize],
) -> Result<f64> {
    if target.is_empty() {
        return Ok(0.0);
    }
    gaussian_entropy_of(g.conditional_cov(target, given)?)
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Entropy in nats of a Gaussian observed at variance resolution `resolution`:
/// `sum_i max(0, 1/2 ln(lambda_i / resolution))` over the covariance eigenvalues.
/// Non-negative, and monotone in the Loewner order, so a conditional covariance
/// never scores above its marginal.
fn resolved_entropy(cov: DMatrix<f64>, resolution: f64) -> f64 {
    cov.symmetric_eigenvalues()
        .iter()
        .map(|&l| 0.5 * (l / resolution).ln().max(0.0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasRatio {
    pub beta: f64,
    /// Set when the ratio had to be clamped into [0, 1] or the side carries no
    /// entropy above the resolution (then `beta` is 1).
    pub flagged: bool,
}

/// Share of the entropy of the `side` pixels that is not explained by the
/// complementary pixels: `H(side | rest) / H(side)`.
///
/// Differential entropies of strongly correlated pixels are large and negative,
/// which makes their ratio meaningless. Both entropies are therefore measured at
/// a finite variance resolution (`resolution * mean diagonal variance`), which
/// keeps them non-negative and the ratio inside [0, 1].
pub fn bias_ratio(
    g: &GaussianModel,
    mask: &BinaryMask,
    side: Part,
    resolution: f64,
) -> Result<BiasRatio> {
    if mask.len() != g.dim() {
        return Err(Error::LengthMismatch {
            expected: g.dim(),
            got: mask.len(),
        });
    }
    let target = mask.indices(side);
    let given = mask.indices(side.complement());
    if target.is_empty() || given.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let floor = resolution * g.cov.trace() / g.dim() as f64;
    if !(floor > 0.0) {
        return Err(Error::Domain(format!("resolution {resolution} must be positive")));
    }
    let marginal = resolved_entropy(g.jittered_block(&target), floor);
    if marginal <= 0.0 {
        return Ok(BiasRatio {
            beta: 1.0,
            flagged: true,
        });
    }
    let conditional = resolved_entropy(g.conditional_cov(&target, &given)?, floor);
    let raw = conditional / marginal;
    Ok(BiasRatio {
        beta: raw.clamp(0.0, 1.0),
        flagged: !(0.0..=1.0).contains(&raw),
    })
}
