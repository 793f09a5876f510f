//! Filling removed pixels.
//!
//! Fixed imputation writes a constant. Noisy linear imputation models every
//! removed pixel as the weighted mean of its 8 neighbours (1/6 for direct,
//! 1/12 for diagonal neighbours), solves the resulting sparse symmetric system
//! per channel and adds Gaussian noise to the solution.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{BinaryMask, Part};
use crate::tensor::ImageTensor;

pub const DIRECT_WEIGHT: f64 = 1.0 / 6.0;
pub const DIAGONAL_WEIGHT: f64 = 1.0 / 12.0;

const NEIGHBOURS: [(isize, isize, f64); 8] = [
    (-1, -1, DIAGONAL_WEIGHT),
    (-1, 0, DIRECT_WEIGHT),
    (-1, 1, DIAGONAL_WEIGHT),
    (0, -1, DIRECT_WEIGHT),
    (0, 1, DIRECT_WEIGHT),
    (1, -1, DIAGONAL_WEIGHT),
    (1, 0, DIRECT_WEIGHT),
    (1, 1, DIAGONAL_WEIGHT),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum NoiseScale {
    /// Standard deviation as a fraction of the image's value range.
    RangeFraction(f64),
    /// Absolute standard deviation.
    Sigma(f64),
}

impl NoiseScale {
    pub fn resolve(self, value_range: (f64, f64)) -> f64 {
        match self {
            NoiseScale::RangeFraction(f) => f * (value_range.1 - value_range.0),
            NoiseScale::Sigma(s) => s,
        }
    }

    fn raw(self) -> f64 {
        match self {
            NoiseScale::RangeFraction(v) | NoiseScale::Sigma(v) => v,
        }
    }
}

impl Default for NoiseScale {
    fn default() -> Self {
        NoiseScale::RangeFraction(0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Removed pixels take `value` per channel; `None` means the dataset mean.
    Fixed {
        #[serde(default)]
        value: Option<Vec<f64>>,
    },
    NoisyLinear {
        #[serde(default)]
        noise: NoiseScale,
        #[serde(default = "default_tol")]
        solver_tol: f64,
        /// `None` means ten times the number of unknowns.
        #[serde(default)]
        solver_max_iters: Option<usize>,
    },
}

fn default_tol() -> f64 {
    1e-8
}

impl Strategy {
    pub fn noisy_linear() -> Self {
        Strategy::NoisyLinear {
            noise: NoiseScale::default(),
            solver_tol: default_tol(),
            solver_max_iters: None,
        }
    }

    pub fn fixed_mean() -> Self {
        Strategy::Fixed { value: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Fixed { .. } => "fixed",
            Strategy::NoisyLinear { .. } => "linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub rng_seed: u64,
}

impl ImputationConfig {
    pub fn new(strategy: Strategy, rng_seed: u64) -> Self {
        Self { strategy, rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        if let Strategy::NoisyLinear {
            noise, solver_tol, ..
        } = &self.strategy
        {
            if !(*solver_tol > 0.0) {
                return Err(Error::Config(format!(
                    "solver_tol must be positive, got {solver_tol}"
                )));
            }
            if !(noise.raw() >= 0.0) {
                return Err(Error::Config(format!(
                    "noise scale must be non-negative, got {}",
                    noise.raw()
                )));
            }
        }
        Ok(())
    }
}

/// Sets every pixel outside `part` to `value`.
pub fn impute_fixed(
    x: &ImageTensor,
    m: &BinaryMask,
    part: Part,
    value: &[f64],
) -> Result<ImageTensor> {
    check_shapes(x, m)?;
    if value.len() != x.channels() {
        return Err(Error::LengthMismatch {
            expected: x.channels(),
            got: value.len(),
        });
    }
    let c = x.channels();
    let mut data = x.data().to_vec();
    for p in m.indices(part.complement()) {
        data[p * c..(p + 1) * c].copy_from_slice(value);
    }
    ImageTensor::new(x.height(), x.width(), c, data)
}

/// Recovers the removed-pixel mask of a fixed imputation: bit 1 wherever every
/// channel equals `fill` exactly.
pub fn probe_fixed_inverse(x_imp: &ImageTensor, fill: &[f64]) -> BinaryMask {
    let bits = (0..x_imp.pixels())
        .map(|p| x_imp.pixel(p).iter().zip(fill).all(|(a, b)| a == b))
        .collect();
    BinaryMask::from_bits(x_imp.height(), x_imp.width(), bits).expect("sized from image")
}

fn check_shapes(x: &ImageTensor, m: &BinaryMask) -> Result<()> {
    if x.height() != m.height() || x.width() != m.width() {
        return Err(Error::shape(
            format!("{}x{}", m.height(), m.width()),
            format!("{}x{}", x.height(), x.width()),
        ));
    }
    Ok(())
}

/// Symmetric sparse system for the unknown pixels of one channel, stored as CSR.
///
/// Row `i` reads `(sum of neighbour weights) x_i - sum_{unknown j} w_ij x_j
/// = sum_{known j} w_ij x_j`, where the sums run over neighbours that exist on
/// the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    coeffs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Row index of each pixel, `None` for known pixels.
    pub unknown_index_map: Vec<Option<usize>>,
    /// Pixel of each row.
    pub pixels: Vec<usize>,
}

impl SparseSystem {
    pub fn n_unknowns(&self) -> usize {
        self.pixels.len()
    }

    /// `(row, col, coefficient)` triplets, diagonal first within each row.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_unknowns()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |e| (r, self.cols[e], self.coeffs[e]))
        })
    }

    pub fn coefficient(&self, row: usize, col: usize) -> f64 {
        (self.row_ptr[row]..self.row_ptr[row + 1])
            .find(|&e| self.cols[e] == col)
            .map_or(0.0, |e| self.coeffs[e])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_unknowns())
            .map(|r| self.coeffs[self.row_ptr[r]])
            .collect()
    }

    /// `out = A v`
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.coeffs[e] * v[self.cols[e]];
            }
            *o = acc;
        }
    }

    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.mul_vec(x, &mut ax);
        ax.iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute residual over all equations.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.mul_vec(x, &mut ax);
        ax.iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the system for the pixels in `unknown` (any order) of `channel`.
pub fn assemble_system(x: &ImageTensor, unknown: &[usize], channel: usize) -> SparseSystem {
    let mut system = assemble_matrix(x.height(), x.width(), unknown);
    system.rhs = known_rhs(&system, x, channel);
    system
}

fn assemble_matrix(height: usize, width: usize, unknown: &[usize]) -> SparseSystem {
    let mut pixels = unknown.to_vec();
    pixels.sort_unstable();
    pixels.dedup();
    let mut index = vec![None; height * width];
    for (row, &p) in pixels.iter().enumerate() {
        index[p] = Some(row);
    }
    let mut row_ptr = Vec::with_capacity(pixels.len() + 1);
    let mut cols = Vec::with_capacity(pixels.len() * 9);
    let mut coeffs = Vec::with_capacity(pixels.len() * 9);
    row_ptr.push(0);
    for (row, &p) in pixels.iter().enumerate() {
        let diag_slot = cols.len();
        cols.push(row);
        coeffs.push(0.0);
        let mut diag = 0.0;
        for (q, w) in neighbours(p, height, width) {
            diag += w;
            if let Some(col) = index[q] {
                cols.push(col);
                coeffs.push(-w);
            }
        }
        coeffs[diag_slot] = diag;
        row_ptr.push(cols.len());
    }
    SparseSystem {
        row_ptr,
        cols,
        coeffs,
        rhs: vec![0.0; pixels.len()],
        unknown_index_map: index,
        pixels,
    }
}

fn known_rhs(system: &SparseSystem, x: &ImageTensor, channel: usize) -> Vec<f64> {
    let c = x.channels();
    system
        .pixels
        .iter()
        .map(|&p| {
            neighbours(p, x.height(), x.width())
                .filter(|(q, _)| system.unknown_index_map[*q].is_none())
                .map(|(q, w)| w * x.data()[q * c + channel])
                .sum()
        })
        .collect()
}

fn neighbours(p: usize, height: usize, width: usize) -> impl Iterator<Item = (usize, f64)> {
    let (r, c) = ((p / width) as isize, (p % width) as isize);
    NEIGHBOURS.iter().filter_map(move |&(dr, dc, w)| {
        let (nr, nc) = (r + dr, c + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < height && (nc as usize) < width)
            .then(|| (nr as usize * width + nc as usize, w))
    })
}

/// Relaxation factor of the symmetric SOR preconditioner.
const SSOR_OMEGA: f64 = 1.5;

/// Solves `A x = b` to `||A x - b|| / max(1, ||b||) <= tol` with conjugate
/// gradients preconditioned by symmetric SOR. Consistent semidefinite systems
/// converge as well.
pub fn solve_system(s: &SparseSystem, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    pcg(s, &s.rhs, tol, max_iters)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn threshold(rhs: &[f64], tol: f64) -> f64 {
    tol * norm(rhs).max(1.0)
}

/// `z = M^-1 r` for `M = (D + wL) D^-1 (D + wU)`.
fn ssor_apply(s: &SparseSystem, r: &[f64], z: &mut [f64]) {
    let n = r.len();
    for i in 0..n {
        let mut acc = r[i];
        for e in s.row_ptr[i] + 1..s.row_ptr[i + 1] {
            let j = s.cols[e];
            if j < i {
                acc -= SSOR_OMEGA * s.coeffs[e] * z[j];
            }
        }
        z[i] = acc / s.coeffs[s.row_ptr[i]];
    }
    for i in (0..n).rev() {
        let d = s.coeffs[s.row_ptr[i]];
        let mut acc = d * z[i];
        for e in s.row_ptr[i] + 1..s.row_ptr[i + 1] {
            let j = s.cols[e];
            if j > i {
                acc -= SSOR_OMEGA * s.coeffs[e] * z[j];
            }
        }
        z[i] = acc / d;
    }
}

fn pcg(s: &SparseSystem, rhs: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = s.n_unknowns();
    let mut x = vec![0.0; n];
    if n == 0 {
        return Ok(x);
    }
    let limit = threshold(rhs, tol);
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    ssor_apply(s, &r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut r_norm = norm(&r);
    for _ in 0..max_iters {
        if r_norm <= limit {
            break;
        }
        s.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = norm(&r);
        ssor_apply(s, &r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // the recursive residual can drift from the true one
    let true_norm = residual(s, rhs, &x);
    if true_norm <= limit {
        return Ok(x);
    }
    Err(Error::SolverDiverged {
        iters: max_iters,
        residual: true_norm,
    })
}

fn residual(s: &SparseSystem, rhs: &[f64], x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    s.mul_vec(x, &mut ax);
    ax.iter()
        .zip(rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn refine(
    s: &SparseSystem,
    f: &BandedCholesky,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let limit = threshold(rhs, tol);
    let mut x = f.solve(rhs);
    let mut ax = vec![0.0; x.len()];
    for _ in 0..=max_iters {
        s.mul_vec(&x, &mut ax);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let r_norm = norm(&r);
        if r_norm <= limit {
            return Ok(x);
        }
        if !r_norm.is_finite() {
            break;
        }
        for (xi, di) in x.iter_mut().zip(f.solve(&r)) {
            *xi += di;
        }
    }
    Err(Error::SolverDiverged {
        iters: max_iters,
        residual: residual(s, rhs, &x),
    })
}

/// Lower Cholesky factor kept as a band: entry `(i, j)`, `i - bw <= j <= i`,
/// lives at `i * (bw + 1) + j + bw - i`. Unknowns are in raster order, so the
/// half bandwidth is at most `width + 1`.
#[derive(Debug, Clone)]
struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    fn factor(s: &SparseSystem) -> Option<Self> {
        let n = s.n_unknowns();
        let bw = s.entries().map(|(r, c, _)| r.abs_diff(c)).max().unwrap_or(0);
        let width = bw + 1;
        let mut band = vec![0.0; n * width];
        for (r, c, v) in s.entries() {
            if c <= r {
                band[r * width + c + bw - r] = v;
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = band[i * width + j + bw - i];
                for k in lo..j {
                    sum -= band[i * width + k + bw - i] * band[j * width + k + bw - j];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    band[i * width + bw] = sum.sqrt();
                } else {
                    band[i * width + j + bw - i] = sum / band[j * width + bw];
                }
            }
        }
        Some(Self { n, bw, band })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.bw + 1) + j + self.bw - i]
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut sum = y[i];
            for k in i.saturating_sub(self.bw)..i {
                sum -= self.at(i, k) * y[k];
            }
            y[i] = sum / self.at(i, i);
        }
        for i in (0..self.n).rev() {
            let mut sum = y[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                sum -= self.at(k, i) * y[k];
            }
            y[i] = sum / self.at(i, i);
        }
        y
    }
}

/// Groups of 8-connected unknown pixels that have no known neighbour at all.
/// Their equations are homogeneous and singular.
fn isolated_components(system: &SparseSystem, height: usize, width: usize) -> Vec<bool> {
    let n = system.n_unknowns();
    let mut component = vec![usize::MAX; n];
    let mut isolated = vec![false; n];
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = start;
        queue.push_back(start);
        members.clear();
        let mut touches_known = false;
        while let Some(row) = queue.pop_front() {
            members.push(row);
            for (q, _) in neighbours(system.pixels[row], height, width) {
                match system.unknown_index_map[q] {
                    None => touches_known = true,
                    Some(next) if component[next] == usize::MAX => {
                        component[next] = start;
                        queue.push_back(next);
                    }
                    Some(_) => {}
                }
            }
        }
        if !touches_known {
            for &m in &members {
                isolated[m] = true;
            }
        }
    }
    isolated
}

/// Noisy linear imputation prepared for one mask and image shape. Building it
/// once and calling [`LinearImputer::impute`] on many images skips the
/// assembly; [`LinearImputer::factorised`] additionally caches a direct
/// factorisation, which pays off when the mask is shared by a whole dataset.
#[derive(Debug, Clone)]
pub struct LinearImputer {
    height: usize,
    width: usize,
    system: SparseSystem,
    isolated: Vec<bool>,
    factor: Option<BandedCholesky>,
}

impl LinearImputer {
    /// Unknowns are the pixels outside `part`.
    pub fn new(m: &BinaryMask, part: Part) -> Self {
        let (height, width) = (m.height(), m.width());
        let unknown = m.indices(part.complement());
        let mut system = assemble_matrix(height, width, &unknown);
        let isolated = isolated_components(&system, height, width);
        // isolated rows get the identity so the remaining system is definite
        for (row, _) in isolated.iter().enumerate().filter(|(_, &i)| i) {
            for e in system.row_ptr[row]..system.row_ptr[row + 1] {
                system.coeffs[e] = if system.cols[e] == row { 1.0 } else { 0.0 };
            }
        }
        Self {
            height,
            width,
            system,
            isolated,
            factor: None,
        }
    }

    pub fn factorised(mut self) -> Self {
        self.factor = BandedCholesky::factor(&self.system);
        self
    }

    pub fn n_unknowns(&self) -> usize {
        self.system.n_unknowns()
    }

    /// Unknown regions with no known neighbour (only possible when nearly
    /// everything is removed) are filled with `fallback_mean` plus noise.
    pub fn impute<R: Rng + ?Sized>(
        &self,
        x: &ImageTensor,
        cfg: &ImputationConfig,
        rng: &mut R,
        fallback_mean: &[f64],
    ) -> Result<ImageTensor> {
        if (x.height(), x.width()) != (self.height, self.width) {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", x.height(), x.width()),
            ));
        }
        let Strategy::NoisyLinear {
            noise,
            solver_tol,
            solver_max_iters,
        } = &cfg.strategy
        else {
            return Err(Error::Config("expected a noisy linear strategy".into()));
        };
        let c = x.channels();
        if fallback_mean.len() != c {
            return Err(Error::LengthMismatch {
                expected: c,
                got: fallback_mean.len(),
            });
        }
        if self.n_unknowns() == 0 {
            return Ok(x.clone());
        }
        let sigma = noise.resolve(x.value_range());
        let gaussian = (sigma > 0.0)
            .then(|| Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string())))
            .transpose()?;
        let max_iters = solver_max_iters.unwrap_or(10 * self.n_unknowns()).max(1);

        let mut data = x.data().to_vec();
        for channel in 0..c {
            let mut rhs = known_rhs(&self.system, x, channel);
            for (b, _) in rhs.iter_mut().zip(&self.isolated).filter(|(_, &i)| i) {
                *b = 0.0;
            }
            let solution = match &self.factor {
                Some(f) => refine(&self.system, f, &rhs, *solver_tol, max_iters)?,
                None => pcg(&self.system, &rhs, *solver_tol, max_iters)?,
            };
            for (row, &p) in self.system.pixels.iter().enumerate() {
                let base = if self.isolated[row] {
                    fallback_mean[channel]
                } else {
                    solution[row]
                };
                let jitter = gaussian.as_ref().map_or(0.0, |g| g.sample(rng));
                data[p * c + channel] = base + jitter;
            }
        }
        ImageTensor::new(x.height(), x.width(), c, data)
    }
}

/// Solves the neighbour-mean system for the pixels outside `part` and adds
/// noise to them. Known pixels are copied bit for bit.
pub fn impute_noisy_linear<R: Rng + ?Sized>(
    x: &ImageTensor,
    m: &BinaryMask,
    part: Part,
    cfg: &ImputationConfig,
    rng: &mut R,
    fallback_mean: &[f64],
) -> Result<ImageTensor> {
    check_shapes(x, m)?;
    LinearImputer::new(m, part).impute(x, cfg, rng, fallback_mean)
}

/// Dispatches on the configured strategy. `dataset_mean` resolves the fixed
/// fill value when none is configured and is the fallback for isolated regions.
pub fn impute<R: Rng + ?Sized>(
    x: &ImageTensor,
    m: &BinaryMask,
    part: Part,
    cfg: &ImputationConfig,
    rng: &mut R,
    dataset_mean: &[f64],
) -> Result<ImageTensor> {
    match &cfg.strategy {
        Strategy::Fixed { value } => {
            impute_fixed(x, m, part, value.as_deref().unwrap_or(dataset_mean))
        }
        Strategy::NoisyLinear { .. } => impute_noisy_linear(x, m, part, cfg, rng, dataset_mean),
    }
}
