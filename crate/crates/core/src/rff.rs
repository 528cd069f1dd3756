//! Random Fourier feature maps and ridge regression in feature space.
//!
//! A map is `φ(x)_j = w_j · cos(ω_jᵀx + b_j)` with frequencies `ω_j` drawn
//! from the kernel's spectral density and phases `b_j` uniform on `[0, 2π)`.
//! Plain maps use `w_j = √(2/s)`, so `E[φ(x)ᵀφ(x')] = k(x, x')`. Weighted
//! maps importance-resample a larger frequency pool by empirical ridge
//! leverage and reweight the survivors to stay unbiased for the pool's Gram
//! estimate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::numerics::{self, Cholesky};
use crate::rng::SeedStream;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureScheme {
    Plain,
    Weighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real> {
    /// `s_phi × d`
    pub frequencies: DMatrix<T>,
    pub phases: DVector<T>,
    pub weights: DVector<T>,
    pub scheme: FeatureScheme,
}

impl<T: Real> FeatureMap<T> {
    pub fn s_phi(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frequencies.ncols()
    }

    /// Feature matrix (n×s_phi) for the rows of `x`.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "feature map input dimension",
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        numerics::check_finite(x, "feature map input")?;
        let mut out = x * self.frequencies.transpose();
        let n = x.nrows();
        out.as_mut_slice()
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(j, col)| {
                let (b, w) = (self.phases[j], self.weights[j]);
                for v in col.iter_mut() {
                    *v = w * (*v + b).cos();
                }
            });
        Ok(out)
    }
}

pub fn plain_map<T: Real>(
    spec: &KernelSpec<T>,
    s_phi: usize,
    dim: usize,
    rng: &mut SeedStream,
) -> Result<FeatureMap<T>> {
    if s_phi == 0 {
        return Err(invalid("s_phi must be at least 1"));
    }
    let (frequencies, phases) = spec.spectral_sample(s_phi, dim, rng)?;
    let w = T::lit((2.0 / s_phi as f64).sqrt());
    Ok(FeatureMap {
        frequencies,
        phases,
        weights: DVector::from_element(s_phi, w),
        scheme: FeatureScheme::Plain,
    })
}

/// Ridge leverage scores of the pooled features:
/// `score_i = (2/M)·ĉ_iᵀ(K̂ + nλI)⁻¹ĉ_i` with `K̂ = (2/M)·Ĉ·Ĉᵀ`.
pub fn pool_leverage_scores<T: Real>(raw_cos: &DMatrix<T>, lambda: T) -> Result<DVector<T>> {
    let (n, pool) = raw_cos.shape();
    let scale = T::lit(2.0 / pool as f64);
    let mut gram = raw_cos * raw_cos.transpose();
    gram *= scale;
    let ridge = T::from_usize_lossy(n) * lambda;
    let chol = Cholesky::factor(&gram, ridge).map_err(|_| Error::NotPositiveDefinite)?;
    let mut z = raw_cos.clone();
    chol.solve_lower_in_place(&mut z);
    Ok(DVector::from_iterator(
        pool,
        z.column_iter().map(|c| scale * c.norm_squared()),
    ))
}

/// Leverage-weighted map: draws a pool of `pool_factor·s_phi` plain
/// frequencies, resamples `s_phi` of them with replacement in proportion to
/// their ridge leverage over `x`, and weights feature `j` (pool index `i`)
/// by `√(2 / (s_phi·M·q_i))`.
pub fn weighted_map<T: Real>(
    spec: &KernelSpec<T>,
    s_phi: usize,
    x: &DMatrix<T>,
    lambda: T,
    pool_factor: usize,
    rng: &mut SeedStream,
) -> Result<FeatureMap<T>> {
    if s_phi == 0 {
        return Err(invalid("s_phi must be at least 1"));
    }
    if pool_factor < 2 {
        return Err(invalid("pool_factor must be at least 2"));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("weighted_map data"));
    }
    if !(T::from_usize_lossy(n) * lambda > T::zero()) {
        return Err(invalid("n·lambda must be positive"));
    }
    let pool = pool_factor * s_phi;
    let (pool_freqs, pool_phases) = spec.spectral_sample(pool, x.ncols(), rng)?;
    let raw = FeatureMap {
        frequencies: pool_freqs,
        phases: pool_phases,
        weights: DVector::from_element(pool, T::one()),
        scheme: FeatureScheme::Plain,
    };
    let raw_cos = raw.apply(x)?;
    let scores = pool_leverage_scores(&raw_cos, lambda)?;
    let total = scores.iter().fold(0.0f64, |a, s| a + s.as_f64());
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::LeverageDegenerate);
    }
    let probs: Vec<f64> = scores.iter().map(|s| s.as_f64() / total).collect();
    let picks = resample_with_replacement(&probs, s_phi, rng);

    let d = x.ncols();
    let mut frequencies = DMatrix::zeros(s_phi, d);
    let mut phases = DVector::zeros(s_phi);
    let mut weights = DVector::zeros(s_phi);
    for (j, &i) in picks.iter().enumerate() {
        frequencies.set_row(j, &raw.frequencies.row(i));
        phases[j] = raw.phases[i];
        weights[j] = T::lit((2.0 / (s_phi as f64 * pool as f64 * probs[i])).sqrt());
    }
    Ok(FeatureMap {
        frequencies,
        phases,
        weights,
        scheme: FeatureScheme::Weighted,
    })
}

fn resample_with_replacement(probs: &[f64], count: usize, rng: &mut SeedStream) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let last_positive = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    (0..count)
        .map(|_| {
            let u = rng.uniform() * acc;
            // u can round up to the total; clamp onto the last selectable entry
            cdf.partition_point(|&c| c <= u).min(last_positive)
        })
        .collect()
}

/// Ridge regressor in feature space: `w = (X̃ᵀX̃ + n·s_phi·λ·I)⁻¹X̃ᵀy`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffRidgeModel<T: Real> {
    pub weights: DVector<T>,
    pub lambda: T,
    pub n: usize,
}

impl<T: Real> RffRidgeModel<T> {
    pub fn predict(&self, z: &DMatrix<T>) -> Result<DVector<T>> {
        ridge_predict(self, z)
    }
}

/// Regulariser `n·s_phi·λ` shared by the feature-space ridge problems.
pub fn ridge_shift<T: Real>(n: usize, s_phi: usize, lambda: T) -> T {
    T::from_usize_lossy(n) * T::from_usize_lossy(s_phi) * lambda
}

pub fn ridge_fit<T: Real>(xt: &DMatrix<T>, y: &DVector<T>, lambda: T) -> Result<RffRidgeModel<T>> {
    let (n, s) = xt.shape();
    if n == 0 || s == 0 {
        return Err(Error::Empty("ridge_fit features"));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ridge_fit labels",
            expected: n,
            found: y.len(),
        });
    }
    if !(lambda > T::zero()) {
        return Err(invalid("lambda must be positive"));
    }
    numerics::check_finite(xt, "ridge_fit features")?;
    numerics::check_finite_vec(y, "ridge_fit labels")?;
    let mut normal = numerics::at_b(xt, xt);
    let shift = ridge_shift(n, s, lambda);
    for i in 0..s {
        normal[(i, i)] += shift;
    }
    let rhs = xt.transpose() * y;
    let weights = numerics::spd_solve_vec(&normal, &rhs)?;
    Ok(RffRidgeModel { weights, lambda, n })
}

pub fn ridge_predict<T: Real>(model: &RffRidgeModel<T>, z: &DMatrix<T>) -> Result<DVector<T>> {
    if z.ncols() != model.weights.len() {
        return Err(Error::DimensionMismatch {
            context: "ridge_predict feature count",
            expected: model.weights.len(),
            found: z.ncols(),
        });
    }
    Ok(z * &model.weights)
}
