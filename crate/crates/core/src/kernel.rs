//! Shift-invariant kernels: evaluation, Gram assembly, first-argument
//! gradients and spectral sampling for random Fourier features.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::SeedStream;
use crate::Real;

/// Above this input dimension Gram matrices are assembled from
/// `‖a‖² + ‖b‖² − 2·a·b` so the cross term runs through `gemm`.
const DIRECT_DIM_MAX: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `k(x, x') = exp(−‖x − x'‖² / (2 l²))`
    SquaredExponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T: Real> {
    pub family: KernelFamily,
    pub lengthscale: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn squared_exponential(lengthscale: T) -> Result<Self> {
        if !(lengthscale > T::zero()) || !lengthscale.is_finite() {
            return Err(invalid("lengthscale must be positive and finite"));
        }
        Ok(Self {
            family: KernelFamily::SquaredExponential,
            lengthscale,
        })
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn profile(&self, sq_dist: T) -> T {
        match self.family {
            KernelFamily::SquaredExponential => {
                let l = self.lengthscale;
                (-sq_dist / (T::lit(2.0) * l * l)).exp()
            }
        }
    }

    /// Scalar `g` with `∂k(s, x)/∂s = g · (s − x)`, given `k(s, x)`.
    #[inline]
    pub fn grad_scale(&self, k_value: T) -> T {
        match self.family {
            KernelFamily::SquaredExponential => {
                let l = self.lengthscale;
                -k_value / (l * l)
            }
        }
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> Result<T> {
        check_pair(x, y)?;
        Ok(self.profile(sq_dist(x, y)))
    }

    /// `∂k(s, x)/∂s`.
    pub fn grad_first(&self, s: &[T], x: &[T]) -> Result<DVector<T>> {
        check_pair(s, x)?;
        let g = self.grad_scale(self.profile(sq_dist(s, x)));
        Ok(DVector::from_iterator(
            s.len(),
            s.iter().zip(x).map(|(&a, &b)| g * (a - b)),
        ))
    }

    /// Gram matrix between the rows of `a` (a×d) and the rows of `b` (b×d).
    pub fn gram(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch {
                context: "gram point dimension",
                expected: a.ncols(),
                found: b.ncols(),
            });
        }
        crate::numerics::check_finite(a, "gram points")?;
        crate::numerics::check_finite(b, "gram points")?;
        let sq = squared_distances(a, b);
        Ok(sq.map(|d| self.profile(d)))
    }

    /// Frequencies (count×dim) drawn from the spectral density and phases
    /// uniform on `[0, 2π)`.
    pub fn spectral_sample(&self, count: usize, dim: usize, rng: &mut SeedStream) -> Result<(DMatrix<T>, DVector<T>)> {
        if count == 0 || dim == 0 {
            return Err(invalid("spectral_sample needs count >= 1 and dim >= 1"));
        }
        let inv_l = 1.0 / self.lengthscale.as_f64();
        let mut freqs = DMatrix::zeros(count, dim);
        for i in 0..count {
            for j in 0..dim {
                freqs[(i, j)] = T::lit(match self.family {
                    KernelFamily::SquaredExponential => rng.normal() * inv_l,
                });
            }
        }
        let phases = DVector::from_fn(count, |_, _| T::lit(std::f64::consts::TAU * rng.uniform()));
        Ok((freqs, phases))
    }
}

fn check_pair<T: Real>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "kernel argument dimension",
            expected: x.len(),
            found: y.len(),
        });
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("kernel argument"));
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    })
}

/// Pairwise squared distances between rows. Rows that are identical across
/// `a` and `b` get exactly zero; `squared_distances(a, a)` is exactly
/// symmetric.
pub(crate) fn squared_distances<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (na, nb, d) = (a.nrows(), b.nrows(), a.ncols());
    let same = a.shape() == b.shape() && a == b;
    if d <= DIRECT_DIM_MAX {
        let at = a.transpose();
        let bt = b.transpose();
        let mut out = DMatrix::zeros(na, nb);
        out.as_mut_slice()
            .par_chunks_mut(na.max(1))
            .enumerate()
            .for_each(|(j, col)| {
                let bj = bt.column(j);
                for (i, v) in col.iter_mut().enumerate() {
                    *v = sq_dist(at.column(i).as_slice(), bj.as_slice());
                }
            });
        return out;
    }
    let cross = a * b.transpose();
    let na_sq: Vec<T> = (0..na).map(|i| a.row(i).norm_squared()).collect();
    let nb_sq: Vec<T> = (0..nb).map(|j| b.row(j).norm_squared()).collect();
    let two = T::lit(2.0);
    let mut out = DMatrix::zeros(na, nb);
    out.as_mut_slice()
        .par_chunks_mut(na.max(1))
        .enumerate()
        .for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                let s = na_sq[i] + nb_sq[j] - two * cross[(i, j)];
                *v = if s > T::zero() { s } else { T::zero() };
            }
        });
    if same {
        for j in 0..nb {
            out[(j, j)] = T::zero();
            for i in j + 1..na {
                out[(j, i)] = out[(i, j)];
            }
        }
    }
    out
}
