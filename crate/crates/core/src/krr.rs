//! Exact kernel ridge regression.
//!
//! The fit minimises `(1/n)·Σ|y_i − f(X_i)|² + λ‖f‖²_H`; by the representer
//! theorem `f = Σ α_i k(X_i, ·)` with `α = (K + nλI)⁻¹y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::numerics::{self, Cholesky};
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel<T: Real> {
    pub alpha: DVector<T>,
    pub points: DMatrix<T>,
    pub spec: KernelSpec<T>,
    pub lambda: T,
}

fn check_labels<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("training points"));
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "labels",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    numerics::check_finite_vec(y, "labels")
}

/// Fits with a precomputed Gram matrix `k = gram(x, x)`.
pub fn fit_with_gram<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    k: &DMatrix<T>,
    spec: &KernelSpec<T>,
    lambda: T,
) -> Result<KrrModel<T>> {
    check_labels(x, y)?;
    if !(lambda > T::zero()) {
        return Err(invalid("lambda must be positive"));
    }
    let n = x.nrows();
    let chol = Cholesky::factor(k, T::from_usize_lossy(n) * lambda).map_err(|_| Error::NotPositiveDefinite)?;
    Ok(KrrModel {
        alpha: chol.solve_vec(y),
        points: x.clone(),
        spec: *spec,
        lambda,
    })
}

pub fn fit<T: Real>(x: &DMatrix<T>, y: &DVector<T>, spec: &KernelSpec<T>, lambda: T) -> Result<KrrModel<T>> {
    check_labels(x, y)?;
    let k = spec.gram(x, x)?;
    fit_with_gram(x, y, &k, spec, lambda)
}

impl<T: Real> KrrModel<T> {
    /// `f(z) = Σ α_i k(X_i, z)` for each row of `z`.
    pub fn predict(&self, z: &DMatrix<T>) -> Result<DVector<T>> {
        Ok(self.spec.gram(z, &self.points)? * &self.alpha)
    }

    pub fn train_loss(&self, x: &DMatrix<T>, y: &DVector<T>) -> Result<T> {
        check_labels(x, y)?;
        Ok(mean_squared_error(y, &self.predict(x)?))
    }

    /// `√(αᵀKα)`.
    pub fn rkhs_norm(&self) -> Result<T> {
        let k = self.spec.gram(&self.points, &self.points)?;
        rkhs_norm_with_gram(&self.alpha, &k)
    }
}

pub fn rkhs_norm_with_gram<T: Real>(alpha: &DVector<T>, k: &DMatrix<T>) -> Result<T> {
    let q = alpha.dot(&(k * alpha));
    let tol = T::lit(1e-10) * (T::one() + alpha.norm_squared());
    if q < -tol {
        return Err(Error::NegativeEigenvalue(q.as_f64()));
    }
    Ok(if q > T::zero() { q.sqrt() } else { T::zero() })
}

pub fn mean_squared_error<T: Real>(a: &DVector<T>, b: &DVector<T>) -> T {
    (a - b).norm_squared() / T::from_usize_lossy(a.len())
}

/// `d = Σ_i μ_i/(μ_i + nλ)` over the eigenvalues `μ_i` of `k`.
pub fn effective_dof<T: Real>(k: &DMatrix<T>, lambda: T) -> Result<T> {
    let eig = numerics::sym_eigvals(k)?;
    effective_dof_from_eigvals(&eig, lambda)
}

pub fn effective_dof_from_eigvals<T: Real>(eig: &DVector<T>, lambda: T) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(invalid("lambda must be positive"));
    }
    let n = T::from_usize_lossy(eig.len());
    let shift = n * lambda;
    let floor = T::lit(-1e-8);
    let mut total = T::zero();
    for &mu in eig.iter() {
        if mu < floor {
            return Err(Error::NegativeEigenvalue(mu.as_f64()));
        }
        let mu = if mu > T::zero() { mu } else { T::zero() };
        total += mu / (mu + shift);
    }
    Ok(total)
}

/// Feature budget `s_phi = max(1, ⌈d·ln d⌉)`; the distilled set has `s_phi + 1` points.
pub fn distilled_size(d_eff: f64) -> Result<usize> {
    if !(d_eff > 0.0) || !d_eff.is_finite() {
        return Err(invalid("effective degrees of freedom must be positive"));
    }
    let s = (d_eff * d_eff.ln()).ceil();
    Ok(if s < 1.0 { 1 } else { s as usize })
}

/// `true` when `nλ` exceeds the top Gram eigenvalue, i.e. the regulariser
/// dominates the whole spectrum. Logs a warning in that case.
pub fn regularization_exceeds_spectrum<T: Real>(top_eigenvalue: T, n: usize, lambda: T) -> bool {
    let exceeds = T::from_usize_lossy(n) * lambda > top_eigenvalue;
    if exceeds {
        log::warn!(
            "n*lambda = {:e} exceeds the largest Gram eigenvalue {:e}",
            (T::from_usize_lossy(n) * lambda).as_f64(),
            top_eigenvalue.as_f64()
        );
    }
    exceeds
}

/// Labels rescaled so the refitted predictor has unit RKHS norm.
#[derive(Debug, Clone)]
pub struct Rescaled<T: Real> {
    pub labels: DVector<T>,
    pub scale: T,
    pub model: KrrModel<T>,
}

pub fn rescale_labels<T: Real>(x: &DMatrix<T>, y: &DVector<T>, spec: &KernelSpec<T>, lambda: T) -> Result<Rescaled<T>> {
    let k = spec.gram(x, x)?;
    rescale_labels_with_gram(x, y, &k, spec, lambda)
}

pub fn rescale_labels_with_gram<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    k: &DMatrix<T>,
    spec: &KernelSpec<T>,
    lambda: T,
) -> Result<Rescaled<T>> {
    let model = fit_with_gram(x, y, k, spec, lambda)?;
    let r = rkhs_norm_with_gram(&model.alpha, k)?;
    if !(r > T::zero()) {
        return Err(Error::DegenerateLabels);
    }
    let labels = y / r;
    let refit = fit_with_gram(x, &labels, k, spec, lambda)?;
    Ok(Rescaled {
        labels,
        scale: r,
        model: refit,
    })
}
