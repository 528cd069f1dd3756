//! Closed-form distillation.
//!
//! Given `(X, y)`, a feature map `φ` with `s_phi` features and the ridge
//! target `w_X` fitted on `X̃ = φ(X)`, the construction
//!
//! 1. picks `m = s_phi + 1` points `S`;
//! 2. sets `y_S = (φ(S)ᵀ)†·b` with `b = (φ(S)ᵀφ(S) + n·s_phi·λ·I)·w_X`, so
//!    the feature-space ridge fit on `(φ(S), y_S)` (same `n`) is `w_X` again;
//! 3. solves `A·α = w_X` in the least-squares sense with
//!    `A = Â·K(X, S)` and `Â = (1/s_phi)·X̃ᵀ((1/s_phi)·X̃X̃ᵀ + nλI)⁻¹`, giving
//!    the kernel predictor `f_S(z) = Σ α_i k(S_i, z)`.

pub mod bounds;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::krr::{self, KrrModel};
use crate::numerics::{self, Cholesky, PseudoInverse, PINV_RANK_TOL};
use crate::rff::{self, FeatureMap, FeatureScheme};
use crate::rng::SeedStream;
use crate::Real;

/// Relative singular value threshold for the rank checks on `φ(S)` and `A`.
pub const RANK_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ATTEMPTS: usize = 10;
/// Largest relative residual of the label system accepted without full rank.
pub const LABEL_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Distinct rows of `X`, uniformly without replacement.
    Subset,
    /// I.i.d. standard normal rows.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistilledSet<T: Real> {
    /// `m × d`, `m = s_phi + 1`.
    pub points: DMatrix<T>,
    pub labels: DVector<T>,
    pub alpha: DVector<T>,
    pub map: FeatureMap<T>,
    pub lambda: T,
    /// Size of the dataset that was distilled; fixes the ridge shift.
    pub source_n: usize,
}

impl<T: Real> DistilledSet<T> {
    pub fn m(&self) -> usize {
        self.points.nrows()
    }

    pub fn predict(&self, spec: &KernelSpec<T>, z: &DMatrix<T>) -> Result<DVector<T>> {
        predict_distilled(self, spec, z)
    }

    /// Feature-space ridge weights on `(φ(S), y_S)` with the source shift
    /// `source_n·s_phi·λ`.
    pub fn feature_weights(&self) -> Result<DVector<T>> {
        let phi = self.map.apply(&self.points)?;
        let mut normal = numerics::at_b(&phi, &phi);
        let shift = rff::ridge_shift(self.source_n, self.map.s_phi(), self.lambda);
        for i in 0..normal.nrows() {
            normal[(i, i)] += shift;
        }
        numerics::spd_solve_vec(&normal, &(phi.transpose() * &self.labels))
    }

    /// The kernel ridge optimum on `(S, y_S)` itself, regularised with `m·λ`.
    pub fn refit(&self, spec: &KernelSpec<T>) -> Result<KrrModel<T>> {
        krr::fit(&self.points, &self.labels, spec, self.lambda)
    }
}

pub fn init_points<T: Real>(
    x: &DMatrix<T>,
    m: usize,
    strategy: InitStrategy,
    rng: &mut SeedStream,
) -> Result<DMatrix<T>> {
    let (n, d) = x.shape();
    if m == 0 {
        return Err(invalid("distilled set needs at least one point"));
    }
    match strategy {
        InitStrategy::Subset => {
            if m > n {
                return Err(invalid(format!("cannot take {m} distinct rows from {n}")));
            }
            let rows = rng.sample_without_replacement(n, m);
            Ok(x.select_rows(rows.iter()))
        }
        InitStrategy::Gaussian => {
            if d == 0 {
                return Err(Error::Empty("init_points dimension"));
            }
            let mut s = DMatrix::zeros(m, d);
            for i in 0..m {
                for j in 0..d {
                    s[(i, j)] = T::lit(rng.normal());
                }
            }
            Ok(s)
        }
    }
}

/// Labels `y_S` with `φ(S)ᵀy_S` as close as possible to `b`.
#[derive(Debug, Clone)]
pub struct LabelSolution<T: Real> {
    pub labels: DVector<T>,
    /// Numerical rank of `φ(S)` at [`RANK_TOL`].
    pub rank: usize,
    /// `‖φ(S)ᵀy_S − b‖ / ‖b‖`.
    pub residual: T,
}

/// Minimum-norm labels for the ridge target `w_x`, without acceptance checks.
pub fn label_solution<T: Real>(phi_s: &DMatrix<T>, w_x: &DVector<T>, n: usize, lambda: T) -> Result<LabelSolution<T>> {
    let s = phi_s.ncols();
    if w_x.len() != s {
        return Err(Error::DimensionMismatch {
            context: "ridge target length",
            expected: s,
            found: w_x.len(),
        });
    }
    let pinv = PseudoInverse::new(phi_s)?;
    let rank = pinv.rank(T::lit(RANK_TOL));
    let mut b = numerics::at_b(phi_s, phi_s) * w_x;
    b.axpy(rff::ridge_shift(n, s, lambda), w_x, T::one());
    let labels = pinv.apply_transposed(&b, T::lit(PINV_RANK_TOL));
    let b_norm = b.norm();
    let miss = (phi_s.tr_mul(&labels) - &b).norm();
    let residual = if b_norm > T::zero() { miss / b_norm } else { miss };
    Ok(LabelSolution { labels, rank, residual })
}

/// Labels `y_S` reproducing the ridge target `w_x` from the features `phi_s = φ(S)`.
///
/// Accepted when `φ(S)` has full column rank or, failing that, when the
/// system is still consistent to [`LABEL_RESIDUAL_TOL`].
pub fn labels_for_target<T: Real>(phi_s: &DMatrix<T>, w_x: &DVector<T>, n: usize, lambda: T) -> Result<DVector<T>> {
    let sol = label_solution(phi_s, w_x, n, lambda)?;
    if sol.rank < phi_s.ncols() && sol.residual > T::lit(LABEL_RESIDUAL_TOL) {
        return Err(Error::ResampleRequired {
            rank: sol.rank,
            required: phi_s.ncols(),
        });
    }
    Ok(sol.labels)
}

pub fn solve_labels<T: Real>(
    s_points: &DMatrix<T>,
    xt: &DMatrix<T>,
    y: &DVector<T>,
    map: &FeatureMap<T>,
    lambda: T,
) -> Result<DVector<T>> {
    let w_x = rff::ridge_fit(xt, y, lambda)?.weights;
    let phi_s = map.apply(s_points)?;
    labels_for_target(&phi_s, &w_x, xt.nrows(), lambda)
}

/// `Â = (1/s)·X̃ᵀ((1/s)·X̃X̃ᵀ + nλI)⁻¹`, an `s × n` matrix.
///
/// Evaluated through whichever of the `n×n` form and the equivalent
/// `(X̃ᵀX̃ + n·s·λ·I)⁻¹X̃ᵀ` has the smaller system.
pub fn projection_operator<T: Real>(xt: &DMatrix<T>, lambda: T) -> Result<DMatrix<T>> {
    let (n, s) = xt.shape();
    if n == 0 || s == 0 {
        return Err(Error::Empty("projection_operator features"));
    }
    if !(lambda > T::zero()) {
        return Err(invalid("lambda must be positive"));
    }
    numerics::check_finite(xt, "projection_operator features")?;
    if s <= n {
        let chol = Cholesky::factor(&numerics::at_b(xt, xt), rff::ridge_shift(n, s, lambda))
            .map_err(|_| Error::NotPositiveDefinite)?;
        Ok(chol.solve(&xt.transpose()))
    } else {
        projection_operator_dual(xt, lambda)
    }
}

fn projection_operator_dual<T: Real>(xt: &DMatrix<T>, lambda: T) -> Result<DMatrix<T>> {
    let (n, s) = xt.shape();
    let inv_s = T::one() / T::from_usize_lossy(s);
    let mut gram = xt * xt.transpose();
    gram *= inv_s;
    let chol = Cholesky::factor(&gram, T::from_usize_lossy(n) * lambda).map_err(|_| Error::NotPositiveDefinite)?;
    let mut z = chol.solve(xt);
    z *= inv_s;
    Ok(z.transpose())
}

#[derive(Debug, Clone)]
pub struct AlphaSolution<T: Real> {
    pub alpha: DVector<T>,
    /// `‖A·α − β‖`.
    pub residual: T,
    pub target_norm: T,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Least-squares coefficients for `A·α = β`, `A = Â·K(X, S)`.
pub fn alpha_for_target<T: Real>(
    s_points: &DMatrix<T>,
    x: &DMatrix<T>,
    xt: &DMatrix<T>,
    beta: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
) -> Result<AlphaSolution<T>> {
    if xt.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "feature matrix rows",
            expected: x.nrows(),
            found: xt.nrows(),
        });
    }
    let s = xt.ncols();
    let a = projection_operator(xt, lambda)? * spec.gram(x, s_points)?;
    let pinv = PseudoInverse::new(&a)?;
    let rank = pinv.rank(T::lit(RANK_TOL));
    let alpha = pinv.apply(beta, T::lit(PINV_RANK_TOL));
    let residual = (&a * &alpha - beta).norm();
    let rank_deficient = rank < s;
    if rank_deficient {
        log::warn!(
            "coefficient system has rank {rank} < {s}; residual {:e} (target norm {:e})",
            residual.as_f64(),
            beta.norm().as_f64()
        );
    }
    Ok(AlphaSolution {
        alpha,
        residual,
        target_norm: beta.norm(),
        rank,
        rank_deficient,
    })
}

pub fn solve_alpha<T: Real>(
    s_points: &DMatrix<T>,
    x: &DMatrix<T>,
    xt: &DMatrix<T>,
    y: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
) -> Result<AlphaSolution<T>> {
    let beta = rff::ridge_fit(xt, y, lambda)?.weights;
    alpha_for_target(s_points, x, xt, &beta, spec, lambda)
}

pub fn predict_distilled<T: Real>(dset: &DistilledSet<T>, spec: &KernelSpec<T>, z: &DMatrix<T>) -> Result<DVector<T>> {
    if z.ncols() != dset.points.ncols() {
        return Err(Error::DimensionMismatch {
            context: "query dimension",
            expected: dset.points.ncols(),
            found: z.ncols(),
        });
    }
    Ok(spec.gram(z, &dset.points)? * &dset.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstructConfig {
    pub s_phi: usize,
    pub scheme: FeatureScheme,
    /// Pool size multiplier for the weighted scheme.
    pub pool_factor: usize,
    pub init: InitStrategy,
    pub max_attempts: usize,
}

impl ConstructConfig {
    pub fn new(s_phi: usize) -> Self {
        Self {
            s_phi,
            scheme: FeatureScheme::Plain,
            pool_factor: 4,
            init: InitStrategy::Subset,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Construction<T: Real> {
    pub set: DistilledSet<T>,
    pub alpha_solution: AlphaSolution<T>,
    /// Draws of `S` used, including the successful one.
    pub attempts: usize,
    /// `‖φ(S)ᵀy_S − b‖ / ‖b‖` for the accepted draw.
    pub label_residual: T,
}

/// Full construction: draws the map, then `S` (redrawn while the label
/// system is inconsistent), then labels and coefficients.
///
/// When the features are rank deficient on `X` itself the best of the
/// draws is kept and a warning logged.
pub fn construct<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
    config: &ConstructConfig,
    rng: &mut SeedStream,
) -> Result<Construction<T>> {
    if config.max_attempts == 0 {
        return Err(invalid("max_attempts must be at least 1"));
    }
    let map = match config.scheme {
        FeatureScheme::Plain => rff::plain_map(spec, config.s_phi, x.ncols(), rng)?,
        FeatureScheme::Weighted => rff::weighted_map(spec, config.s_phi, x, lambda, config.pool_factor, rng)?,
    };
    let xt = map.apply(x)?;
    let w_x = rff::ridge_fit(&xt, y, lambda)?.weights;
    let m = config.s_phi + 1;
    let n = x.nrows();
    let mut best: Option<(DMatrix<T>, LabelSolution<T>, usize)> = None;
    for attempt in 1..=config.max_attempts {
        let points = init_points(x, m, config.init, rng)?;
        let phi_s = map.apply(&points)?;
        let sol = label_solution(&phi_s, &w_x, n, lambda)?;
        let accepted = sol.rank == config.s_phi || sol.residual <= T::lit(LABEL_RESIDUAL_TOL);
        if !accepted {
            log::debug!(
                "attempt {attempt}: rank {} < {}, residual {:e}",
                sol.rank,
                config.s_phi,
                sol.residual.to_f64().unwrap_or(f64::NAN)
            );
        }
        if best.as_ref().is_none_or(|(_, b, _)| sol.residual < b.residual) {
            best = Some((points, sol, attempt));
        }
        if accepted {
            let (points, sol, _) = best.take().expect("just stored");
            return finish(points, sol, attempt, map, &xt, x, &w_x, spec, lambda);
        }
    }
    let (points, sol, _) = best.expect("at least one attempt");
    // No draw can help when the features are already deficient on X itself.
    let data_rank = PseudoInverse::new(&xt)?.rank(T::lit(RANK_TOL));
    if data_rank < config.s_phi && sol.rank <= data_rank {
        log::warn!(
            "features have rank {data_rank} < {} on the data; labels reproduce the ridge target to {:e}",
            config.s_phi,
            sol.residual.to_f64().unwrap_or(f64::NAN)
        );
        return finish(points, sol, config.max_attempts, map, &xt, x, &w_x, spec, lambda);
    }
    Err(Error::ResampleRequired {
        rank: sol.rank,
        required: config.s_phi,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    points: DMatrix<T>,
    sol: LabelSolution<T>,
    attempts: usize,
    map: FeatureMap<T>,
    xt: &DMatrix<T>,
    x: &DMatrix<T>,
    w_x: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
) -> Result<Construction<T>> {
    let alpha_solution = alpha_for_target(&points, x, xt, w_x, spec, lambda)?;
    Ok(Construction {
        set: DistilledSet {
            points,
            labels: sol.labels,
            alpha: alpha_solution.alpha.clone(),
            map,
            lambda,
            source_n: x.nrows(),
        },
        alpha_solution,
        attempts,
        label_residual: sol.residual,
    })
}

/// Sizes, bounds and measured losses of a distilled set against the full fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub d_eff: f64,
    pub s_phi: usize,
    pub m: usize,
    pub n: usize,
    pub compression: f64,
    pub lambda: f64,
    pub train_loss: f64,
    pub bound_vs_labels: f64,
    pub bound_vs_optimal: f64,
    pub loss_vs_labels: f64,
    pub loss_vs_optimal: f64,
    /// Label scale `r`; losses above are in the rescaled units.
    pub rkhs_scale: f64,
}

/// Loss and bound values converted back to the original label units (`×r²`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledLosses {
    pub train_loss: f64,
    pub bound_vs_labels: f64,
    pub bound_vs_optimal: f64,
    pub loss_vs_labels: f64,
    pub loss_vs_optimal: f64,
}

impl BoundReport {
    pub fn scaled(&self) -> ScaledLosses {
        let r2 = self.rkhs_scale * self.rkhs_scale;
        ScaledLosses {
            train_loss: self.train_loss * r2,
            bound_vs_labels: self.bound_vs_labels * r2,
            bound_vs_optimal: self.bound_vs_optimal * r2,
            loss_vs_labels: self.loss_vs_labels * r2,
            loss_vs_optimal: self.loss_vs_optimal * r2,
        }
    }

    pub fn within_optimal_bound(&self) -> bool {
        self.loss_vs_optimal <= self.bound_vs_optimal
    }

    pub fn within_label_bound(&self) -> bool {
        self.loss_vs_labels <= self.bound_vs_labels
    }
}

/// Measures `dset` on the training data. `y` must be the labels `full_model`
/// was fitted on; `d_eff` and `rkhs_scale` are recorded as given.
pub fn evaluate<T: Real>(
    dset: &DistilledSet<T>,
    x: &DMatrix<T>,
    y: &DVector<T>,
    full_model: &KrrModel<T>,
    d_eff: f64,
    rkhs_scale: f64,
) -> Result<BoundReport> {
    let full = full_model.predict(x)?;
    evaluate_with_predictions(dset, x, y, &full, &full_model.spec, d_eff, rkhs_scale)
}

/// As [`evaluate`], with the full model's in-sample predictions supplied.
pub fn evaluate_with_predictions<T: Real>(
    dset: &DistilledSet<T>,
    x: &DMatrix<T>,
    y: &DVector<T>,
    full_predictions: &DVector<T>,
    spec: &KernelSpec<T>,
    d_eff: f64,
    rkhs_scale: f64,
) -> Result<BoundReport> {
    let n = x.nrows();
    if y.len() != n || full_predictions.len() != n {
        return Err(Error::DimensionMismatch {
            context: "evaluate labels",
            expected: n,
            found: if y.len() != n { y.len() } else { full_predictions.len() },
        });
    }
    let distilled = predict_distilled(dset, spec, x)?;
    let lambda = dset.lambda.as_f64();
    let train_loss = krr::mean_squared_error(y, full_predictions).as_f64();
    let m = dset.m();
    Ok(BoundReport {
        d_eff,
        s_phi: dset.map.s_phi(),
        m,
        n,
        compression: m as f64 / n as f64,
        lambda,
        train_loss,
        bound_vs_labels: bounds::bound_vs_labels(train_loss, lambda).value,
        bound_vs_optimal: bounds::bound_vs_optimal(lambda).value,
        loss_vs_labels: krr::mean_squared_error(y, &distilled).as_f64(),
        loss_vs_optimal: krr::mean_squared_error(full_predictions, &distilled).as_f64(),
        rkhs_scale,
    })
}
