//! Gradient-based distillation against the kernel-inducing-points loss.
//!
//! For a batch `(X_b, y_b)` of size `n_b` and a distilled set `(S, y_S)` of
//! size `m`,
//!
//! ```text
//! L = (1/n_b)·‖y_b − K_XS·G⁻¹·y_S‖²,   G = K_SS + (mλ + jitter)·I.
//! ```
//!
//! With `α = G⁻¹y_S`, `r = K_XS·α − y_b`, `u = (2/n_b)·K_XSᵀr` and
//! `g = G⁻¹u`, the gradients are `∂L/∂y_S = g`, `∂L/∂K_XS = (2/n_b)·r·αᵀ`
//! and `∂L/∂G = −g·αᵀ`; the point gradient follows through the kernel's
//! `∂k(s, x)/∂s`, with both arguments of `K_SS` contributing.

use nalgebra::{DMatrix, DVector};

use crate::distill::DistilledSet;
use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::krr;
use crate::numerics::{self, Cholesky};
use crate::rng::SeedStream;
use crate::Real;

pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// `None` trains on the full dataset every step.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub jitter: f64,
    pub seed: u64,
    /// Trace is recorded every this many iterations, and at the last one.
    pub checkpoint_every: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            learning_rate: 0.002,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            jitter: DEFAULT_JITTER,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl OptConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps_adam > 0.0) || !(self.jitter >= 0.0) {
            return Err(invalid("eps_adam must be positive and jitter non-negative"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint interval must be at least 1"));
        }
        match self.batch_size {
            Some(0) => Err(invalid("batch size must be at least 1")),
            Some(b) if b > n => Err(invalid(format!("batch size {b} exceeds dataset size {n}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptTrace {
    pub iterations: Vec<usize>,
    /// Loss of the batch used at that iteration, before the update.
    pub batch_loss: Vec<f64>,
    /// Full-data loss after the update.
    pub full_loss: Vec<f64>,
    pub grad_norm_points: Vec<f64>,
    pub grad_norm_labels: Vec<f64>,
}

impl OptTrace {
    fn push(&mut self, iteration: usize, batch_loss: f64, full_loss: f64, gs: f64, gy: f64) {
        self.iterations.push(iteration);
        self.batch_loss.push(batch_loss);
        self.full_loss.push(full_loss);
        self.grad_norm_points.push(gs);
        self.grad_norm_labels.push(gy);
    }
}

#[derive(Debug, Clone)]
pub struct KipGradient<T: Real> {
    pub loss: T,
    /// `m × d`
    pub points: DMatrix<T>,
    pub labels: DVector<T>,
}

struct Forward<T: Real> {
    chol: Cholesky<T>,
    kss: DMatrix<T>,
    kxs: DMatrix<T>,
    alpha: DVector<T>,
    residual: DVector<T>,
    loss: T,
}

fn check_inputs<T: Real>(s: &DMatrix<T>, ys: &DVector<T>, xb: &DMatrix<T>, yb: &DVector<T>, lambda: T) -> Result<()> {
    if s.nrows() == 0 || xb.nrows() == 0 {
        return Err(Error::Empty("kip inputs"));
    }
    if ys.len() != s.nrows() {
        return Err(Error::DimensionMismatch {
            context: "distilled labels",
            expected: s.nrows(),
            found: ys.len(),
        });
    }
    if yb.len() != xb.nrows() {
        return Err(Error::DimensionMismatch {
            context: "batch labels",
            expected: xb.nrows(),
            found: yb.len(),
        });
    }
    if xb.ncols() != s.ncols() {
        return Err(Error::DimensionMismatch {
            context: "batch dimension",
            expected: s.ncols(),
            found: xb.ncols(),
        });
    }
    if !(lambda >= T::zero()) {
        return Err(invalid("lambda must be non-negative"));
    }
    Ok(())
}

/// `mλ + jitter`.
pub fn kip_ridge<T: Real>(m: usize, lambda: T, jitter: T) -> T {
    T::from_usize_lossy(m) * lambda + jitter
}

fn forward<T: Real>(
    s: &DMatrix<T>,
    ys: &DVector<T>,
    xb: &DMatrix<T>,
    yb: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
    jitter: T,
) -> Result<Forward<T>> {
    check_inputs(s, ys, xb, yb, lambda)?;
    numerics::check_finite_vec(ys, "distilled labels")?;
    let kss = spec.gram(s, s)?;
    let chol = Cholesky::factor(&kss, kip_ridge(s.nrows(), lambda, jitter)).map_err(|_| Error::NotPositiveDefinite)?;
    let alpha = chol.solve_vec(ys);
    let kxs = spec.gram(xb, s)?;
    let residual = &kxs * &alpha - yb;
    let loss = residual.norm_squared() / T::from_usize_lossy(xb.nrows());
    Ok(Forward {
        chol,
        kss,
        kxs,
        alpha,
        residual,
        loss,
    })
}

pub fn kip_loss_with_jitter<T: Real>(
    s: &DMatrix<T>,
    ys: &DVector<T>,
    xb: &DMatrix<T>,
    yb: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
    jitter: T,
) -> Result<T> {
    Ok(forward(s, ys, xb, yb, spec, lambda, jitter)?.loss)
}

pub fn kip_loss<T: Real>(
    s: &DMatrix<T>,
    ys: &DVector<T>,
    xb: &DMatrix<T>,
    yb: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
) -> Result<T> {
    kip_loss_with_jitter(s, ys, xb, yb, spec, lambda, T::lit(DEFAULT_JITTER))
}

pub fn kip_grad_with_jitter<T: Real>(
    s: &DMatrix<T>,
    ys: &DVector<T>,
    xb: &DMatrix<T>,
    yb: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
    jitter: T,
) -> Result<KipGradient<T>> {
    let f = forward(s, ys, xb, yb, spec, lambda, jitter)?;
    let (n, m) = f.kxs.shape();
    let two_over_n = T::lit(2.0) / T::from_usize_lossy(n);
    let u = (f.kxs.transpose() * &f.residual) * two_over_n;
    let g = f.chol.solve_vec(&u);

    // E = ∂L/∂K_XS scaled by the kernel's gradient factor
    let mut e = f.kxs;
    for p in 0..m {
        let ap = two_over_n * f.alpha[p];
        for (j, v) in e.column_mut(p).iter_mut().enumerate() {
            *v = spec.grad_scale(*v) * f.residual[j] * ap;
        }
    }
    // F = (D + Dᵀ)∘scale with D = −g·αᵀ
    let mut fm = f.kss;
    for q in 0..m {
        for p in 0..m {
            let d = -(g[p] * f.alpha[q] + f.alpha[p] * g[q]);
            fm[(p, q)] = d * spec.grad_scale(fm[(p, q)]);
        }
    }
    let mut grad_s = -numerics::at_b(&e, xb);
    grad_s -= &fm * s;
    for p in 0..m {
        let weight = e.column(p).sum() + fm.column(p).sum();
        for j in 0..s.ncols() {
            grad_s[(p, j)] += weight * s[(p, j)];
        }
    }
    Ok(KipGradient {
        loss: f.loss,
        points: grad_s,
        labels: g,
    })
}

pub fn kip_grad<T: Real>(
    s: &DMatrix<T>,
    ys: &DVector<T>,
    xb: &DMatrix<T>,
    yb: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
) -> Result<KipGradient<T>> {
    kip_grad_with_jitter(s, ys, xb, yb, spec, lambda, T::lit(DEFAULT_JITTER))
}

/// Adam with bias-corrected moments over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            first: vec![0.0; len],
            second: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.first.len(), "Adam: parameter length");
        assert_eq!(grad.len(), self.first.len(), "Adam: gradient length");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let gi = grad[i].as_f64();
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * gi;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * gi * gi;
            let mhat = self.first[i] / c1;
            let vhat = self.second[i] / c2;
            params[i] -= T::lit(self.lr * mhat / (vhat.sqrt() + self.eps));
        }
    }
}

/// Result of [`optimize_points`].
#[derive(Debug, Clone)]
pub struct Optimized<T: Real> {
    pub points: DMatrix<T>,
    pub labels: DVector<T>,
    /// `G⁻¹·y_S`, so the predictor is `z ↦ K(z, S)·alpha`.
    pub alpha: DVector<T>,
    pub initial_loss: T,
    pub final_loss: T,
    pub trace: OptTrace,
}

/// Columns of `x` and `s` that are not one shared constant.
fn active_columns<T: Real>(x: &DMatrix<T>, s: &DMatrix<T>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| {
            let c = x[(0, j)];
            x.column(j).iter().chain(s.column(j).iter()).any(|&v| v != c)
        })
        .collect()
}

/// Adam on `(S, y_S)` against the loss above. Coordinates constant over all
/// of `X` and `S` carry no gradient and are held out of the arithmetic.
pub fn optimize_points<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    init_points: &DMatrix<T>,
    init_labels: &DVector<T>,
    spec: &KernelSpec<T>,
    lambda: T,
    cfg: &OptConfig,
) -> Result<Optimized<T>> {
    let n = x.nrows();
    check_inputs(init_points, init_labels, x, y, lambda)?;
    cfg.validate(n)?;
    numerics::check_finite(x, "training points")?;
    numerics::check_finite(init_points, "initial points")?;

    let cols = active_columns(x, init_points);
    let full_dim = cols.len() == x.ncols();
    let (xr, mut s) = if full_dim {
        (x.clone(), init_points.clone())
    } else {
        log::debug!("optimising over {} of {} coordinates", cols.len(), x.ncols());
        (x.select_columns(cols.iter()), init_points.select_columns(cols.iter()))
    };
    let mut ys = init_labels.clone();
    let jitter = T::lit(cfg.jitter);
    let (m, d) = s.shape();
    let batch = cfg.batch_size.unwrap_or(n);
    let mut adam = Adam::new(m * d + m, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam);
    let mut rng = SeedStream::new(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let initial_loss = kip_loss_with_jitter(&s, &ys, &xr, y, spec, lambda, jitter)?;
    let mut trace = OptTrace::default();
    trace.push(0, initial_loss.as_f64(), initial_loss.as_f64(), 0.0, 0.0);
    let mut params = vec![T::zero(); m * d + m];
    let mut grads = vec![T::zero(); m * d + m];

    for it in 1..=cfg.iterations {
        let grad = if batch == n {
            kip_grad_with_jitter(&s, &ys, &xr, y, spec, lambda, jitter)?
        } else {
            if cursor + batch > n {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch];
            cursor += batch;
            let xb = xr.select_rows(idx.iter());
            let yb = DVector::from_iterator(batch, idx.iter().map(|&i| y[i]));
            kip_grad_with_jitter(&s, &ys, &xb, &yb, spec, lambda, jitter)?
        };
        let batch_loss = grad.loss.as_f64();
        if !batch_loss.is_finite()
            || grad.points.iter().any(|v| !v.is_finite())
            || grad.labels.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                trace: Box::new(trace),
            });
        }
        params[..m * d].copy_from_slice(s.as_slice());
        params[m * d..].copy_from_slice(ys.as_slice());
        grads[..m * d].copy_from_slice(grad.points.as_slice());
        grads[m * d..].copy_from_slice(grad.labels.as_slice());
        adam.step(&mut params, &grads);
        s.as_mut_slice().copy_from_slice(&params[..m * d]);
        ys.as_mut_slice().copy_from_slice(&params[m * d..]);

        if it % cfg.checkpoint_every == 0 || it == cfg.iterations {
            let full = kip_loss_with_jitter(&s, &ys, &xr, y, spec, lambda, jitter)
                .map(|l| l.as_f64())
                .unwrap_or(f64::NAN);
            if !full.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    trace: Box::new(trace),
                });
            }
            trace.push(
                it,
                batch_loss,
                full,
                grad.points.norm().as_f64(),
                grad.labels.norm().as_f64(),
            );
        }
    }

    let final_loss = T::lit(*trace.full_loss.last().expect("final checkpoint"));
    let points = if full_dim {
        s
    } else {
        let mut p = init_points.clone();
        for (k, &j) in cols.iter().enumerate() {
            p.set_column(j, &s.column(k));
        }
        p
    };
    let kss = spec.gram(&points, &points)?;
    let alpha = Cholesky::factor(&kss, kip_ridge(m, lambda, jitter))
        .map_err(|_| Error::NotPositiveDefinite)?
        .solve_vec(&ys);
    Ok(Optimized {
        points,
        labels: ys,
        alpha,
        initial_loss,
        final_loss,
        trace,
    })
}

/// Optimises a distilled set in place of its points and labels; the result
/// predicts with the regularised interpolant `K(z, S)·G⁻¹·y_S`.
pub fn optimize<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    init: &DistilledSet<T>,
    spec: &KernelSpec<T>,
    lambda: T,
    cfg: &OptConfig,
) -> Result<(DistilledSet<T>, OptTrace)> {
    let out = optimize_points(x, y, &init.points, &init.labels, spec, lambda, cfg)?;
    Ok((
        DistilledSet {
            points: out.points,
            labels: out.labels,
            alpha: out.alpha,
            map: init.map.clone(),
            lambda,
            source_n: init.source_n,
        },
        out.trace,
    ))
}

/// Full-data loss of an optimised set, `(1/n)‖y − K_XS·alpha‖²`.
pub fn optimized_loss<T: Real>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    points: &DMatrix<T>,
    alpha: &DVector<T>,
    spec: &KernelSpec<T>,
) -> Result<T> {
    Ok(krr::mean_squared_error(y, &(spec.gram(x, points)? * alpha)))
}
