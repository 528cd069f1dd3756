//! Parameter sweeps behind the command-line tool.
//!
//! Each `(grid point, seed)` pair is one task producing one [`ExperimentRow`]:
//! generate data, rescale labels to unit RKHS norm, fit the full model,
//! size the distilled set from the effective degrees of freedom, run the
//! closed-form construction, then optimise a subset initialisation.
//!
//! Randomness: task `(g, seed)` draws stream `purpose` from
//! `SeedStream::substream(seed, 16·g + purpose)`, with purposes
//! [`PURPOSE_DATA`], [`PURPOSE_CONSTRUCT`], [`PURPOSE_OPT_INIT`] and
//! [`PURPOSE_OPT_BATCH`]. Tasks run in parallel and rows are returned in
//! grid-major, seed-minor order, so output does not depend on thread count.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{self, format_float, LabeledData, Mnist};
use crate::distill::{self, bounds, ConstructConfig};
use crate::error::{invalid, Result};
use crate::kernel::KernelSpec;
use crate::krr;
use crate::numerics;
use crate::optdistill::{self, OptConfig};
use crate::rff::FeatureScheme;
use crate::rng::SeedStream;

pub const PURPOSE_DATA: u64 = 0;
pub const PURPOSE_CONSTRUCT: u64 = 1;
pub const PURPOSE_OPT_INIT: u64 = 2;
pub const PURPOSE_OPT_BATCH: u64 = 3;

pub const GRF_LENGTHSCALE: f64 = 1.5;
pub const GRF_SIGMA_Y: f64 = 0.01;
pub const SYNTHETIC_LAMBDA: f64 = 1e-5;
pub const MNIST_LENGTHSCALE: f64 = 13.9;
pub const MNIST_CLASSES: (u8, u8) = (0, 1);

/// `λ(n) = 1e-4·√(5000/n)`.
pub fn mnist_lambda(n: usize) -> f64 {
    1e-4 * (5000.0 / n as f64).sqrt()
}

pub fn substream(seed: u64, grid_index: usize, purpose: u64) -> SeedStream {
    SeedStream::substream(seed, 16 * grid_index as u64 + purpose)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Grf,
    Clusters,
    Mnist,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Grf => "grf",
            Experiment::Clusters => "clusters",
            Experiment::Mnist => "mnist",
        }
    }
}

pub const CSV_HEADER: [&str; 18] = [
    "experiment",
    "grid_param",
    "seed",
    "n",
    "d_eff",
    "s_phi",
    "compression",
    "r",
    "bound_vs_labels_scaled",
    "bound_vs_optimal_scaled",
    "loss_construct_vs_labels_scaled",
    "loss_construct_vs_optimal_scaled",
    "loss_optimized_scaled",
    "wall_time_seconds",
    "lambda",
    "loss_optimized_initial_scaled",
    "train_loss_scaled",
    "error",
];

/// One `(grid point, seed)` result. Losses and bounds are in the original
/// label units (multiplied by `r²`). Fields a failed stage could not
/// produce are NaN and `error` names the stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub experiment: &'static str,
    pub grid_param: f64,
    pub seed: u64,
    pub n: usize,
    pub d_eff: f64,
    pub s_phi: usize,
    pub compression: f64,
    pub r: f64,
    pub bound_vs_labels_scaled: f64,
    pub bound_vs_optimal_scaled: f64,
    pub loss_construct_vs_labels_scaled: f64,
    pub loss_construct_vs_optimal_scaled: f64,
    pub loss_optimized_scaled: f64,
    pub wall_time_seconds: f64,
    pub lambda: f64,
    pub loss_optimized_initial_scaled: f64,
    pub train_loss_scaled: f64,
    pub error: Option<String>,
}

impl ExperimentRow {
    fn failed(experiment: Experiment, grid_param: f64, seed: u64, n: usize, lambda: f64, msg: String) -> Self {
        Self {
            experiment: experiment.name(),
            grid_param,
            seed,
            n,
            d_eff: f64::NAN,
            s_phi: 0,
            compression: f64::NAN,
            r: f64::NAN,
            bound_vs_labels_scaled: f64::NAN,
            bound_vs_optimal_scaled: f64::NAN,
            loss_construct_vs_labels_scaled: f64::NAN,
            loss_construct_vs_optimal_scaled: f64::NAN,
            loss_optimized_scaled: f64::NAN,
            wall_time_seconds: 0.0,
            lambda,
            loss_optimized_initial_scaled: f64::NAN,
            train_loss_scaled: f64::NAN,
            error: Some(msg),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.experiment.to_string(),
            format_float(self.grid_param),
            self.seed.to_string(),
            self.n.to_string(),
            format_float(self.d_eff),
            self.s_phi.to_string(),
            format_float(self.compression),
            format_float(self.r),
            format_float(self.bound_vs_labels_scaled),
            format_float(self.bound_vs_optimal_scaled),
            format_float(self.loss_construct_vs_labels_scaled),
            format_float(self.loss_construct_vs_optimal_scaled),
            format_float(self.loss_optimized_scaled),
            format_float(self.wall_time_seconds),
            format_float(self.lambda),
            format_float(self.loss_optimized_initial_scaled),
            format_float(self.train_loss_scaled),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Settings shared by all sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub seeds: Vec<u64>,
    pub scheme: FeatureScheme,
    pub pool_factor: usize,
    /// Optimiser settings; `seed` is overridden per task.
    pub opt: OptConfig,
    /// Skip the optimiser (its columns are then NaN).
    pub skip_optimizer: bool,
    /// Measure wall time; off by default so reruns are byte-identical.
    pub record_time: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            scheme: FeatureScheme::Plain,
            pool_factor: 4,
            opt: OptConfig {
                iterations: 2000,
                ..OptConfig::default()
            },
            skip_optimizer: false,
            record_time: false,
        }
    }
}

struct Task {
    grid_index: usize,
    grid_param: f64,
    seed: u64,
}

fn tasks(grid: &[f64], seeds: &[u64]) -> Vec<Task> {
    grid.iter()
        .enumerate()
        .flat_map(|(g, &p)| {
            seeds.iter().map(move |&seed| Task {
                grid_index: g,
                grid_param: p,
                seed,
            })
        })
        .collect()
}

/// Runs the distillation pipeline on one dataset; `grid_index` and `seed`
/// select the random streams.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    experiment: Experiment,
    data: &LabeledData<f64>,
    spec: &KernelSpec<f64>,
    lambda: f64,
    grid_param: f64,
    grid_index: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<ExperimentRow> {
    let start = Instant::now();
    let (x, n) = (&data.x, data.n());
    let k = spec.gram(x, x)?;
    let eig = numerics::sym_eigvals(&k)?;
    krr::regularization_exceeds_spectrum(eig[0], n, lambda);
    let d_eff = krr::effective_dof_from_eigvals(&eig, lambda)?;
    let s_phi = krr::distilled_size(d_eff)?;
    let rescaled = krr::rescale_labels_with_gram(x, &data.y, &k, spec, lambda)?;
    let y = &rescaled.labels;
    let r = rescaled.scale;
    let full = &k * &rescaled.model.alpha;

    let train_loss = krr::mean_squared_error(y, &full);
    let config = ConstructConfig {
        scheme: opts.scheme,
        pool_factor: opts.pool_factor,
        ..ConstructConfig::new(s_phi)
    };
    // a failed construction still leaves the bounds and the optimiser run
    let constructed = distill::construct(
        x,
        y,
        spec,
        lambda,
        &config,
        &mut substream(seed, grid_index, PURPOSE_CONSTRUCT),
    )
    .and_then(|built| distill::evaluate_with_predictions(&built.set, x, y, &full, spec, d_eff, r));
    let (loss_vs_labels, loss_vs_optimal, error) = match constructed {
        Ok(report) => (report.loss_vs_labels, report.loss_vs_optimal, None),
        Err(e) => {
            log::warn!("{} grid={grid_index} seed={seed}: {e}", experiment.name());
            (f64::NAN, f64::NAN, Some(format!("construct: {e}")))
        }
    };

    let (initial, optimized) = if opts.skip_optimizer {
        (f64::NAN, f64::NAN)
    } else {
        let m = s_phi + 1;
        let (s0, y0) = labeled_subset(x, y, m, &mut substream(seed, grid_index, PURPOSE_OPT_INIT))?;
        let cfg = OptConfig {
            seed: substream(seed, grid_index, PURPOSE_OPT_BATCH).next_u64(),
            ..opts.opt
        };
        let out = optdistill::optimize_points(x, y, &s0, &y0, spec, lambda, &cfg)?;
        (out.initial_loss * r * r, out.final_loss * r * r)
    };

    let r2 = r * r;
    Ok(ExperimentRow {
        experiment: experiment.name(),
        grid_param,
        seed,
        n,
        d_eff,
        s_phi,
        compression: (s_phi + 1) as f64 / n as f64,
        r,
        bound_vs_labels_scaled: bounds::bound_vs_labels(train_loss, lambda).value * r2,
        bound_vs_optimal_scaled: bounds::bound_vs_optimal(lambda).value * r2,
        loss_construct_vs_labels_scaled: loss_vs_labels * r2,
        loss_construct_vs_optimal_scaled: loss_vs_optimal * r2,
        loss_optimized_scaled: optimized,
        wall_time_seconds: if opts.record_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
        lambda,
        loss_optimized_initial_scaled: initial,
        train_loss_scaled: train_loss * r2,
        error,
    })
}

/// `m` distinct rows of `x` with their labels, drawn without replacement.
pub fn labeled_subset(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    m: usize,
    rng: &mut SeedStream,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = x.nrows();
    if m == 0 || m > n {
        return Err(invalid(format!("cannot take {m} distinct rows from {n}")));
    }
    let rows = rng.sample_without_replacement(n, m);
    Ok((
        x.select_rows(rows.iter()),
        DVector::from_iterator(m, rows.iter().map(|&i| y[i])),
    ))
}

fn sweep<F>(experiment: Experiment, grid: &[f64], opts: &SweepOptions, job: F) -> Vec<ExperimentRow>
where
    F: Fn(&Task) -> (usize, f64, Result<ExperimentRow>) + Sync,
{
    tasks(grid, &opts.seeds)
        .par_iter()
        .map(|t| {
            let (n, lambda, out) = job(t);
            out.unwrap_or_else(|e| {
                log::warn!("{} grid={} seed={}: {e}", experiment.name(), t.grid_param, t.seed);
                ExperimentRow::failed(experiment, t.grid_param, t.seed, n, lambda, e.to_string())
            })
        })
        .collect()
}

fn check_sweep(grid: &[f64], opts: &SweepOptions, lambda: f64) -> Result<()> {
    if grid.is_empty() || opts.seeds.is_empty() {
        return Err(invalid("grid and seed list must be non-empty"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid("lambda must be positive"));
    }
    Ok(())
}

/// Gaussian random field sweep over `σ_x`.
pub fn run_grf(sigmas: &[f64], n: usize, lambda: f64, opts: &SweepOptions) -> Result<Vec<ExperimentRow>> {
    check_sweep(sigmas, opts, lambda)?;
    let spec = KernelSpec::squared_exponential(GRF_LENGTHSCALE)?;
    Ok(sweep(Experiment::Grf, sigmas, opts, |t| {
        let out = substream(t.seed, t.grid_index, PURPOSE_DATA).next_u64();
        let res = data::gen_grf(n, t.grid_param, GRF_SIGMA_Y, &spec, out).and_then(|d| {
            run_pipeline(
                Experiment::Grf,
                &d,
                &spec,
                lambda,
                t.grid_param,
                t.grid_index,
                t.seed,
                opts,
            )
        });
        (n, lambda, res)
    }))
}

/// Two-cluster sweep over `σ_x`.
pub fn run_clusters(sigmas: &[f64], n: usize, lambda: f64, opts: &SweepOptions) -> Result<Vec<ExperimentRow>> {
    check_sweep(sigmas, opts, lambda)?;
    let spec = KernelSpec::squared_exponential(GRF_LENGTHSCALE)?;
    Ok(sweep(Experiment::Clusters, sigmas, opts, |t| {
        let out = substream(t.seed, t.grid_index, PURPOSE_DATA).next_u64();
        let res = data::gen_two_clusters(n, t.grid_param, out).and_then(|d| {
            run_pipeline(
                Experiment::Clusters,
                &d,
                &spec,
                lambda,
                t.grid_param,
                t.grid_index,
                t.seed,
                opts,
            )
        });
        (n, lambda, res)
    }))
}

/// MNIST 0-vs-1 sweep over the subset size `n`, with `λ = λ(n)`.
pub fn run_mnist(sizes: &[usize], mnist: &Mnist, opts: &SweepOptions) -> Result<Vec<ExperimentRow>> {
    let grid: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    check_sweep(&grid, opts, 1.0)?;
    let spec = KernelSpec::squared_exponential(MNIST_LENGTHSCALE)?;
    Ok(sweep(Experiment::Mnist, &grid, opts, |t| {
        let n = sizes[t.grid_index];
        let lambda = mnist_lambda(n);
        let out = substream(t.seed, t.grid_index, PURPOSE_DATA).next_u64();
        let res = data::binary_subset(mnist, MNIST_CLASSES.0, MNIST_CLASSES.1, n, out).and_then(|d| {
            run_pipeline(
                Experiment::Mnist,
                &d,
                &spec,
                lambda,
                t.grid_param,
                t.grid_index,
                t.seed,
                opts,
            )
        });
        (n, lambda, res)
    }))
}

pub fn write_csv_to<W: Write>(writer: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, rows: &[ExperimentRow]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(std::io::BufWriter::new(file), rows)
}
