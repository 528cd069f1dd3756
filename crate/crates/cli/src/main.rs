//! `rffdistill`: experiment sweeps and single pipeline stages.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rffdistill::data::{self, LabeledData};
use rffdistill::distill::{self, bounds, ConstructConfig};
use rffdistill::experiment::{self, SweepOptions};
use rffdistill::kernel::KernelSpec;
use rffdistill::optdistill::{self, OptConfig};
use rffdistill::rff::FeatureScheme;
use rffdistill::rng::SeedStream;
use rffdistill::{krr, Error, ErrorClass};

#[derive(Parser)]
#[command(name = "rffdistill", version, about = "Kernel ridge regression dataset distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Plain,
    Weighted,
}

impl From<Scheme> for FeatureScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Plain => FeatureScheme::Plain,
            Scheme::Weighted => FeatureScheme::Weighted,
        }
    }
}

#[derive(clap::Args)]
struct SweepArgs {
    /// Seeds, one row per grid point and seed.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Optimiser iterations.
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Minibatch size (default: full batch).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum, default_value = "plain")]
    scheme: Scheme,
    /// Skip the optimiser.
    #[arg(long)]
    no_opt: bool,
    /// Record wall time per row (makes the output non-reproducible).
    #[arg(long)]
    time: bool,
    #[arg(long)]
    out: PathBuf,
}

impl SweepArgs {
    fn options(&self) -> SweepOptions {
        SweepOptions {
            seeds: self.seeds.clone(),
            scheme: self.scheme.into(),
            opt: OptConfig {
                iterations: self.iters,
                batch_size: self.batch,
                ..OptConfig::default()
            },
            skip_optimizer: self.no_opt,
            record_time: self.time,
            ..SweepOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian random field sweep over sigma_x.
    Grf {
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = experiment::SYNTHETIC_LAMBDA)]
        lambda: f64,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Two-cluster sweep over sigma_x.
    Clusters {
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4")]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = experiment::SYNTHETIC_LAMBDA)]
        lambda: f64,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// MNIST 0-vs-1 sweep over the subset size, lambda = 1e-4*sqrt(5000/n).
    Mnist {
        #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
        n: Vec<usize>,
        #[arg(long)]
        mnist_images: PathBuf,
        #[arg(long)]
        mnist_labels: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Closed-form distilled set for a labelled CSV; writes x*, y, alpha.
    DistillConstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = experiment::GRF_LENGTHSCALE)]
        lengthscale: f64,
        /// Feature count (default: ceil(d ln d) from the effective dof).
        #[arg(long)]
        s_phi: Option<usize>,
        #[arg(long, value_enum, default_value = "plain")]
        scheme: Scheme,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimise a distilled set against the regularised KIP loss.
    DistillOpt {
        #[arg(long)]
        data: PathBuf,
        /// Initial distilled set (x*, y columns); default is a random subset.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Subset size when no --init is given (default: s_phi + 1).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = experiment::GRF_LENGTHSCALE)]
        lengthscale: f64,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print both error bounds for a training loss and lambda.
    Bounds {
        #[arg(long)]
        loss: f64,
        #[arg(long)]
        lambda: f64,
    },
    /// Sample a Gaussian random field dataset.
    GenGrf {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = experiment::GRF_SIGMA_Y)]
        sigma_y: f64,
        #[arg(long, default_value_t = experiment::GRF_LENGTHSCALE)]
        lengthscale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the two-cluster dataset.
    GenClusters {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Twelve significant digits, trailing zeros dropped.
fn short(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    format!("{rounded:e}")
}

fn size_from_dof(data: &LabeledData<f64>, spec: &KernelSpec<f64>, lambda: f64) -> rffdistill::Result<(f64, usize)> {
    let k = spec.gram(&data.x, &data.x)?;
    let d_eff = krr::effective_dof(&k, lambda)?;
    Ok((d_eff, krr::distilled_size(d_eff)?))
}

fn run(cmd: Command) -> rffdistill::Result<()> {
    match cmd {
        Command::Grf {
            sigma,
            n,
            lambda,
            sweep,
        } => {
            let rows = experiment::run_grf(&sigma, n, lambda, &sweep.options())?;
            experiment::write_csv(&sweep.out, &rows)
        }
        Command::Clusters {
            sigma,
            n,
            lambda,
            sweep,
        } => {
            let rows = experiment::run_clusters(&sigma, n, lambda, &sweep.options())?;
            experiment::write_csv(&sweep.out, &rows)
        }
        Command::Mnist {
            n,
            mnist_images,
            mnist_labels,
            sweep,
        } => {
            let mnist = data::load_mnist_idx(mnist_images, mnist_labels)?;
            let rows = experiment::run_mnist(&n, &mnist, &sweep.options())?;
            experiment::write_csv(&sweep.out, &rows)
        }
        Command::DistillConstruct {
            data: path,
            lambda,
            lengthscale,
            s_phi,
            scheme,
            seed,
            out,
        } => {
            let d = data::read_labeled_csv::<f64>(&path)?;
            let spec = KernelSpec::squared_exponential(lengthscale)?;
            let (d_eff, s) = match s_phi {
                Some(s) => (f64::NAN, s),
                None => size_from_dof(&d, &spec, lambda)?,
            };
            let config = ConstructConfig {
                scheme: scheme.into(),
                ..ConstructConfig::new(s)
            };
            let built = distill::construct(&d.x, &d.y, &spec, lambda, &config, &mut SeedStream::new(seed))?;
            let full = krr::fit(&d.x, &d.y, &spec, lambda)?;
            let report = distill::evaluate(&built.set, &d.x, &d.y, &full, d_eff, 1.0)?;
            data::write_labeled_csv(
                &out,
                &built.set.points,
                &built.set.labels,
                &[("alpha", &built.set.alpha)],
            )?;
            println!("d_eff {}", short(report.d_eff));
            println!("s_phi {}", report.s_phi);
            println!("m {}", report.m);
            println!("train_loss {}", short(report.train_loss));
            println!("loss_vs_optimal {}", short(report.loss_vs_optimal));
            println!("bound_vs_optimal {}", short(report.bound_vs_optimal));
            println!("loss_vs_labels {}", short(report.loss_vs_labels));
            println!("bound_vs_labels {}", short(report.bound_vs_labels));
            Ok(())
        }
        Command::DistillOpt {
            data: path,
            init,
            m,
            lambda,
            lengthscale,
            iters,
            batch,
            seed,
            out,
        } => {
            let d = data::read_labeled_csv::<f64>(&path)?;
            let spec = KernelSpec::squared_exponential(lengthscale)?;
            let (s0, y0) = match init {
                Some(p) => {
                    let i = data::read_labeled_csv::<f64>(p)?;
                    (i.x, i.y)
                }
                None => {
                    let m = match m {
                        Some(m) => m,
                        None => size_from_dof(&d, &spec, lambda)?.1 + 1,
                    };
                    let mut rng = experiment::substream(seed, 0, experiment::PURPOSE_OPT_INIT);
                    experiment::labeled_subset(&d.x, &d.y, m, &mut rng)?
                }
            };
            let cfg = OptConfig {
                iterations: iters,
                batch_size: batch,
                seed,
                ..OptConfig::default()
            };
            let res = optdistill::optimize_points(&d.x, &d.y, &s0, &y0, &spec, lambda, &cfg)?;
            data::write_labeled_csv(&out, &res.points, &res.labels, &[("alpha", &res.alpha)])?;
            println!("initial_loss {}", short(res.initial_loss));
            println!("final_loss {}", short(res.final_loss));
            Ok(())
        }
        Command::Bounds { loss, lambda } => {
            if !(loss >= 0.0) || !(lambda >= 0.0) || !loss.is_finite() || !lambda.is_finite() {
                return Err(Error::InvalidParameter(
                    "loss and lambda must be finite and non-negative".into(),
                ));
            }
            println!("bound_vs_labels {}", short(bounds::bound_vs_labels(loss, lambda).value));
            println!("bound_vs_optimal {}", short(bounds::bound_vs_optimal(lambda).value));
            Ok(())
        }
        Command::GenGrf {
            n,
            sigma,
            sigma_y,
            lengthscale,
            seed,
            out,
        } => {
            let spec = KernelSpec::squared_exponential(lengthscale)?;
            let d = data::gen_grf::<f64>(n, sigma, sigma_y, &spec, seed)?;
            data::write_labeled_csv(out, &d.x, &d.y, &[])
        }
        Command::GenClusters { n, sigma, seed, out } => {
            let d = data::gen_two_clusters::<f64>(n, sigma, seed)?;
            data::write_labeled_csv(out, &d.x, &d.y, &[])
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
