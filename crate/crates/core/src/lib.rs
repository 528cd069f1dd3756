//! Kernel ridge regression dataset distillation through random Fourier features.
//!
//! The crate builds small synthetic datasets `(S, y_S)` whose kernel predictor
//! reproduces the kernel ridge regression fit of a much larger dataset
//! `(X, y)`. Two routes are provided:
//!
//! * a closed-form construction ([`distill`]) that picks `s_phi + 1` points,
//!   solves for labels so the ridge solution in random-Fourier-feature space
//!   is unchanged, and then solves for kernel expansion coefficients that hit
//!   the same feature-space target;
//! * gradient-based optimisation of the points and labels against the
//!   regularised kernel-inducing-points loss ([`optdistill`]).
//!
//! Error bounds for the constructed set are evaluated by
//! [`distill::bounds`]. Data generators, the MNIST IDX reader and the sweep
//! harness behind the command-line tool live in [`data`] and [`experiment`].
//!
//! All numerical code is generic over a [`Real`] scalar (`f32` or `f64`).
//! The aliases at the crate root pin the scalar to `f64`, which is what the
//! experiments use: regularisers as small as `1e-5` are not resolvable in
//! single precision against `O(1)` losses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod krr;
pub mod numerics;
pub mod optdistill;
pub mod rff;
pub mod rng;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub use error::{Error, ErrorClass, Result};

/// Floating point scalar the numerical modules are generic over.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Machine epsilon, widened to `f64`.
    const EPSILON: f64;

    /// Converts an `f64` constant into `Self`, rounding if needed.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 constant representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::lit(v as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const EPSILON: f64 = f32::EPSILON as f64;
}

impl Real for f64 {
    const EPSILON: f64 = f64::EPSILON;
}

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
pub type KernelSpec = kernel::KernelSpec<f64>;
pub type FeatureMap = rff::FeatureMap<f64>;
pub type RffRidgeModel = rff::RffRidgeModel<f64>;
pub type KrrModel = krr::KrrModel<f64>;
pub type DistilledSet = distill::DistilledSet<f64>;
pub type LabeledData = data::LabeledData<f64>;

pub use distill::BoundReport;
pub use optdistill::{OptConfig, OptTrace};
