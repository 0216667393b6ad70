//! Regression and interpolation with scale-invariant processes.
//!
//! The core is generic over `f32`/`f64` through [`Scalar`]; the `*64` and
//! `*32` aliases below fix the precision.

// `!(a > b)` is how NaN gets rejected; dense kernels index freely
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod data;
pub mod error;
pub mod geometry;
pub mod interpolate;
pub mod linalg;
pub mod pipeline;
pub mod posterior;
pub mod predict;
pub mod sampler;
pub mod scalar;

pub use basis::SubspaceBasis;
pub use data::Dataset;
pub use error::{Error, Result};
pub use geometry::{Eta, InputFrame, MultiIndex};
pub use interpolate::{
    InterpolationModel, InterpolationPosterior, PointwisePosterior, PolyharmonicSpline, SaddleSystem, TestFunction,
};
pub use linalg::Matrix;
pub use pipeline::{FitConfig, FittedModel, NoiseSpec, Predictor};
pub use posterior::{NoiseModel, PosteriorDensity, Preconditioner};
pub use predict::CredibleBand;
pub use sampler::{Regime, RegressionPosterior, SamplerConfig};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type InterpolationModel64 = InterpolationModel<f64>;
pub type SubspaceBasis64 = SubspaceBasis<f64>;
pub type PosteriorDensity64 = PosteriorDensity<f64>;
pub type RegressionPosterior64 = RegressionPosterior<f64>;
pub type CredibleBand64 = CredibleBand<f64>;
pub type FittedModel64 = FittedModel<f64>;
pub type Dataset64 = Dataset<f64>;

pub type Matrix32 = Matrix<f32>;
pub type InterpolationModel32 = InterpolationModel<f32>;
pub type SubspaceBasis32 = SubspaceBasis<f32>;
pub type PosteriorDensity32 = PosteriorDensity<f32>;
pub type RegressionPosterior32 = RegressionPosterior<f32>;
pub type CredibleBand32 = CredibleBand<f32>;
pub type FittedModel32 = FittedModel<f32>;
pub type Dataset32 = Dataset<f32>;
