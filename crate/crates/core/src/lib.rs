//! Sequential principal curves analysis (SPCA) with a density-tunable local
//! metric: an invertible nonlinear manifold transform, plus the synthetic
//! generators, linear baselines, information/error scores, and the
//! psychophysics-simulation harness built on top of it.
//!
//! The transform unfolds a data manifold along a sequence of locally
//! orthogonal principal curves and measures lengths along them with the
//! marginal density raised to an exponent `gamma`: `gamma = 0` preserves the
//! Euclidean metric (pure unfolding), `gamma = 1` equalizes the responses
//! (infomax), and `gamma = 1/3` minimizes quantization error under limited
//! resolution.

pub mod analysis;
pub mod curve;
pub mod datagen;
pub mod error;
pub mod manifold;
pub mod model;
pub mod psychophysics;
pub mod sample;

pub use curve::{CurveParams, GeodesicProjection, PrincipalCurve};
pub use error::{Error, Result};
// model re-exports added with the model module
pub use sample::SampleSet;
