//! Lyapunov exponents of deep unbiased Leaky-ReLU networks and
//! critical-scale weight initialization.
//!
//! * [`quad`]: adaptive quadrature for the integral `I(d, a1, a2)`
//! * [`analytic`]: closed-form exponents, critical and He scales, large-width expansion
//! * [`ensembles`]: seeded Gaussian / Haar-orthogonal / uniform samplers and [`WeightStack`]
//! * [`dynamics`]: log-space forward passes and Monte-Carlo estimators
//! * [`initgen`]: critical-scale initialization, plain and candidate-sampled
//! * [`table`]: lookup tables of all derived quantities over a list of widths

pub mod activation;
pub mod analytic;
pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod initgen;
pub mod output;
pub mod quad;
pub mod table;

pub use activation::ActivationSlopes;
pub use analytic::{EnsembleKind, EnsembleSpec, LyapunovReport};
pub use dynamics::{MCEstimate, Trajectory, WeightSource};
pub use ensembles::{Matrix, RngStream, WeightStack};
pub use error::{Error, Result};
pub use quad::QuadSettings;
