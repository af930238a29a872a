//! Stochastic lane-departure modeling and controller evaluation.
//!
//! The pipeline has three stages:
//!
//! 1. **Behavior model.** Departure-event time series `(t, y, v, c)` are
//!    reduced to 8-dimensional feature vectors by constrained least-squares
//!    fits ([`features`]), and the feature population is modeled by a
//!    bounded (box-truncated) Gaussian mixture fitted with a
//!    truncated-moment EM ([`bgm`]).
//! 2. **Synthesis.** New departure events are sampled from the fitted
//!    mixture and reconstructed into full time series ([`synthesis`]).
//! 3. **Evaluation.** A preview-steering lane-departure-correction law
//!    ([`controller`]) on a linear bicycle model ([`vehicle`]) is run over
//!    generated corpora, and controlled vs. uncontrolled departure areas
//!    are compared ([`evaluation`]).

pub mod bgm;
pub mod controller;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gaussian;
pub mod io;
pub mod norm;
pub mod qmc;
pub mod synthesis;
pub mod truncated;
pub mod vehicle;

pub use error::{Error, ErrorKind, Result};
pub use features::{DepartureEvent, FeatureVector, Side, TrajectorySample};
