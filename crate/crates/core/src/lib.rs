//! Calibration and analysis of a binary-choice social-contagion model of
//! smoking prevalence.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] – the contagion vector field and the individual-utility laws.
//! * [`integrator`] – adaptive Dormand–Prince integration of the scalar ODE.
//! * [`stats`] – OLS, Pearson correlation, Grubbs test, Student-t machinery.
//! * [`dataio`] – CSV ingestion, consumption→prevalence regression, quality gate.
//! * [`calibrate`] – alternating bounded least-squares fit of local and universal parameters.
//! * [`analysis`] – average slope, peak year, correlation study, utility-law comparison.
//! * [`cli`], [`plot`], [`config`], [`synth`], [`bundled`] – command-line support.

pub mod analysis;
pub mod bundled;
pub mod calibrate;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod integrator;
pub mod lm;
pub mod model;
pub mod plot;
pub mod special;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
