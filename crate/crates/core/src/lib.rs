//! Online exchangeability testing with conformal test martingales.
//!
//! Conformity scores become conformal p-values ([`pvalue`]), a betting
//! martingale turns the p-values into a capital process ([`betting`]), and
//! alarm procedures watch that capital ([`detectors`]). [`schedules`]
//! combines three folds into retraining schedules, [`calibration`] derives
//! thresholds by simulation in the ideal setting, and [`experiments`]
//! measures detection delays on real data.

// `!(x > bound)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod betting;
pub mod calibration;
pub mod cli;
pub mod config;
pub mod conformity;
pub mod detectors;
pub mod error;
pub mod experiments;
pub mod io;
pub mod pvalue;
pub mod rank;
pub mod rng;
pub mod schedules;

pub use error::{Error, ErrorKind, Result};
