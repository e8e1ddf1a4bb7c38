//! Rational MIMO system identification from sampled input/output records with
//! non-vanishing initial conditions.
//!
//! The main entry point is [`fitting::rtvf_fit`]; [`fitting::tdvf_fit`] and
//! [`fitting::arx_fit`] are the baselines. [`oracle`] produces exact reference
//! data and [`metrics`] scores fitted models against it.

pub mod error;
pub mod filterbank;
pub mod fitting;
pub mod metrics;
pub mod modelops;
pub mod oracle;
pub mod par;
pub mod regression;
pub mod sigcore;

pub use error::{Error, Result};
pub use filterbank::FilterRule;
pub use fitting::{arx_fit, rtvf_fit, tdvf_fit, ArxModel, FitReport};
pub use par::Execution;
pub use sigcore::{
    split_bias, validate_grid, BiasRecord, FitConfig, PoleInit, PoleKind, PoleSet, RationalModel, Relocation,
    Solver, StateSpaceModel, TimeSeries,
};
