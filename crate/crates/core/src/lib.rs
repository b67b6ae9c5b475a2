//! Joint optimal stratification and minimum-cost multivariate sample allocation.
//!
//! A population frame is split into domains; inside each domain the Cartesian
//! product of categorical auxiliary variables defines *atomic strata*. Any
//! partition of the atomic strata is a candidate stratification, scored by the
//! smallest integer allocation that keeps the coefficient of variation of
//! every target total under its limit. The partition space is searched with
//! either a classical label-vector genetic algorithm or a grouping genetic
//! algorithm, and small instances can be certified by exhaustive enumeration.
//!
//! Module map:
//!
//! - [`frame`]: loading, variable roles, 1-D k-means discretization, domain split.
//! - [`strata`]: atomic strata, pooled statistics, chromosome decoding.
//! - [`allocation`]: Bethel-Chromy allocation under CV constraints.
//! - [`evolve`]: GA / GGA operators and the elitist generational loop.
//! - [`oracle`]: restricted-growth-string enumeration and brute-force optimum.
//! - [`evaluate`]: repeated stratified sampling to check expected CVs.
//! - [`pipeline`]: per-domain orchestration, file emission and timing.
//! - [`synthetic`]: seeded generator for a municipality-shaped test frame.

pub mod allocation;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod evolve;
pub mod frame;
pub mod oracle;
pub mod pipeline;
pub mod strata;
pub mod synthetic;

pub use error::{Error, Result};
