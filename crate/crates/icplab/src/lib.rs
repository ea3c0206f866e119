//! A laboratory for inductive conformal prediction over a small neural
//! network.
//!
//! The pieces, bottom up: forest-cover data handling with balancing and
//! min-max scaling ([`data`]), a from-scratch multilayer perceptron with
//! sigmoid outputs ([`mlp`]), conformal calibration and prediction sets
//! ([`icp`]), three ways of splitting examples between training and
//! calibration ([`partition`]), per-run quality measures ([`metrics`]), a
//! seeded repetition harness with CSV tables ([`experiment`]), its TOML
//! configuration ([`config`]), and SVG charts ([`plot`]).

pub mod config;
pub mod data;
pub mod experiment;
pub mod icp;
pub mod metrics;
pub mod mlp;
pub mod partition;
pub mod plot;
