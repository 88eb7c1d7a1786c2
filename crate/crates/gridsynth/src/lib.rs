//! Probabilistic synthetic power distribution grid generation.
//!
//! Pipeline: OpenStreetMap ingestion -> radial georeferenced topology ->
//! Bayesian hierarchical models over hop zones -> ensemble synthesis ->
//! three-phase power flow validation -> hosting capacity analysis ->
//! export to simulator formats.

pub mod bayes;
pub mod cli;
pub mod geo;
pub mod gridio;
pub mod hostcap;
pub mod osm;
pub mod phase;
pub mod powerflow;
pub mod synthesis;
pub mod topology;
