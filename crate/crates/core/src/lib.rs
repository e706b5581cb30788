//! Exact and asymptotic moment analysis of balanced generalized Polya urns.

pub mod asymptotics;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod exact_moments;
pub mod report;
pub mod simulator;
pub mod spectral;
pub mod urn_model;
