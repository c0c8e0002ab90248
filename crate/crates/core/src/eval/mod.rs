//! Metrics, the synthetic benchmark, the cone diagnostic and state aggregation.

pub mod aggregate;
pub mod benchmark;
pub mod cone;
pub mod ingest;
pub mod metrics;
