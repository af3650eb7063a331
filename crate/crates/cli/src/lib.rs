//! Simulation studies, CSV ingestion and reports on top of `misclass-core`.

pub mod config;
pub mod estimators;
pub mod io;
pub mod report;
pub mod study;
