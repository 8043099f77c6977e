//! Command-line harness: dataset generation, training, hyperbolicity
//! analysis and hierarchy evaluation over the synthetic concept tree.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod train;
pub mod analyze;
pub mod eval;
