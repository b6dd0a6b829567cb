//! Semi-supervised text classification with angular margin losses whose label
//! angle distributions are rescaled to a common variance.
//!
//! Pipeline: [`corpus`] reads JSONL and builds tf-idf features, [`encoder`] maps
//! them to representations, [`angular`] scores them against label weight
//! vectors, [`stats`] tracks per-label angle moments, [`pseudo`] and
//! [`regularizers`] supply the unlabeled-data terms, and [`trainer`] ties them
//! together. [`metrics`] and [`checkpoint`] cover evaluation and persistence.

pub mod angular;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod pseudo;
pub mod regularizers;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
