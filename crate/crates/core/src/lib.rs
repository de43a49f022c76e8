//! Event-aware multimodal mobility nowcasting.
//!
//! The crate is organized bottom-up: [`tensor`] provides the differentiable
//! numeric core, [`graph`] and [`recurrent`] build graph-convolutional
//! recurrent layers on top of it, [`memory`] adds prototype-memory
//! attention and dynamic filter generation, and [`models`] assembles the
//! five-variant ladder. [`data`] and [`train`] cover synthetic data,
//! windowing, training, baselines and reporting.

pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod memory;
pub mod models;
pub mod params;
pub mod recurrent;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
