//! Few-shot link prediction for entities that are new to a temporal
//! knowledge graph.
//!
//! The crate covers the whole pipeline: building out-of-graph splits from a
//! quadruple file, pre-training ComplEx embeddings on the background graph,
//! concept-aware episodic meta-training of a time-difference neighbourhood
//! encoder (plus four alternative encoders), and filtered ranking
//! evaluation. Gradients come from a small hand-written reverse-mode tape
//! that can be checked against finite differences.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod concept;
pub mod config;
pub mod data;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod manifest;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod trainer;

pub use config::TrainConfig;
pub use error::{FiltError, Result};
