//! Question-conditioned subgraph retrieval and iterative reasoning over a
//! knowledge graph.

mod error;

pub mod backend;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod embed;
pub mod encoder;
pub mod extract;
pub mod kg;
pub mod orchestrator;
pub mod selector;

pub use error::{CoreError, Result};
