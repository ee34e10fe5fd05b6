//! Knowledge-graph embeddings evaluated two ways: link prediction and
//! clustering of entity vectors against ground-truth labels.

pub mod kg;
pub mod lp;
pub mod model;
pub mod train;
pub mod cep;
pub mod stats;
pub mod datagen;
pub mod sweep;
