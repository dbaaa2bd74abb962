//! Synthetic query generation, filtering, retrieval and evaluation for
//! Vietnamese legal passage retrieval.

pub mod bm25;
pub mod config;
pub mod contrastive;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod io;
pub mod kmeans;
pub mod late_interaction;
pub mod metrics;
pub mod pipeline;
pub mod pretrain;
pub mod query_filter;
pub mod query_gen;
pub mod retrieval;
pub mod seed;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
