//! Item-to-item retrieval on a behavioral item graph.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! 1. [`ingest`]: parse click/search logs, filter spam, generate planted synthetic data.
//! 2. [`graph`] and [`cf`]: build the directed item graph from product-page click pairs
//!    and densify it with Swing and search co-click edges.
//! 3. [`sampler`] and [`model`]: sample random-walk neighborhoods and negatives, then train
//!    a linear neighbor-averaging graph network with a cosine softmax loss.
//! 4. [`tail`]: populate embeddings for items the model never saw.
//! 5. [`eval`]: exact KNN retrieval, link-prediction AUC and unique recall.

pub mod cf;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod sampler;
pub mod tail;

pub use embeddings::{EmbeddingStore, Provenance};
pub use error::{Error, Result};
pub use features::NodeFeatureStore;
pub use graph::{EdgeAttr, EdgeSource, ItemGraph};
pub use ingest::{ClickEvent, SearchEvent};
