//! Loading, indexing, batching and corrupting multi-modal knowledge graphs.

pub mod batch;
pub mod corrupt;
pub mod dataset;
pub mod features;
pub mod filter;
pub mod synthetic;
pub mod triples;

pub use batch::{make_batches, TripleBatch};
pub use corrupt::{corrupt_features_missing, corrupt_features_noise, sparsify_triples};
pub use dataset::{DataPaths, Dataset};
pub use features::{load_features, FeatureEncoding, FeatureOptions, FeatureTable, Standardization};
pub use filter::{build_filter_index, FilterIndex};
pub use triples::{load_triples, Split, Triple, TripleStore, Vocab};
