//! The transformer prompt-retrieval policy and its selection rules.

mod config;
mod model;
mod select;

pub use config::RetrieverConfig;
pub use model::Retriever;
pub use select::{sample_indices, sample_set, select_topk, sequence_log_prob, SelectionOutcome};
