//! Feedback data model: users, episodes, responses, splits and their files.

mod dataset;
mod embeddings;

pub use dataset::{
    dedup_current, episode_similarity, split_disjointness_check, Dataset, FeedbackRecord,
    FeedbackTriple, Role, Split, SplitViolation, UserHistory,
};
pub use embeddings::{EmbeddingTable, EMBEDDING_MAGIC, EMBEDDING_VERSION, MAX_ID_BYTES};
