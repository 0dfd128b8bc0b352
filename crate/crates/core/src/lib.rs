//! Topic models for market-basket data.
//!
//! Baskets are treated as documents and products as words. The crate
//! trains latent Dirichlet allocation with collapsed Gibbs sampling, scores
//! topics by held-out perplexity, coherence, distinctiveness and
//! credibility, and summarizes many posterior draws by clustering their
//! topics into recurring groups.

pub mod artifacts;
pub mod cards;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod fmt;
pub mod gibbs;
pub mod heldout;
pub mod matrix;
pub mod metrics;
pub mod plot;
pub mod rng;
pub mod summary;

pub use corpus::{CoocStats, Corpus, Vocabulary};
pub use error::{Error, Result};
pub use gibbs::{ChainConfig, HyperParams, PosteriorSample};
pub use heldout::HeldoutConfig;
pub use matrix::Matrix;
pub use summary::{ClusteredModel, MergeMode, TopicCluster, TopicPool};
