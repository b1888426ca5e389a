//! Synthetic continual-learning workloads and their evaluation metrics.
//!
//! Two data generators feed the experiments. The biography protocol renders
//! fixed-format fact statements and question-answer lines about synthetic
//! people, split into a pretraining population and two disjoint fine-tuning
//! tasks; retention is measured as hard first-token accuracy on the earlier
//! task's questions. The two-domain corpus pairs token languages with
//! disjoint dominant vocabulary ranges and distinct bigram transitions, so
//! perplexity on held-out domain A tracks forgetting while domain B tracks
//! learning. A depth-expansion baseline (duplicated layers with zeroed
//! output projections, only the duplicates trainable) is included for
//! contrast with width expansion.

mod bios;
mod depth;
mod domains;
mod eval;

pub use bios::{
    gen_biographies, Attribute, BioData, BioSplit, BioVocab, Person, QaItem, ANSWER_POS,
    ATTRIBUTES, SEQ_TOKENS,
};
pub use depth::expand_depth;
pub use domains::{gen_domain_corpora, DomainConfig, DomainCorpora};
pub use eval::{
    hard_first_token_accuracy, perplexity, read_eval_records, representation_cosine, EvalModel,
    EvalRecord,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Train(#[from] crate::learning::TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    /// A metric was asked for something its definition excludes, such as an
    /// empty evaluation set or mismatched model shapes.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("requested {requested} persons but the name pools only admit {available}")]
    Combinatorics { requested: usize, available: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;
