//! Sentence retrieval for open-ended dialogues.
//!
//! Given the turns of a conversation, the crate retrieves corpus sentences
//! that are useful for writing the next turn. The pieces:
//!
//! * [`corpus`]: sectioned documents, text analysis, inverted index.
//! * [`dialogue`]: threads, dialogue distillation and filtering.
//! * [`lm`]: unigram language models and the dialogue mixtures.
//! * [`retrieval`]: the two-stage initial ranker.
//! * [`rerank`]: last-turn rerankers, reciprocal rank fusion, and the
//!   external scorer protocol.
//! * [`weaklabel`]: pseudo-relevance labels from grounded conversations.
//! * [`eval`]: metrics, splits, significance testing, tuning.

pub mod corpus;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod lm;
pub mod ranked;
pub mod rerank;
pub mod retrieval;
pub mod weaklabel;

pub use error::{Error, Result};
pub use ranked::{RankedItem, RankedList};
