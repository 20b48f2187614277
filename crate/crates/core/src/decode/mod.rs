//! Beam-search N-best generation and MI reranking.

pub mod beam;
pub mod generate;
pub mod rerank;

pub use beam::{beam_nbest, rank_order, BeamConfig, Hypothesis, NBestList};
pub use generate::{generate_split, responses_to_string, write_responses, MiConfig, ResponseRecord};
pub use rerank::{rerank, select, RerankWeights, Reranked, TermScores, VisualInput};
