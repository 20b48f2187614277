//! Backward utterance model and visual-match discriminators for MI reranking.

pub mod backward;
pub mod disc;

pub use backward::{backward_examples, backward_pairs, train_backward, BackwardModel};
pub use disc::{
    mean_pool_objects, sample_negatives, train_discriminator, visual_evidence, DiscConfig, DiscLayout, DiscObjective,
    Discriminator,
};
