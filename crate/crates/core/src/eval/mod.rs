//! Automatic metrics and the adversarial evaluator.

pub mod adversarial;
pub mod metrics;
pub mod report;

pub use adversarial::{adversarial_eval, AdvConfig, AdvDiscriminator, AdvExample, AdvOutcome};
pub use metrics::{bleu_n, dist_n, ngram_counts, rouge_n_f, rouge_pair};
pub use report::{evaluate_all, parse_responses, read_responses, MetricsReport};
