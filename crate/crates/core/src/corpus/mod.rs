//! Dialog data model, vocabulary, feature files and the synthetic corpus.

pub mod dataset;
pub mod features;
pub mod synth;
pub mod vocab;

pub use dataset::{
    build_dataset, load_dataset, parse_episode_records, read_episode_records, write_episode_records, Dataset,
    Episode, EpisodeRecord, Item, Turn, TurnRecord,
};
pub use features::{load_coarse_features, load_object_features, CoarseFeatureStore, ObjectFeatureStore};
pub use synth::{generate_synthetic, BandSampling, Manifest, SyntheticCorpus, SyntheticSpec};
pub use vocab::{build_vocab, Vocabulary};
