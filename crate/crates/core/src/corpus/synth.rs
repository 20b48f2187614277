//! Deterministic synthetic corpus with planted text-visual dependencies.
//!
//! Every turn draws a latent class `c`. Its image features sit on the class
//! centroid (a one-hot direction) plus Gaussian noise, its words come from the
//! class's vocabulary band, and optionally it ends with the first word of the
//! previous turn so that consecutive turns are linked.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{build_dataset, write_episode_records, Dataset, EpisodeRecord, TurnRecord};
use super::features::{CoarseFeatureStore, ObjectFeatureStore};
use super::vocab::{Vocabulary, NUM_SPECIAL};
use crate::error::CorpusError;

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const COARSE_FILE: &str = "coarse.vdf";
pub const OBJECTS_FILE: &str = "objects.vof";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSampling {
    /// Words drawn uniformly (with replacement) from the class band.
    Random,
    /// The first `tokens_per_turn` words of the band, in order: the words are
    /// a deterministic function of the class.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_episodes: usize,
    pub turns_min: usize,
    pub turns_max: usize,
    /// Total vocabulary size, specials included.
    pub vocab_size: usize,
    pub num_classes: usize,
    pub coarse_dim: usize,
    pub objects_per_image: usize,
    pub noise_scale: f64,
    pub tokens_per_turn: usize,
    pub band_sampling: BandSampling,
    pub copy_previous: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_episodes: 50,
            turns_min: 4,
            turns_max: 8,
            vocab_size: 7 + 4 * 2,
            num_classes: 4,
            coarse_dim: 8,
            objects_per_image: 3,
            noise_scale: 0.1,
            tokens_per_turn: 3,
            band_sampling: BandSampling::Random,
            copy_previous: true,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn band_size(&self) -> usize {
        (self.vocab_size - NUM_SPECIAL) / self.num_classes
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: &str| Err(CorpusError::SpecInvalid(m.to_string()));
        if self.turns_min < 2 {
            return fail("turns_min must be at least 2");
        }
        if self.turns_max < self.turns_min {
            return fail("turns_max must be at least turns_min");
        }
        if self.num_classes < 2 {
            return fail("at least 2 latent classes are required");
        }
        if self.vocab_size <= NUM_SPECIAL + self.num_classes {
            return fail("vocab_size must exceed 7 + num_classes");
        }
        if self.coarse_dim < self.num_classes {
            return fail("coarse_dim must be at least num_classes");
        }
        if self.objects_per_image == 0 {
            return fail("objects_per_image must be positive");
        }
        if self.tokens_per_turn == 0 {
            return fail("tokens_per_turn must be positive");
        }
        if self.band_sampling == BandSampling::Fixed && self.tokens_per_turn > self.band_size() {
            return fail("fixed band sampling needs tokens_per_turn <= band size");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return fail("noise_scale must be finite and non-negative");
        }
        Ok(())
    }

    /// Surface form of content word `k` (0-based, specials excluded).
    pub fn word(k: usize) -> String {
        format!("w{k:03}")
    }

    /// Band of content-word indices belonging to a class.
    pub fn band(&self, class: usize) -> std::ops::Range<usize> {
        let b = self.band_size();
        class * b..(class + 1) * b
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_tokens((0..self.vocab_size - NUM_SPECIAL).map(Self::word))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticSpec,
    pub band_size: usize,
    /// Latent class of every turn, per episode.
    pub classes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub records: Vec<EpisodeRecord>,
    pub vocab: Vocabulary,
    pub dataset: Dataset,
    pub coarse: CoarseFeatureStore,
    pub objects: ObjectFeatureStore,
    pub manifest: Manifest,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.coarse_dim;
    let mut records = Vec::with_capacity(spec.num_episodes);
    let mut classes = Vec::with_capacity(spec.num_episodes);
    let mut coarse = Vec::new();
    let mut objects = Vec::new();
    let noisy = |rng: &mut ChaCha8Rng, class: usize| -> Vec<f32> {
        (0..dim)
            .map(|d| {
                let z: f64 = StandardNormal.sample(rng);
                let centre = if d == class { 1.0 } else { 0.0 };
                (centre + spec.noise_scale * z) as f32
            })
            .collect()
    };

    let mut image = 0;
    for e in 0..spec.num_episodes {
        let n = rng.gen_range(spec.turns_min..=spec.turns_max);
        let mut turns = Vec::with_capacity(n);
        let mut ep_classes = Vec::with_capacity(n);
        let mut prev_first: Option<usize> = None;
        for _ in 0..n {
            let class = rng.gen_range(0..spec.num_classes);
            let band = spec.band(class);
            let mut words: Vec<usize> = match spec.band_sampling {
                BandSampling::Random => (0..spec.tokens_per_turn).map(|_| rng.gen_range(band.clone())).collect(),
                BandSampling::Fixed => band.clone().take(spec.tokens_per_turn).collect(),
            };
            let first = words[0];
            if spec.copy_previous {
                if let Some(p) = prev_first {
                    words.push(p);
                }
            }
            prev_first = Some(first);
            coarse.extend(noisy(&mut rng, class));
            let objs: Vec<f32> = (0..spec.objects_per_image).flat_map(|_| noisy(&mut rng, class)).collect();
            objects.push(objs);
            turns.push(TurnRecord {
                text: words.iter().map(|&w| SyntheticSpec::word(w)).collect::<Vec<_>>().join(" "),
                coarse: image,
                objects: image,
            });
            ep_classes.push(class);
            image += 1;
        }
        records.push(EpisodeRecord { id: format!("syn-{e:05}"), turns });
        classes.push(ep_classes);
    }

    let coarse = CoarseFeatureStore::new(dim, coarse)?;
    let objects = ObjectFeatureStore::new(dim, &objects)?;
    let vocab = spec.vocabulary();
    let dataset = build_dataset(&records, &vocab, Some(&coarse), Some(&objects))?;
    let manifest = Manifest { spec: spec.clone(), band_size: spec.band_size(), classes };
    Ok(SyntheticCorpus { records, vocab, dataset, coarse, objects, manifest })
}

impl SyntheticCorpus {
    /// Writes the episodes file, both feature files, the vocabulary and the manifest.
    pub fn write_to(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        write_episode_records(&dir.join(EPISODES_FILE), &self.records)?;
        self.coarse.save(&dir.join(COARSE_FILE))?;
        self.objects.save(&dir.join(OBJECTS_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        std::fs::write(&path, json + "\n").map_err(|e| CorpusError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_specs() {
        for bad in [
            SyntheticSpec { turns_min: 1, ..Default::default() },
            SyntheticSpec { num_classes: 1, ..Default::default() },
            SyntheticSpec { vocab_size: 7 + 4, ..Default::default() },
            SyntheticSpec { coarse_dim: 3, ..Default::default() },
            SyntheticSpec { turns_max: 3, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(CorpusError::SpecInvalid(_))), "{bad:?}");
        }
    }

    #[test]
    fn episode_counts_and_lengths() {
        let c = generate_synthetic(&SyntheticSpec { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(c.dataset.len(), 50);
        assert!(c.dataset.episodes.iter().all(|e| (4..=8).contains(&e.turns.len())));
        assert_eq!(c.vocab.len(), c.manifest.spec.vocab_size);
    }

    #[test]
    fn identical_seeds_give_identical_bytes() {
        let spec = SyntheticSpec { seed: 11, num_episodes: 5, ..Default::default() };
        let (a, b) = (generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        assert_eq!(a.coarse.to_bytes(), b.coarse.to_bytes());
        assert_eq!(a.objects.to_bytes(), b.objects.to_bytes());
        assert_eq!(a.records, b.records);
        let other = generate_synthetic(&SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn copied_word_links_consecutive_turns() {
        let c = generate_synthetic(&SyntheticSpec { seed: 5, ..Default::default() }).unwrap();
        for ep in &c.dataset.episodes {
            for w in ep.turns.windows(2) {
                assert_eq!(w[1].tokens.last(), w[0].tokens.first());
            }
        }
    }

    /// Counting oracle: the band that dominates the words of each latent class
    /// is that class's generating band.
    #[test]
    fn dominant_band_matches_class() {
        let spec = SyntheticSpec { seed: 9, num_episodes: 200, ..Default::default() };
        let c = generate_synthetic(&spec).unwrap();
        let b = spec.band_size();
        let mut counts = vec![vec![0usize; spec.num_classes]; spec.num_classes];
        for (ep, classes) in c.records.iter().zip(&c.manifest.classes) {
            for (turn, &class) in ep.turns.iter().zip(classes) {
                for w in turn.text.split_whitespace() {
                    let k: usize = w[1..].parse().unwrap();
                    if k / b < spec.num_classes {
                        counts[class][k / b] += 1;
                    }
                }
            }
        }
        let matching = counts
            .iter()
            .enumerate()
            .filter(|(class, row)| row.iter().enumerate().max_by_key(|(_, &n)| n).unwrap().0 == *class)
            .count();
        assert!(matching as f64 >= 0.95 * spec.num_classes as f64);
    }

    #[test]
    fn fixed_bands_are_class_functions() {
        let spec = SyntheticSpec {
            seed: 1,
            band_sampling: BandSampling::Fixed,
            copy_previous: false,
            tokens_per_turn: 2,
            ..Default::default()
        };
        let c = generate_synthetic(&spec).unwrap();
        for (ep, classes) in c.records.iter().zip(&c.manifest.classes) {
            for (turn, &class) in ep.turns.iter().zip(classes) {
                let expect: Vec<String> = spec.band(class).take(2).map(SyntheticSpec::word).collect();
                assert_eq!(turn.text, expect.join(" "));
            }
        }
    }
}
