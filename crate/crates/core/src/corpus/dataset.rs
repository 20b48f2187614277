use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{CoarseFeatureStore, ObjectFeatureStore};
use super::vocab::{is_special, Vocabulary};
use crate::error::CorpusError;

/// One line of the episodes file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub id: String,
    pub turns: Vec<TurnRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnRecord {
    pub text: String,
    pub coarse: usize,
    pub objects: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub tokens: Vec<u32>,
    pub coarse_idx: usize,
    pub object_idx: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// A `(context, target)` position inside a dataset: the first `j` turns of
/// episode `episode` predict turn `j + 1` (1-based), i.e. `turns[j]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Item {
    pub episode: usize,
    pub j: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Every `(episode, j)` with `1 ≤ j < n`, in canonical order.
    pub fn items(&self) -> Vec<Item> {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (1..ep.turns.len()).map(move |j| Item { episode: e, j }))
            .collect()
    }

    pub fn subset(&self, ids: &[usize]) -> Dataset {
        Dataset { episodes: ids.iter().map(|&i| self.episodes[i].clone()).collect() }
    }

    /// Splits off the last `n_test` episodes.
    pub fn split_tail(&self, n_test: usize) -> (Dataset, Dataset) {
        let cut = self.episodes.len().saturating_sub(n_test);
        (
            Dataset { episodes: self.episodes[..cut].to_vec() },
            Dataset { episodes: self.episodes[cut..].to_vec() },
        )
    }
}

pub fn read_episode_records(path: &Path) -> Result<Vec<EpisodeRecord>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_episode_records(&text)
}

pub fn parse_episode_records(text: &str) -> Result<Vec<EpisodeRecord>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::MalformedRecord { line: i + 1, reason: e.to_string() })
        })
        .collect()
}

pub fn write_episode_records(path: &Path, records: &[EpisodeRecord]) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("episode records serialise");
        out.write_all(b"\n").expect("writing to a Vec");
    }
    std::fs::write(path, out).map_err(|e| CorpusError::io(path, e))
}

/// Encodes records and validates every feature index against the supplied
/// stores. A missing store skips validation of the matching index.
pub fn build_dataset(
    records: &[EpisodeRecord],
    vocab: &Vocabulary,
    coarse: Option<&CoarseFeatureStore>,
    objects: Option<&ObjectFeatureStore>,
) -> Result<Dataset, CorpusError> {
    let mut episodes = Vec::with_capacity(records.len());
    for (line, rec) in records.iter().enumerate() {
        if rec.turns.len() < 2 {
            return Err(CorpusError::EpisodeTooShort { episode: rec.id.clone(), turns: rec.turns.len() });
        }
        let mut turns = Vec::with_capacity(rec.turns.len());
        for t in &rec.turns {
            if let Some(c) = coarse {
                if t.coarse >= c.count() {
                    return Err(CorpusError::IndexOutOfRange {
                        episode: rec.id.clone(),
                        field: "coarse",
                        index: t.coarse,
                        count: c.count(),
                    });
                }
            }
            if let Some(o) = objects {
                if t.objects >= o.count() {
                    return Err(CorpusError::IndexOutOfRange {
                        episode: rec.id.clone(),
                        field: "objects",
                        index: t.objects,
                        count: o.count(),
                    });
                }
            }
            let tokens = vocab.encode(&t.text);
            if tokens.is_empty() {
                return Err(CorpusError::MalformedRecord { line: line + 1, reason: format!("empty turn in {}", rec.id) });
            }
            debug_assert!(tokens.iter().all(|&id| !is_special(id) || id == super::vocab::UNK));
            turns.push(Turn { tokens, coarse_idx: t.coarse, object_idx: t.objects });
        }
        episodes.push(Episode { id: rec.id.clone(), turns });
    }
    Ok(Dataset { episodes })
}

pub fn load_dataset(
    episodes_path: &Path,
    vocab: &Vocabulary,
    coarse: Option<&CoarseFeatureStore>,
    objects: Option<&ObjectFeatureStore>,
) -> Result<Dataset, CorpusError> {
    build_dataset(&read_episode_records(episodes_path)?, vocab, coarse, objects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;

    fn stores() -> (CoarseFeatureStore, ObjectFeatureStore) {
        (
            CoarseFeatureStore::new(2, vec![0.0; 6]).unwrap(),
            ObjectFeatureStore::new(2, &[vec![0.0; 2], vec![0.0; 4], vec![0.0; 2]]).unwrap(),
        )
    }

    #[test]
    fn loads_valid_episode() {
        let text = r#"{"id":"e1","turns":[{"text":"a b","coarse":0,"objects":0},{"text":"b","coarse":1,"objects":2}]}"#;
        let recs = parse_episode_records(text).unwrap();
        let vocab = build_vocab(&["a b b"], 32, 1);
        let (c, o) = stores();
        let ds = build_dataset(&recs, &vocab, Some(&c), Some(&o)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.items(), vec![Item { episode: 0, j: 1 }]);
    }

    #[test]
    fn rejects_bad_indices_and_short_episodes() {
        let vocab = build_vocab(&["a"], 32, 1);
        let (c, o) = stores();
        let bad = r#"{"id":"e","turns":[{"text":"a","coarse":3,"objects":0},{"text":"a","coarse":0,"objects":0}]}"#;
        let err = build_dataset(&parse_episode_records(bad).unwrap(), &vocab, Some(&c), Some(&o)).unwrap_err();
        assert!(matches!(err, CorpusError::IndexOutOfRange { field: "coarse", index: 3, .. }));

        let short = r#"{"id":"e","turns":[{"text":"a","coarse":0,"objects":0}]}"#;
        let err = build_dataset(&parse_episode_records(short).unwrap(), &vocab, Some(&c), Some(&o)).unwrap_err();
        assert!(matches!(err, CorpusError::EpisodeTooShort { turns: 1, .. }));
    }

    #[test]
    fn malformed_lines_report_position() {
        let text = "{\"id\":\"e\",\"turns\":[]}\nnot json\n";
        assert!(matches!(parse_episode_records(text), Err(CorpusError::MalformedRecord { line: 2, .. })));
    }

    #[test]
    fn items_follow_turn_counts() {
        let turn = Turn { tokens: vec![7], coarse_idx: 0, object_idx: 0 };
        let ds = Dataset {
            episodes: [2usize, 3, 4]
                .iter()
                .map(|&n| Episode { id: format!("e{n}"), turns: vec![turn.clone(); n] })
                .collect(),
        };
        assert_eq!(ds.items().len(), 1 + 2 + 3);
    }
}
