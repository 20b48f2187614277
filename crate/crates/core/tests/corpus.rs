use proptest::prelude::*;
use vidial::corpus::vocab::{NUM_SPECIAL, UNK};
use vidial::corpus::{
    build_vocab, generate_synthetic, load_coarse_features, load_dataset, load_object_features, CoarseFeatureStore,
    ObjectFeatureStore, SyntheticSpec, Vocabulary,
};
use vidial::CorpusError;

fn vdf(count: u32, dim: u32, rows: usize) -> Vec<u8> {
    let mut b = b"VDF1".to_vec();
    b.extend_from_slice(&count.to_le_bytes());
    b.extend_from_slice(&dim.to_le_bytes());
    for i in 0..rows * dim as usize {
        b.extend_from_slice(&(i as f32 * 0.5).to_le_bytes());
    }
    b
}

fn vof(dim: u32, counts: &[u32]) -> Vec<u8> {
    let mut b = b"VOF1".to_vec();
    b.extend_from_slice(&(counts.len() as u32).to_le_bytes());
    b.extend_from_slice(&dim.to_le_bytes());
    for c in counts {
        b.extend_from_slice(&c.to_le_bytes());
        for i in 0..c * dim {
            b.extend_from_slice(&(i as f32).to_le_bytes());
        }
    }
    b
}

#[test]
fn vocabulary_examples() {
    let v = build_vocab(&["a b", "b c"], 100, 1);
    assert_eq!(&v.tokens()[NUM_SPECIAL..], ["b", "a", "c"]);
    assert_eq!(&build_vocab(&["a b", "b c"], 100, 2).tokens()[NUM_SPECIAL..], ["b"]);
    assert_eq!(build_vocab::<&str>(&[], 100, 1).len(), NUM_SPECIAL);
    assert_eq!(v.encode("b a"), vec![v.id("b").unwrap(), v.id("a").unwrap()]);
    assert_eq!(v.encode("zzz"), vec![UNK]);
    assert!(v.encode("").is_empty());
}

#[test]
fn coarse_file_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.vdf");
    std::fs::write(&p, vdf(2, 4, 2)).unwrap();
    let s = load_coarse_features(&p).unwrap();
    assert_eq!((s.count(), s.dim()), (2, 4));
    assert_eq!(s.row(1), &[2.0, 2.5, 3.0, 3.5]);

    let mut bad = vdf(2, 4, 2);
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(CoarseFeatureStore::from_bytes(&bad), Err(CorpusError::BadMagic { .. })));
    assert!(matches!(CoarseFeatureStore::from_bytes(&vdf(3, 4, 2)), Err(CorpusError::Truncated { .. })));
}

#[test]
fn object_file_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("o.vof");
    std::fs::write(&p, vof(3, &[2])).unwrap();
    let s = load_object_features(&p).unwrap();
    assert_eq!((s.count(), s.dim(), s.num_objects(0)), (1, 3, 2));
    assert_eq!(s.objects(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    assert!(matches!(ObjectFeatureStore::from_bytes(&vof(3, &[1, 0])), Err(CorpusError::EmptyObjectSet { image: 1 })));
    let short = vof(3, &[2]);
    assert!(matches!(
        ObjectFeatureStore::from_bytes(&short[..short.len() - 4]),
        Err(CorpusError::Truncated { .. })
    ));
}

#[test]
fn dataset_examples() {
    let dir = tempfile::tempdir().unwrap();
    let coarse = CoarseFeatureStore::new(2, vec![0.0; 4]).unwrap();
    let objects = ObjectFeatureStore::new(2, &[vec![0.0; 2], vec![0.0; 2]]).unwrap();
    let vocab = Vocabulary::from_tokens(["hi", "there"]);
    let write = |text: &str| {
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, text).unwrap();
        load_dataset(&p, &vocab, Some(&coarse), Some(&objects))
    };
    let ok = write(r#"{"id":"a","turns":[{"text":"hi","coarse":0,"objects":0},{"text":"there","coarse":1,"objects":1}]}"#);
    assert_eq!(ok.unwrap().len(), 1);
    let oob = write(r#"{"id":"a","turns":[{"text":"hi","coarse":2,"objects":0},{"text":"there","coarse":1,"objects":1}]}"#);
    assert!(matches!(oob, Err(CorpusError::IndexOutOfRange { field: "coarse", index: 2, count: 2, .. })));
    let short = write(r#"{"id":"a","turns":[{"text":"hi","coarse":0,"objects":0}]}"#);
    assert!(matches!(short, Err(CorpusError::EpisodeTooShort { turns: 1, .. })));
}

#[test]
fn synthetic_corpus_is_reproducible_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { num_episodes: 12, seed: 7, ..Default::default() };
    for name in ["a", "b"] {
        generate_synthetic(&spec).unwrap().write_to(&dir.path().join(name)).unwrap();
    }
    for f in ["episodes.jsonl", "coarse.vdf", "objects.vof", "vocab.txt", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let c = generate_synthetic(&spec).unwrap();
    let back = load_dataset(
        &dir.path().join("a/episodes.jsonl"),
        &Vocabulary::load(&dir.path().join("a/vocab.txt")).unwrap(),
        Some(&load_coarse_features(&dir.path().join("a/coarse.vdf")).unwrap()),
        Some(&load_object_features(&dir.path().join("a/objects.vof")).unwrap()),
    )
    .unwrap();
    assert_eq!(back, c.dataset);
}

#[test]
fn class_bands_dominate_their_turns() {
    let c = generate_synthetic(&SyntheticSpec { num_episodes: 80, seed: 2, ..Default::default() }).unwrap();
    let spec = &c.manifest.spec;
    let mut counts = vec![vec![0usize; spec.num_classes]; spec.num_classes];
    for (ep, classes) in c.dataset.episodes.iter().zip(&c.manifest.classes) {
        for (turn, &class) in ep.turns.iter().zip(classes) {
            for &id in &turn.tokens {
                let word = id as usize - NUM_SPECIAL;
                counts[class][word / spec.band_size()] += 1;
            }
        }
    }
    let matching = (0..spec.num_classes)
        .filter(|&k| (0..spec.num_classes).max_by_key(|&b| counts[k][b]) == Some(k))
        .count();
    assert!(matching as f64 >= 0.95 * spec.num_classes as f64);
}

proptest! {
    #[test]
    fn coarse_store_round_trips(count in 1usize..6, dim in 1usize..5, seed in 0u32..1000) {
        let data: Vec<f32> = (0..count * dim).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e9).collect();
        let store = CoarseFeatureStore::new(dim, data).unwrap();
        let bytes = store.to_bytes();
        prop_assert_eq!(CoarseFeatureStore::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn object_store_round_trips(counts in prop::collection::vec(1usize..4, 1..5), dim in 1usize..4) {
        let images: Vec<Vec<f32>> = counts.iter().map(|&m| (0..m * dim).map(|i| i as f32 - 1.5).collect()).collect();
        let store = ObjectFeatureStore::new(dim, &images).unwrap();
        let bytes = store.to_bytes();
        prop_assert_eq!(ObjectFeatureStore::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn encoding_stays_in_vocabulary(text in "[a-e ]{0,30}") {
        let v = build_vocab(&["a b c", "c d"], 100, 1);
        for id in v.encode(&text) {
            prop_assert!((id as usize) < v.len());
            prop_assert!(id as usize >= NUM_SPECIAL || id == UNK);
        }
    }
}
