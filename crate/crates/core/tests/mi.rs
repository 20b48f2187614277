use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidial::corpus::{generate_synthetic, Dataset, Episode, SyntheticSpec};
use vidial::mi::{
    backward_pairs, mean_pool_objects, sample_negatives, train_backward, train_discriminator, BackwardModel,
    DiscConfig, DiscObjective, Discriminator,
};
use vidial::optim::OptimConfig;
use vidial::seqmodel::{assemble_text, FeatureStores, Mode, ModelConfig, Seq2Seq};
use vidial::{Matrix, TrainError};

fn optim(lr: f64, warmup: usize, batch: usize, steps: usize) -> OptimConfig {
    OptimConfig { peak_lr: lr, warmup, batch_size: batch, max_steps: steps, ..OptimConfig::default() }
}

#[test]
fn pooling_examples() {
    let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]);
    assert_eq!(mean_pool_objects(&m).unwrap(), vec![2.0, 4.0]);
    assert_eq!(mean_pool_objects(&Matrix::from_rows(&[vec![7.0, 0.0, -1.0]])).unwrap(), vec![7.0, 0.0, -1.0]);
    let scaled = Matrix::from_rows(&[vec![2.5, 7.5], vec![7.5, 12.5]]);
    assert_eq!(mean_pool_objects(&scaled).unwrap(), vec![5.0, 10.0]);
    assert!(mean_pool_objects(&Matrix::<f64>::zeros(0, 2)).is_err());
}

#[test]
fn negative_sampling_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let one = sample_negatives(&mut rng, &[1, 2, 3], 2, 1).unwrap();
        assert!(one == [1] || one == [3]);
        let mut two = sample_negatives(&mut rng, &[1, 2, 3], 2, 2).unwrap();
        two.sort();
        assert_eq!(two, [1, 3]);
    }
    assert!(matches!(sample_negatives(&mut rng, &[2], 2, 1), Err(TrainError::NoNegativesAvailable { .. })));
}

#[test]
fn zero_head_losses() {
    let mut d: Discriminator<f64> = Discriminator::new(DiscConfig::tiny(Mode::Cv, 12, 4), 0).unwrap();
    d.zero_head();
    let pos = vec![(vec![7, 8, 9], vec![0.1, 0.2, 0.3, 0.4])];
    let neg = vec![vec![vec![1.0, 0.0, 0.0, 0.0]]];
    let bce = d.disc_loss(&pos, &neg, DiscObjective::Bce).unwrap();
    assert!((bce - 4.0f64.ln()).abs() < 1e-12);
    assert_eq!(d.disc_loss(&pos, &neg, DiscObjective::PaperLiteral).unwrap(), 0.0);
}

#[test]
fn bce_training_separates_matched_pairs() {
    let spec = SyntheticSpec {
        num_episodes: 60,
        seed: 1,
        num_classes: 32,
        vocab_size: 7 + 64,
        coarse_dim: 32,
        ..Default::default()
    };
    let c = generate_synthetic(&spec).unwrap();
    let stores = FeatureStores { coarse: Some(&c.coarse), objects: Some(&c.objects) };
    let cfg = DiscConfig::tiny(Mode::Cv, c.vocab.len(), c.coarse.dim());
    let (disc, curve) = train_discriminator::<f32>(&c.dataset, stores, cfg, &optim(3e-3, 100, 32, 2000)).unwrap();
    assert_eq!(curve.len(), 2000);
    let tail = curve[1900..].iter().sum::<f64>() / 100.0;
    assert!(tail < 0.2, "final bce {tail}");

    let ep = &c.dataset.episodes[0];
    for t in &ep.turns {
        let f: Vec<f32> = c.coarse.row(t.coarse_idx).to_vec();
        assert!(disc.q_score(&t.tokens, &f).unwrap() <= 0.0);
    }
}

#[test]
fn backward_pairs_reverse_turns() {
    let c = generate_synthetic(&SyntheticSpec { num_episodes: 1, turns_min: 3, turns_max: 3, ..Default::default() })
        .unwrap();
    let t = &c.dataset.episodes[0].turns;
    assert_eq!(
        backward_pairs(&c.dataset),
        vec![(t[1].tokens.clone(), t[0].tokens.clone()), (t[2].tokens.clone(), t[1].tokens.clone())]
    );
}

#[test]
fn backward_model_learns_the_copied_token() {
    let c = generate_synthetic(&SyntheticSpec { num_episodes: 70, seed: 9, ..Default::default() }).unwrap();
    let (train, test) = c.dataset.split_tail(20);
    let cfg = ModelConfig::tiny(Mode::Nv, c.vocab.len(), 0);
    let (bm, _) = train_backward::<f32>(&train, cfg, &optim(3e-3, 100, 16, 600)).unwrap();
    let uniform = 1.0 / c.vocab.len() as f64;
    let (mut sum, mut n) = (0.0, 0);
    for (next, prev) in backward_pairs(&test) {
        let lp = bm.token_logprobs(&next, &prev).unwrap();
        assert_eq!(lp.len(), prev.len());
        sum += (lp[0] as f64).exp();
        n += 1;
        let score = bm.backward_score(&next, &prev).unwrap() as f64;
        let resummed: f64 = lp.iter().map(|&l| (l as f64).exp().ln()).sum();
        assert!((score - resummed).abs() < 1e-5);
    }
    let mean = sum / n as f64;
    assert!(mean > 2.0 * uniform, "copied-token probability {mean} vs uniform {uniform}");
}

#[test]
fn backward_single_pair_overfits() {
    let c = generate_synthetic(&SyntheticSpec { num_episodes: 1, ..Default::default() }).unwrap();
    let ep = &c.dataset.episodes[0];
    let pair = Dataset { episodes: vec![Episode { id: "p".into(), turns: ep.turns[..2].to_vec() }] };
    let cfg = ModelConfig::tiny(Mode::Nv, c.vocab.len(), 0);
    let (bm, _) = train_backward::<f32>(&pair, cfg, &optim(3e-3, 50, 1, 500)).unwrap();
    let (src, tgt) = &backward_pairs(&pair)[0];
    let a = assemble_text(std::slice::from_ref(src), bm.model.config()).unwrap();
    let nll = bm.model.sequence_nll(&a, tgt).unwrap();
    assert!(nll < 0.1, "{nll}");
    assert!(bm.backward_score(src, tgt).unwrap() > -0.3);
}

#[test]
fn backward_score_under_uniform_logits() {
    let mut m: Seq2Seq<f64> = Seq2Seq::new(ModelConfig::tiny(Mode::Nv, 100, 0), 0).unwrap();
    let (w, b) = (m.layout().out.w, m.layout().out.b);
    m.params_mut().get_mut(w).fill(0.0);
    m.params_mut().get_mut(b).fill(0.0);
    let bm = BackwardModel::new(m).unwrap();
    let s = bm.backward_score(&[10, 11], &[20, 21, 22]).unwrap();
    assert!((s + 3.0 * 100f64.ln()).abs() < 1e-12);
}
