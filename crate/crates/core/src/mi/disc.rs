use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{Dataset, Turn};
use crate::error::{ModelError, TrainError};
use crate::nn::{AttnMask, EncoderBlock, Linear};
use crate::optim::OptimConfig;
use crate::params::{Init, Initializer, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::seqmodel::{FeatureStores, Mode};
use crate::tensor::Matrix;
use crate::train::run_training;

/// Training objective of the discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscObjective {
    /// `-[ln q(pos) + ln(1 - q(neg))]` with `q = exp(q_score)`.
    #[default]
    Bce,
    /// `-[ln q(pos) - ln q(neg)]`; unbounded below.
    PaperLiteral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    /// `Cv` scores coarse vectors, `Fv` mean-pooled object sets.
    pub kind: Mode,
    pub enc_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub vocab_size: usize,
    pub d_visual: usize,
    pub hidden: usize,
    pub objective: DiscObjective,
    /// Negatives drawn per positive.
    pub negatives: usize,
}

impl DiscConfig {
    pub fn base(kind: Mode, vocab_size: usize, d_visual: usize) -> Self {
        Self {
            kind,
            enc_layers: 3,
            heads: 8,
            d_model: 512,
            ffn_dim: 2048,
            dropout: 0.1,
            max_len: 64,
            vocab_size,
            d_visual,
            hidden: 512,
            objective: DiscObjective::Bce,
            negatives: 1,
        }
    }

    pub fn tiny(kind: Mode, vocab_size: usize, d_visual: usize) -> Self {
        Self {
            enc_layers: 2,
            heads: 2,
            d_model: 32,
            ffn_dim: 64,
            dropout: 0.0,
            max_len: 32,
            ..Self::base(kind, vocab_size, d_visual)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.kind == Mode::Nv {
            return fail("a discriminator scores CV or FV evidence");
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail("d_model must be divisible by heads");
        }
        if self.d_visual == 0 || self.hidden == 0 || self.max_len == 0 {
            return fail("d_visual, hidden and max_len must be positive");
        }
        if self.negatives == 0 {
            return fail("at least one negative per positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DiscLayout {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub enc: Vec<EncoderBlock>,
    pub fuse: Linear,
    pub score: Linear,
}

impl DiscLayout {
    fn build<T: Scalar>(cfg: &DiscConfig, store: &mut ParamStore<T>, seed: u64) -> Self {
        let d = cfg.d_model;
        let emb = 1.0 / (d as f64).sqrt();
        let mut init = Initializer::new(store, seed);
        let tok_emb = init.add("tok_emb", cfg.vocab_size, d, Init::Normal(emb));
        let pos_emb = init.add("pos_emb", cfg.max_len, d, Init::Normal(emb));
        let enc = (0..cfg.enc_layers)
            .map(|l| EncoderBlock::new(&mut init, &format!("enc.{l}"), d, cfg.heads, cfg.ffn_dim))
            .collect();
        let fuse = Linear::glorot(&mut init, "head.fuse", d + cfg.d_visual, cfg.hidden);
        let score = Linear::glorot(&mut init, "head.score", cfg.hidden, 1);
        Self { tok_emb, pos_emb, enc, fuse, score }
    }

    /// Token states `t_1..t_n` of the utterance.
    pub fn encode<T: Scalar>(&self, t: &mut Tape<'_, T>, cfg: &DiscConfig, ids: &[u32]) -> Result<Var, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange(bad));
        }
        let ids = &ids[..ids.len().min(cfg.max_len)];
        let n = ids.len();
        let tok = t.param(self.tok_emb);
        let x = t.gather_rows(tok, &ids.iter().map(|&i| i as usize).collect::<Vec<_>>());
        let pos = t.param(self.pos_emb);
        let pos = t.gather_rows(pos, &(0..n).collect::<Vec<_>>());
        let mut x = t.add(x, pos);
        x = t.dropout(x);
        let mask = AttnMask::keys(n, &vec![false; n]);
        for b in &self.enc {
            x = b.forward(t, x, &mask);
        }
        Ok(x)
    }

    /// Mean of `ln q_k` over tokens: a 1×1 node.
    pub fn q_score<T: Scalar>(&self, t: &mut Tape<'_, T>, states: Var, f: &[T]) -> Var {
        let n = t.value(states).rows();
        let f = t.constant(Matrix::from_vec(1, f.len(), f.to_vec()));
        let f = t.repeat_rows(f, n);
        let h = t.concat_cols(&[states, f]);
        let h = self.fuse.forward(t, h);
        let h = t.tanh(h);
        let logit = self.score.forward(t, h);
        let lq = t.log_sigmoid(logit);
        t.mean_rows(lq)
    }

    /// Loss of one positive against its negatives and the number of pairs.
    pub fn pair_loss<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        cfg: &DiscConfig,
        ids: &[u32],
        positive: &[T],
        negatives: &[&[T]],
        objective: DiscObjective,
    ) -> Result<(Var, usize), TrainError> {
        if negatives.is_empty() {
            return Err(TrainError::NoNegativesAvailable { needed: 1, available: 0 });
        }
        let states = self.encode(t, cfg, ids)?;
        let pos = self.q_score(t, states, positive);
        let mut terms = Vec::with_capacity(negatives.len());
        for neg in negatives {
            let s_neg = self.q_score(t, states, neg);
            let term = match objective {
                DiscObjective::Bce => {
                    let miss = t.log1m_exp(s_neg);
                    t.add(pos, miss)
                }
                DiscObjective::PaperLiteral => {
                    let neg = t.scale(s_neg, -T::one());
                    t.add(pos, neg)
                }
            };
            terms.push(term);
        }
        let all = if terms.len() == 1 { terms[0] } else { t.concat_rows(&terms) };
        let total = t.sum_all(all);
        Ok((t.scale(total, -T::one()), negatives.len()))
    }
}

/// Visual-match discriminator `q(f, x)`.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    cfg: DiscConfig,
    params: ParamStore<T>,
    layout: DiscLayout,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layout = DiscLayout::build(&cfg, &mut params, seed);
        Ok(Self { cfg, params, layout })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &DiscLayout {
        &self.layout
    }

    /// Zeroes both affine maps of the fusion head, so every `q_k` is 0.5.
    pub fn zero_head(&mut self) {
        let ids = [self.layout.fuse.w, self.layout.fuse.b, self.layout.score.w, self.layout.score.b];
        for id in ids {
            self.params.get_mut(id).fill(T::zero());
        }
    }

    fn check_visual(&self, f: &[T]) -> Result<(), ModelError> {
        if f.len() != self.cfg.d_visual {
            return Err(ModelError::DimMismatch { expected: self.cfg.d_visual, found: f.len() });
        }
        Ok(())
    }

    /// `(1/n) Σ_k ln q_k` for utterance `ids` against visual vector `f`.
    pub fn q_score(&self, ids: &[u32], f: &[T]) -> Result<T, ModelError> {
        self.check_visual(f)?;
        let mut t = Tape::new(&self.params);
        let s = self.layout.encode(&mut t, &self.cfg, ids)?;
        let q = self.layout.q_score(&mut t, s, f);
        Ok(t.scalar(q))
    }

    /// Per-token probabilities `q_k`.
    pub fn token_probs(&self, ids: &[u32], f: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_visual(f)?;
        let mut t = Tape::new(&self.params);
        let s = self.layout.encode(&mut t, &self.cfg, ids)?;
        let n = t.value(s).rows();
        let fv = t.constant(Matrix::from_vec(1, f.len(), f.to_vec()));
        let fv = t.repeat_rows(fv, n);
        let h = t.concat_cols(&[s, fv]);
        let h = self.layout.fuse.forward(&mut t, h);
        let h = t.tanh(h);
        let logit = self.layout.score.forward(&mut t, h);
        Ok(t.value(logit).data().iter().map(|&z| crate::autograd::sigmoid(z)).collect())
    }

    /// Mean over (positive, negative) pairs of the objective.
    pub fn disc_loss(
        &self,
        positives: &[(Vec<u32>, Vec<T>)],
        negatives: &[Vec<Vec<T>>],
        objective: DiscObjective,
    ) -> Result<T, TrainError> {
        if positives.is_empty() || positives.len() != negatives.len() {
            return Err(TrainError::NoNegativesAvailable { needed: positives.len().max(1), available: negatives.len() });
        }
        let (mut total, mut count) = (T::zero(), 0);
        for ((ids, f), negs) in positives.iter().zip(negatives) {
            self.check_visual(f)?;
            for n in negs {
                self.check_visual(n)?;
            }
            let mut t = Tape::new(&self.params);
            let refs: Vec<&[T]> = negs.iter().map(Vec::as_slice).collect();
            let (loss, k) = self.layout.pair_loss(&mut t, &self.cfg, ids, f, &refs, objective)?;
            total += t.scalar(loss);
            count += k;
        }
        Ok(total / T::of(count as f64))
    }
}

/// Coordinatewise mean of an `m × d` object matrix.
pub fn mean_pool_objects<T: Scalar>(objects: &Matrix<T>) -> Result<Vec<T>, ModelError> {
    if objects.rows() == 0 {
        return Err(ModelError::EmptyObjectSet);
    }
    let m = T::of(objects.rows() as f64);
    let mut out = vec![T::zero(); objects.cols()];
    for r in 0..objects.rows() {
        for (o, &v) in out.iter_mut().zip(objects.row(r)) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| v / m).collect())
}

/// The visual vector a discriminator of `kind` sees for `turn`: the coarse row, or the pooled objects.
pub fn visual_evidence<T: Scalar>(kind: Mode, turn: &Turn, stores: FeatureStores<'_>) -> Result<Vec<T>, ModelError> {
    match kind {
        Mode::Cv => {
            let c = stores.coarse.ok_or_else(|| ModelError::ModeMismatch("CV evidence needs coarse features".into()))?;
            Ok(c.row(turn.coarse_idx).iter().map(|&v| T::of(v as f64)).collect())
        }
        Mode::Fv => {
            let o = stores.objects.ok_or_else(|| ModelError::ModeMismatch("FV evidence needs object features".into()))?;
            let rows = o.objects(turn.object_idx);
            let m = Matrix::from_vec(rows.len() / o.dim(), o.dim(), rows.iter().map(|&v| T::of(v as f64)).collect());
            mean_pool_objects(&m)
        }
        Mode::Nv => Err(ModelError::ModeMismatch("NV carries no visual evidence".into())),
    }
}

/// `k` distinct image indices from `batch` other than `positive`, uniformly without replacement.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    batch: &[usize],
    positive: usize,
    k: usize,
) -> Result<Vec<usize>, TrainError> {
    let mut pool: Vec<usize> = batch.iter().copied().filter(|&i| i != positive).collect();
    pool.sort_unstable();
    pool.dedup();
    if pool.is_empty() || pool.len() < k {
        return Err(TrainError::NoNegativesAvailable { needed: k.max(1), available: pool.len() });
    }
    Ok(sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}

/// Image key identifying the visual evidence of a turn.
fn image_key(kind: Mode, turn: &Turn) -> usize {
    if kind == Mode::Fv {
        turn.object_idx
    } else {
        turn.coarse_idx
    }
}

/// Trains on every turn of `dataset` as a positive `(x, f)` pair, with
/// negatives drawn from the other images of the same batch.
pub fn train_discriminator<T: Scalar>(
    dataset: &Dataset,
    stores: FeatureStores<'_>,
    cfg: DiscConfig,
    optim: &OptimConfig,
) -> Result<(Discriminator<T>, Vec<f64>), TrainError> {
    let mut examples: Vec<(&[u32], usize)> = Vec::new();
    let mut features: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for ep in &dataset.episodes {
        for turn in &ep.turns {
            let key = image_key(cfg.kind, turn);
            if let std::collections::btree_map::Entry::Vacant(e) = features.entry(key) {
                e.insert(visual_evidence(cfg.kind, turn, stores)?);
            }
            examples.push((&turn.tokens, key));
        }
    }
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut disc = Discriminator::new(cfg, optim.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(optim.seed ^ 0x6e65_6761_7469_7665);
    let Discriminator { cfg, params, layout } = &mut disc;
    let curve = run_training(params, examples.len(), optim, cfg.dropout, |tape, i, batch| {
        let (ids, key) = examples[i];
        let keys: Vec<usize> = batch.iter().map(|&b| examples[b].1).collect();
        let negs = sample_negatives(&mut rng, &keys, key, cfg.negatives)?;
        let neg_refs: Vec<&[T]> = negs.iter().map(|k| features[k].as_slice()).collect();
        layout.pair_loss(tape, cfg, ids, &features[&key], &neg_refs, cfg.objective)
    })?;
    Ok((disc, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc() -> Discriminator<f64> {
        Discriminator::new(DiscConfig::tiny(Mode::Cv, 20, 4), 3).unwrap()
    }

    #[test]
    fn pooling() {
        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]);
        assert_eq!(mean_pool_objects(&m).unwrap(), vec![2.0, 4.0]);
        let one = Matrix::from_rows(&[vec![7.0, 0.0, -1.0]]);
        assert_eq!(mean_pool_objects(&one).unwrap(), vec![7.0, 0.0, -1.0]);
        assert!(matches!(mean_pool_objects(&Matrix::<f64>::zeros(0, 2)), Err(ModelError::EmptyObjectSet)));
        let scaled = Matrix::from_rows(&[vec![2.5, 7.5], vec![7.5, 12.5]]);
        assert_eq!(mean_pool_objects(&scaled).unwrap(), vec![5.0, 10.0]);
    }

    #[test]
    fn zero_head_scores_ln_half() {
        let mut d = disc();
        d.zero_head();
        let s = d.q_score(&[7, 8, 9], &[0.3, -1.0, 2.0, 0.0]).unwrap();
        assert!((s - 0.5f64.ln()).abs() < 1e-15);
        assert!((s + 0.6931).abs() < 1e-4);
        let f = vec![1.0, 0.0, 0.0, 0.0];
        let pos = vec![(vec![7, 8], f.clone())];
        let negs = vec![vec![vec![0.0, 1.0, 0.0, 0.0]]];
        let bce = d.disc_loss(&pos, &negs, DiscObjective::Bce).unwrap();
        assert!((bce - 4f64.ln()).abs() < 1e-12);
        assert!((bce - 1.3863).abs() < 1e-4);
        assert_eq!(d.disc_loss(&pos, &negs, DiscObjective::PaperLiteral).unwrap(), 0.0);
    }

    #[test]
    fn constant_token_probability_averages_exactly() {
        let mut d = disc();
        d.zero_head();
        let b = d.layout().score.b;
        d.params_mut().get_mut(b).data_mut()[0] = 1.3;
        let v = crate::autograd::sigmoid(1.3f64);
        let s = d.q_score(&[7, 8, 9, 10], &[0.0; 4]).unwrap();
        assert!((s - v.ln()).abs() < 1e-15);
        assert!(d.token_probs(&[7, 8], &[0.0; 4]).unwrap().iter().all(|&q| q > 0.0 && q < 1.0));
    }

    #[test]
    fn scores_are_log_probabilities() {
        let d = disc();
        for ids in [vec![7], vec![9, 10, 11, 12]] {
            assert!(d.q_score(&ids, &[1.0, -2.0, 0.5, 3.0]).unwrap() <= 0.0);
        }
        assert!(matches!(d.q_score(&[], &[0.0; 4]), Err(ModelError::EmptyUtterance)));
        assert!(matches!(d.q_score(&[7], &[0.0; 3]), Err(ModelError::DimMismatch { .. })));
    }

    #[test]
    fn negative_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let n = sample_negatives(&mut rng, &[1, 2, 3], 2, 1).unwrap();
            assert!(n == vec![1] || n == vec![3]);
        }
        let mut two = sample_negatives(&mut rng, &[1, 2, 3], 2, 2).unwrap();
        two.sort();
        assert_eq!(two, vec![1, 3]);
        assert!(matches!(sample_negatives(&mut rng, &[2], 2, 1), Err(TrainError::NoNegativesAvailable { .. })));
        assert!(matches!(sample_negatives(&mut rng, &[2, 2, 5], 2, 2), Err(TrainError::NoNegativesAvailable { .. })));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let d = disc();
        let ids = [7u32, 8, 11];
        let pos = [0.9, 0.1, -0.2, 0.0];
        let neg = [0.0, 1.1, 0.1, -0.3];
        for objective in [DiscObjective::Bce, DiscObjective::PaperLiteral] {
            let mut t = Tape::new(d.params());
            let (loss, _) = d.layout().pair_loss(&mut t, d.config(), &ids, &pos, &[&neg], objective).unwrap();
            let grads: BTreeMap<usize, Matrix<f64>> =
                t.backward(loss).into_iter().map(|(id, g)| (id.index(), g)).collect();
            let mut probe = d.clone();
            let eval = |p: &Discriminator<f64>| {
                p.disc_loss(&[(ids.to_vec(), pos.to_vec())], &[vec![neg.to_vec()]], objective).unwrap()
            };
            for id in [d.layout().fuse.w, d.layout().score.w, d.layout().tok_emb] {
                for k in [0, 5, 17] {
                    let orig = d.params().get(id).data()[k];
                    probe.params_mut().get_mut(id).data_mut()[k] = orig + 1e-5;
                    let up = eval(&probe);
                    probe.params_mut().get_mut(id).data_mut()[k] = orig - 1e-5;
                    let down = eval(&probe);
                    probe.params_mut().get_mut(id).data_mut()[k] = orig;
                    let numeric = (up - down) / 2e-5;
                    let analytic = grads.get(&id.index()).map_or(0.0, |g| g.data()[k]);
                    assert!((numeric - analytic).abs() < 1e-6 * (1.0 + numeric.abs()), "{numeric} vs {analytic}");
                }
            }
        }
    }
}
