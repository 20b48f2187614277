use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Tape, Var};
use crate::corpus::{Dataset, Vocabulary};
use crate::decode::ResponseRecord;
use crate::error::{EvalError, ModelError, TrainError};
use crate::mi::visual_evidence;
use crate::nn::{AttnMask, EncoderBlock, LayerNorm, Linear};
use crate::optim::OptimConfig;
use crate::params::{Init, Initializer, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::seqmodel::{FeatureStores, Mode};
use crate::tensor::Matrix;
use crate::train::run_training;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    /// Visual evidence per turn: `Cv` coarse vectors, `Fv` pooled objects.
    pub evidence: Mode,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    /// Most recent turns kept, final turn included.
    pub max_turns: usize,
    pub optim: OptimConfig,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            evidence: Mode::Cv,
            layers: 2,
            heads: 4,
            d_model: 256,
            ffn_dim: 1024,
            max_turns: 16,
            optim: OptimConfig { peak_lr: 1e-3, warmup: 100, batch_size: 16, max_steps: 400, ..OptimConfig::default() },
        }
    }
}

/// One dialog seen by the evaluator: turns (context then final) with their visual vectors.
#[derive(Clone, Debug)]
pub struct AdvExample<T> {
    pub turns: Vec<Vec<u32>>,
    pub visual: Vec<Vec<T>>,
    pub human: bool,
}

#[derive(Clone, Debug)]
struct AdvLayout {
    tok_emb: ParamId,
    vis_proj: ParamId,
    turn_pos: ParamId,
    cls: ParamId,
    blocks: Vec<EncoderBlock>,
    ln: LayerNorm,
    head: Linear,
}

/// Human-vs-machine classifier over sequences of fused turn vectors.
#[derive(Clone, Debug)]
pub struct AdvDiscriminator<T: Scalar> {
    cfg: AdvConfig,
    vocab_size: usize,
    d_visual: usize,
    params: ParamStore<T>,
    layout: AdvLayout,
}

impl<T: Scalar> AdvDiscriminator<T> {
    pub fn new(cfg: AdvConfig, vocab_size: usize, d_visual: usize, seed: u64) -> Result<Self, ModelError> {
        if cfg.heads == 0 || cfg.d_model % cfg.heads != 0 || cfg.max_turns == 0 || cfg.evidence == Mode::Nv {
            return Err(ModelError::InvalidConfig("adversarial evaluator configuration".into()));
        }
        let d = cfg.d_model;
        let emb = 1.0 / (d as f64).sqrt();
        let mut params = ParamStore::new();
        let mut init = Initializer::new(&mut params, seed);
        let tok_emb = init.add("tok_emb", vocab_size, d, Init::Normal(emb));
        let vis_proj = init.add("vis_proj", d_visual, d, Init::Normal(1.0 / (d_visual.max(1) as f64).sqrt()));
        let turn_pos = init.add("turn_pos", cfg.max_turns + 1, d, Init::Normal(emb));
        let cls = init.add("cls", 1, d, Init::Normal(emb));
        let blocks = (0..cfg.layers)
            .map(|l| EncoderBlock::new(&mut init, &format!("enc.{l}"), d, cfg.heads, cfg.ffn_dim))
            .collect();
        let ln = LayerNorm::new(&mut init, "ln_f", d);
        let head = Linear::new(&mut init, "head", d, 1, 0.02);
        let layout = AdvLayout { tok_emb, vis_proj, turn_pos, cls, blocks, ln, head };
        Ok(Self { cfg, vocab_size, d_visual, params, layout })
    }

    fn logit(&self, t: &mut Tape<'_, T>, ex: &AdvExample<T>) -> Result<Var, ModelError> {
        let keep = ex.turns.len().min(self.cfg.max_turns);
        let turns = &ex.turns[ex.turns.len() - keep..];
        let visual = &ex.visual[ex.visual.len() - keep..];
        let ids: Vec<usize> = turns.iter().flatten().map(|&i| i as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(ModelError::TokenOutOfRange(bad as u32));
        }
        if visual.iter().any(|v| v.len() != self.d_visual) {
            return Err(ModelError::DimMismatch { expected: self.d_visual, found: visual[0].len() });
        }
        let l = &self.layout;
        let mut avg = Matrix::zeros(keep, ids.len().max(1));
        let mut col = 0;
        for (r, turn) in turns.iter().enumerate() {
            for _ in turn {
                avg.row_mut(r)[col] = T::one() / T::of(turn.len() as f64);
                col += 1;
            }
        }
        let words = if ids.is_empty() {
            t.constant(Matrix::zeros(1, self.cfg.d_model))
        } else {
            let table = t.param(l.tok_emb);
            t.gather_rows(table, &ids)
        };
        let avg = t.constant(avg);
        let mut x = t.matmul(avg, words);
        let f = t.constant(Matrix::from_vec(keep, self.d_visual, visual.iter().flatten().copied().collect()));
        let w = t.param(l.vis_proj);
        let f = t.matmul(f, w);
        x = t.add(x, f);
        let pos = t.param(l.turn_pos);
        let pos = t.gather_rows(pos, &(1..=keep).collect::<Vec<_>>());
        x = t.add(x, pos);
        let cls = t.param(l.cls);
        let mut x = t.concat_rows(&[cls, x]);
        let mask = AttnMask::keys(keep + 1, &vec![false; keep + 1]);
        for b in &l.blocks {
            x = b.forward(t, x, &mask);
        }
        let first = t.gather(x, Arc::new(vec![Some(0)]));
        let h = l.ln.forward(t, first);
        Ok(l.head.forward(t, h))
    }

    /// Probability that `ex` is human-written.
    pub fn prob_human(&self, ex: &AdvExample<T>) -> Result<T, ModelError> {
        let mut t = Tape::new(&self.params);
        let z = self.logit(&mut t, ex)?;
        Ok(sigmoid(t.scalar(z)))
    }

    pub fn train(&mut self, examples: &[AdvExample<T>]) -> Result<Vec<f64>, TrainError> {
        let optim = self.cfg.optim.clone();
        let this = self.clone();
        run_training(&mut self.params, examples.len(), &optim, 0.0, |t, i, _| {
            let ex = &examples[i];
            let z = this.logit(t, ex)?;
            let z = if ex.human { z } else { t.scale(z, -T::one()) };
            let ll = t.log_sigmoid(z);
            Ok((t.scale(ll, -T::one()), 1))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvOutcome {
    /// Share of held-out machine examples judged human.
    pub success: f64,
    pub test_negatives: usize,
    pub loss_curve: Vec<f64>,
}

/// Shuffles the items of `split` and labels the first half human (gold final
/// turn) and the second half machine (generated final turn). An odd item out is dropped.
fn build_split<T: Scalar>(
    split: &Dataset,
    name: &'static str,
    generated: &HashMap<(&str, usize), Vec<u32>>,
    stores: FeatureStores<'_>,
    evidence: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AdvExample<T>>, EvalError> {
    let mut items = split.items();
    if items.len() < 2 {
        return Err(EvalError::Unbalanced { split: name, reason: format!("{} items", items.len()) });
    }
    items.shuffle(rng);
    let half = items.len() / 2;
    let mut out = Vec::with_capacity(2 * half);
    for (k, it) in items.iter().take(2 * half).enumerate() {
        let ep = &split.episodes[it.episode];
        let human = k < half;
        let mut turns: Vec<Vec<u32>> = ep.turns[..it.j].iter().map(|t| t.tokens.clone()).collect();
        if human {
            turns.push(ep.turns[it.j].tokens.clone());
        } else {
            let g = generated.get(&(ep.id.as_str(), it.j)).ok_or_else(|| EvalError::MalformedRecord {
                line: 0,
                reason: format!("no generated response for episode {} j={}", ep.id, it.j),
            })?;
            turns.push(g.clone());
        }
        let visual = ep.turns[..=it.j]
            .iter()
            .map(|t| visual_evidence(evidence, t, stores))
            .collect::<Result<Vec<_>, _>>()
            .map_err(TrainError::from)?;
        out.push(AdvExample { turns, visual, human });
    }
    Ok(out)
}

/// Trains the evaluator on `train` and reports how often it labels the machine half of `test` human.
pub fn adversarial_eval<T: Scalar>(
    train: &Dataset,
    test: &Dataset,
    responses: &[ResponseRecord],
    vocab: &Vocabulary,
    stores: FeatureStores<'_>,
    cfg: &AdvConfig,
    seed: u64,
) -> Result<AdvOutcome, EvalError> {
    let train_ids: HashSet<&str> = train.episodes.iter().map(|e| e.id.as_str()).collect();
    if let Some(e) = test.episodes.iter().find(|e| train_ids.contains(e.id.as_str())) {
        return Err(EvalError::SplitOverlap(e.id.clone()));
    }
    let generated: HashMap<(&str, usize), Vec<u32>> =
        responses.iter().map(|r| ((r.episode.as_str(), r.j), vocab.encode(&r.hypothesis))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_ex = build_split::<T>(train, "train", &generated, stores, cfg.evidence, &mut rng)?;
    let test_ex = build_split::<T>(test, "test", &generated, stores, cfg.evidence, &mut rng)?;
    let d_visual = train_ex[0].visual[0].len();
    let mut cfg = cfg.clone();
    cfg.optim.seed = seed;
    let mut adv = AdvDiscriminator::new(cfg, vocab.len(), d_visual, seed).map_err(TrainError::from)?;
    let loss_curve = adv.train(&train_ex)?;
    let mut fooled = 0;
    let mut negatives = 0;
    for ex in test_ex.iter().filter(|e| !e.human) {
        negatives += 1;
        if adv.prob_human(ex).map_err(TrainError::from)?.as_f64() > 0.5 {
            fooled += 1;
        }
    }
    Ok(AdvOutcome { success: fooled as f64 / negatives as f64, test_negatives: negatives, loss_curve })
}
