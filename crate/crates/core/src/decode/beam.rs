use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::EOS;
use crate::error::DecodeError;
use crate::scalar::Scalar;
use crate::seqmodel::{ContextAssembly, Seq2Seq};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Content ids, plus a trailing `[EOS]` unless the length limit cut the hypothesis.
    pub ids: Vec<u32>,
    /// Sum of token log-probabilities, `[EOS]` included when present.
    pub forward_logprob: f64,
}

impl Hypothesis {
    /// Ids without the trailing `[EOS]`.
    pub fn content(&self) -> &[u32] {
        match self.ids.last() {
            Some(&EOS) => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }
}

/// Best-first order: higher log-probability, then the lexicographically smaller id sequence.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.forward_logprob.total_cmp(&a.forward_logprob).then_with(|| a.ids.cmp(&b.ids))
}

/// At most N distinct hypotheses in [`rank_order`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NBestList {
    hyps: Vec<Hypothesis>,
}

impl NBestList {
    /// Sorts, removes duplicate id sequences and keeps the first `n`.
    pub fn new(mut hyps: Vec<Hypothesis>, n: usize) -> Self {
        hyps.sort_by(rank_order);
        hyps.dedup_by(|a, b| a.ids == b.ids);
        hyps.truncate(n);
        Self { hyps }
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Hypothesis> {
        self.hyps.get(i)
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hyps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub nbest: usize,
    /// Content-token limit; defaults to the model's `max_tgt_len`.
    pub max_tgt_len: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_size: 5, nbest: 5, max_tgt_len: None }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.nbest == 0 || self.beam_size < self.nbest {
            return Err(DecodeError::InvalidBeam(format!(
                "need beam_size ≥ nbest ≥ 1, got beam_size {} and nbest {}",
                self.beam_size, self.nbest
            )));
        }
        if self.max_tgt_len == Some(0) {
            return Err(DecodeError::InvalidBeam("max_tgt_len must be positive".into()));
        }
        Ok(())
    }
}

/// Beam search without length normalisation.
///
/// Each step extends every live prefix by every content token and `[EOS]`;
/// `[EOS]` extensions finish immediately and prefixes reaching the length
/// limit finish without one. The search stops once no live prefix can beat the
/// N-th finished hypothesis, since scores only decrease.
pub fn beam_nbest<T: Scalar>(
    model: &Seq2Seq<T>,
    context: &ContextAssembly<T>,
    cfg: &BeamConfig,
) -> Result<NBestList, DecodeError> {
    cfg.validate()?;
    let max_len = cfg.max_tgt_len.unwrap_or(model.config().max_tgt_len).min(model.config().max_tgt_len);
    let enc = model.encode(context)?;
    let emittable: Vec<u32> = model.emittable().collect();
    let mut alive = vec![Hypothesis { ids: Vec::new(), forward_logprob: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !alive.is_empty() {
        let mut next = Vec::new();
        for h in &alive {
            if h.ids.len() == max_len {
                finished.push(h.clone());
                continue;
            }
            let lp = model.next_logprobs(&enc, &h.ids)?;
            for &tok in &emittable {
                let mut ids = h.ids.clone();
                ids.push(tok);
                let cand = Hypothesis { ids, forward_logprob: h.forward_logprob + lp[tok as usize].as_f64() };
                if tok == EOS {
                    finished.push(cand);
                } else {
                    next.push(cand);
                }
            }
        }
        next.sort_by(rank_order);
        next.truncate(cfg.beam_size);
        finished.sort_by(rank_order);
        finished.truncate(cfg.nbest);
        if finished.len() == cfg.nbest {
            let bar = finished[cfg.nbest - 1].forward_logprob;
            next.retain(|h| h.forward_logprob >= bar);
        }
        alive = next;
    }
    Ok(NBestList::new(finished, cfg.nbest))
}
