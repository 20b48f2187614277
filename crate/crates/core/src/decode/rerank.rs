use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::beam::{Hypothesis, NBestList};
use crate::error::DecodeError;
use crate::mi::{mean_pool_objects, BackwardModel, Discriminator};
use crate::scalar::Scalar;
use crate::seqmodel::Mode;
use crate::tensor::Matrix;

/// Interpolation weights `λ1` (forward), `λ2` (backward), `λ3` (visual).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankWeights {
    pub forward: f64,
    pub backward: f64,
    pub visual: f64,
}

impl RerankWeights {
    pub fn new(forward: f64, backward: f64, visual: f64) -> Result<Self, DecodeError> {
        let w = Self { forward, backward, visual };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let all = [self.forward, self.backward, self.visual];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(DecodeError::InvalidWeights(format!("weights must be finite and non-negative: {self}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DecodeError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for RerankWeights {
    fn default() -> Self {
        Self { forward: 0.8, backward: 0.1, visual: 0.1 }
    }
}

impl fmt::Display for RerankWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.forward, self.backward, self.visual)
    }
}

impl FromStr for RerankWeights {
    type Err = DecodeError;

    /// `"a,b,c"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DecodeError::InvalidWeights(format!("{s:?}: {e}")))?;
        match parts.as_slice() {
            &[a, b, c] => Self::new(a, b, c),
            _ => Err(DecodeError::InvalidWeights(format!("{s:?}: expected three comma-separated values"))),
        }
    }
}

/// Visual evidence for the discriminator term.
#[derive(Clone, Copy, Debug)]
pub enum VisualInput<'a, T> {
    Coarse(&'a [T]),
    Objects(&'a Matrix<T>),
}

/// The three score terms of one hypothesis. Terms with zero weight are not computed and read 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermScores {
    pub forward: f64,
    pub backward: f64,
    pub visual: f64,
}

impl TermScores {
    pub fn combine(&self, w: &RerankWeights) -> f64 {
        let mut s = w.forward * self.forward;
        if w.backward != 0.0 {
            s += w.backward * self.backward;
        }
        if w.visual != 0.0 {
            s += w.visual * self.visual;
        }
        s
    }
}

/// Index of the highest combined score; ties go to the earlier entry.
pub fn select(scores: &[TermScores], w: &RerankWeights) -> Result<(usize, f64), DecodeError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let v = s.combine(w);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.ok_or(DecodeError::EmptyNBest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reranked {
    pub index: usize,
    pub hypothesis: Hypothesis,
    pub score: f64,
    pub terms: Vec<TermScores>,
}

/// Picks `argmax λ1·log p(x|ctx) + λ2·log p(x_prev|x) + λ3·log q(v, x)` over the N-best list.
///
/// `mode` names the evidence kind (`Cv` coarse, `Fv` pooled objects) and must
/// agree with both `visual` and the discriminator. Hypotheses with no content
/// tokens score `-inf` on the backward and visual terms.
pub fn rerank<T: Scalar>(
    nbest: &NBestList,
    weights: &RerankWeights,
    backward: &BackwardModel<T>,
    disc: &Discriminator<T>,
    visual: VisualInput<'_, T>,
    x_prev: &[u32],
    mode: Mode,
) -> Result<Reranked, DecodeError> {
    weights.validate()?;
    if nbest.is_empty() {
        return Err(DecodeError::EmptyNBest);
    }
    let f: Vec<T> = match (mode, visual) {
        (Mode::Cv, VisualInput::Coarse(f)) => f.to_vec(),
        (Mode::Fv, VisualInput::Objects(o)) => mean_pool_objects(o)?,
        (m, _) => {
            return Err(DecodeError::ModeMismatch(format!("visual input does not match {m} reranking")));
        }
    };
    if disc.config().kind != mode {
        return Err(DecodeError::ModeMismatch(format!(
            "discriminator scores {} evidence, {mode} requested",
            disc.config().kind
        )));
    }
    let mut terms = Vec::with_capacity(nbest.len());
    for h in nbest.hypotheses() {
        let x = h.content();
        let mut s = TermScores { forward: h.forward_logprob, backward: 0.0, visual: 0.0 };
        if weights.backward != 0.0 {
            s.backward =
                if x.is_empty() { f64::NEG_INFINITY } else { backward.backward_score(x, x_prev)?.as_f64() };
        }
        if weights.visual != 0.0 {
            s.visual = if x.is_empty() { f64::NEG_INFINITY } else { disc.q_score(x, &f)?.as_f64() };
        }
        terms.push(s);
    }
    let (index, score) = select(&terms, weights)?;
    Ok(Reranked { index, hypothesis: nbest.hypotheses()[index].clone(), score, terms })
}
