use crate::corpus::Dataset;
use crate::error::{ModelError, TrainError};
use crate::optim::OptimConfig;
use crate::scalar::Scalar;
use crate::seqmodel::{assemble_text, fit_seq2seq, Example, Mode, ModelConfig, Seq2Seq};

/// Utterance model `p(x_j | x_{j+1})`: an NV sequence model over reversed pairs.
#[derive(Clone, Debug)]
pub struct BackwardModel<T: Scalar> {
    pub model: Seq2Seq<T>,
}

/// `(source, target)` token pairs `(x_{j+1}, x_j)` for every `j ≥ 1`.
pub fn backward_pairs(dataset: &Dataset) -> Vec<(Vec<u32>, Vec<u32>)> {
    dataset
        .episodes
        .iter()
        .flat_map(|ep| ep.turns.windows(2).map(|w| (w[1].tokens.clone(), w[0].tokens.clone())))
        .collect()
}

pub fn backward_examples<T: Scalar>(dataset: &Dataset, cfg: &ModelConfig) -> Result<Vec<Example<T>>, ModelError> {
    backward_pairs(dataset)
        .into_iter()
        .map(|(src, tgt)| Ok(Example { context: assemble_text(&[src], cfg)?, target: tgt }))
        .collect()
}

impl<T: Scalar> BackwardModel<T> {
    pub fn new(model: Seq2Seq<T>) -> Result<Self, ModelError> {
        if model.config().mode != Mode::Nv {
            return Err(ModelError::ModeMismatch(format!("backward model must be NV, got {}", model.config().mode)));
        }
        Ok(Self { model })
    }

    /// Per-token log-probabilities of `x_prev` given `x_next`, without the `[EOS]` term.
    pub fn token_logprobs(&self, x_next: &[u32], x_prev: &[u32]) -> Result<Vec<T>, ModelError> {
        if x_next.is_empty() || x_prev.is_empty() {
            return Err(ModelError::EmptyUtterance);
        }
        let a = assemble_text(&[x_next.to_vec()], self.model.config())?;
        let mut lp = self.model.token_logprobs(&a, x_prev)?;
        lp.pop();
        Ok(lp)
    }

    /// `log p(x_prev | x_next)`: summed, not length-normalised.
    pub fn backward_score(&self, x_next: &[u32], x_prev: &[u32]) -> Result<T, ModelError> {
        Ok(self.token_logprobs(x_next, x_prev)?.into_iter().sum())
    }
}

/// Trains an NV model on every reversed pair of `dataset`.
pub fn train_backward<T: Scalar>(
    dataset: &Dataset,
    cfg: ModelConfig,
    optim: &OptimConfig,
) -> Result<(BackwardModel<T>, Vec<f64>), TrainError> {
    if cfg.mode != Mode::Nv {
        return Err(ModelError::ModeMismatch("backward model must be NV".into()).into());
    }
    let examples = backward_examples(dataset, &cfg)?;
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = Seq2Seq::new(cfg, optim.seed)?;
    let curve = fit_seq2seq(&mut model, &examples, optim)?;
    Ok((BackwardModel { model }, curve))
}
