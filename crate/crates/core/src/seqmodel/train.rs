use crate::corpus::{CoarseFeatureStore, Dataset, ObjectFeatureStore};
use crate::error::{ModelError, TrainError};
use crate::optim::OptimConfig;
use crate::scalar::Scalar;
use crate::seqmodel::assembly::{assemble, ContextAssembly};
use crate::seqmodel::config::ModelConfig;
use crate::seqmodel::model::Seq2Seq;
use crate::train::run_training;

/// Visual stores available to a run; the mode decides which one is read.
#[derive(Clone, Copy, Debug, Default)]
pub struct FeatureStores<'a> {
    pub coarse: Option<&'a CoarseFeatureStore>,
    pub objects: Option<&'a ObjectFeatureStore>,
}

/// A (context, target) training pair.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub context: ContextAssembly<T>,
    pub target: Vec<u32>,
}

/// One example per `(episode, j)`: context `x_1..x_j` (plus images), target `x_{j+1}`.
pub fn forward_examples<T: Scalar>(
    dataset: &Dataset,
    cfg: &ModelConfig,
    stores: FeatureStores<'_>,
) -> Result<Vec<Example<T>>, ModelError> {
    dataset
        .items()
        .into_iter()
        .map(|it| {
            let ep = &dataset.episodes[it.episode];
            Ok(Example {
                context: assemble(ep, it.j, cfg, stores.coarse, stores.objects)?,
                target: ep.turns[it.j].tokens.clone(),
            })
        })
        .collect()
}

/// Minimises mean per-token NLL of `model` over `examples`.
pub fn fit_seq2seq<T: Scalar>(
    model: &mut Seq2Seq<T>,
    examples: &[Example<T>],
    optim: &OptimConfig,
) -> Result<Vec<f64>, TrainError> {
    let (cfg, layout, params) = model.parts_mut();
    let dropout = cfg.dropout;
    run_training(params, examples.len(), optim, dropout, |tape, i, _| {
        let ex = &examples[i];
        Ok(layout.nll_sum(tape, cfg, &ex.context, &ex.target)?)
    })
}

/// Trains a fresh model in `cfg.mode`; parameters are initialised from `optim.seed`.
pub fn train_forward<T: Scalar>(
    dataset: &Dataset,
    stores: FeatureStores<'_>,
    cfg: ModelConfig,
    optim: &OptimConfig,
) -> Result<(Seq2Seq<T>, Vec<f64>), TrainError> {
    if dataset.items().is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let examples = forward_examples(dataset, &cfg, stores)?;
    let mut model = Seq2Seq::new(cfg, optim.seed)?;
    let curve = fit_seq2seq(&mut model, &examples, optim)?;
    Ok((model, curve))
}
