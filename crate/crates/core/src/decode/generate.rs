use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Vocabulary};
use crate::decode::beam::{beam_nbest, BeamConfig};
use crate::decode::rerank::{rerank, RerankWeights, VisualInput};
use crate::error::DecodeError;
use crate::mi::{BackwardModel, Discriminator};
use crate::scalar::Scalar;
use crate::seqmodel::{assemble, FeatureStores, Mode, Seq2Seq};
use crate::tensor::Matrix;

/// Models and weights for MI reranking.
#[derive(Clone, Copy, Debug)]
pub struct MiConfig<'a, T: Scalar> {
    pub backward: &'a BackwardModel<T>,
    pub disc: &'a Discriminator<T>,
    pub weights: RerankWeights,
}

/// One line of a responses file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub episode: String,
    pub j: usize,
    pub hypothesis: String,
    pub reference: String,
    pub forward_logprob: f64,
    /// The selection score; equals `forward_logprob` without reranking.
    pub rerank_score: Option<f64>,
}

/// Decodes every `(episode, j)` of `dataset` in canonical order.
pub fn generate_split<T: Scalar>(
    model: &Seq2Seq<T>,
    dataset: &Dataset,
    vocab: &Vocabulary,
    stores: FeatureStores<'_>,
    mode: Mode,
    mi: Option<&MiConfig<'_, T>>,
    beam: &BeamConfig,
) -> Result<Vec<ResponseRecord>, DecodeError> {
    if model.config().mode != mode {
        return Err(DecodeError::ModeMismatch(format!("model was trained in {} mode, {mode} requested", model.config().mode)));
    }
    beam.validate()?;
    if let Some(mi) = mi {
        mi.weights.validate()?;
    }
    let mut out = Vec::new();
    for item in dataset.items() {
        let ep = &dataset.episodes[item.episode];
        let context = assemble(ep, item.j, model.config(), stores.coarse, stores.objects)?;
        let nbest = beam_nbest(model, &context, beam)?;
        let (hyp, score) = match mi {
            None => {
                let h = nbest.get(0).ok_or(DecodeError::EmptyNBest)?.clone();
                let s = h.forward_logprob;
                (h, s)
            }
            Some(mi) => {
                let kind = mi.disc.config().kind;
                let next = &ep.turns[item.j];
                let x_prev = &ep.turns[item.j - 1].tokens;
                let r = match kind {
                    Mode::Fv => {
                        let store = stores
                            .objects
                            .ok_or_else(|| DecodeError::ModeMismatch("FV reranking needs object features".into()))?;
                        let rows = store.objects(next.object_idx);
                        let o = Matrix::from_vec(
                            rows.len() / store.dim(),
                            store.dim(),
                            rows.iter().map(|&v| T::of(v as f64)).collect(),
                        );
                        rerank(&nbest, &mi.weights, mi.backward, mi.disc, VisualInput::Objects(&o), x_prev, kind)?
                    }
                    _ => {
                        let store = stores
                            .coarse
                            .ok_or_else(|| DecodeError::ModeMismatch("CV reranking needs coarse features".into()))?;
                        let f: Vec<T> = store.row(next.coarse_idx).iter().map(|&v| T::of(v as f64)).collect();
                        rerank(&nbest, &mi.weights, mi.backward, mi.disc, VisualInput::Coarse(&f), x_prev, kind)?
                    }
                };
                (r.hypothesis, r.score)
            }
        };
        out.push(ResponseRecord {
            episode: ep.id.clone(),
            j: item.j,
            hypothesis: vocab.decode(hyp.content()),
            reference: vocab.decode(&ep.turns[item.j].tokens),
            forward_logprob: hyp.forward_logprob,
            rerank_score: Some(score),
        });
    }
    Ok(out)
}

pub fn responses_to_string(records: &[ResponseRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialise") + "\n").collect()
}

pub fn write_responses(path: &Path, records: &[ResponseRecord]) -> Result<(), DecodeError> {
    let io = |e| DecodeError::Io { path: path.to_path_buf(), source: e };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    f.write_all(responses_to_string(records).as_bytes()).map_err(io)?;
    f.flush().map_err(io)
}
