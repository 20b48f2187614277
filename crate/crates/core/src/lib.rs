//! Visual-context dialog generation: NV/CV/FV encoder-decoder models, MI
//! reranking with a backward model and visual discriminators, and the
//! automatic and adversarial evaluation protocol.

pub mod autograd;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod mi;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod seqmodel;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, CorpusError, DecodeError, EvalError, ModelError, TrainError};
pub use scalar::Scalar;
pub use tensor::Matrix;

pub type Seq2Seq32 = seqmodel::Seq2Seq<f32>;
pub type Seq2Seq64 = seqmodel::Seq2Seq<f64>;
pub type Discriminator32 = mi::Discriminator<f32>;
pub type BackwardModel32 = mi::BackwardModel<f32>;
