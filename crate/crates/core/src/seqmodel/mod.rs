//! Encoder-decoder dialog model with NV, CV and FV context fusion.

pub mod assembly;
pub mod config;
pub mod gradcheck;
pub mod model;
pub mod train;

pub use assembly::{
    assemble, assemble_cv, assemble_fv, assemble_nv, assemble_text, layout_len, ContextAssembly, Slot, SlotContent,
};
pub use config::{Mode, ModelConfig};
pub use gradcheck::{analytic_gradients, check_gradients, grad_check, relative_error, GradCheckReport};
pub use model::{teacher_forcing, Layout, Seq2Seq, TextEncoding};
pub use train::{fit_seq2seq, forward_examples, train_forward, Example, FeatureStores};
