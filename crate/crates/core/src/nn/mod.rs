//! A small reverse-mode autodiff engine over 2-D `f64` tensors, and the
//! networks built from it.

pub mod graph;
pub mod layers;
pub mod models;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{BatchStats, Gradients, Tape, Var};
pub use models::{
    envelope_tensor, feature_tensor, Classifier, Decoder, Encoder, EncoderConfig, Model, ModelConfig, SpeechEncoder,
    Summarizer, TransformerConfig,
};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
