//! Scene-graph conditioned image captioning workbench.
//!
//! A desk-scale, CPU-only stack for studying whether conditioning a
//! captioning decoder on scene graphs helps, and how graph quality
//! modulates the effect:
//!
//! - [`autodiff`]: minimal reverse-mode differentiation over dense arrays.
//! - [`graph`]: the bipartite object/relation scene-graph model.
//! - [`attention`]: the additive attention head shared by every decoder.
//! - [`gat`]: graph attention and its externally conditioned variant.
//! - [`decoder`]: the two-layer recurrent decoder and its five
//!   graph-aware variants, with greedy and beam decoding.
//! - [`synth`]: seeded synthetic scenes, captions and corrupted graphs.
//! - [`metrics`]: BLEU-4, ROUGE-L, tuple-F1 breakdowns, triplet recall.
//! - [`optim`] / [`trainer`]: Adamax, plateau decay, early stopping.
//! - [`experiment`]: experiment configs, evaluation reports, CSV output.
//!
//! The numeric core is generic over the scalar type; the aliases below pin
//! the concrete `f64` instantiation used everywhere in the workbench.

pub mod attention;
pub mod autodiff;
pub mod decoder;
pub mod experiment;
pub mod gat;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod vocab;

/// Dense `f64` tensor.
pub type Tensor = autodiff::TensorBase<f64>;
/// Dense `f32` tensor.
pub type Tensor32 = autodiff::TensorBase<f32>;
/// Recording tape over `f64`.
pub type Tape = autodiff::Tape<f64>;
/// Named `f64` parameters with optimizer state.
pub type ParameterStore = autodiff::ParameterStore<f64>;
/// Gradients of an `f64` reverse sweep.
pub type Gradients = autodiff::Gradients<f64>;
