//! Numerical core: dense layers, the bidirectional LSTM scorer with
//! hand-derived gradients, losses, Adam, training loop and model bundles.
//! Everything is generic over [`Scalar`](crate::num::Scalar).

pub mod adam;
pub mod bundle;
pub mod dense;
pub mod loss;
pub mod scorer;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use bundle::{Hyper, ModelBundle, ModelKind, TrainingMeta};
pub use dense::{Linear, Mlp};
pub use loss::{cross_entropy, margin_rank_grad, margin_rank_loss, softmax};
pub use scorer::{BiLstmScorer, ScorerConfig, ScorerOutput, TYPE_CLASSES};
pub use tensor::{Parameters, Tensor2};
pub use train::{fit, FitConfig, FitReport};
