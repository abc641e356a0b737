//! Layers, the two-headed model, losses, backpropagation, SGD training and
//! the `BLYR` model container.

mod grad;
mod layer;
mod loss;
mod model;
mod persist;
mod train;

pub use grad::{backward, batch_loss, BatchOutcome, BnBatchStats, Gradients, Objective, Target};
pub use layer::{LayerKind, LayerSpec, BN_EPS};
pub use loss::{cross_entropy, cross_entropy_logits, smooth_l1};
pub use model::{Architecture, Model, Prediction};
pub use persist::{from_bytes, load_model, narrowed, save_model, to_bytes, MAGIC, VERSION};
pub use train::{train_sgd, EpochLog, TrainConfig, BN_MOMENTUM};
