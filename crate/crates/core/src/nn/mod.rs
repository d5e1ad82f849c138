//! Dense feed-forward networks: layers, training, confidence measures and persistence.

pub mod confidence;
pub mod container;
pub mod layer;
pub mod net;
pub mod train;

pub use confidence::{accuracy, classification_confidence, g_phi, good_set, h_phi, ConfidenceRecord};
pub use layer::{Activation, LayerSlot};
pub use net::{init_net, softmax, DenseNet, Init};
pub use train::{
    evaluate, gradients, loss, lr_step, train_epoch, EpochMetrics, EvalMetrics, LossBreakdown, OptimizerState,
    TrainConfig,
};

#[cfg(test)]
mod tests;
