//! Small embedding network trained under the softmax, center-loss,
//! SphereFace and ArcFace heads.
//!
//! The backbone is a dense ReLU network over feature vectors; the last
//! layer's output is the embedding. Gradients are hand-derived and checked
//! against finite differences in the tests.

mod gradcheck;
mod head;
mod model;
mod train;

pub use gradcheck::{check_gradients, GradCheck};
pub use head::{arc_target, sphere_psi, LossHead};
pub use model::{embed_all, Backbone, EmbeddingModel, LossGrad, Mlp};
pub use train::{
    load_checkpoint, save_checkpoint, train, train_with, training_accuracy, InputTransform, LogRow,
    Sgd, TrainConfig, TrainLog,
};
