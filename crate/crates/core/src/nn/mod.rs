//! Minimal sequential CNN engine: specs, weights, forward/backward, SGD.

pub mod engine;
pub mod spec;
pub mod train;
pub mod weights;

pub use engine::{argmax, backward_to_layer, class_gradients, forward, softmax, ActivationCache};
pub use spec::{custom_net, vgg_small, LayerKind, LayerShape, LayerSpec, NetworkSpec};
pub use train::{evaluate, loss_and_grads, predict, train, EpochLog, Precision, TrainConfig, TrainOutcome};
pub use weights::{load_spec_from_dir, Param, Weights};
