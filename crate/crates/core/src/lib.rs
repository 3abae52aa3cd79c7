//! Grad-CAM saliency, spatial entropy of saliency maps, and entropy-guided
//! layer pruning for small sequential CNNs.

pub mod entropy;
pub mod error;
pub mod gradcam;
pub mod io;
pub mod nn;
pub mod profile;
pub mod prune;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use entropy::{
    aura_matrix_entropy, bivariate_entropy, entropy, joint_histogram, merge_outcomes, relative_entropy,
    spatial_disorder_entropy, univariate_entropy, Distribution, JointHistogram, Offset, SdeCap, AURA_OFFSETS,
};
pub use error::{Error, Result};
pub use gradcam::{gradcam, quantize, resolve_class, ClassPolicy, ImportanceWeights, RawCam, SaliencyMap};
pub use nn::{custom_net, vgg_small, LayerKind, LayerShape, LayerSpec, NetworkSpec, TrainConfig, Weights};
pub use profile::{
    dataset_profile, layer_profile, superization_events, EntropyProfile, EventKind, HeatmapPalette, LayerEntropy,
    ProfileRow, SuperizationEvent,
};
pub use prune::{greedy_prune, remove_layer, select_removal_candidate, PruneConfig, PruneReport, StopReason};
pub use rng::SplitMix64;
pub use tensor::{Dataset, GrayMap, Scalar, Tensor};
