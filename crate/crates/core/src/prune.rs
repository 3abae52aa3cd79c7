//! Entropy-guided greedy layer removal.
//!
//! Each round profiles the current network, picks the deepest conv layer
//! whose saliency entropy does not drop relative to the layer before it,
//! deletes it (with its ReLU), retrains from scratch and keeps the result
//! while test accuracy stays within a tolerance of the baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcam::ClassPolicy;
use crate::nn::{evaluate, train, LayerKind, NetworkSpec, TrainConfig};
use crate::profile::{dataset_profile, EntropyProfile, DEFAULT_FLAT_THRESHOLD};
use crate::tensor::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Largest tolerated accuracy drop below the baseline, as a fraction.
    pub accuracy_tolerance: f64,
    pub max_removals: usize,
    /// Leading conv layers that are never removed.
    pub protected_prefix: usize,
    pub flat_threshold: f64,
    pub train: TrainConfig,
    /// Profile only the first `n` test images when set.
    #[serde(default)]
    pub profile_limit: Option<usize>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            accuracy_tolerance: 0.01,
            max_removals: usize::MAX,
            protected_prefix: 2,
            flat_threshold: DEFAULT_FLAT_THRESHOLD,
            train: TrainConfig::default(),
            profile_limit: None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy_tolerance > 0.0 && self.accuracy_tolerance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "accuracy tolerance must lie in (0, 1), got {}",
                self.accuracy_tolerance
            )));
        }
        if self.flat_threshold.is_nan() || self.flat_threshold < 0.0 {
            return Err(Error::InvalidArgument("flat threshold must be non-negative".into()));
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneIteration {
    pub round: usize,
    pub removed_layer: String,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub params_before: usize,
    pub params_after: usize,
    pub accepted: bool,
    pub profile: EntropyProfile,
    pub spec_after: NetworkSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ToleranceExceeded,
    NoCandidate,
    MaxRemovals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub baseline_accuracy: f64,
    pub baseline_params: usize,
    pub iterations: Vec<PruneIteration>,
    pub final_spec: NetworkSpec,
    pub final_accuracy: f64,
    pub final_params: usize,
    pub stop_reason: StopReason,
}

impl PruneReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Deletes conv layer `name` and the ReLU right after it, feeds its input
/// channels to the next conv, and recomputes the first linear layer's
/// input width from the new flatten size.
pub fn remove_layer(spec: &NetworkSpec, name: &str) -> Result<NetworkSpec> {
    let index = spec.layer_index(name)?;
    let removed_in = match spec.layers[index].kind {
        LayerKind::Conv { in_channels, .. } => in_channels,
        _ => {
            return Err(Error::Removal {
                layer: name.into(),
                message: "only conv layers can be removed".into(),
            })
        }
    };
    let mut out = spec.clone();
    let follows_relu = matches!(out.layers.get(index + 1).map(|l| &l.kind), Some(LayerKind::Relu));
    out.layers.drain(index..index + 1 + follows_relu as usize);

    let rest = &mut out.layers[index..];
    if let Some(LayerKind::Conv { in_channels, .. }) = rest
        .iter_mut()
        .map(|l| &mut l.kind)
        .find(|k| matches!(k, LayerKind::Conv { .. }))
    {
        *in_channels = removed_in;
    }

    // re-chain the first linear layer from the shapes that now reach it
    if let Some(first_linear) = out
        .layers
        .iter()
        .position(|l| matches!(l.kind, LayerKind::Linear { .. }))
    {
        let prefix = NetworkSpec {
            input_shape: out.input_shape,
            class_count: out.class_count,
            layers: out.layers[..first_linear].to_vec(),
        };
        let width = match prefix.infer_shapes() {
            Ok(shapes) => shapes.last().map(|s| s.len()).unwrap_or(prefix.input_shape.iter().product()),
            Err(e) => {
                return Err(Error::Removal {
                    layer: name.into(),
                    message: format!("no legal re-chain: {e}"),
                })
            }
        };
        if let LayerKind::Linear { in_features, .. } = &mut out.layers[first_linear].kind {
            *in_features = width;
        }
    }
    out.validate().map_err(|e| Error::Removal {
        layer: name.into(),
        message: format!("no legal re-chain: {e}"),
    })?;
    Ok(out)
}

/// Names of the spatial layers, i.e. the rows a profile of `spec` has.
fn check_profile(profile: &EntropyProfile, spec: &NetworkSpec) -> Result<()> {
    let expected: Vec<&str> = spec
        .spatial_layers()?
        .into_iter()
        .map(|i| spec.layers[i].name.as_str())
        .collect();
    let got: Vec<&str> = profile.rows.iter().map(|r| r.layer_name.as_str()).collect();
    if expected != got {
        return Err(Error::InvalidArgument(format!(
            "profile rows {got:?} do not match the spatial layers {expected:?}"
        )));
    }
    Ok(())
}

/// Deepest unprotected conv layer whose mean AME does not drop by more than
/// the flat threshold relative to the previous profiled layer, among those
/// whose removal is legal and shrinks the parameter count.
pub fn select_removal_candidate(
    profile: &EntropyProfile,
    spec: &NetworkSpec,
    config: &PruneConfig,
) -> Result<Option<String>> {
    check_profile(profile, spec)?;
    let protected: Vec<&str> = spec
        .layers
        .iter()
        .filter(|l| l.is_conv())
        .take(config.protected_prefix)
        .map(|l| l.name.as_str())
        .collect();
    let params = spec.count_params();
    for pair in profile.rows.windows(2).rev() {
        let row = &pair[1];
        let layer = &spec.layers[row.layer_index];
        if !layer.is_conv() || protected.contains(&layer.name.as_str()) {
            continue;
        }
        if row.mean_ame - pair[0].mean_ame < -config.flat_threshold {
            continue;
        }
        match remove_layer(spec, &layer.name) {
            Ok(pruned) if pruned.count_params() < params => return Ok(Some(layer.name.clone())),
            _ => continue,
        }
    }
    Ok(None)
}

fn profile_set(test: &Dataset, limit: Option<usize>) -> Result<Dataset> {
    match limit {
        Some(n) if n < test.len() => test.select(&(0..n).collect::<Vec<_>>()),
        _ => Ok(test.clone()),
    }
}

/// Runs the train / profile / remove loop until the accuracy budget is
/// spent, no candidate remains or `max_removals` rounds have run.
pub fn greedy_prune(spec: &NetworkSpec, train_set: &Dataset, test_set: &Dataset, config: &PruneConfig) -> Result<PruneReport> {
    greedy_prune_with(spec, train_set, test_set, config, |_| {})
}

/// As [`greedy_prune`], calling `on_round` after each recorded iteration.
pub fn greedy_prune_with(
    spec: &NetworkSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &PruneConfig,
    mut on_round: impl FnMut(&PruneIteration),
) -> Result<PruneReport> {
    config.validate()?;
    spec.validate()?;
    let profile_data = profile_set(test_set, config.profile_limit)?;

    let baseline = train(spec, train_set, test_set, &config.train)?;
    let baseline_accuracy = evaluate(spec, &baseline.weights, test_set)?;
    let mut current_spec = spec.clone();
    let mut current_weights = baseline.weights;
    let mut current_accuracy = baseline_accuracy;
    let mut iterations = Vec::new();

    let stop_reason = loop {
        if iterations.len() >= config.max_removals {
            break StopReason::MaxRemovals;
        }
        let profile = dataset_profile(
            &current_spec,
            &current_weights,
            &profile_data,
            ClassPolicy::GroundTruth,
            None,
        )?;
        let Some(candidate) = select_removal_candidate(&profile, &current_spec, config)? else {
            break StopReason::NoCandidate;
        };
        let pruned = remove_layer(&current_spec, &candidate)?;
        let outcome = train(&pruned, train_set, test_set, &config.train)?;
        let accuracy = evaluate(&pruned, &outcome.weights, test_set)?;
        let accepted = accuracy >= baseline_accuracy - config.accuracy_tolerance;
        let iteration = PruneIteration {
            round: iterations.len() + 1,
            removed_layer: candidate,
            accuracy_before: current_accuracy,
            accuracy_after: accuracy,
            params_before: current_spec.count_params(),
            params_after: pruned.count_params(),
            accepted,
            profile,
            spec_after: pruned.clone(),
        };
        on_round(&iteration);
        iterations.push(iteration);
        if !accepted {
            break StopReason::ToleranceExceeded;
        }
        current_spec = pruned;
        current_weights = outcome.weights;
        current_accuracy = accuracy;
    };

    Ok(PruneReport {
        baseline_accuracy,
        baseline_params: spec.count_params(),
        iterations,
        final_params: current_spec.count_params(),
        final_spec: current_spec,
        final_accuracy: current_accuracy,
        stop_reason,
    })
}
