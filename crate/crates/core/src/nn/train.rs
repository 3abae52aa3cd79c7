//! Mini-batch SGD with softmax cross-entropy, fully determined by a seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::engine::{argmax, backward_raw, cross_entropy, forward_raw, GradAccum};
use crate::nn::spec::{LayerShape, NetworkSpec};
use crate::nn::weights::Weights;
use crate::rng::SplitMix64;
use crate::tensor::{Dataset, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// f32 storage, f64 reductions.
    #[default]
    F32,
    /// f64 storage and reductions.
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub weights: Weights<f32>,
    pub log: Vec<EpochLog>,
}

/// Mean softmax cross-entropy over a batch of shape (N, C, H, W) and the
/// gradient of that mean w.r.t. every parameter.
pub fn loss_and_grads<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Weights<T>)> {
    let shapes = spec.validate()?;
    weights.check(spec)?;
    let [c, h, w] = spec.input_shape;
    let dims = batch.shape();
    if dims.len() != 4 || dims[1..] != [c, h, w] || dims[0] != labels.len() {
        return Err(Error::Shape(format!(
            "batch {dims:?} with {} labels does not fit input {:?}",
            labels.len(),
            spec.input_shape
        )));
    }
    let n = c * h * w;
    let mut accum = GradAccum::new(weights);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        check_label(label, spec.class_count)?;
        total += sample_grads(spec, &shapes, weights, &batch.data()[i * n..(i + 1) * n], label, &mut accum);
    }
    let scale = 1.0 / labels.len() as f64;
    Ok((total * scale, accum.into_weights(spec, weights, scale)?))
}

fn check_label(label: usize, count: usize) -> Result<()> {
    if label >= count {
        Err(Error::ClassOutOfRange { class: label, count })
    } else {
        Ok(())
    }
}

/// Adds one sample's parameter gradients into `accum`; returns its loss.
fn sample_grads<T: Scalar>(
    spec: &NetworkSpec,
    shapes: &[LayerShape],
    weights: &Weights<T>,
    input: &[T],
    label: usize,
    accum: &mut GradAccum,
) -> f64 {
    let outputs = forward_raw(spec, shapes, weights, input);
    let (loss, grad) = cross_entropy(outputs.last().expect("non-empty network"), label);
    let acts: Vec<&[T]> = std::iter::once(input)
        .chain(outputs.iter().map(Vec::as_slice))
        .collect();
    backward_raw(spec, shapes, weights, &acts, grad, 0, Some(accum), |_, _| {});
    loss
}

/// Trains from a fresh seeded initialisation. The same spec, data and
/// config always produce bit-identical weights.
pub fn train(spec: &NetworkSpec, train_set: &Dataset, test_set: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    match config.precision {
        Precision::F32 => train_typed::<f32>(spec, train_set, test_set, config),
        Precision::F64 => train_typed::<f64>(spec, train_set, test_set, config),
    }
}

fn check_dataset(spec: &NetworkSpec, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} set is empty")));
    }
    if data.image_shape() != spec.input_shape {
        return Err(Error::Shape(format!(
            "{what} images are {:?}, network expects {:?}",
            data.image_shape(),
            spec.input_shape
        )));
    }
    data.check_labels(spec.class_count)
}

fn train_typed<T: Scalar>(
    spec: &NetworkSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let shapes = spec.validate()?;
    check_dataset(spec, train_set, "training")?;
    check_dataset(spec, test_set, "test")?;

    let mut rng = SplitMix64::new(config.seed);
    let mut weights = Weights::<T>::init(spec, &mut rng)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut input: Vec<T> = Vec::new();

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut accum = GradAccum::new(&weights);
            for &idx in batch {
                input.clear();
                input.extend(train_set.image_data(idx).iter().map(|&v| T::from_f64(v as f64)));
                epoch_loss += sample_grads(spec, &shapes, &weights, &input, train_set.labels()[idx], &mut accum);
            }
            let grads = accum.into_weights(spec, &weights, 1.0 / batch.len() as f64)?;
            weights.sgd_step(&grads, config.learning_rate)?;
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss: epoch_loss / train_set.len() as f64,
            test_accuracy: evaluate(spec, &weights, test_set)?,
        });
    }
    Ok(TrainOutcome {
        weights: weights.cast(),
        log,
    })
}

/// Predicted class for every image, ties broken towards the lowest index.
pub fn predict<T: Scalar>(spec: &NetworkSpec, weights: &Weights<T>, data: &Dataset) -> Result<Vec<usize>> {
    let shapes = spec.validate()?;
    weights.check(spec)?;
    if data.image_shape() != spec.input_shape {
        return Err(Error::Shape(format!(
            "images are {:?}, network expects {:?}",
            data.image_shape(),
            spec.input_shape
        )));
    }
    Ok((0..data.len())
        .into_par_iter()
        .map(|i| {
            let input: Vec<T> = data.image_data(i).iter().map(|&v| T::from_f64(v as f64)).collect();
            let outputs = forward_raw(spec, &shapes, weights, &input);
            argmax(outputs.last().expect("non-empty network"))
        })
        .collect())
}

/// Fraction of images whose predicted class equals the label.
pub fn evaluate<T: Scalar>(spec: &NetworkSpec, weights: &Weights<T>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let predictions = predict(spec, weights, data)?;
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
