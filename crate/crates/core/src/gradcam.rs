//! Grad-CAM saliency maps for any spatial layer.
//!
//! For a layer output `A` with `c` channels and the gradient `G` of a class
//! logit w.r.t. `A`, each channel gets the weight `alpha[k] = mean(G[k])`
//! and the map is `relu(Σ_k alpha[k] * A[k])`, kept at the layer's own
//! resolution. The map is then min-max scaled to 0..=255.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, backward_to_layer, forward, NetworkSpec, Weights};
use crate::tensor::{GrayMap, Scalar, Tensor};

/// Spatially averaged gradients, one per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights {
    pub alpha: Vec<f64>,
}

/// Un-quantised Grad-CAM output, row-major `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCam {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub map: GrayMap,
    pub layer_name: String,
    pub class_index: usize,
    pub raw_min: f64,
    pub raw_max: f64,
}

/// How the target class of a saliency map is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPolicy {
    /// The labelled class of each image.
    #[default]
    GroundTruth,
    /// The network's own top prediction.
    Predicted,
    /// One class for every image.
    Fixed(usize),
}

impl std::fmt::Display for ClassPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassPolicy::GroundTruth => write!(f, "ground_truth"),
            ClassPolicy::Predicted => write!(f, "predicted"),
            ClassPolicy::Fixed(c) => write!(f, "fixed:{c}"),
        }
    }
}

pub fn importance_weights<T: Scalar>(grad: &Tensor<T>) -> Result<ImportanceWeights> {
    let [c, h, w] = spatial_dims(grad)?;
    let plane = h * w;
    let alpha = (0..c)
        .map(|k| {
            let sum: f64 = grad.data()[k * plane..(k + 1) * plane]
                .iter()
                .map(|v| v.to_f64())
                .sum();
            sum / plane as f64
        })
        .collect();
    Ok(ImportanceWeights { alpha })
}

fn spatial_dims<T: Scalar>(t: &Tensor<T>) -> Result<[usize; 3]> {
    match *t.shape() {
        [c, h, w] => Ok([c, h, w]),
        [1, c, h, w] => Ok([c, h, w]),
        ref other => Err(Error::Shape(format!("expected a (c, h, w) feature map, got {other:?}"))),
    }
}

/// `relu(Σ_k alpha[k] * A[k])`, channels summed in index order.
pub fn raw_cam<T: Scalar>(activation: &Tensor<T>, weights: &ImportanceWeights) -> Result<RawCam> {
    let [c, h, w] = spatial_dims(activation)?;
    if weights.alpha.len() != c {
        return Err(Error::Shape(format!(
            "{} importance weights for {c} channels",
            weights.alpha.len()
        )));
    }
    let plane = h * w;
    let mut values = vec![0.0f64; plane];
    for (k, &a) in weights.alpha.iter().enumerate() {
        for (v, x) in values.iter_mut().zip(&activation.data()[k * plane..(k + 1) * plane]) {
            *v += a * x.to_f64();
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    Ok(RawCam {
        height: h,
        width: w,
        values,
    })
}

/// Min-max scaling to 0..=255 with round-half-up; a constant map becomes
/// all zeros. Returns the map and the raw (min, max).
pub fn quantize(cam: &RawCam) -> Result<(GrayMap, f64, f64)> {
    if let Some(i) = cam.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let min = cam.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = cam.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if max > min {
        let range = max - min;
        cam.values
            .iter()
            .map(|&v| (255.0 * (v - min) / range + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; cam.values.len()]
    };
    Ok((GrayMap::new(cam.width, cam.height, pixels)?, min, max))
}

/// Saliency map from a layer output and the class-logit gradient at it.
pub fn saliency_from_gradient<T: Scalar>(
    activation: &Tensor<T>,
    gradient: &Tensor<T>,
    layer_name: &str,
    class_index: usize,
) -> Result<SaliencyMap> {
    let alpha = importance_weights(gradient)?;
    let cam = raw_cam(activation, &alpha)?;
    let (map, raw_min, raw_max) = quantize(&cam)?;
    Ok(SaliencyMap {
        map,
        layer_name: layer_name.to_string(),
        class_index,
        raw_min,
        raw_max,
    })
}

/// Grad-CAM of `layer_name` for `class_index` on one image.
pub fn gradcam<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    image: &Tensor<T>,
    class_index: usize,
    layer_name: &str,
) -> Result<SaliencyMap> {
    let layer = spec.layer_index(layer_name)?;
    if !spec.infer_shapes()?[layer].is_spatial() {
        return Err(Error::NonSpatialLayer(layer_name.into()));
    }
    let (_, cache) = forward(spec, weights, image)?;
    let grad = backward_to_layer(spec, weights, &cache, class_index, layer_name)?;
    let activation = cache.get(layer_name).expect("layer is cached");
    saliency_from_gradient(activation, &grad, layer_name, class_index)
}

/// Resolves the target class for one image.
pub fn resolve_class<T: Scalar>(policy: ClassPolicy, label: Option<usize>, logits: &[T]) -> usize {
    match policy {
        ClassPolicy::Fixed(c) => c,
        ClassPolicy::GroundTruth => label.unwrap_or_else(|| argmax(logits)),
        ClassPolicy::Predicted => argmax(logits),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn t3(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![c, h, w], data).unwrap()
    }

    #[test]
    fn importance_weight_examples() {
        let ones = t3(3, 2, 2, vec![1.0; 12]);
        assert_eq!(importance_weights(&ones).unwrap().alpha, vec![1.0, 1.0, 1.0]);
        let g = t3(1, 2, 2, vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(importance_weights(&g).unwrap().alpha, vec![4.0]);
        let scaled = t3(1, 2, 2, vec![2.5, 7.5, 12.5, 17.5]);
        assert_eq!(importance_weights(&scaled).unwrap().alpha, vec![10.0]);
        assert!(importance_weights(&Tensor::new(vec![4], vec![0.0f64; 4]).unwrap()).is_err());
    }

    #[test]
    fn raw_cam_examples() {
        let a = t3(1, 2, 2, vec![1.0, -1.0, 2.0, 0.0]);
        let cam = raw_cam(&a, &ImportanceWeights { alpha: vec![1.0] }).unwrap();
        assert_eq!(cam.values, vec![1.0, 0.0, 2.0, 0.0]);

        let a = t3(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let cam = raw_cam(&a, &ImportanceWeights { alpha: vec![-1.0, -0.5] }).unwrap();
        assert!(cam.values.iter().all(|&v| v == 0.0));

        let a = t3(2, 1, 1, vec![2.0, 1.0]);
        let cam = raw_cam(&a, &ImportanceWeights { alpha: vec![1.0, -1.0] }).unwrap();
        assert_eq!(cam.values, vec![1.0]);

        assert!(raw_cam(&a, &ImportanceWeights { alpha: vec![1.0] }).is_err());
    }

    #[test]
    fn quantize_examples() {
        let cam = RawCam {
            height: 2,
            width: 2,
            values: vec![0.0, 2.0, 1.0, 2.0],
        };
        let (m, lo, hi) = quantize(&cam).unwrap();
        assert_eq!(m.pixels(), &[0, 255, 128, 255]);
        assert_eq!((lo, hi), (0.0, 2.0));

        let flat = RawCam {
            height: 1,
            width: 3,
            values: vec![0.7; 3],
        };
        assert_eq!(quantize(&flat).unwrap().0.pixels(), &[0, 0, 0]);

        let unit = RawCam {
            height: 1,
            width: 2,
            values: vec![0.0, 1.0],
        };
        assert_eq!(quantize(&unit).unwrap().0.pixels(), &[0, 255]);

        let bad = RawCam {
            height: 1,
            width: 2,
            values: vec![0.0, f64::NAN],
        };
        assert!(matches!(quantize(&bad), Err(Error::NonFinite(1))));
    }

    fn one_by_one_net() -> (NetworkSpec, Weights<f64>) {
        let spec = NetworkSpec {
            input_shape: [1, 3, 3],
            class_count: 2,
            layers: vec![
                LayerSpec::conv("conv", 1, 1, 1, 1, 0),
                LayerSpec::flatten("flat"),
                LayerSpec::linear("fc", 9, 2),
            ],
        };
        let mut w: Weights<f64> = Weights::zeros(&spec).unwrap();
        w.layer_mut(0).unwrap().weight.data_mut()[0] = 1.0;
        // class 0 reads every pixel positively, class 1 negatively
        let fc = w.layer_mut(2).unwrap();
        fc.weight.data_mut()[..9].fill(1.0);
        fc.weight.data_mut()[9..].fill(-1.0);
        (spec, w)
    }

    #[test]
    fn identity_conv_reproduces_input_pattern() {
        let (spec, w) = one_by_one_net();
        let pixels = vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.8, 0.4, 0.6, 0.7];
        let image = t3(1, 3, 3, pixels.clone());
        let sal = gradcam(&spec, &w, &image, 0, "conv").unwrap();
        // alpha = 1, so the map is the quantised input itself
        let expected = quantize(&RawCam {
            height: 3,
            width: 3,
            values: pixels,
        })
        .unwrap()
        .0;
        assert_eq!(sal.map, expected);
        assert_eq!(sal.map, gradcam(&spec, &w, &image, 0, "conv").unwrap().map);

        let neg = gradcam(&spec, &w, &image, 1, "conv").unwrap();
        assert!(neg.map.pixels().iter().all(|&p| p == 0));
        assert_eq!((neg.raw_min, neg.raw_max), (0.0, 0.0));
    }

    #[test]
    fn rejects_flat_layers() {
        let (spec, w) = one_by_one_net();
        let image = t3(1, 3, 3, vec![0.5; 9]);
        assert!(matches!(
            gradcam(&spec, &w, &image, 0, "flat"),
            Err(Error::NonSpatialLayer(_))
        ));
        assert!(matches!(gradcam(&spec, &w, &image, 0, "fc"), Err(Error::NonSpatialLayer(_))));
        assert!(gradcam(&spec, &w, &image, 0, "missing").is_err());
        assert!(gradcam(&spec, &w, &image, 5, "conv").is_err());
    }
}
