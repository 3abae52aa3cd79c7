//! Declarative sequential network architectures and shape inference.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn default_conv_kernel() -> usize {
    3
}

fn default_one() -> usize {
    1
}

fn default_pool_kernel() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        #[serde(rename = "in")]
        in_channels: usize,
        #[serde(rename = "out")]
        out_channels: usize,
        #[serde(default = "default_conv_kernel")]
        kernel: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    Maxpool {
        #[serde(default = "default_pool_kernel")]
        kernel: usize,
        /// Defaults to `kernel`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
    Flatten,
    Linear {
        #[serde(rename = "in")]
        in_features: usize,
        #[serde(rename = "out")]
        out_features: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub name: String,
}

impl LayerSpec {
    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
        }
    }

    pub fn relu(name: &str) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Relu,
        }
    }

    pub fn maxpool(name: &str, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Maxpool {
                kernel,
                stride: Some(stride),
            },
        }
    }

    pub fn flatten(name: &str) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Flatten,
        }
    }

    pub fn linear(name: &str, in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Linear {
                in_features,
                out_features,
            },
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. })
    }

    /// Number of learned parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * (in_channels * kernel * kernel + 1),
            LayerKind::Linear {
                in_features,
                out_features,
            } => out_features * (in_features + 1),
            _ => 0,
        }
    }

    /// Output shape for the given input shape.
    pub fn output_shape(&self, input: LayerShape) -> Result<LayerShape> {
        let fail = |msg: String| Err(Error::spec(&self.name, msg));
        match (&self.kind, input) {
            (
                &LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                },
                LayerShape::Spatial([c, h, w]),
            ) => {
                if c != in_channels {
                    return fail(format!("expects {in_channels} input channels, got {c}"));
                }
                let oh = window_out(h, kernel, stride, padding);
                let ow = window_out(w, kernel, stride, padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(LayerShape::Spatial([out_channels, oh, ow])),
                    _ => fail(format!("kernel {kernel} does not fit a {h}x{w} input with padding {padding}")),
                }
            }
            (&LayerKind::Maxpool { kernel, stride }, LayerShape::Spatial([c, h, w])) => {
                let stride = stride.unwrap_or(kernel);
                match (window_out(h, kernel, stride, 0), window_out(w, kernel, stride, 0)) {
                    (Some(oh), Some(ow)) => Ok(LayerShape::Spatial([c, oh, ow])),
                    _ => fail(format!("pool window {kernel} does not fit a {h}x{w} input")),
                }
            }
            (LayerKind::Relu, shape) => Ok(shape),
            (LayerKind::Flatten, LayerShape::Spatial([c, h, w])) => Ok(LayerShape::Flat(c * h * w)),
            (LayerKind::Flatten, LayerShape::Flat(n)) => Ok(LayerShape::Flat(n)),
            (
                &LayerKind::Linear {
                    in_features,
                    out_features,
                },
                LayerShape::Flat(n),
            ) => {
                if n != in_features {
                    return fail(format!("expects {in_features} input features, got {n}"));
                }
                Ok(LayerShape::Flat(out_features))
            }
            (LayerKind::Linear { .. }, s @ LayerShape::Spatial(_)) => {
                fail(format!("linear layer needs a flat input, got {s}; insert a flatten layer"))
            }
            (_, s @ LayerShape::Flat(_)) => fail(format!("needs a spatial input, got {s}")),
        }
    }

    fn check_sizes(&self) -> Result<()> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(Error::spec(&self.name, format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                positive(in_channels, "in")?;
                positive(out_channels, "out")?;
                positive(kernel, "kernel")?;
                positive(stride, "stride")
            }
            LayerKind::Maxpool { kernel, stride } => {
                positive(kernel, "kernel")?;
                positive(stride.unwrap_or(kernel), "stride")
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                positive(in_features, "in")?;
                positive(out_features, "out")
            }
            LayerKind::Relu | LayerKind::Flatten => Ok(()),
        }
    }
}

fn window_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Per-image activation shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerShape {
    /// (channels, height, width)
    Spatial([usize; 3]),
    Flat(usize),
}

impl LayerShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerShape::Spatial(s) => s.to_vec(),
            LayerShape::Flat(n) => vec![n],
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            LayerShape::Spatial([c, h, w]) => c * h * w,
            LayerShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, LayerShape::Spatial(_))
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerShape::Spatial([c, h, w]) => write!(f, "({c}, {h}, {w})"),
            LayerShape::Flat(n) => write!(f, "({n})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes") + "\n"
    }

    /// Output shape of every layer, in order. Fails at the first layer
    /// whose input does not chain.
    pub fn infer_shapes(&self) -> Result<Vec<LayerShape>> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::spec("<input>", "input_shape dims must be positive"));
        }
        let mut shape = LayerShape::Spatial(self.input_shape);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            layer.check_sizes()?;
            shape = layer.output_shape(shape)?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<Vec<LayerShape>> {
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if layer.name.is_empty() {
                return Err(Error::spec("<unnamed>", "layer name must be non-empty"));
            }
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::spec(&layer.name, "duplicate layer name"));
            }
        }
        let shapes = self.infer_shapes()?;
        match self.layers.last() {
            Some(LayerSpec {
                kind: LayerKind::Linear { out_features, .. },
                name,
            }) => {
                if *out_features != self.class_count {
                    return Err(Error::spec(
                        name,
                        format!(
                            "final layer has {out_features} outputs but class_count is {}",
                            self.class_count
                        ),
                    ));
                }
            }
            Some(last) => return Err(Error::spec(&last.name, "final layer must be linear")),
            None => return Err(Error::spec("<none>", "network has no layers")),
        }
        Ok(shapes)
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.into()))
    }

    /// Indices of layers whose output keeps a spatial grid.
    pub fn spatial_layers(&self) -> Result<Vec<usize>> {
        Ok(self
            .infer_shapes()?
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_spatial())
            .map(|(i, _)| i)
            .collect())
    }

    /// Short stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The no-downsampling network used for the CIFAR-10 experiments: four
/// 3x3 conv + ReLU blocks at full 32x32 resolution and a three-layer head.
pub fn custom_net() -> NetworkSpec {
    NetworkSpec::from_json(include_str!("../../specs/custom_net.json")).expect("bundled spec is valid")
}

/// Small VGG-style net with two pooling stages.
pub fn vgg_small(class_count: usize) -> NetworkSpec {
    NetworkSpec {
        input_shape: [3, 32, 32],
        class_count,
        layers: vec![
            LayerSpec::conv("conv1", 3, 8, 3, 1, 1),
            LayerSpec::relu("relu1"),
            LayerSpec::conv("conv2", 8, 8, 3, 1, 1),
            LayerSpec::relu("relu2"),
            LayerSpec::maxpool("maxpool1", 2, 2),
            LayerSpec::conv("conv3", 8, 16, 3, 1, 1),
            LayerSpec::relu("relu3"),
            LayerSpec::conv("conv4", 16, 16, 3, 1, 1),
            LayerSpec::relu("relu4"),
            LayerSpec::maxpool("maxpool2", 2, 2),
            LayerSpec::flatten("flatten"),
            LayerSpec::linear("fc1", 16 * 8 * 8, class_count),
        ],
    }
}
