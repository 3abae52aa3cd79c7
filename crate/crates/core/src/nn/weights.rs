use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::npy::{read_npy, write_npy};
use crate::nn::spec::{LayerKind, NetworkSpec};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tensor};

pub const SPEC_FILE: &str = "spec.json";

/// Kernel (or matrix) and bias of one parameterised layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Learned parameters, one slot per layer of the owning spec (`None` for
/// layers without parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T = f32> {
    layers: Vec<Option<Param<T>>>,
}

/// Expected (weight, bias, fan_in) shapes for a layer, if it has parameters.
fn param_shapes(kind: &LayerKind) -> Option<(Vec<usize>, usize, usize)> {
    match *kind {
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel,
            ..
        } => Some((
            vec![out_channels, in_channels, kernel, kernel],
            out_channels,
            in_channels * kernel * kernel,
        )),
        LayerKind::Linear {
            in_features,
            out_features,
        } => Some((vec![out_features, in_features], out_features, in_features)),
        _ => None,
    }
}

impl<T: Scalar> Weights<T> {
    /// Uniform fan-in initialisation in [-sqrt(6/fan_in), sqrt(6/fan_in)],
    /// zero biases. Draws layer by layer in row-major weight order.
    pub fn init(spec: &NetworkSpec, rng: &mut SplitMix64) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|layer| {
                param_shapes(&layer.kind).map(|(wshape, out, fan_in)| {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let n: usize = wshape.iter().product();
                    let data = (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
                    Param {
                        weight: Tensor::new(wshape, data).expect("shape matches"),
                        bias: Tensor::zeros(vec![out]).expect("positive size"),
                    }
                })
            })
            .collect();
        Ok(Weights { layers })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let layers = spec
            .layers
            .iter()
            .map(|layer| {
                param_shapes(&layer.kind).map(|(wshape, out, _)| Param {
                    weight: Tensor::zeros(wshape).expect("positive size"),
                    bias: Tensor::zeros(vec![out]).expect("positive size"),
                })
            })
            .collect();
        Ok(Weights { layers })
    }

    pub fn from_layers(spec: &NetworkSpec, layers: Vec<Option<Param<T>>>) -> Result<Self> {
        let w = Weights { layers };
        w.check(spec)?;
        Ok(w)
    }

    /// Verifies that every parameter tensor matches its layer.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "weights cover {} layers, spec has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (layer, param) in spec.layers.iter().zip(&self.layers) {
            match (param_shapes(&layer.kind), param) {
                (None, None) => {}
                (Some((wshape, out, _)), Some(p)) => {
                    if p.weight.shape() != wshape.as_slice() || p.bias.shape() != [out] {
                        return Err(Error::Shape(format!(
                            "layer `{}` expects weight {wshape:?} and bias [{out}], got {:?} and {:?}",
                            layer.name,
                            p.weight.shape(),
                            p.bias.shape()
                        )));
                    }
                }
                (Some(_), None) => {
                    return Err(Error::Shape(format!("layer `{}` is missing parameters", layer.name)))
                }
                (None, Some(_)) => {
                    return Err(Error::Shape(format!(
                        "layer `{}` takes no parameters",
                        layer.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn layer(&self, index: usize) -> Option<&Param<T>> {
        self.layers.get(index).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut Param<T>> {
        self.layers.get_mut(index).and_then(Option::as_mut)
    }

    pub fn layers(&self) -> &[Option<Param<T>>] {
        &self.layers
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            layers: self
                .layers
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Param {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }

    /// Every parameter value in layer order (weight then bias).
    pub fn flat_values(&self) -> Vec<T> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weight.data().iter().chain(p.bias.data()).copied())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Plain SGD: `w <- w - lr * g` for every parameter.
    pub fn sgd_step(&mut self, grads: &Weights<T>, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient layout differs from weights".into()));
        }
        let lr = T::from_f64(learning_rate);
        for (w, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (w, g) {
                (None, None) => {}
                (Some(w), Some(g)) => {
                    for (dst, src) in [(&mut w.weight, &g.weight), (&mut w.bias, &g.bias)] {
                        if dst.shape() != src.shape() {
                            return Err(Error::Shape("gradient shape differs from weights".into()));
                        }
                        for (v, d) in dst.data_mut().iter_mut().zip(src.data()) {
                            *v = *v - lr * *d;
                        }
                    }
                }
                _ => return Err(Error::Shape("gradient layout differs from weights".into())),
            }
        }
        Ok(())
    }
}

impl Weights<f32> {
    /// Writes `<layer>.weight.npy`, `<layer>.bias.npy` and `spec.json`.
    pub fn save_dir(&self, spec: &NetworkSpec, dir: &Path) -> Result<()> {
        self.check(spec)?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SPEC_FILE), spec.to_json())?;
        for (layer, param) in spec.layers.iter().zip(&self.layers) {
            if let Some(p) = param {
                fs::write(dir.join(format!("{}.weight.npy", layer.name)), write_npy(&p.weight))?;
                fs::write(dir.join(format!("{}.bias.npy", layer.name)), write_npy(&p.bias))?;
            }
        }
        Ok(())
    }

    /// Loads weights for `spec` from a directory written by [`Weights::save_dir`].
    pub fn load_dir(spec: &NetworkSpec, dir: &Path) -> Result<Self> {
        let layers = spec
            .layers
            .iter()
            .map(|layer| {
                if param_shapes(&layer.kind).is_none() {
                    return Ok(None);
                }
                let read = |suffix: &str| -> Result<Tensor<f32>> {
                    let path = dir.join(format!("{}.{suffix}.npy", layer.name));
                    let bytes = fs::read(&path).map_err(|e| {
                        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
                    })?;
                    read_npy(&bytes)
                };
                Ok(Some(Param {
                    weight: read("weight")?,
                    bias: read("bias")?,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(spec, layers)
    }
}

/// Reads the spec stored alongside a weights directory.
pub fn load_spec_from_dir(dir: &Path) -> Result<NetworkSpec> {
    NetworkSpec::from_json(&fs::read_to_string(dir.join(SPEC_FILE))?)
}
