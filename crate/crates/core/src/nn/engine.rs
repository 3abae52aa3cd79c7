//! Forward and backward passes for sequential networks.
//!
//! Every reduction (convolution sums, dot products, gradient sums) is
//! carried out in `f64` in a fixed index order, whatever the storage
//! scalar. Gradients flow backwards as `f64` and are converted to the
//! storage type only when returned.

use crate::error::{Error, Result};
use crate::nn::spec::{LayerKind, LayerShape, NetworkSpec};
use crate::nn::weights::{Param, Weights};
use crate::tensor::{Scalar, Tensor};

/// Outputs of every layer for one forward pass over a single image.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationCache<T = f32> {
    pub input: Tensor<T>,
    pub outputs: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ActivationCache<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Final layer output.
    pub fn logits(&self) -> &[T] {
        self.outputs.last().map(|(_, t)| t.data()).unwrap_or(&[])
    }
}

/// Runs the network on one image of shape (C, H, W) or (1, C, H, W).
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    input: &Tensor<T>,
) -> Result<(Vec<T>, ActivationCache<T>)> {
    let shapes = spec.validate()?;
    weights.check(spec)?;
    let input = single_image(spec, input)?;
    let outputs = forward_raw(spec, &shapes, weights, input.data());
    let outputs: Vec<(String, Tensor<T>)> = spec
        .layers
        .iter()
        .zip(shapes.iter())
        .zip(outputs)
        .map(|((layer, shape), data)| {
            (
                layer.name.clone(),
                Tensor::new(shape.dims(), data).expect("inferred shape"),
            )
        })
        .collect();
    let logits = outputs.last().map(|(_, t)| t.data().to_vec()).unwrap_or_default();
    Ok((logits, ActivationCache { input, outputs }))
}

fn single_image<T: Scalar>(spec: &NetworkSpec, input: &Tensor<T>) -> Result<Tensor<T>> {
    let expected = spec.input_shape;
    let dims = input.shape();
    let ok = dims == expected || (dims.len() == 4 && dims[0] == 1 && dims[1..] == expected);
    if !ok {
        return Err(Error::Shape(format!(
            "input shape {dims:?} does not match network input {expected:?}"
        )));
    }
    Tensor::new(expected.to_vec(), input.data().to_vec())
}

/// ∂y_c/∂A for the output A of `layer_name`, where y_c is the pre-softmax
/// logit of `class_index`.
pub fn backward_to_layer<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    cache: &ActivationCache<T>,
    class_index: usize,
    layer_name: &str,
) -> Result<Tensor<T>> {
    let target = spec.layer_index(layer_name)?;
    let shapes = spec.validate()?;
    check_cache(spec, cache)?;
    let seed = one_hot(class_index, spec.class_count)?;
    let mut result = None;
    let views = cache_views(cache);
    backward_raw(spec, &shapes, weights, &views, seed, target, None, |i, g| {
        if i == target {
            result = Some(g.to_vec());
        }
    });
    let grad = result.expect("backward reaches target layer");
    Tensor::new(shapes[target].dims(), grad.into_iter().map(T::from_f64).collect())
}

/// ∂y_c/∂A for the output of every layer at once, in layer order.
pub fn class_gradients<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    cache: &ActivationCache<T>,
    class_index: usize,
) -> Result<Vec<Tensor<T>>> {
    let shapes = spec.validate()?;
    check_cache(spec, cache)?;
    let seed = one_hot(class_index, spec.class_count)?;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; spec.layers.len()];
    let views = cache_views(cache);
    backward_raw(spec, &shapes, weights, &views, seed, 0, None, |i, g| {
        grads[i] = Some(g.to_vec());
    });
    grads
        .into_iter()
        .zip(&shapes)
        .map(|(g, s)| {
            Tensor::new(
                s.dims(),
                g.expect("every layer visited").into_iter().map(T::from_f64).collect(),
            )
        })
        .collect()
}

fn check_cache<T: Scalar>(spec: &NetworkSpec, cache: &ActivationCache<T>) -> Result<()> {
    let names_match = cache.outputs.len() == spec.layers.len()
        && cache
            .outputs
            .iter()
            .zip(&spec.layers)
            .all(|((n, _), l)| *n == l.name);
    if names_match {
        Ok(())
    } else {
        Err(Error::Shape("activation cache does not belong to this network".into()))
    }
}

fn cache_views<T: Scalar>(cache: &ActivationCache<T>) -> Vec<&[T]> {
    std::iter::once(cache.input.data())
        .chain(cache.outputs.iter().map(|(_, t)| t.data()))
        .collect()
}

fn one_hot(class_index: usize, count: usize) -> Result<Vec<f64>> {
    if class_index >= count {
        return Err(Error::ClassOutOfRange {
            class: class_index,
            count,
        });
    }
    let mut v = vec![0.0; count];
    v[class_index] = 1.0;
    Ok(v)
}

/// Numerically stable softmax, computed in f64.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.to_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of one sample and its gradient w.r.t. the logits.
pub(crate) fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (f64, Vec<f64>) {
    let max = logits
        .iter()
        .map(|v| v.to_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v.to_f64() - max).exp()).sum();
    let log_sum = max + sum.ln();
    let loss = log_sum - logits[label].to_f64();
    let mut grad: Vec<f64> = logits.iter().map(|v| (v.to_f64() - log_sum).exp()).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Parameter gradient accumulators in f64, aligned with the layers.
pub(crate) struct GradAccum {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl GradAccum {
    pub fn new<T: Scalar>(weights: &Weights<T>) -> Self {
        GradAccum {
            layers: weights
                .layers()
                .iter()
                .map(|p| p.as_ref().map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()])))
                .collect(),
        }
    }

    /// Scales by `factor` and converts into storage-typed weights.
    pub fn into_weights<T: Scalar>(self, spec: &NetworkSpec, template: &Weights<T>, factor: f64) -> Result<Weights<T>> {
        let layers = self
            .layers
            .into_iter()
            .zip(template.layers())
            .map(|(acc, tpl)| match (acc, tpl) {
                (Some((w, b)), Some(t)) => Ok(Some(Param {
                    weight: Tensor::new(
                        t.weight.shape().to_vec(),
                        w.into_iter().map(|v| T::from_f64(v * factor)).collect(),
                    )?,
                    bias: Tensor::new(
                        t.bias.shape().to_vec(),
                        b.into_iter().map(|v| T::from_f64(v * factor)).collect(),
                    )?,
                })),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Weights::from_layers(spec, layers)
    }
}

/// Outputs of every layer as flat vectors. Assumes validated shapes.
pub(crate) fn forward_raw<T: Scalar>(
    spec: &NetworkSpec,
    shapes: &[LayerShape],
    weights: &Weights<T>,
    input: &[T],
) -> Vec<Vec<T>> {
    let mut outputs: Vec<Vec<T>> = Vec::with_capacity(spec.layers.len());
    let mut in_shape = LayerShape::Spatial(spec.input_shape);
    for (i, layer) in spec.layers.iter().enumerate() {
        let x: &[T] = if i == 0 { input } else { &outputs[i - 1] };
        let out_shape = shapes[i];
        let y = match (&layer.kind, in_shape, out_shape) {
            (
                &LayerKind::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                },
                LayerShape::Spatial(ins),
                LayerShape::Spatial(outs),
            ) => {
                let p = weights.layer(i).expect("conv has params");
                conv_forward(x, ins, outs, p, kernel, stride, padding)
            }
            (LayerKind::Relu, _, _) => x.iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect(),
            (&LayerKind::Maxpool { kernel, stride }, LayerShape::Spatial(ins), LayerShape::Spatial(outs)) => {
                maxpool_forward(x, ins, outs, kernel, stride.unwrap_or(kernel))
            }
            (LayerKind::Flatten, _, _) => x.to_vec(),
            (LayerKind::Linear { .. }, LayerShape::Flat(n_in), LayerShape::Flat(n_out)) => {
                let p = weights.layer(i).expect("linear has params");
                linear_forward(x, n_in, n_out, p)
            }
            _ => unreachable!("shapes were validated"),
        };
        outputs.push(y);
        in_shape = out_shape;
    }
    outputs
}

/// Walks from the last layer down to `stop`, handing `visit` the gradient
/// w.r.t. each layer's output. `acts[0]` is the input and `acts[i + 1]` the
/// output of layer `i`. When `accum` is given, parameter gradients of the
/// visited layers are added to it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_raw<T: Scalar>(
    spec: &NetworkSpec,
    shapes: &[LayerShape],
    weights: &Weights<T>,
    acts: &[&[T]],
    grad_out: Vec<f64>,
    stop: usize,
    mut accum: Option<&mut GradAccum>,
    mut visit: impl FnMut(usize, &[f64]),
) {
    let mut grad = grad_out;
    for i in (stop..spec.layers.len()).rev() {
        visit(i, &grad);
        let layer = &spec.layers[i];
        let x = acts[i];
        let y = acts[i + 1];
        let in_shape = if i == 0 {
            LayerShape::Spatial(spec.input_shape)
        } else {
            shapes[i - 1]
        };
        let need_input_grad = i > stop;
        if let Some(acc) = accum.as_deref_mut() {
            if let Some((gw, gb)) = acc.layers[i].as_mut() {
                match (&layer.kind, in_shape, shapes[i]) {
                    (
                        &LayerKind::Conv {
                            kernel,
                            stride,
                            padding,
                            ..
                        },
                        LayerShape::Spatial(ins),
                        LayerShape::Spatial(outs),
                    ) => conv_param_grads(x, ins, outs, &grad, kernel, stride, padding, gw, gb),
                    (LayerKind::Linear { .. }, LayerShape::Flat(n_in), LayerShape::Flat(n_out)) => {
                        linear_param_grads(x, n_in, n_out, &grad, gw, gb)
                    }
                    _ => unreachable!("only conv and linear carry params"),
                }
            }
        }
        if !need_input_grad {
            break;
        }
        grad = match (&layer.kind, in_shape, shapes[i]) {
            (
                &LayerKind::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                },
                LayerShape::Spatial(ins),
                LayerShape::Spatial(outs),
            ) => conv_input_grad(ins, outs, weights.layer(i).expect("conv params"), &grad, kernel, stride, padding),
            (LayerKind::Relu, _, _) => grad
                .iter()
                .zip(y)
                .map(|(&g, &o)| if o > T::ZERO { g } else { 0.0 })
                .collect(),
            (&LayerKind::Maxpool { kernel, stride }, LayerShape::Spatial(ins), LayerShape::Spatial(outs)) => {
                maxpool_input_grad(x, ins, outs, &grad, kernel, stride.unwrap_or(kernel))
            }
            (LayerKind::Flatten, _, _) => grad,
            (LayerKind::Linear { .. }, LayerShape::Flat(n_in), LayerShape::Flat(n_out)) => {
                linear_input_grad(n_in, n_out, weights.layer(i).expect("linear params"), &grad)
            }
            _ => unreachable!("shapes were validated"),
        };
    }
}

/// Range of output columns `x` for which `x * stride + k - padding` lies in `0..size`.
#[inline]
fn valid_range(out: usize, size: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    // smallest x with x*stride + k >= padding
    let lo = if k >= padding { 0 } else { (padding - k).div_ceil(stride) };
    // largest x with x*stride + k - padding < size  <=>  x*stride < size + padding - k
    let limit = size + padding;
    let hi = if limit <= k { 0 } else { (limit - k - 1) / stride + 1 };
    (lo.min(out), hi.min(out).max(lo.min(out)))
}

fn conv_forward<T: Scalar>(
    x: &[T],
    [c_in, h, w]: [usize; 3],
    [c_out, oh, ow]: [usize; 3],
    p: &Param<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let kernel = p.weight.data();
    let bias = p.bias.data();
    let plane = oh * ow;
    let mut out = Vec::with_capacity(c_out * plane);
    let mut acc = vec![0.0f64; plane];
    for o in 0..c_out {
        acc.fill(bias[o].to_f64());
        for c in 0..c_in {
            let xin = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, h, ky, stride, padding);
                for kx in 0..k {
                    let wv = kernel[((o * c_in + c) * k + ky) * k + kx].to_f64();
                    let (x_lo, x_hi) = valid_range(ow, w, kx, stride, padding);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = y * stride + ky - padding;
                        let row = &xin[iy * w..(iy + 1) * w];
                        let arow = &mut acc[y * ow..(y + 1) * ow];
                        if stride == 1 {
                            let ix0 = x_lo + kx - padding;
                            let src = &row[ix0..ix0 + (x_hi - x_lo)];
                            for (a, &v) in arow[x_lo..x_hi].iter_mut().zip(src) {
                                *a += wv * v.to_f64();
                            }
                        } else {
                            for xo in x_lo..x_hi {
                                arow[xo] += wv * row[xo * stride + kx - padding].to_f64();
                            }
                        }
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&v| T::from_f64(v)));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_param_grads<T: Scalar>(
    x: &[T],
    [c_in, h, w]: [usize; 3],
    [c_out, oh, ow]: [usize; 3],
    g: &[f64],
    k: usize,
    stride: usize,
    padding: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let plane = oh * ow;
    for o in 0..c_out {
        let gout = &g[o * plane..(o + 1) * plane];
        gb[o] += gout.iter().sum::<f64>();
        for c in 0..c_in {
            let xin = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, h, ky, stride, padding);
                for kx in 0..k {
                    let (x_lo, x_hi) = valid_range(ow, w, kx, stride, padding);
                    let mut sum = 0.0f64;
                    if x_lo < x_hi {
                        for y in y_lo..y_hi {
                            let iy = y * stride + ky - padding;
                            let row = &xin[iy * w..(iy + 1) * w];
                            let grow = &gout[y * ow..(y + 1) * ow];
                            if stride == 1 {
                                let ix0 = x_lo + kx - padding;
                                let src = &row[ix0..ix0 + (x_hi - x_lo)];
                                for (&gv, &v) in grow[x_lo..x_hi].iter().zip(src) {
                                    sum += gv * v.to_f64();
                                }
                            } else {
                                for xo in x_lo..x_hi {
                                    sum += grow[xo] * row[xo * stride + kx - padding].to_f64();
                                }
                            }
                        }
                    }
                    gw[((o * c_in + c) * k + ky) * k + kx] += sum;
                }
            }
        }
    }
}

fn conv_input_grad<T: Scalar>(
    [c_in, h, w]: [usize; 3],
    [c_out, oh, ow]: [usize; 3],
    p: &Param<T>,
    g: &[f64],
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let kernel = p.weight.data();
    let plane = oh * ow;
    let mut gin = vec![0.0f64; c_in * h * w];
    for o in 0..c_out {
        let gout = &g[o * plane..(o + 1) * plane];
        for c in 0..c_in {
            let gplane = &mut gin[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, h, ky, stride, padding);
                for kx in 0..k {
                    let wv = kernel[((o * c_in + c) * k + ky) * k + kx].to_f64();
                    let (x_lo, x_hi) = valid_range(ow, w, kx, stride, padding);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let iy = y * stride + ky - padding;
                        let grow = &gout[y * ow..(y + 1) * ow];
                        let dst = &mut gplane[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            let ix0 = x_lo + kx - padding;
                            let n = x_hi - x_lo;
                            for (d, &gv) in dst[ix0..ix0 + n].iter_mut().zip(&grow[x_lo..x_hi]) {
                                *d += wv * gv;
                            }
                        } else {
                            for xo in x_lo..x_hi {
                                dst[xo * stride + kx - padding] += wv * grow[xo];
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

fn maxpool_forward<T: Scalar>(
    x: &[T],
    [c_n, h, w]: [usize; 3],
    [_, oh, ow]: [usize; 3],
    k: usize,
    stride: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(c_n * oh * ow);
    for c in 0..c_n {
        let xin = &x[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let idx = window_argmax(xin, w, y * stride, xo * stride, k);
                out.push(xin[idx]);
            }
        }
    }
    out
}

/// Flat index of the window maximum; the first occurrence in row-major
/// window order wins ties.
#[inline]
fn window_argmax<T: Scalar>(plane: &[T], w: usize, y0: usize, x0: usize, k: usize) -> usize {
    let mut best = y0 * w + x0;
    for dy in 0..k {
        for dx in 0..k {
            let idx = (y0 + dy) * w + x0 + dx;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

fn maxpool_input_grad<T: Scalar>(
    x: &[T],
    [c_n, h, w]: [usize; 3],
    [_, oh, ow]: [usize; 3],
    g: &[f64],
    k: usize,
    stride: usize,
) -> Vec<f64> {
    let mut gin = vec![0.0f64; c_n * h * w];
    for c in 0..c_n {
        let xin = &x[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let idx = window_argmax(xin, w, y * stride, xo * stride, k);
                gin[c * h * w + idx] += g[(c * oh + y) * ow + xo];
            }
        }
    }
    gin
}

fn linear_forward<T: Scalar>(x: &[T], n_in: usize, n_out: usize, p: &Param<T>) -> Vec<T> {
    let m = p.weight.data();
    let b = p.bias.data();
    (0..n_out)
        .map(|o| {
            let row = &m[o * n_in..(o + 1) * n_in];
            let mut acc = b[o].to_f64();
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv.to_f64() * xv.to_f64();
            }
            T::from_f64(acc)
        })
        .collect()
}

fn linear_param_grads<T: Scalar>(x: &[T], n_in: usize, n_out: usize, g: &[f64], gw: &mut [f64], gb: &mut [f64]) {
    for o in 0..n_out {
        let go = g[o];
        gb[o] += go;
        if go == 0.0 {
            continue;
        }
        for (d, &xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *d += go * xv.to_f64();
        }
    }
}

fn linear_input_grad<T: Scalar>(n_in: usize, n_out: usize, p: &Param<T>, g: &[f64]) -> Vec<f64> {
    let m = p.weight.data();
    let mut gin = vec![0.0f64; n_in];
    for (o, &go) in g.iter().enumerate().take(n_out) {
        if go == 0.0 {
            continue;
        }
        for (d, &wv) in gin.iter_mut().zip(&m[o * n_in..(o + 1) * n_in]) {
            *d += go * wv.to_f64();
        }
    }
    gin
}
