//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use entrocam::io::cifar::{load_batches, read_cifar10_batch, train_files, TEST_FILE};
use entrocam::nn::{forward, loss_and_grads, LayerKind, LayerSpec};
use entrocam::{synth, Dataset, GrayMap, NetworkSpec, SplitMix64, Tensor, Weights};

pub fn random_map(rng: &mut SplitMix64, height: usize, width: usize, levels: &[u8]) -> GrayMap {
    let px = (0..height * width).map(|_| levels[rng.below(levels.len())]).collect();
    GrayMap::new(width, height, px).unwrap()
}

/// Pair counts by visiting every pixel and every displaced partner,
/// keeping the pairs whose partner lands inside the map.
pub fn pair_counts(map: &GrayMap, k: isize, l: isize) -> BTreeMap<(u8, u8), u64> {
    let mut counts = BTreeMap::new();
    for i in 0..map.height() as isize {
        for j in 0..map.width() as isize {
            let (i2, j2) = (i + k, j + l);
            if i2 < 0 || j2 < 0 || i2 >= map.height() as isize || j2 >= map.width() as isize {
                continue;
            }
            let key = (map.get(i as usize, j as usize), map.get(i2 as usize, j2 as usize));
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Shannon entropy in bits, summing over counts in ascending order.
pub fn counts_entropy(counts: impl IntoIterator<Item = u64>) -> f64 {
    let mut c: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    c.sort_unstable();
    let total = c.iter().sum::<u64>() as f64;
    0.0 - c.iter()
        .map(|&v| {
            let p = v as f64 / total;
            p * p.log2()
        })
        .sum::<f64>()
}

pub fn oracle_h0(map: &GrayMap) -> f64 {
    let mut counts = BTreeMap::new();
    for &p in map.pixels() {
        *counts.entry(p).or_insert(0u64) += 1;
    }
    counts_entropy(counts.into_values())
}

pub fn oracle_hr(map: &GrayMap, k: isize, l: isize) -> f64 {
    let h0 = oracle_h0(map);
    if h0 == 0.0 {
        return 0.0;
    }
    (counts_entropy(pair_counts(map, k, l).into_values()) - h0) / h0
}

/// Nets small enough for finite differences that together use every
/// layer kind, strided and padded convs, and overlapping pooling.
pub fn gradient_nets() -> Vec<NetworkSpec> {
    vec![
        NetworkSpec {
            input_shape: [2, 6, 6],
            class_count: 3,
            layers: vec![
                LayerSpec::conv("conv1", 2, 3, 3, 1, 1),
                LayerSpec::relu("relu1"),
                LayerSpec::maxpool("pool1", 2, 2),
                LayerSpec::flatten("flatten"),
                LayerSpec::linear("fc1", 27, 4),
                LayerSpec::relu("relu2"),
                LayerSpec::linear("fc2", 4, 3),
            ],
        },
        NetworkSpec {
            input_shape: [2, 6, 6],
            class_count: 3,
            layers: vec![
                LayerSpec::conv("conv1", 2, 3, 3, 2, 1),
                LayerSpec::conv("conv2", 3, 2, 2, 1, 0),
                LayerSpec::relu("relu1"),
                LayerSpec::flatten("flatten"),
                LayerSpec::linear("fc", 8, 3),
            ],
        },
        NetworkSpec {
            input_shape: [2, 7, 7],
            class_count: 2,
            layers: vec![
                LayerSpec::conv("conv1", 2, 4, 1, 1, 0),
                LayerSpec::maxpool("pool1", 3, 2),
                LayerSpec::relu("relu1"),
                LayerSpec::conv("conv2", 4, 3, 3, 1, 1),
                LayerSpec::flatten("flatten"),
                LayerSpec::linear("fc", 27, 2),
            ],
        },
    ]
}

pub struct FdResult {
    pub checked: usize,
    /// Parameters whose perturbation flips a ReLU or a pooling winner, where
    /// the loss has a kink and central differences do not apply.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Compares analytic parameter gradients of the mean batch loss with
/// central differences of step `step`, in 64-bit arithmetic.
pub fn finite_difference_check(spec: &NetworkSpec, seed: u64, step: f64) -> FdResult {
    let mut rng = SplitMix64::new(seed);
    let mut weights: Weights<f64> = Weights::init(spec, &mut rng).unwrap();
    for li in 0..spec.layers.len() {
        if let Some(p) = weights.layer_mut(li) {
            for b in p.bias.data_mut() {
                *b = rng.uniform(-0.5, 0.5);
            }
        }
    }
    let [c, h, w] = spec.input_shape;
    let n = 2;
    let batch = Tensor::new(
        vec![n, c, h, w],
        (0..n * c * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.below(spec.class_count)).collect();
    let (_, grads) = loss_and_grads(spec, &weights, &batch, &labels).unwrap();

    let base_pattern = activation_pattern(spec, &weights, &batch);
    let mut result = FdResult {
        skipped: 0,
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for li in 0..spec.layers.len() {
        let Some(g) = grads.layer(li) else { continue };
        for (which, analytic) in [("weight", g.weight.data().to_vec()), ("bias", g.bias.data().to_vec())] {
            for (idx, &a) in analytic.iter().enumerate() {
                fn value<'a>(w: &'a mut Weights<f64>, li: usize, which: &str, idx: usize) -> &'a mut f64 {
                    let p = w.layer_mut(li).unwrap();
                    let t = if which == "weight" { &mut p.weight } else { &mut p.bias };
                    &mut t.data_mut()[idx]
                }
                let orig = *value(&mut weights, li, which, idx);
                *value(&mut weights, li, which, idx) = orig + step;
                let plus = loss_and_grads(spec, &weights, &batch, &labels).unwrap().0;
                let smooth_plus = activation_pattern(spec, &weights, &batch) == base_pattern;
                *value(&mut weights, li, which, idx) = orig - step;
                let minus = loss_and_grads(spec, &weights, &batch, &labels).unwrap().0;
                let smooth_minus = activation_pattern(spec, &weights, &batch) == base_pattern;
                *value(&mut weights, li, which, idx) = orig;
                if !(smooth_plus && smooth_minus) {
                    result.skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * step);
                let scale = a.abs().max(numeric.abs());
                let rel = if scale < 1e-7 { 0.0 } else { (a - numeric).abs() / scale };
                result.checked += 1;
                if rel > result.max_rel_error {
                    result.max_rel_error = rel;
                    result.worst = format!("{}.{which}[{idx}]: analytic {a:e}, numeric {numeric:e}", spec.layers[li].name);
                }
            }
        }
    }
    result
}

/// ReLU signs and pooling winners (first maximum of each window) for
/// every image in `batch`.
fn activation_pattern(spec: &NetworkSpec, weights: &Weights<f64>, batch: &Tensor<f64>) -> Vec<usize> {
    let n = batch.shape()[0];
    let mut pattern = Vec::new();
    for i in 0..n {
        let image = batch.slice_first(i).unwrap();
        let (_, cache) = forward(spec, weights, &image).unwrap();
        for (li, layer) in spec.layers.iter().enumerate() {
            let input = if li == 0 { &cache.input } else { &cache.outputs[li - 1].1 };
            match layer.kind {
                LayerKind::Relu => pattern.extend(input.data().iter().map(|&v| (v > 0.0) as usize)),
                LayerKind::Maxpool { kernel, stride } => {
                    let stride = stride.unwrap_or(kernel);
                    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                    let out = cache.outputs[li].1.shape().to_vec();
                    for ch in 0..c {
                        for oy in 0..out[1] {
                            for ox in 0..out[2] {
                                let mut best = (f64::NEG_INFINITY, 0);
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let idx = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                        if input.data()[idx] > best.0 {
                                            best = (input.data()[idx], idx);
                                        }
                                    }
                                }
                                pattern.push(best.1);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }
    pattern
}

/// Where the two-class data came from.
pub struct Subset {
    pub train: Dataset,
    pub test: Dataset,
    pub source: String,
}

pub const SUBSET_TRAIN: usize = 2000;
pub const SUBSET_TEST: usize = 400;
pub const SYNTH_SEED: u64 = 1;

/// Classes 0 and 1 of CIFAR-10 from `CIFAR10_DIR`, or the synthetic
/// stand-in when the variable is unset.
pub fn two_class_subset() -> Subset {
    match std::env::var_os("CIFAR10_DIR") {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            let train = load_batches(&train_files(&dir)).expect("CIFAR-10 training batches");
            let test = read_cifar10_batch(&std::fs::read(dir.join(TEST_FILE)).expect("CIFAR-10 test batch"))
                .expect("CIFAR-10 test batch");
            Subset {
                train: train.class_subset(&[0, 1], Some(SUBSET_TRAIN)).unwrap(),
                test: test.class_subset(&[0, 1], Some(SUBSET_TEST)).unwrap(),
                source: "CIFAR-10".into(),
            }
        }
        None => Subset {
            train: synth::synth_dataset(SUBSET_TRAIN, SYNTH_SEED).unwrap(),
            test: synth::synth_dataset(SUBSET_TEST, synth::test_seed(SYNTH_SEED)).unwrap(),
            source: "synthetic proxy".into(),
        },
    }
}
