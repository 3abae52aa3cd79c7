//! Layer-by-layer entropy of Grad-CAM maps, over single images and datasets.

pub mod palette;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{aura_matrix_entropy, spatial_disorder_entropy, univariate_entropy, SdeCap};
use crate::error::{Error, Result};
use crate::gradcam::{resolve_class, saliency_from_gradient, ClassPolicy, SaliencyMap};
use crate::nn::{class_gradients, forward, NetworkSpec, Weights};
use crate::tensor::{Dataset, Scalar, Tensor};

pub use palette::{render_heatmap, HeatmapPalette};

/// Default |ΔAME| below which consecutive layers count as flat.
pub const DEFAULT_FLAT_THRESHOLD: f64 = 0.005;

/// Entropies of one layer's saliency map for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntropy {
    pub layer_name: String,
    pub layer_index: usize,
    pub h0: f64,
    pub ame: f64,
    pub sde: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub layer_name: String,
    pub layer_index: usize,
    pub mean_h0: f64,
    pub mean_ame: f64,
    pub mean_sde: Option<f64>,
    pub image_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub rows: Vec<ProfileRow>,
    pub fingerprint: String,
    pub class_policy: ClassPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Drop,
    Rise,
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperizationEvent {
    pub layer_name: String,
    pub delta_ame: f64,
    pub kind: EventKind,
}

/// Saliency maps of every spatial layer for one image and class.
pub fn layer_saliency<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    image: &Tensor<T>,
    class_index: usize,
) -> Result<Vec<(usize, SaliencyMap)>> {
    let (_, cache) = forward(spec, weights, image)?;
    saliency_from_cache(spec, weights, &cache, class_index)
}

fn saliency_from_cache<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    cache: &crate::nn::ActivationCache<T>,
    class_index: usize,
) -> Result<Vec<(usize, SaliencyMap)>> {
    let grads = class_gradients(spec, weights, cache, class_index)?;
    spec.spatial_layers()?
        .into_iter()
        .map(|i| {
            let (name, activation) = &cache.outputs[i];
            saliency_from_gradient(activation, &grads[i], name, class_index).map(|s| (i, s))
        })
        .collect()
}

fn entropies(index: usize, sal: &SaliencyMap, sde: Option<SdeCap>) -> Result<LayerEntropy> {
    Ok(LayerEntropy {
        layer_name: sal.layer_name.clone(),
        layer_index: index,
        h0: univariate_entropy(&sal.map),
        ame: aura_matrix_entropy(&sal.map)?,
        sde: sde.map(|cap| spatial_disorder_entropy(&sal.map, cap)).transpose()?,
    })
}

/// H(0) and AME of the Grad-CAM map at every spatial layer, in network order.
pub fn layer_profile<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    image: &Tensor<T>,
    class_index: usize,
) -> Result<Vec<LayerEntropy>> {
    layer_profile_with(spec, weights, image, class_index, None)
}

/// As [`layer_profile`], optionally adding the spatial disorder entropy.
pub fn layer_profile_with<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    image: &Tensor<T>,
    class_index: usize,
    sde: Option<SdeCap>,
) -> Result<Vec<LayerEntropy>> {
    layer_saliency(spec, weights, image, class_index)?
        .iter()
        .map(|(i, s)| entropies(*i, s, sde))
        .collect()
}

/// Per-layer means over a dataset. Images are profiled independently (in
/// parallel) and summed in ascending image order.
pub fn dataset_profile<T: Scalar>(
    spec: &NetworkSpec,
    weights: &Weights<T>,
    data: &Dataset,
    policy: ClassPolicy,
    sde: Option<SdeCap>,
) -> Result<EntropyProfile> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot profile an empty dataset".into()));
    }
    let shape = data.image_shape().to_vec();
    let per_image: Vec<Vec<LayerEntropy>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let image = Tensor::new(
                shape.clone(),
                data.image_data(i).iter().map(|&v| T::from_f64(v as f64)).collect(),
            )?;
            let (logits, cache) = forward(spec, weights, &image)?;
            let class = resolve_class(policy, Some(data.labels()[i]), &logits);
            saliency_from_cache(spec, weights, &cache, class)?
                .iter()
                .map(|(idx, s)| entropies(*idx, s, sde))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(spec, &per_image, policy))
}

/// Means of per-image layer entropies, summed in slice order.
pub fn aggregate(spec: &NetworkSpec, per_image: &[Vec<LayerEntropy>], policy: ClassPolicy) -> EntropyProfile {
    let n = per_image.len();
    let template = per_image.first().cloned().unwrap_or_default();
    let rows = template
        .iter()
        .enumerate()
        .map(|(r, first)| {
            let mut h0 = 0.0;
            let mut ame = 0.0;
            let mut sde = first.sde.map(|_| 0.0);
            for image in per_image {
                h0 += image[r].h0;
                ame += image[r].ame;
                if let (Some(acc), Some(v)) = (sde.as_mut(), image[r].sde) {
                    *acc += v;
                }
            }
            ProfileRow {
                layer_name: first.layer_name.clone(),
                layer_index: first.layer_index,
                mean_h0: h0 / n as f64,
                mean_ame: ame / n as f64,
                mean_sde: sde.map(|s| s / n as f64),
                image_count: n,
            }
        })
        .collect();
    EntropyProfile {
        rows,
        fingerprint: spec.fingerprint(),
        class_policy: policy,
    }
}

/// AME change between consecutive profile rows.
pub fn superization_events(profile: &EntropyProfile, flat_threshold: f64) -> Result<Vec<SuperizationEvent>> {
    if profile.rows.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 profile rows, got {}",
            profile.rows.len()
        )));
    }
    Ok(profile
        .rows
        .windows(2)
        .map(|pair| {
            let delta = pair[1].mean_ame - pair[0].mean_ame;
            let kind = if delta.abs() <= flat_threshold {
                EventKind::Flat
            } else if delta < 0.0 {
                EventKind::Drop
            } else {
                EventKind::Rise
            };
            SuperizationEvent {
                layer_name: pair[1].layer_name.clone(),
                delta_ame: delta,
                kind,
            }
        })
        .collect())
}

pub const CSV_HEADER: &str = "layer,index,h0_bits,ame,sde,images\n";

pub fn write_profile_csv(profile: &EntropyProfile) -> Vec<u8> {
    let mut out = String::from(CSV_HEADER);
    for row in &profile.rows {
        let sde = row.mean_sde.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{}\n",
            row.layer_name, row.layer_index, row.mean_h0, row.mean_ame, sde, row.image_count
        ));
    }
    out.into_bytes()
}

pub fn read_profile_csv(bytes: &[u8]) -> Result<Vec<ProfileRow>> {
    const FMT: &str = "profile csv";
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(FMT, "encoding", "not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER.trim_end()) {
        return Err(Error::format(FMT, "header", "unexpected header line"));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::format(FMT, format!("line {}", n + 2), "expected 6 fields"));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i]
                    .parse()
                    .map_err(|_| Error::format(FMT, format!("line {}", n + 2), format!("bad number {:?}", fields[i])))
            };
            let int = |i: usize| -> Result<usize> {
                fields[i]
                    .parse()
                    .map_err(|_| Error::format(FMT, format!("line {}", n + 2), format!("bad integer {:?}", fields[i])))
            };
            Ok(ProfileRow {
                layer_name: fields[0].to_string(),
                layer_index: int(1)?,
                mean_h0: num(2)?,
                mean_ame: num(3)?,
                mean_sde: if fields[4].is_empty() { None } else { Some(num(4)?) },
                image_count: int(5)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(values: &[(&str, f64)]) -> EntropyProfile {
        EntropyProfile {
            rows: values
                .iter()
                .enumerate()
                .map(|(i, &(name, ame))| ProfileRow {
                    layer_name: name.into(),
                    layer_index: i,
                    mean_h0: 1.0,
                    mean_ame: ame,
                    mean_sde: None,
                    image_count: 1,
                })
                .collect(),
            fingerprint: "test".into(),
            class_policy: ClassPolicy::GroundTruth,
        }
    }

    #[test]
    fn events_from_alexnet_column() {
        let p = profile(&[("relu2", 0.5231), ("maxpool2", 0.4147), ("conv3", 0.4423)]);
        let ev = superization_events(&p, DEFAULT_FLAT_THRESHOLD).unwrap();
        assert_eq!(ev[0].layer_name, "maxpool2");
        assert_eq!(ev[0].kind, EventKind::Drop);
        assert!((ev[0].delta_ame + 0.1084).abs() < 1e-12);
        assert_eq!(ev[1].layer_name, "conv3");
        assert_eq!(ev[1].kind, EventKind::Rise);
        assert!((ev[1].delta_ame - 0.0276).abs() < 1e-12);
    }

    #[test]
    fn constant_profile_is_flat() {
        let p = profile(&[("a", 0.4), ("b", 0.4), ("c", 0.4)]);
        let ev = superization_events(&p, DEFAULT_FLAT_THRESHOLD).unwrap();
        assert!(ev.iter().all(|e| e.kind == EventKind::Flat));
        assert!(superization_events(&profile(&[("a", 0.4)]), 0.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut p = profile(&[("conv1", 0.123_456_789)]);
        let bytes = write_profile_csv(&p);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text, "layer,index,h0_bits,ame,sde,images\nconv1,0,1.000000,0.123457,,1\n");
        assert_eq!(text.lines().count(), 2);
        p.rows[0].mean_sde = Some(0.9);
        let rows = read_profile_csv(&write_profile_csv(&p)).unwrap();
        assert_eq!(rows[0].mean_sde, Some(0.9));
        assert!((rows[0].mean_ame - 0.123_456_789).abs() < 1e-6);
        assert!(read_profile_csv(b"nope\n").is_err());
    }
}
