//! Deterministic two-class stand-in for CIFAR-10, in the same binary format.
//!
//! Every image is a smooth random colour field with one shape painted at a
//! random position: a filled disc for label 0, a hollow square for label 1.
//! Pixel noise is added before quantising to bytes.

use std::path::Path;

use crate::error::Result;
use crate::io::cifar::{read_cifar10_batch, write_cifar10_batch, CHANNELS, IMAGE_BYTES, SIDE, TEST_FILE, TRAIN_FILES};
use crate::rng::SplitMix64;
use crate::tensor::Dataset;

pub const SYNTH_CLASSES: usize = 2;

/// One labelled record: the label and 3072 channel-major bytes.
pub fn synth_record(rng: &mut SplitMix64, label: u8) -> Vec<u8> {
    let mut img = [[[0.0f64; SIDE]; SIDE]; CHANNELS];

    // background: base colour plus two low-frequency waves per channel
    for plane in img.iter_mut() {
        let base = rng.uniform(0.2, 0.6);
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.uniform(0.05, 0.2),
                    rng.uniform(-0.3, 0.3),
                    rng.uniform(-0.3, 0.3),
                    rng.uniform(0.0, std::f64::consts::TAU),
                )
            })
            .collect();
        for (y, row) in plane.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = base
                    + waves
                        .iter()
                        .map(|&(a, fy, fx, ph)| a * (fy * y as f64 + fx * x as f64 + ph).cos())
                        .sum::<f64>();
            }
        }
    }

    let color: Vec<f64> = (0..CHANNELS).map(|_| rng.uniform(0.75, 1.0)).collect();
    let radius = rng.uniform(5.0, 9.0);
    let cy = rng.uniform(radius + 1.0, SIDE as f64 - radius - 1.0);
    let cx = rng.uniform(radius + 1.0, SIDE as f64 - radius - 1.0);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let inside = if label == 0 {
                dy * dy + dx * dx <= radius * radius
            } else {
                let d = dy.abs().max(dx.abs());
                d <= radius && d >= radius - 2.5
            };
            if inside {
                for (c, plane) in img.iter_mut().enumerate() {
                    plane[y][x] = color[c];
                }
            }
        }
    }

    let mut bytes = Vec::with_capacity(IMAGE_BYTES);
    for plane in &img {
        for row in plane {
            for &v in row {
                let noisy = v + 0.04 * rng.normal();
                bytes.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    bytes
}

/// `count` records with alternating labels 0, 1, 0, ...
pub fn synth_batch(count: usize, seed: u64) -> Result<Vec<u8>> {
    let mut rng = SplitMix64::new(seed);
    let records: Vec<(u8, Vec<u8>)> = (0..count)
        .map(|i| {
            let label = (i % SYNTH_CLASSES) as u8;
            (label, synth_record(&mut rng, label))
        })
        .collect();
    write_cifar10_batch(records.iter().map(|(l, p)| (*l, p.as_slice())))
}

/// Same images as [`synth_batch`], decoded.
pub fn synth_dataset(count: usize, seed: u64) -> Result<Dataset> {
    read_cifar10_batch(&synth_batch(count, seed)?)
}

/// Writes `data_batch_1.bin` and `test_batch.bin` into `dir`. The test set
/// uses a seed derived from `seed` so the two never share images.
pub fn write_synth_dir(dir: &Path, train_count: usize, test_count: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(TRAIN_FILES[0]), synth_batch(train_count, seed)?)?;
    std::fs::write(dir.join(TEST_FILE), synth_batch(test_count, test_seed(seed))?)?;
    Ok(())
}

pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_7E57_0000_0001
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let a = synth_batch(6, 3).unwrap();
        assert_eq!(a, synth_batch(6, 3).unwrap());
        assert_ne!(a, synth_batch(6, 4).unwrap());
        let ds = read_cifar10_batch(&a).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0, 1, 0, 1]);
        assert_eq!(ds.image_shape(), [3, 32, 32]);
    }

    #[test]
    fn writes_directory() {
        let dir = tempfile::tempdir().unwrap();
        write_synth_dir(dir.path(), 4, 2, 1).unwrap();
        let train = crate::io::cifar::load_batches(&crate::io::cifar::train_files(dir.path())).unwrap();
        let test = read_cifar10_batch(&std::fs::read(dir.path().join(TEST_FILE)).unwrap()).unwrap();
        assert_eq!((train.len(), test.len()), (4, 2));
        assert_ne!(train.image_data(0), test.image_data(0));
    }
}
