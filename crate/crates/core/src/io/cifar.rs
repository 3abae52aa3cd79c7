//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! a 32x32 image stored channel-major (R plane, G plane, B plane).

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Dataset, Tensor};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = CHANNELS * SIDE * SIDE;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const CLASS_COUNT: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

const FMT: &str = "cifar10";

pub fn read_cifar10_batch(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::format(
            FMT,
            "length",
            format!("{} bytes is not a positive multiple of {RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * IMAGE_BYTES);
    for (r, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CLASS_COUNT {
            return Err(Error::format(
                FMT,
                "label",
                format!("record {r} has label {label} > 9"),
            ));
        }
        labels.push(label);
        data.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![n, CHANNELS, SIDE, SIDE], data)?, labels)
}

/// Encodes labelled 3072-byte images as a batch file.
pub fn write_cifar10_batch<'a>(records: impl IntoIterator<Item = (u8, &'a [u8])>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (label, pixels) in records {
        if label as usize >= CLASS_COUNT || pixels.len() != IMAGE_BYTES {
            return Err(Error::InvalidArgument(format!(
                "record needs label < 10 and {IMAGE_BYTES} pixels, got label {label} and {} pixels",
                pixels.len()
            )));
        }
        out.push(label);
        out.extend_from_slice(pixels);
    }
    Ok(out)
}

/// Loads every batch file in `paths` and concatenates them in order.
pub fn load_batches(paths: &[PathBuf]) -> Result<Dataset> {
    let parts = paths
        .iter()
        .map(|p| read_cifar10_batch(&std::fs::read(p)?))
        .collect::<Result<Vec<_>>>()?;
    Dataset::concat(&parts)
}

/// Training batch files present in a CIFAR-10 binary directory.
pub fn train_files(dir: &Path) -> Vec<PathBuf> {
    TRAIN_FILES
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.is_file())
        .collect()
}
