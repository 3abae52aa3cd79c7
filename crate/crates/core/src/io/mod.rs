//! File codecs: NPY tensors, CIFAR-10 binary batches, PGM/PPM images.

pub mod cifar;
pub mod npy;
pub mod pnm;

pub use cifar::{read_cifar10_batch, write_cifar10_batch};
pub use npy::{read_npy, write_npy};
pub use pnm::{read_pgm, write_pgm, write_ppm, RgbImage};
