//! Dense tensors, gray-level maps and labelled image datasets.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Sub};

use crate::error::{Error, Result};

/// Floating point element type used by the network engine.
///
/// `f32` is the storage type of every file format; `f64` exists so gradient
/// checks can run with enough precision for finite differences.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

pub const MAX_RANK: usize = 4;

/// Row-major dense array with 1 to 4 dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::Shape(format!(
                "rank {} outside 1..={MAX_RANK}",
                shape.len()
            )));
        }
        if let Some(d) = shape.iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!("dimension {d} is zero in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![T::ZERO; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Returns item `index` along the leading axis as a tensor of rank - 1.
    pub fn slice_first(&self, index: usize) -> Result<Self> {
        if self.shape.len() < 2 {
            return Err(Error::Shape("cannot slice a rank-1 tensor".into()));
        }
        if index >= self.shape[0] {
            return Err(Error::Shape(format!(
                "index {index} out of range for leading dimension {}",
                self.shape[0]
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        })
    }
}

/// 2D grid of 8-bit intensities, row-major with row index first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayMap {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayMap {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty {height}x{width} map")));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{height}x{width} map needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayMap {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Pixel at row `i`, column `j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.pixels[i * self.width + j]
    }

    pub fn transpose(&self) -> GrayMap {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for j in 0..self.width {
            for i in 0..self.height {
                pixels.push(self.get(i, j));
            }
        }
        GrayMap {
            width: self.height,
            height: self.width,
            pixels,
        }
    }

    /// Applies `f` to every intensity value.
    pub fn relabel(&self, f: impl Fn(u8) -> u8) -> GrayMap {
        GrayMap {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }
}

/// Images of shape (N, C, H, W) with values in [0, 1], plus one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "dataset images must be (N, C, H, W), got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// (C, H, W) of a single image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, index: usize) -> Result<Tensor<f32>> {
        self.images.slice_first(index)
    }

    /// Raw pixel slice of image `index`, without allocating.
    pub fn image_data(&self, index: usize) -> &[f32] {
        let [c, h, w] = self.image_shape();
        let n = c * h * w;
        &self.images.data()[index * n..(index + 1) * n]
    }

    pub fn check_labels(&self, class_count: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= class_count) {
            Some(&class) => Err(Error::ClassOutOfRange {
                class,
                count: class_count,
            }),
            None => Ok(()),
        }
    }

    /// Builds a dataset from the given image indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let [c, h, w] = self.image_shape();
        if indices.is_empty() {
            return Err(Error::Shape("empty selection".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("image index {i} out of range")));
            }
            data.extend_from_slice(self.image_data(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(Tensor::new(vec![indices.len(), c, h, w], data)?, labels)
    }

    /// Keeps only images whose label is in `classes` (at most `limit` of
    /// them, in file order) and relabels them by position in `classes`.
    pub fn class_subset(&self, classes: &[usize], limit: Option<usize>) -> Result<Dataset> {
        let mut indices = Vec::new();
        let mut labels = Vec::new();
        for (i, label) in self.labels.iter().enumerate() {
            if limit.is_some_and(|l| indices.len() >= l) {
                break;
            }
            if let Some(pos) = classes.iter().position(|c| c == label) {
                indices.push(i);
                labels.push(pos);
            }
        }
        let mut subset = self.select(&indices)?;
        subset.labels = labels;
        Ok(subset)
    }

    /// Concatenates datasets with identical image shapes.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("no datasets to concatenate".into()))?;
        let shape = first.image_shape();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for part in parts {
            if part.image_shape() != shape {
                return Err(Error::Shape(format!(
                    "image shape {:?} differs from {:?}",
                    part.image_shape(),
                    shape
                )));
            }
            data.extend_from_slice(part.images.data());
            labels.extend_from_slice(&part.labels);
        }
        let n = labels.len();
        Dataset::new(Tensor::new(vec![n, shape[0], shape[1], shape[2]], data)?, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![0, 3], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn graymap_transpose_is_involution() {
        let m = GrayMap::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let t = m.transpose();
        assert_eq!((t.width(), t.height()), (2, 3));
        assert_eq!(t.pixels(), &[1, 4, 2, 5, 3, 6]);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn class_subset_relabels() {
        let images = Tensor::new(vec![4, 1, 1, 1], vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let ds = Dataset::new(images, vec![3, 7, 3, 5]).unwrap();
        let sub = ds.class_subset(&[7, 3], None).unwrap();
        assert_eq!(sub.labels(), &[1, 0, 1]);
        assert_eq!(sub.images().data(), &[0.0, 0.1, 0.2]);
        let sub = ds.class_subset(&[7, 3], Some(2)).unwrap();
        assert_eq!(sub.len(), 2);
    }
}
