//! Scalar images and vector fields on regular grids.
//!
//! All grids use unit voxel spacing and row-major storage. Axis 0 is the
//! slowest-varying axis (rows in 2D).

mod interp;
pub mod io;

pub use interp::{interpolate, Sampler};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D or 3D intensity grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        validate_shape(&shape)?;
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the voxels. Callers must keep the values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &k)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < k, "index {ix} out of bounds on axis {i}");
            flat = flat * k + ix;
        }
        flat
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    /// Sum of squared voxel differences.
    pub fn ssd(&self, other: &ScalarImage) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn check_same_shape(&self, other: &ScalarImage) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Iterate over all multi-indices in row-major order.
    pub fn indices(&self) -> GridIndices {
        GridIndices::new(&self.shape)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if !(2..=3).contains(&shape.len()) {
        return Err(Error::InvalidArgument(format!(
            "images must be 2D or 3D, got {} axes",
            shape.len()
        )));
    }
    if shape.iter().any(|&k| k == 0) {
        return Err(Error::InvalidArgument(format!(
            "zero-length axis in shape {shape:?}"
        )));
    }
    Ok(())
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    strides
}

/// Row-major multi-index iterator.
#[derive(Clone, Debug)]
pub struct GridIndices {
    shape: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl GridIndices {
    pub fn new(shape: &[usize]) -> Self {
        let next = if shape.iter().all(|&k| k > 0) {
            Some(vec![0; shape.len()])
        } else {
            None
        };
        Self {
            shape: shape.to_vec(),
            next,
        }
    }
}

impl Iterator for GridIndices {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut axis = succ.len();
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            succ[axis] += 1;
            if succ[axis] < self.shape[axis] {
                self.next = Some(succ);
                break;
            }
            succ[axis] = 0;
        }
        Some(current)
    }
}

/// One `dim`-vector per grid node, stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    shape: Vec<usize>,
    dim: usize,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(shape: Vec<usize>, dim: usize, data: Vec<f64>) -> Result<Self> {
        let expected = dim * shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field"));
        }
        Ok(Self { shape, dim, data })
    }

    pub fn from_points<const D: usize>(shape: Vec<usize>, points: &[[f64; D]]) -> Result<Self> {
        let data = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self::new(shape, D, data)
    }

    pub fn to_points<const D: usize>(&self) -> Result<Vec<[f64; D]>> {
        if self.dim != D {
            return Err(Error::ShapeMismatch(format!(
                "vector dimension {} requested as {D}",
                self.dim
            )));
        }
        Ok(self
            .data
            .chunks_exact(D)
            .map(|c| std::array::from_fn(|i| c[i]))
            .collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Euclidean norm at every node, as an image over the same grid.
    pub fn norms(&self) -> Result<ScalarImage> {
        let data = self
            .data
            .chunks_exact(self.dim)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        ScalarImage::new(self.shape.clone(), data)
    }
}

/// Axis-aligned box with half-open `[min, max)` bounds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub min: Vec<usize>,
    pub max: Vec<usize>,
}

impl RoiBox {
    pub fn new(min: Vec<usize>, max: Vec<usize>) -> Result<Self> {
        if min.len() != max.len() || min.iter().zip(&max).any(|(lo, hi)| lo >= hi) {
            return Err(Error::InvalidArgument(format!(
                "empty or malformed roi {min:?}..{max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn full(shape: &[usize]) -> Self {
        Self {
            min: vec![0; shape.len()],
            max: shape.to_vec(),
        }
    }

    pub fn check_within(&self, shape: &[usize]) -> Result<()> {
        if self.min.len() != shape.len() || self.max.iter().zip(shape).any(|(hi, k)| hi > k) {
            return Err(Error::InvalidArgument(format!(
                "roi {:?}..{:?} outside shape {shape:?}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(i, (lo, hi))| i >= lo && i < hi)
    }

    pub fn voxel_count(&self) -> usize {
        self.min.iter().zip(&self.max).map(|(lo, hi)| hi - lo).product()
    }
}

/// Voxelwise arithmetic mean.
pub fn mean_image(images: &[ScalarImage]) -> Result<ScalarImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of an empty image list".into()))?;
    // running mean: identical inputs give their common value exactly
    let mut acc = first.data().to_vec();
    for (k, img) in images.iter().enumerate().skip(1) {
        first.check_same_shape(img)?;
        let w = 1.0 / (k + 1) as f64;
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += (v - *a) * w;
        }
    }
    ScalarImage::new(first.shape().to_vec(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_payloads() {
        assert!(ScalarImage::zeros(vec![4]).is_err());
        assert!(ScalarImage::zeros(vec![2, 0]).is_err());
        assert!(matches!(
            ScalarImage::new(vec![2, 2], vec![0.0; 3]),
            Err(Error::SizeMismatch { expected: 4, found: 3 })
        ));
        assert!(ScalarImage::new(vec![1, 2], vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn grid_indices_are_row_major() {
        let all: Vec<_> = GridIndices::new(&[2, 3]).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[3], vec![1, 0]);
        let img = ScalarImage::zeros(vec![2, 3, 4]).unwrap();
        for (flat, ix) in img.indices().enumerate() {
            assert_eq!(img.flat_index(&ix), flat);
        }
    }

    #[test]
    fn mean_of_duplicates_is_identity() {
        let img = ScalarImage::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let m = mean_image(&[img.clone(), img.clone()]).unwrap();
        assert_eq!(m, img);
        let m = mean_image(&vec![img.clone(); 10]).unwrap();
        assert_eq!(m, img);
    }

    #[test]
    fn mean_of_zeros_and_ones() {
        let z = ScalarImage::zeros(vec![3, 3]).unwrap();
        let o = ScalarImage::filled(vec![3, 3], 1.0).unwrap();
        let m = mean_image(&[z, o]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mean_of_random_images_matches_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let images: Vec<_> = (0..20)
            .map(|_| {
                let data = (0..30).map(|_| rng.gen::<f64>()).collect();
                ScalarImage::new(vec![5, 6], data).unwrap()
            })
            .collect();
        let m = mean_image(&images).unwrap();
        for v in 0..30 {
            let mut sum = 0.0;
            for img in &images {
                sum += img.data()[v];
            }
            assert!((m.data()[v] - sum / 20.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mean_errors() {
        assert!(mean_image(&[]).is_err());
        let a = ScalarImage::zeros(vec![2, 2]).unwrap();
        let b = ScalarImage::zeros(vec![2, 3]).unwrap();
        assert!(matches!(mean_image(&[a, b]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn roi_validation() {
        assert!(RoiBox::new(vec![1, 1], vec![1, 3]).is_err());
        let roi = RoiBox::new(vec![1, 1], vec![3, 4]).unwrap();
        assert_eq!(roi.voxel_count(), 6);
        assert!(roi.check_within(&[4, 4]).is_ok());
        assert!(roi.check_within(&[4, 3]).is_err());
        assert!(roi.contains(&[2, 3]));
        assert!(!roi.contains(&[3, 3]));
    }
}
