use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Flat row-major real array with an explicit shape.
///
/// Holds latents, noise draws and model predictions alike.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor {
    data: Vec<f64>,
    shape: Vec<usize>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl NoiseTensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::LengthMismatch { len: data.len(), shape });
        }
        if let Some(step) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self { data: vec![0.0; len], shape })
    }

    /// Builds an `[n, 2]` tensor from planar points.
    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        let data = points.iter().flat_map(|p| p.iter().copied()).collect();
        Self::new(data, vec![points.len(), 2])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of an `[n, 2]` tensor as points.
    pub fn to_points(&self) -> Result<Vec<[f64; 2]>> {
        if self.shape.len() != 2 || self.shape[1] != 2 {
            return Err(Error::ShapeMismatch { expected: vec![self.shape[0], 2], got: self.shape.clone() });
        }
        Ok(self.data.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { expected: self.shape.clone(), got: other.shape.clone() });
        }
        Ok(())
    }

    pub(crate) fn from_parts_unchecked(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { data, shape }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(NoiseTensor::new(vec![], vec![]), Err(Error::InvalidShape(_))));
        assert!(matches!(NoiseTensor::new(vec![], vec![2, 0]), Err(Error::InvalidShape(_))));
        assert!(matches!(NoiseTensor::new(vec![1.0; 3], vec![2, 2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(NoiseTensor::new(vec![1.0, f64::NAN], vec![2]).is_err());
    }

    #[test]
    fn points_round_trip() {
        let pts = [[1.0, 2.0], [3.0, -4.0]];
        let t = NoiseTensor::from_points(&pts).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.to_points().unwrap(), pts.to_vec());
    }
}
