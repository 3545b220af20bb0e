//! Dense row-major tensors in double precision.
//!
//! Shapes follow the layout order (batch, channel, height, width) for 4-D
//! data; lower ranks drop leading axes, so a 2-D tensor is (height, width).
//! All stride arithmetic lives here so kernel code can index logically.

use crate::error::{Error, Result};

/// Spatial extents of a 2-D feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape2D {
    pub h: usize,
    pub w: usize,
}

impl Shape2D {
    pub fn new(h: usize, w: usize) -> Self {
        Shape2D { h, w }
    }
}

/// Dense N-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from explicit row-major values.
    pub fn from_data(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::ZeroExtent(shape.to_vec()));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, got {} values",
                shape,
                expected,
                values.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: values,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::ZeroExtent(shape.to_vec()));
        }
        let len = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Tensor> {
        let mut t = Tensor::zeros(shape)?;
        t.data.iter_mut().for_each(|v| *v = value);
        Ok(t)
    }

    /// Convenience constructor for 2-D tensors from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let h = rows.len();
        let w = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_data(&[h, w], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &extent)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < extent, "index {ix} out of bounds at axis {i}");
            off = off * extent + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Elementwise sum; shapes must match exactly (no broadcasting).
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Every element multiplied by `s`; shape preserved.
    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Interprets the tensor as (batch, channel, height, width), padding
    /// missing leading axes with 1. Rank must be between 2 and 4.
    pub fn as_nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            [h, w] => Ok((1, 1, *h, *w)),
            [c, h, w] => Ok((1, *c, *h, *w)),
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            other => Err(Error::ShapeMismatch(format!(
                "expected rank 2..=4 spatial tensor, got shape {other:?}"
            ))),
        }
    }

    /// Rebuilds a shape with the same rank as `self` but new spatial extents.
    pub fn shape_with_hw(&self, h: usize, w: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        let r = s.len();
        s[r - 2] = h;
        s[r - 1] = w;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_data_row_major() {
        let t = Tensor::from_data(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(&[0, 1]), 2.0);
        assert_eq!(t.get(&[1, 0]), 3.0);
    }

    #[test]
    fn from_data_scalar_like() {
        let t = Tensor::from_data(&[1], vec![0.0]).unwrap();
        assert_eq!(t.get(&[0]), 0.0);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn from_data_length_mismatch() {
        let err = Tensor::from_data(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn zero_extent_rejected() {
        let err = Tensor::from_data(&[2, 0], vec![]).unwrap_err();
        assert!(matches!(err, Error::ZeroExtent(_)));
    }

    #[test]
    fn add_identity_and_inverse() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let zero = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(a.add(&zero).unwrap(), a);

        let b = Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let nb = Tensor::from_rows(&[vec![-1.0, 1.0]]).unwrap();
        assert_eq!(b.add(&nb).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn add_elementwise() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![10.0, 20.0], vec![30.0, 40.0]]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 33.0, 44.0]);
    }

    #[test]
    fn add_shape_mismatch() {
        let a = Tensor::zeros(&[2, 2]).unwrap();
        let b = Tensor::zeros(&[2, 3]).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn scale_cases() {
        let a = Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap();
        assert_eq!(a.scale(0.5).data(), &[1.0, 2.0]);
        assert_eq!(a.scale(0.0).data(), &[0.0, 0.0]);
        let b = Tensor::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(b.scale(-1.0).data(), &[-3.0]);
    }

    #[test]
    fn offset_round_trip() {
        let t = Tensor::from_data(&[2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    let expected = (i * 3 + j) * 4 + k;
                    assert_eq!(t.get(&[i, j, k]), expected as f64);
                }
            }
        }
    }
}
