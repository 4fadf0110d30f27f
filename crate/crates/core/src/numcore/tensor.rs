//! Dense tensor of 64-bit floats in row-major order.
//!
//! This is the universal value carrier for states (clean, degraded, terminal
//! noise, trajectory points). Everything in this crate is desk-scale, so the
//! representation is a flat `Vec<f64>` plus an explicit shape; no views, no
//! strides, no broadcasting.
//!
//! Shape mismatches between operands are programmer error and panic.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64`, row-major.
///
/// Invariants: `shape.iter().product() == data.len()` and every value is
/// finite. Constructors validate both; arithmetic preserves finiteness for
/// finite inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating the shape/data contract.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Input("tensor shape extents must be positive".into()));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Input(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {}",
                data[i], i
            )));
        }
        Ok(Self { shape, data })
    }

    /// 1-D tensor from a slice.
    pub fn from_slice(values: &[f64]) -> Self {
        Self::new(vec![values.len()], values.to_vec()).expect("finite 1-D tensor")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        assert!(
            shape.iter().all(|&d| d > 0),
            "shape extents must be positive"
        );
        Self {
            shape,
            data: vec![0.0; n],
        }
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

    /// `self + other`, elementwise.
    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, |a, b| a + b)
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self * k`, elementwise.
    pub fn scale(&self, k: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// `a*self + b*other`, the workhorse for trajectory mixtures.
    pub fn affine(&self, a: f64, other: &Tensor, b: f64) -> Tensor {
        self.assert_same_shape(other);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.assert_same_shape(other);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    /// Returns an error naming the first non-finite entry, if any.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{context}: non-finite value at flat index {i}"
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        self.assert_same_shape(other);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn assert_same_shape(&self, other: &Tensor) {
        assert_eq!(
            self.shape, other.shape,
            "tensor shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_data_mismatch() {
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn affine_mixes() {
        let a = Tensor::from_slice(&[1.0, 2.0]);
        let b = Tensor::from_slice(&[3.0, -1.0]);
        let m = a.affine(0.5, &b, 0.5);
        assert_eq!(m.data(), &[2.0, 0.5]);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_panics_on_shape_mismatch() {
        let a = Tensor::from_slice(&[1.0]);
        let b = Tensor::from_slice(&[1.0, 2.0]);
        let _ = a.add(&b);
    }

    #[test]
    fn norms() {
        let t = Tensor::from_slice(&[3.0, 4.0]);
        assert_eq!(t.sq_norm(), 25.0);
        assert_eq!(t.norm(), 5.0);
    }
}
