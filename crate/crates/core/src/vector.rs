//! Fixed-dimension dense vectors of `f64`.
//!
//! Every constructor and arithmetic method checks that the result is finite,
//! so a `DenseVector` never holds NaN or infinity. Summations run in index
//! order with no compensation or reassociation, which keeps results
//! bit-reproducible across ports.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    /// Wraps `data`, rejecting empty input and non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::domain("vector dimension must be positive"));
        }
        check_finite(&data)?;
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Self {
            data: vec![0.0; dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(dot(&self.data, &other.data))
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &DenseVector) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        check_finite(&self.data)
    }

    /// Returns `self - other`.
    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        self.check_dim(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        check_finite(&data)?;
        Ok(Self { data })
    }

    pub fn scale(&mut self, factor: f64) -> Result<()> {
        for a in &mut self.data {
            *a *= factor;
        }
        check_finite(&self.data)
    }

    pub fn inf_norm(&self) -> f64 {
        inf_norm(&self.data)
    }

    pub fn l2_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    fn check_dim(&self, other: &DenseVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        Self::new(data)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.data
    }
}

/// Arithmetic mean of equally sized vectors, summed in slice order.
pub fn mean(vectors: &[DenseVector]) -> Result<DenseVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::domain("mean of an empty vector list"))?;
    let mut acc = vec![0.0; first.dim()];
    for v in vectors {
        if v.dim() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                got: v.dim(),
            });
        }
        for (a, b) in acc.iter_mut().zip(v.as_slice()) {
            *a += b;
        }
    }
    let count = vectors.len() as f64;
    for a in &mut acc {
        *a /= count;
    }
    DenseVector::new(acc)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(data: &[f64]) -> DenseVector {
        DenseVector::new(data.to_vec()).unwrap()
    }

    #[test]
    fn zero_vector_norms() {
        let z = DenseVector::zeros(3);
        assert_eq!(z.inf_norm(), 0.0);
        assert_eq!(z.l2_norm(), 0.0);
    }

    #[test]
    fn three_four_five() {
        let x = v(&[3.0, -4.0]);
        assert_eq!(x.inf_norm(), 4.0);
        assert_eq!(x.l2_norm(), 5.0);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            DenseVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(DenseVector::new(vec![f64::INFINITY]).is_err());
        assert!(DenseVector::new(vec![]).is_err());
    }

    #[test]
    fn overflow_in_axpy_is_reported() {
        let mut a = v(&[f64::MAX]);
        let b = v(&[f64::MAX]);
        assert!(a.axpy(1.0, &b).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let a = v(&[1.0, 2.0]);
        let b = v(&[1.0]);
        assert!(matches!(
            a.dot(&b),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn mean_of_two() {
        let m = mean(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert_eq!(m.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn serde_rejects_nan_like_input() {
        let ok: DenseVector = serde_json::from_str("[1.0, 2.5]").unwrap();
        assert_eq!(ok.as_slice(), &[1.0, 2.5]);
        assert!(serde_json::from_str::<DenseVector>("[]").is_err());
    }

    proptest! {
        #[test]
        fn norm_equivalence(data in prop::collection::vec(-1e6f64..1e6, 1..32)) {
            let x = DenseVector::new(data).unwrap();
            let inf = x.inf_norm();
            let l2 = x.l2_norm();
            let d = x.dim() as f64;
            // one ulp of slack for the rounded square root
            prop_assert!(inf <= l2 * (1.0 + 1e-15));
            prop_assert!(l2 <= d.sqrt() * inf * (1.0 + 1e-15));
        }
    }
}
