//! Dimension-checked dense vector arithmetic.
//!
//! Every harmonization formula is written against [`ParamVector`], a flat
//! `f64` vector holding either model parameters or a gradient over them.
//! Mismatched lengths are always an error, never broadcast.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat, finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    /// Wraps values already known to be finite and non-empty.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        norm_sq(self).sqrt()
    }

    pub fn scale(&self, c: f64) -> ParamVector {
        Self(self.0.iter().map(|v| c * v).collect())
    }

    pub fn neg(&self) -> ParamVector {
        Self(self.0.iter().map(|v| -v).collect())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len(self, other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len(self, other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &ParamVector) -> Result<ParamVector> {
        check_len(self, other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect()))
    }

    /// `a * self + b * other`
    pub fn lincomb(&self, a: f64, b: f64, other: &ParamVector) -> Result<ParamVector> {
        check_len(self, other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(x, y)| a * x + b * y).collect()))
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_len(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

/// Inner product, plain sequential summation.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_len(a, b)?;
    Ok(dot_slices(&a.0, &b.0))
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &ParamVector) -> f64 {
    dot_slices(&a.0, &a.0)
}

/// Angle in `[0, pi]`. The cosine is clamped to `[-1, 1]` before `acos`.
pub fn angle(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    let ab = dot(a, b)?;
    let (na, nb) = (norm_sq(a), norm_sq(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt of the product keeps angle(a, a) at exactly zero
    let cos = ab / (na * nb).sqrt();
    Ok(cos.clamp(-1.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use proptest::prelude::*;

    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn oracle_dot(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        s
    }

    #[test]
    fn construction_rejects_empty_and_non_finite() {
        assert!(matches!(ParamVector::new(vec![]), Err(Error::EmptyVector)));
        assert!(matches!(
            ParamVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
        let parsed: std::result::Result<ParamVector, _> = serde_json::from_str("[]");
        assert!(parsed.is_err());
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(dot(&pv(&[1.0, 2.0]), &pv(&[3.0, 4.0])).unwrap(), 11.0);
        let (a, b) = ([1.0, 0.0], [-1.0, 1.0]);
        assert_eq!(dot(&pv(&a), &pv(&b)).unwrap(), oracle_dot(&a, &b));
        assert_eq!(oracle_dot(&a, &b), -1.0);
    }

    #[test]
    fn dot_dimension_mismatch() {
        let err = dot(&pv(&[1.0]), &pv(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { left: 1, right: 2 }));
        assert!(pv(&[1.0]).add(&pv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn norm_sq_examples() {
        assert_eq!(norm_sq(&pv(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(norm_sq(&pv(&[3.0, 4.0])), 25.0);
        assert_eq!(norm_sq(&pv(&[1.0; 4])), 4.0);
    }

    #[test]
    fn angle_examples() {
        let a = angle(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap();
        assert!((a - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(angle(&pv(&[1.0, 0.0]), &pv(&[-1.0, 0.0])).unwrap(), PI);
        let expected = (-1.0 / 2f64.sqrt()).acos();
        let a = angle(&pv(&[1.0, 0.0]), &pv(&[-1.0, 1.0])).unwrap();
        assert!((a - expected).abs() < 1e-15);
        assert!((a - 3.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn angle_zero_vector_is_error() {
        assert!(matches!(angle(&pv(&[0.0, 0.0]), &pv(&[1.0, 0.0])), Err(Error::ZeroVector)));
    }

    #[test]
    fn angle_survives_rounding_at_parallel() {
        let a = pv(&[0.1, 0.2, 0.3]);
        let b = a.scale(3.0);
        let t = angle(&a, &b).unwrap();
        assert!(t.is_finite() && t < 1e-7);
        assert_eq!(angle(&a, &a).unwrap(), 0.0);
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0..10.0f64, n)
    }

    proptest! {
        #[test]
        fn dot_is_bilinear((a, b, c) in (1usize..20).prop_flat_map(|n| (vecs(n), vecs(n), vecs(n))), alpha in -5.0..5.0f64) {
            let (a, b, c) = (pv(&a), pv(&b), pv(&c));
            let lhs = dot(&a.lincomb(alpha, 1.0, &b).unwrap(), &c).unwrap();
            let rhs = alpha * dot(&a, &c).unwrap() + dot(&b, &c).unwrap();
            let scale = (alpha.abs() * a.norm() + b.norm()) * c.norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn cauchy_schwarz((a, b) in (1usize..20).prop_flat_map(|n| (vecs(n), vecs(n)))) {
            let (a, b) = (pv(&a), pv(&b));
            let d = dot(&a, &b).unwrap();
            let bound = norm_sq(&a) * norm_sq(&b);
            prop_assert!(d * d <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn angle_is_symmetric((a, b) in (1usize..20).prop_flat_map(|n| (vecs(n), vecs(n)))) {
            let (a, b) = (pv(&a), pv(&b));
            prop_assume!(!a.is_zero() && !b.is_zero());
            prop_assert_eq!(angle(&a, &b).unwrap(), angle(&b, &a).unwrap());
        }
    }
}
