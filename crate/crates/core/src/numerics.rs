//! Flat parameter-vector arithmetic shared by all other modules.
//!
//! Everything is 64-bit; summations run left-to-right in the order given so
//! results are bit-reproducible.

use crate::error::{Error, Result};

/// One agent's flat model parameters (or a gradient of the same shape).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: vec![0.0; len],
        }
    }

    /// Wrap raw values, rejecting NaN/Inf entries.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite parameter value at index {i}"
            )));
        }
        Ok(ParamVector { values })
    }

    /// Wrap raw values without the finiteness check. Used where overflow is
    /// detected downstream (the trainer aborts on non-finite loss).
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Element-wise `self + s * src`.
    pub fn add_scaled(&self, src: &ParamVector, s: f64) -> Result<ParamVector> {
        let mut out = self.clone();
        out.add_scaled_in_place(src, s)?;
        Ok(out)
    }

    /// In-place element-wise `self += s * src`.
    pub fn add_scaled_in_place(&mut self, src: &ParamVector, s: f64) -> Result<()> {
        if self.len() != src.len() {
            return Err(Error::DimensionMismatch {
                left: self.len(),
                right: src.len(),
            });
        }
        for (d, v) in self.values.iter_mut().zip(&src.values) {
            *d += s * v;
        }
        Ok(())
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Vec<f64> {
        v.values
    }
}

/// Element-wise arithmetic mean, accumulated left-to-right over `vs`.
///
/// Callers that need permutation invariance must pass the vectors in a
/// canonical order (the trainer sorts by agent id).
pub fn mean_of(vs: &[&ParamVector]) -> Result<ParamVector> {
    let first = vs
        .first()
        .ok_or_else(|| Error::invalid("mean_of: empty input"))?;
    let len = first.len();
    let mut acc = vec![0.0; len];
    for v in vs {
        if v.len() != len {
            return Err(Error::DimensionMismatch {
                left: len,
                right: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(ParamVector { values: acc })
}
