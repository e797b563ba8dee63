use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat parameter vector in a network's canonical ordering.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn filled(n: usize, v: f64) -> Self {
        Self(vec![v; n])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) -> Result<()> {
        if x.len() != self.0.len() {
            return Err(Error::dim("axpy", self.0.len(), x.len()));
        }
        for (a, b) in self.0.iter_mut().zip(x) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.0).sqrt()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Sums a sequence of equally sized vectors in order and divides by the
/// count. Fixed left-to-right order keeps reductions deterministic.
pub fn mean_of(vectors: &[ParamVector]) -> Option<ParamVector> {
    let first = vectors.first()?;
    let mut acc = ParamVector::zeros(first.len());
    for v in vectors {
        for (a, b) in acc.iter_mut().zip(v.iter()) {
            *a += b;
        }
    }
    acc.scale(1.0 / vectors.len() as f64);
    Some(acc)
}
