//! Flat sample arrays with labels, the unit of 1-NN distance computation.

use crate::error::{Error, Result};
use crate::latent::Label;

/// `n` samples of a fixed shape, stored as flattened row-major `f32` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: Vec<usize>,
    row_len: usize,
    data: Vec<f32>,
    labels: Vec<Label>,
    norms: Option<Vec<f32>>,
}

impl Dataset {
    pub fn new(shape: Vec<usize>, data: Vec<f32>, labels: Vec<Label>) -> Result<Self> {
        let row_len: usize = shape.iter().product();
        if shape.is_empty() || row_len == 0 {
            return Err(Error::ShapeMismatch(format!("empty sample shape {shape:?}")));
        }
        if data.len() != row_len * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} samples of shape {shape:?}",
                data.len(),
                labels.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sample {} holds a non-finite value",
                pos / row_len
            )));
        }
        Ok(Self {
            shape,
            row_len,
            data,
            labels,
            norms: None,
        })
    }

    /// Flat `dim`-vectors.
    pub fn flat(dim: usize, data: Vec<f32>, labels: Vec<Label>) -> Result<Self> {
        Self::new(vec![dim], data, labels)
    }

    /// Caches squared row norms, computed with the same kernel the blocked
    /// distance uses.
    pub fn with_norms(mut self) -> Self {
        self.norms = Some(self.rows().map(crate::nn::sq_norm).collect());
        self
    }

    pub fn norms(&self) -> Option<&[f32]> {
        self.norms.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.row_len..(i + 1) * self.row_len]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.row_len)
    }

    /// Appends the rows of `other`, which must have the same shape.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.shape != self.shape {
            return Err(Error::ShapeMismatch(format!(
                "cannot append shape {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.labels.extend_from_slice(&other.labels);
        self.norms = None;
        Ok(())
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>, Vec<Label>) {
        (self.shape, self.data, self.labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape_and_values() {
        assert!(Dataset::flat(2, vec![0.0; 4], vec![0, 1]).is_ok());
        assert!(matches!(
            Dataset::flat(2, vec![0.0; 5], vec![0, 1]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            Dataset::flat(2, vec![0.0, f32::NAN, 0.0, 0.0], vec![0, 1]),
            Err(Error::NonFinite(_))
        ));
        assert!(Dataset::new(vec![4, 0], vec![], vec![]).is_err());
    }

    #[test]
    fn norm_cache_is_accurate() {
        let d = Dataset::flat(3, vec![1.0, 2.0, 2.0, 0.5, 0.0, 0.0], vec![0, 0]).unwrap().with_norms();
        let n = d.norms().unwrap();
        assert!((n[0] - 9.0).abs() <= 9.0 * 1e-4);
        assert!((n[1] - 0.25).abs() <= 0.25 * 1e-4);
    }
}
