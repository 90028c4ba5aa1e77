//! Row-major `rows × dim` matrices of `f32` embeddings plus the cosine
//! primitives every stage shares.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Norms at or below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ShapeMismatch(
                "feature dimension must be >= 1".into(),
            ));
        }
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{rows} x {dim} matrix needs {} values, got {}",
                rows.saturating_mul(dim),
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        assert!(dim >= 1, "feature dimension must be >= 1");
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::ShapeMismatch("no rows".into()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Accepts `[rows, dim]` tensors.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.dims() {
            [rows, dim] => Self::new(rows, dim, t.into_data()),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a 2-d [rows, dim] tensor, got dims {:?}",
                t.dims()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.dim], self.data.clone()).expect("consistent shape")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            dim: self.dim,
            data,
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub fn is_zero_row(a: &[f32]) -> bool {
    norm(a) <= ZERO_NORM
}

/// Cosine similarity in `f64`; zero on either side yields 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return 0.0;
    }
    // + 0.0 maps -0.0 to 0.0 so equal scores compare equal under total order
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0) + 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!(cosine(&[0.0, 2.0], &[-1.0, 0.0]).is_sign_positive());
    }

    #[test]
    fn shape_checks() {
        assert!(FeatureMatrix::new(2, 3, vec![0.0; 5]).is_err());
        assert!(FeatureMatrix::new(2, 0, vec![]).is_err());
        let m = FeatureMatrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(FeatureMatrix::from_tensor(m.to_tensor()).unwrap(), m);
    }
}
