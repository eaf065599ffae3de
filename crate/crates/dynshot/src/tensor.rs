use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
///
/// The constructor enforces `product(shape) == data.len()`; the shape and the
/// backing length can never drift apart afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorValue {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                node: "tensor literal".into(),
                detail: format!(
                    "shape {:?} implies {} entries, got {}",
                    shape,
                    expected,
                    data.len()
                ),
            });
        }
        Ok(TensorValue { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        TensorValue {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Scalars are carried as shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        TensorValue {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        TensorValue {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(TensorValue::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(TensorValue::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn scalar_is_shape_one() {
        let s = TensorValue::scalar(4.25);
        assert_eq!(s.shape(), &[1]);
        assert_eq!(s.data(), &[4.25]);
    }
}
