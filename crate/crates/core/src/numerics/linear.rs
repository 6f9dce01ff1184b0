use rand::Rng;

use super::{uniform_vec, Matrix};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W: out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn uniform(input: usize, output: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Matrix::uniform(output, input, scale, rng),
            bias: uniform_vec(output, scale, rng),
        }
    }

    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::shape(format!(
                "weight has {} rows but bias has {} entries",
                weight.rows(),
                bias.len()
            )));
        }
        Ok(Linear { weight, bias })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.weight.gemv_add(x, &mut y);
        y
    }

    /// Accumulates dW, db into `grad` and, if requested, dx into `dx`.
    #[inline]
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        grad.weight.ger_add(dy, x);
        super::add_assign(&mut grad.bias, dy);
        if let Some(dx) = dx {
            self.weight.gemv_t_add(dy, dx);
        }
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [self.weight.data(), &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.data_mut(), &mut self.bias]
    }
}

/// Shape-checked linear map.
pub fn linb(x: &[f64], params: &Linear) -> Result<Vec<f64>> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(format!(
            "input of length {} for a layer expecting {}",
            x.len(),
            params.input_dim()
        )));
    }
    Ok(params.forward(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map() {
        let lin = Linear::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(linb(&[1.0, 2.0], &lin).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn constant_map() {
        let lin = Linear::new(Matrix::zeros(2, 3), vec![3.0, 3.0]).unwrap();
        assert_eq!(linb(&[5.0, -1.0, 9.0], &lin).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn shape_mismatch() {
        let lin = Linear::zeros(3, 2);
        assert!(matches!(linb(&[1.0], &lin), Err(Error::Shape(_))));
        assert!(Linear::new(Matrix::zeros(2, 2), vec![0.0]).is_err());
    }
}
