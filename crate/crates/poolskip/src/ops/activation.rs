//! ReLU and its subgradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(x, 0)`.
pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `grad_out` where the pre-activation is strictly positive and is
/// exactly 0 where `x <= 0`, including at the kink.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu_backward: {:?} vs {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_data(x.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_definition() {
        let x = Tensor::from_data(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn forward_all_negative_is_fully_dead() {
        let x = Tensor::from_data(&[4], vec![-1.0, -0.5, -3.0, -0.1]).unwrap();
        assert!(relu_forward(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_non_negative_unchanged() {
        let x = Tensor::from_data(&[3], vec![0.5, 1.0, 7.0]).unwrap();
        assert_eq!(relu_forward(&x), x);
    }

    #[test]
    fn backward_gate() {
        let x = Tensor::from_data(&[2], vec![-1.0, 2.0]).unwrap();
        let g = Tensor::from_data(&[2], vec![5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 5.0]);
    }

    #[test]
    fn backward_kink_is_zero() {
        let x = Tensor::from_data(&[1], vec![0.0]).unwrap();
        let g = Tensor::from_data(&[1], vec![9.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_shape_mismatch() {
        let x = Tensor::zeros(&[2]).unwrap();
        let g = Tensor::zeros(&[3]).unwrap();
        assert!(relu_backward(&x, &g).is_err());
    }
}
