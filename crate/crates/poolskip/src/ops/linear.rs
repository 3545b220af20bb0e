//! Affine map `x . w + b` for the classifier head.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x` is `[batch, features]`, `w` is `[features, out]`, `b` is `[out]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, feats) = match x.shape() {
        [n, f] => (*n, *f),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "linear input must be [batch, features], got {other:?}"
            )))
        }
    };
    let (wf, out) = match w.shape() {
        [f, o] => (*f, *o),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "linear weight must be [features, out], got {other:?}"
            )))
        }
    };
    if wf != feats || b.shape() != [out] {
        return Err(Error::ShapeMismatch(format!(
            "linear: x {:?}, w {:?}, b {:?} do not conform",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }

    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut y = vec![0.0; batch * out];
    for i in 0..batch {
        for o in 0..out {
            let mut acc = bd[o];
            for f in 0..feats {
                acc += xd[i * feats + f] * wd[f * out + o];
            }
            y[i * out + o] = acc;
        }
    }
    Tensor::from_data(&[batch, out], y)
}

/// Returns `(grad_x, grad_w, grad_b)` for the affine map.
pub fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, feats) = (x.shape()[0], x.shape()[1]);
    let out = w.shape()[1];
    if grad_out.shape() != [batch, out] {
        return Err(Error::ShapeMismatch(format!(
            "linear_backward: grad {:?}, expected [{batch}, {out}]",
            grad_out.shape()
        )));
    }
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());

    let mut gx = vec![0.0; batch * feats];
    let mut gw = vec![0.0; feats * out];
    let mut gb = vec![0.0; out];
    for i in 0..batch {
        for o in 0..out {
            let g = gd[i * out + o];
            gb[o] += g;
            for f in 0..feats {
                gx[i * feats + f] += g * wd[f * out + o];
                gw[f * out + o] += g * xd[i * feats + f];
            }
        }
    }
    Ok((
        Tensor::from_data(&[batch, feats], gx)?,
        Tensor::from_data(&[feats, out], gw)?,
        Tensor::from_data(&[out], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias() {
        let x = Tensor::from_data(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_data(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert_eq!(linear_forward(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn dot_product_with_bias() {
        let x = Tensor::from_data(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_data(&[2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_data(&[1], vec![3.0]).unwrap();
        assert_eq!(linear_forward(&x, &w, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn zero_input_rows_equal_bias() {
        let x = Tensor::zeros(&[3, 2]).unwrap();
        let w = Tensor::filled(&[2, 2], 5.0).unwrap();
        let b = Tensor::from_data(&[2], vec![0.5, -0.5]).unwrap();
        let y = linear_forward(&x, &w, &b).unwrap();
        for i in 0..3 {
            assert_eq!(y.get(&[i, 0]), 0.5);
            assert_eq!(y.get(&[i, 1]), -0.5);
        }
    }

    #[test]
    fn nonconforming_shapes_rejected() {
        let x = Tensor::zeros(&[1, 3]).unwrap();
        let w = Tensor::zeros(&[2, 1]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert!(linear_forward(&x, &w, &b).is_err());
    }

    #[test]
    fn backward_matches_hand_computation() {
        let x = Tensor::from_data(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_data(&[2, 1], vec![3.0, 4.0]).unwrap();
        let g = Tensor::from_data(&[1, 1], vec![2.0]).unwrap();
        let (gx, gw, gb) = linear_backward(&x, &w, &g).unwrap();
        assert_eq!(gx.data(), &[6.0, 8.0]);
        assert_eq!(gw.data(), &[2.0, 4.0]);
        assert_eq!(gb.data(), &[2.0]);
    }
}
