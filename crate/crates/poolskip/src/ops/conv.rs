//! Valid (no-padding) 2-D cross-correlation and its gradients.
//!
//! The kernel is never flipped: `y[i,j] = sum_{m,n} w[m,n] * x[i+m, j+n]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights of a square convolution, stored as `[c_out, c_in, M, M]`.
///
/// The spatial extent `M` must be odd.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    weights: Tensor,
}

impl ConvKernel {
    pub fn new(weights: Tensor) -> Result<ConvKernel> {
        let shape = weights.shape();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel must be [c_out, c_in, M, M], got {shape:?}"
            )));
        }
        if shape[2] != shape[3] {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel must be square, got {}x{}",
                shape[2], shape[3]
            )));
        }
        if shape[2] % 2 == 0 {
            return Err(Error::NonOddKernel(shape[2]));
        }
        Ok(ConvKernel { weights })
    }

    /// Single-channel kernel from a flat `M*M` value list.
    pub fn single(m: usize, values: Vec<f64>) -> Result<ConvKernel> {
        ConvKernel::new(Tensor::from_data(&[1, 1, m, m], values)?)
    }

    pub fn zeros(c_out: usize, c_in: usize, m: usize) -> Result<ConvKernel> {
        ConvKernel::new(Tensor::zeros(&[c_out, c_in, m, m])?)
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Spatial extent M.
    pub fn extent(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn into_weights(self) -> Tensor {
        self.weights
    }
}

/// Valid cross-correlation. Input rank 2 (`[H,W]`), 3 (`[C,H,W]`) or 4
/// (`[N,C,H,W]`); channel count must match the kernel. Output spatial extent
/// is `(floor((H-M)/stride)+1, floor((W-M)/stride)+1)`.
pub fn conv2d_forward(x: &Tensor, k: &ConvKernel, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::ShapeMismatch("stride must be >= 1".into()));
    }
    let (n, c, h, w) = x.as_nchw()?;
    let m = k.extent();
    if m > h {
        return Err(Error::KernelTooLarge { kernel: m, input: h });
    }
    if m > w {
        return Err(Error::KernelTooLarge { kernel: m, input: w });
    }
    if c != k.c_in() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            c,
            k.c_in()
        )));
    }
    let oh = (h - m) / stride + 1;
    let ow = (w - m) / stride + 1;
    let co = k.c_out();

    let mut out = vec![0.0; n * co * oh * ow];
    let xd = x.data();
    let kd = k.weights().data();
    for b in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        let plane = (b * c + ci) * h * w;
                        let kbase = (o * c + ci) * m * m;
                        for mm in 0..m {
                            let row = plane + (i * stride + mm) * w + j * stride;
                            let xrow = &xd[row..row + m];
                            let krow = &kd[kbase + mm * m..kbase + mm * m + m];
                            for (kv, xv) in krow.iter().zip(xrow) {
                                acc += kv * xv;
                            }
                        }
                    }
                    out[((b * co + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }

    let shape = output_shape(x.shape(), co, oh, ow);
    Tensor::from_data(&shape, out)
}

/// Gradients of the stride-1 valid cross-correlation.
///
/// Returns `(grad_x, grad_k)`: `grad_k[m,n] = sum grad_out[i,j] * x[i+m,j+n]`
/// and `grad_x` is the transposed-convolution scatter of `grad_out` by `k`.
pub fn conv2d_backward(x: &Tensor, k: &ConvKernel, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = x.as_nchw()?;
    let m = k.extent();
    let co = k.c_out();
    if c != k.c_in() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            c,
            k.c_in()
        )));
    }
    let oh = h - m + 1;
    let ow = w - m + 1;
    let expected = output_shape(x.shape(), co, oh, ow);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            expected
        )));
    }

    let xd = x.data();
    let kd = k.weights().data();
    let gd = grad_out.data();
    let mut grad_x = vec![0.0; n * c * h * w];
    let mut grad_k = vec![0.0; co * c * m * m];

    for b in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let g = gd[((b * co + o) * oh + i) * ow + j];
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        let plane = (b * c + ci) * h * w;
                        for mm in 0..m {
                            let xrow = plane + (i + mm) * w + j;
                            let krow = ((o * c + ci) * m + mm) * m;
                            let gx = &mut grad_x[xrow..xrow + m];
                            let gk = &mut grad_k[krow..krow + m];
                            let xs = &xd[xrow..xrow + m];
                            let ks = &kd[krow..krow + m];
                            for nn in 0..m {
                                gk[nn] += g * xs[nn];
                                gx[nn] += g * ks[nn];
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((
        Tensor::from_data(x.shape(), grad_x)?,
        Tensor::from_data(k.weights().shape(), grad_k)?,
    ))
}

fn output_shape(in_shape: &[usize], co: usize, oh: usize, ow: usize) -> Vec<usize> {
    match in_shape.len() {
        2 if co == 1 => vec![oh, ow],
        2 => vec![co, oh, ow],
        3 => vec![co, oh, ow],
        _ => vec![in_shape[0], co, oh, ow],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_all_ones_3x3() {
        let x = Tensor::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap();
        let k = ConvKernel::single(3, vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &k, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn forward_zero_kernel() {
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.5, 4.0]]).unwrap();
        let k = ConvKernel::single(1, vec![0.0]).unwrap();
        let y = conv2d_forward(&x, &k, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_1x1_scaling() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let k = ConvKernel::single(1, vec![2.0]).unwrap();
        let y = conv2d_forward(&x, &k, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn forward_kernel_too_large() {
        let x = Tensor::zeros(&[2, 2]).unwrap();
        let k = ConvKernel::single(3, vec![0.0; 9]).unwrap();
        assert!(matches!(
            conv2d_forward(&x, &k, 1),
            Err(Error::KernelTooLarge { kernel: 3, input: 2 })
        ));
    }

    #[test]
    fn forward_multichannel_sums_inputs() {
        // Two input channels, kernel picks each channel's corner.
        let x = Tensor::from_data(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0])
            .unwrap();
        let k = ConvKernel::new(
            Tensor::from_data(&[1, 2, 1, 1], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let y = conv2d_forward(&x, &k, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[11.0, 22.0, 33.0, 44.0]);
    }

    #[test]
    fn forward_stride_two() {
        let x = Tensor::from_data(&[4, 4], (1..=16).map(|v| v as f64).collect()).unwrap();
        let k = ConvKernel::single(1, vec![1.0]).unwrap();
        let y = conv2d_forward(&x, &k, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[1.0, 3.0, 9.0, 11.0]);
    }

    #[test]
    fn non_odd_kernel_rejected() {
        assert!(matches!(
            ConvKernel::zeros(1, 1, 2),
            Err(Error::NonOddKernel(2))
        ));
    }

    #[test]
    fn backward_zero_upstream() {
        let x = Tensor::from_data(&[4, 4], (1..=16).map(|v| v as f64).collect()).unwrap();
        let k = ConvKernel::single(3, (0..9).map(|v| v as f64).collect()).unwrap();
        let g = Tensor::zeros(&[2, 2]).unwrap();
        let (gx, gk) = conv2d_backward(&x, &k, &g).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_1x1_chain_rule() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let k = ConvKernel::single(1, vec![2.5]).unwrap();
        let g = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (gx, gk) = conv2d_backward(&x, &k, &g).unwrap();
        // grad_k = sum g*x, grad_x = w*g
        assert_eq!(gk.data(), &[10.0]);
        assert!(gx.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn backward_shape_mismatch() {
        let x = Tensor::zeros(&[4, 4]).unwrap();
        let k = ConvKernel::single(3, vec![0.0; 9]).unwrap();
        let g = Tensor::zeros(&[3, 3]).unwrap();
        assert!(conv2d_backward(&x, &k, &g).is_err());
    }
}
