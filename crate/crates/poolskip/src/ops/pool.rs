//! Max-pooling over non-overlapping `e x e` blocks, the inverse
//! max-unpooling that restores maxima to their recorded positions, and the
//! one-ring zero pad that grows a map by one element on every side.

use crate::error::{Error, Result};
use crate::tensor::{Shape2D, Tensor};

/// Per-block argmax coordinates recorded by max-pooling.
///
/// One `(row, col)` pair of local offsets in `[0, e)` per block, stored
/// plane-major (a plane is one `(batch, channel)` slice), then block
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    planes: usize,
    grid: (usize, usize),
    e: usize,
    in_hw: (usize, usize),
    coords: Vec<(u32, u32)>,
}

impl PoolIndices {
    /// Block grid extents `(c, d)`.
    pub fn block_grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn pool_size(&self) -> usize {
        self.e
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    /// Spatial extents of the map that was pooled.
    pub fn input_hw(&self) -> (usize, usize) {
        self.in_hw
    }

    pub fn coord(&self, plane: usize, u: usize, v: usize) -> (usize, usize) {
        let (c, d) = self.grid;
        debug_assert!(plane < self.planes && u < c && v < d);
        let (i, j) = self.coords[(plane * c + u) * d + v];
        (i as usize, j as usize)
    }

    /// Placeholder for variants that never pool (empty grid).
    pub fn empty() -> PoolIndices {
        PoolIndices {
            planes: 0,
            grid: (0, 0),
            e: 1,
            in_hw: (0, 0),
            coords: Vec::new(),
        }
    }

    /// Builds indices from explicit coordinates; used by tests and the FFI.
    pub fn from_coords(
        planes: usize,
        grid: (usize, usize),
        e: usize,
        coords: Vec<(u32, u32)>,
    ) -> Result<PoolIndices> {
        if coords.len() != planes * grid.0 * grid.1 {
            return Err(Error::InconsistentIndices(format!(
                "expected {} coordinate pairs, got {}",
                planes * grid.0 * grid.1,
                coords.len()
            )));
        }
        let idx = PoolIndices {
            planes,
            grid,
            e,
            in_hw: (grid.0 * e, grid.1 * e),
            coords,
        };
        idx.check_bounds(e)?;
        Ok(idx)
    }

    fn check_bounds(&self, e: usize) -> Result<()> {
        for &(i, j) in &self.coords {
            if i as usize >= e || j as usize >= e {
                return Err(Error::InconsistentIndices(format!(
                    "local offset ({i}, {j}) not below pool size {e}"
                )));
            }
        }
        Ok(())
    }
}

/// Divides each spatial plane of `y` into `e x e` blocks and takes the block
/// maximum; ties break to the first occurrence in a row-major scan of the
/// block. Returns the pooled map and the argmax coordinates.
pub fn maxpool_forward(y: &Tensor, e: usize) -> Result<(Tensor, PoolIndices)> {
    let (n, c, h, w) = y.as_nchw()?;
    if e == 0 || h % e != 0 {
        return Err(Error::IndivisiblePoolSize { e, extent: h });
    }
    if w % e != 0 {
        return Err(Error::IndivisiblePoolSize { e, extent: w });
    }
    let (bh, bw) = (h / e, w / e);
    let planes = n * c;
    let yd = y.data();

    let mut pooled = vec![0.0; planes * bh * bw];
    let mut coords = Vec::with_capacity(planes * bh * bw);
    for p in 0..planes {
        let base = p * h * w;
        for u in 0..bh {
            for v in 0..bw {
                let mut best = f64::NEG_INFINITY;
                let mut at = (0u32, 0u32);
                for i in 0..e {
                    let row = base + (u * e + i) * w + v * e;
                    for j in 0..e {
                        let val = yd[row + j];
                        if val > best {
                            best = val;
                            at = (i as u32, j as u32);
                        }
                    }
                }
                pooled[(p * bh + u) * bw + v] = best;
                coords.push(at);
            }
        }
    }

    let a = Tensor::from_data(&y.shape_with_hw(bh, bw), pooled)?;
    Ok((
        a,
        PoolIndices {
            planes,
            grid: (bh, bw),
            e,
            in_hw: (h, w),
            coords,
        },
    ))
}

/// Routes each pooled gradient to its recorded argmax position; zeros
/// elsewhere.
pub fn maxpool_backward(idx: &PoolIndices, grad_a: &Tensor) -> Result<Tensor> {
    let (n, c, bh, bw) = grad_a.as_nchw()?;
    if n * c != idx.planes || (bh, bw) != idx.grid {
        return Err(Error::ShapeMismatch(format!(
            "pooled gradient {:?} does not match recorded grid {:?} over {} planes",
            grad_a.shape(),
            idx.grid,
            idx.planes
        )));
    }
    let (h, w) = idx.in_hw;
    let e = idx.e;
    let gd = grad_a.data();

    let mut out = vec![0.0; idx.planes * h * w];
    for p in 0..idx.planes {
        for u in 0..bh {
            for v in 0..bw {
                let (i, j) = idx.coord(p, u, v);
                out[p * h * w + (u * e + i) * w + (v * e + j)] = gd[(p * bh + u) * bw + v];
            }
        }
    }
    Tensor::from_data(&grad_a.shape_with_hw(h, w), out)
}

/// Places each pooled maximum back at its argmax position inside an
/// all-zero map of `out_shape` spatial extents.
pub fn maxunpool_forward(
    a: &Tensor,
    idx: &PoolIndices,
    e: usize,
    out_shape: Shape2D,
) -> Result<Tensor> {
    let (n, c, bh, bw) = a.as_nchw()?;
    if n * c != idx.planes || (bh, bw) != idx.grid {
        return Err(Error::ShapeMismatch(format!(
            "pooled map {:?} does not match recorded grid {:?} over {} planes",
            a.shape(),
            idx.grid,
            idx.planes
        )));
    }
    if e != idx.e {
        return Err(Error::InconsistentIndices(format!(
            "pool size {e} differs from recorded {}",
            idx.e
        )));
    }
    idx.check_bounds(e)?;
    if out_shape.h != bh * e || out_shape.w != bw * e {
        return Err(Error::ShapeMismatch(format!(
            "output extents {}x{} must be {}x{}",
            out_shape.h,
            out_shape.w,
            bh * e,
            bw * e
        )));
    }
    let (h, w) = (out_shape.h, out_shape.w);
    let ad = a.data();

    let mut out = vec![0.0; idx.planes * h * w];
    for p in 0..idx.planes {
        for u in 0..bh {
            for v in 0..bw {
                let (i, j) = idx.coord(p, u, v);
                out[p * h * w + (u * e + i) * w + (v * e + j)] = ad[(p * bh + u) * bw + v];
            }
        }
    }
    Tensor::from_data(&a.shape_with_hw(h, w), out)
}

/// Adds one ring of zeros around each spatial plane; extents grow by 2.
pub fn pad_one_ring(y: &Tensor) -> Tensor {
    let (n, c, h, w) = y.as_nchw().expect("pad_one_ring needs a spatial tensor");
    let planes = n * c;
    let (oh, ow) = (h + 2, w + 2);
    let yd = y.data();

    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for i in 0..h {
            let src = p * h * w + i * w;
            let dst = p * oh * ow + (i + 1) * ow + 1;
            out[dst..dst + w].copy_from_slice(&yd[src..src + w]);
        }
    }
    Tensor::from_data(&y.shape_with_hw(oh, ow), out).expect("padded shape is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_basic_block() {
        let y = Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let (a, idx) = maxpool_forward(&y, 2).unwrap();
        assert_eq!(a.data(), &[3.0]);
        assert_eq!(idx.coord(0, 0, 0), (0, 1));
    }

    #[test]
    fn pool_identity_when_e_is_one() {
        let y = Tensor::from_rows(&[vec![5.0, -1.0], vec![0.0, 2.0]]).unwrap();
        let (a, idx) = maxpool_forward(&y, 1).unwrap();
        assert_eq!(a, y);
        for u in 0..2 {
            for v in 0..2 {
                assert_eq!(idx.coord(0, u, v), (0, 0));
            }
        }
    }

    #[test]
    fn pool_tie_breaks_row_major_first() {
        let y = Tensor::from_rows(&[vec![5.0, 5.0], vec![5.0, 5.0]]).unwrap();
        let (a, idx) = maxpool_forward(&y, 2).unwrap();
        assert_eq!(a.data(), &[5.0]);
        assert_eq!(idx.coord(0, 0, 0), (0, 0));
    }

    #[test]
    fn pool_indivisible_extent() {
        let y = Tensor::zeros(&[3, 4]).unwrap();
        assert!(matches!(
            maxpool_forward(&y, 2),
            Err(Error::IndivisiblePoolSize { e: 2, extent: 3 })
        ));
    }

    #[test]
    fn pool_backward_routes_single_value() {
        let y = Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let (_, idx) = maxpool_forward(&y, 2).unwrap();
        let g = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let gy = maxpool_backward(&idx, &g).unwrap();
        assert_eq!(gy.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_backward_block_sums_equal_pooled_gradient() {
        // Routing preserves mass: each block of the output sums to the
        // incoming pooled gradient.
        let y = Tensor::from_data(
            &[2, 4, 4],
            (0..32).map(|i| ((i * 13 + 5) % 17) as f64 - 8.0).collect(),
        )
        .unwrap();
        let (_, idx) = maxpool_forward(&y, 2).unwrap();
        let g = Tensor::from_data(
            &[2, 2, 2],
            (0..8).map(|i| (i as f64) * 0.75 - 2.0).collect(),
        )
        .unwrap();
        let gy = maxpool_backward(&idx, &g).unwrap();
        for p in 0..2 {
            for u in 0..2 {
                for v in 0..2 {
                    let mut sum = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            sum += gy.get(&[p, u * 2 + i, v * 2 + j]);
                        }
                    }
                    assert_eq!(sum, g.get(&[p, u, v]));
                }
            }
        }
    }

    #[test]
    fn pool_backward_zero_upstream() {
        let y = Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let (_, idx) = maxpool_forward(&y, 2).unwrap();
        let g = Tensor::zeros(&[1, 1]).unwrap();
        let gy = maxpool_backward(&idx, &g).unwrap();
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unpool_places_max_at_recorded_position() {
        let a = Tensor::from_rows(&[vec![3.0]]).unwrap();
        let idx = PoolIndices::from_coords(1, (1, 1), 2, vec![(0, 1)]).unwrap();
        let y = maxunpool_forward(&a, &idx, 2, Shape2D::new(2, 2)).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn unpool_rejects_out_of_range_coord() {
        assert!(matches!(
            PoolIndices::from_coords(1, (1, 1), 2, vec![(2, 0)]),
            Err(Error::InconsistentIndices(_))
        ));
    }

    #[test]
    fn unpool_pool_round_trip() {
        let y = Tensor::from_rows(&[
            vec![1.0, 3.0, 0.5, 0.25],
            vec![2.0, 0.0, 4.0, 1.0],
            vec![9.0, 1.0, 1.0, 7.0],
            vec![0.0, 2.0, 6.0, 1.0],
        ])
        .unwrap();
        let (a, idx) = maxpool_forward(&y, 2).unwrap();
        let u = maxunpool_forward(&a, &idx, 2, Shape2D::new(4, 4)).unwrap();
        // Maxima restored at their original positions, zeros elsewhere.
        assert_eq!(u.get(&[0, 1]), 3.0);
        assert_eq!(u.get(&[1, 2]), 4.0);
        assert_eq!(u.get(&[2, 0]), 9.0);
        assert_eq!(u.get(&[2, 3]), 7.0);
        assert_eq!(u.data().iter().filter(|&&v| v != 0.0).count(), 4);

        // Re-pooling the unpooled map reproduces a with identical indices.
        let (a2, idx2) = maxpool_forward(&u, 2).unwrap();
        assert_eq!(a2, a);
        assert_eq!(idx2, idx);
    }

    #[test]
    fn pad_single_element() {
        let y = Tensor::from_rows(&[vec![7.0]]).unwrap();
        let p = pad_one_ring(&y);
        assert_eq!(p.shape(), &[3, 3]);
        assert_eq!(
            p.data(),
            &[0.0, 0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn pad_preserves_sum_and_grows_extents() {
        let y = Tensor::from_data(&[2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        let p = pad_one_ring(&y);
        assert_eq!(p.shape(), &[2, 5, 6]);
        let sy: f64 = y.data().iter().sum();
        let sp: f64 = p.data().iter().sum();
        assert_eq!(sy, sp);
    }
}
