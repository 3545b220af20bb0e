//! The Pool Skip composite operator: max-pool, max-unpool, one-ring zero
//! pad, and a 3x3 convolution, added back onto the input through a skip
//! connection. Inserted between a convolution and its ReLU.
//!
//! Alongside the pipeline form this module carries an exact closed-form
//! evaluation of the composite output and a decomposition of each output
//! element into its base, affine-compensation and dimensional-compensation
//! parts, which serve as independent oracles for one another.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{
    conv2d_backward, conv2d_forward, maxpool_backward, maxpool_forward, maxunpool_forward,
    pad_one_ring, ConvKernel, PoolIndices,
};
use crate::rng::uniform;
use crate::tensor::{Shape2D, Tensor};

/// Which components of the composite are active; mirrors the ablation axes
/// {Pool, Conv, Skip}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSkipVariant {
    /// pool + unpool + pad + conv, added to the input.
    Full,
    /// pool + unpool added to the input; no inner convolution.
    PoolSkipOnly,
    /// pad + conv of the raw input, added to the input; no pooling.
    ConvSkipOnly,
    /// pool + unpool + pad + conv replacing the input; no skip addition.
    PoolConvOnly,
}

impl PoolSkipVariant {
    pub fn name(&self) -> &'static str {
        match self {
            PoolSkipVariant::Full => "full",
            PoolSkipVariant::PoolSkipOnly => "pool-skip",
            PoolSkipVariant::ConvSkipOnly => "conv-skip",
            PoolSkipVariant::PoolConvOnly => "pool-conv",
        }
    }

    fn uses_pool(&self) -> bool {
        !matches!(self, PoolSkipVariant::ConvSkipOnly)
    }

    fn uses_conv(&self) -> bool {
        !matches!(self, PoolSkipVariant::PoolSkipOnly)
    }
}

/// Pool extent, active components and the inner 3x3 kernel of one Pool Skip
/// insertion. The inner kernel maps C input channels to C output channels.
#[derive(Debug, Clone)]
pub struct PoolSkipConfig {
    pub e: usize,
    pub variant: PoolSkipVariant,
    pub inner_kernel: ConvKernel,
}

impl PoolSkipConfig {
    pub fn new(e: usize, variant: PoolSkipVariant, inner_kernel: ConvKernel) -> Result<Self> {
        if e == 0 {
            return Err(Error::IndivisiblePoolSize { e, extent: 0 });
        }
        if inner_kernel.extent() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "inner kernel must be 3x3, got {0}x{0}",
                inner_kernel.extent()
            )));
        }
        if inner_kernel.c_in() != inner_kernel.c_out() {
            return Err(Error::ShapeMismatch(format!(
                "inner kernel must map C to C channels, got {} to {}",
                inner_kernel.c_in(),
                inner_kernel.c_out()
            )));
        }
        Ok(PoolSkipConfig {
            e,
            variant,
            inner_kernel,
        })
    }
}

/// Zero-centered uniform init with a fan-in bound for the inner 3x3 kernel,
/// so training starts near the skip-identity regime.
pub fn init_inner_kernel(channels: usize, rng: &mut impl Rng) -> ConvKernel {
    let fan_in = (channels * 9) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let n = channels * channels * 9;
    let data: Vec<f64> = (0..n).map(|_| uniform(rng, -bound, bound)).collect();
    ConvKernel::new(Tensor::from_data(&[channels, channels, 3, 3], data).expect("valid shape"))
        .expect("odd extent")
}

/// One divisibility condition of the pool extent that does not hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolSizeViolation {
    /// e does not divide H.
    Height,
    /// e does not divide W.
    Width,
    /// e does not divide H-M+1.
    PooledHeight,
    /// e does not divide W-M+1.
    PooledWidth,
}

impl std::fmt::Display for PoolSizeViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolSizeViolation::Height => write!(f, "e does not divide H"),
            PoolSizeViolation::Width => write!(f, "e does not divide W"),
            PoolSizeViolation::PooledHeight => write!(f, "e does not divide H-M+1"),
            PoolSizeViolation::PooledWidth => write!(f, "e does not divide W-M+1"),
        }
    }
}

/// Checks the four divisibility conditions `e | H`, `e | W`, `e | H-M+1`
/// and `e | W-M+1` for an `M x M` convolution over an `H x W` input.
/// Returns the violated conditions; an empty list means the size is valid.
pub fn validate_pool_size(h: usize, w: usize, m: usize, e: usize) -> Vec<PoolSizeViolation> {
    debug_assert!(h > 0 && w > 0 && m > 0 && e > 0);
    debug_assert!(m % 2 == 1, "kernel extent must be odd");
    let mut violations = Vec::new();
    if h % e != 0 {
        violations.push(PoolSizeViolation::Height);
    }
    if (h + 1).saturating_sub(m) % e != 0 {
        violations.push(PoolSizeViolation::PooledHeight);
    }
    if w % e != 0 {
        violations.push(PoolSizeViolation::Width);
    }
    if (w + 1).saturating_sub(m) % e != 0 {
        violations.push(PoolSizeViolation::PooledWidth);
    }
    violations
}

/// Applies the configured variant to the pre-activation map `y` and returns
/// the output together with the pooling indices needed by the backward pass.
/// The output shape always equals the input shape.
pub fn forward(y: &Tensor, cfg: &PoolSkipConfig) -> Result<(Tensor, PoolIndices)> {
    let (_, c, p, q) = y.as_nchw()?;
    if cfg.variant.uses_conv() && cfg.inner_kernel.c_in() != c {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, inner kernel expects {}",
            c,
            cfg.inner_kernel.c_in()
        )));
    }

    match cfg.variant {
        PoolSkipVariant::Full => {
            let (a, idx) = maxpool_forward(y, cfg.e)?;
            let u = maxunpool_forward(&a, &idx, cfg.e, Shape2D::new(p, q))?;
            let z = conv2d_forward(&pad_one_ring(&u), &cfg.inner_kernel, 1)?;
            Ok((y.add(&z)?, idx))
        }
        PoolSkipVariant::PoolSkipOnly => {
            let (a, idx) = maxpool_forward(y, cfg.e)?;
            let u = maxunpool_forward(&a, &idx, cfg.e, Shape2D::new(p, q))?;
            Ok((y.add(&u)?, idx))
        }
        PoolSkipVariant::ConvSkipOnly => {
            let z = conv2d_forward(&pad_one_ring(y), &cfg.inner_kernel, 1)?;
            Ok((y.add(&z)?, PoolIndices::empty()))
        }
        PoolSkipVariant::PoolConvOnly => {
            let (a, idx) = maxpool_forward(y, cfg.e)?;
            let u = maxunpool_forward(&a, &idx, cfg.e, Shape2D::new(p, q))?;
            let z = conv2d_forward(&pad_one_ring(&u), &cfg.inner_kernel, 1)?;
            Ok((z, idx))
        }
    }
}

/// Chain rule through the composite graph. `idx` must come from the forward
/// call on the same `y`. Returns `(grad_y, grad_inner_kernel)`.
pub fn backward(
    y: &Tensor,
    cfg: &PoolSkipConfig,
    idx: &PoolIndices,
    grad_o: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if grad_o.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "grad_o {:?} must match input {:?}",
            grad_o.shape(),
            y.shape()
        )));
    }
    let (n, c, p, q) = y.as_nchw()?;
    if cfg.variant.uses_pool() {
        let (bh, bw) = idx.block_grid();
        if idx.planes() != n * c || bh * cfg.e != p || bw * cfg.e != q {
            return Err(Error::InconsistentIndices(format!(
                "indices for grid {:?} over {} planes do not fit input {:?} with e={}",
                idx.block_grid(),
                idx.planes(),
                y.shape(),
                cfg.e
            )));
        }
    }
    let zero_kernel = || Tensor::zeros(cfg.inner_kernel.weights().shape());

    match cfg.variant {
        PoolSkipVariant::Full => {
            let u = maxunpool_forward(&gather(y, idx)?, idx, cfg.e, Shape2D::new(p, q))?;
            let (grad_pu, grad_k) = conv2d_backward(&pad_one_ring(&u), &cfg.inner_kernel, grad_o)?;
            let grad_u = crop_one_ring(&grad_pu)?;
            let grad_pool = maxpool_backward(idx, &gather(&grad_u, idx)?)?;
            Ok((grad_o.add(&grad_pool)?, grad_k))
        }
        PoolSkipVariant::PoolSkipOnly => {
            let grad_pool = maxpool_backward(idx, &gather(grad_o, idx)?)?;
            Ok((grad_o.add(&grad_pool)?, zero_kernel()?))
        }
        PoolSkipVariant::ConvSkipOnly => {
            let (grad_py, grad_k) = conv2d_backward(&pad_one_ring(y), &cfg.inner_kernel, grad_o)?;
            Ok((grad_o.add(&crop_one_ring(&grad_py)?)?, grad_k))
        }
        PoolSkipVariant::PoolConvOnly => {
            let u = maxunpool_forward(&gather(y, idx)?, idx, cfg.e, Shape2D::new(p, q))?;
            let (grad_pu, grad_k) = conv2d_backward(&pad_one_ring(&u), &cfg.inner_kernel, grad_o)?;
            let grad_u = crop_one_ring(&grad_pu)?;
            Ok((maxpool_backward(idx, &gather(&grad_u, idx)?)?, grad_k))
        }
    }
}

/// Reads the value at each recorded argmax position, producing a
/// pooled-shape tensor.
fn gather(t: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    let (n, c, h, w) = t.as_nchw()?;
    let (bh, bw) = idx.block_grid();
    let e = idx.pool_size();
    if n * c != idx.planes() || bh * e != h || bw * e != w {
        return Err(Error::InconsistentIndices(format!(
            "cannot gather {:?} with grid {:?} at e={e}",
            t.shape(),
            idx.block_grid()
        )));
    }
    let td = t.data();
    let mut out = vec![0.0; idx.planes() * bh * bw];
    for pl in 0..idx.planes() {
        for u in 0..bh {
            for v in 0..bw {
                let (i, j) = idx.coord(pl, u, v);
                out[(pl * bh + u) * bw + v] = td[pl * h * w + (u * e + i) * w + (v * e + j)];
            }
        }
    }
    Tensor::from_data(&t.shape_with_hw(bh, bw), out)
}

/// Inverse of `pad_one_ring`: strips the outer ring of each plane.
fn crop_one_ring(t: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = t.as_nchw()?;
    if h < 3 || w < 3 {
        return Err(Error::ShapeMismatch(format!(
            "cannot crop a ring from {h}x{w}"
        )));
    }
    let planes = n * c;
    let (ih, iw) = (h - 2, w - 2);
    let td = t.data();
    let mut out = vec![0.0; planes * ih * iw];
    for p in 0..planes {
        for i in 0..ih {
            let src = p * h * w + (i + 1) * w + 1;
            let dst = p * ih * iw + i * iw;
            out[dst..dst + iw].copy_from_slice(&td[src..src + iw]);
        }
    }
    Tensor::from_data(&t.shape_with_hw(ih, iw), out)
}

/// Single-channel closed-form context shared by `closed_form` and
/// `compensation_decompose`.
struct ClosedForm<'a> {
    x: &'a Tensor,
    w: &'a ConvKernel,
    wt: &'a ConvKernel,
    e: usize,
    width: usize,
    m: usize,
    p: usize,
    q: usize,
    argmax: Vec<(usize, usize)>,
    grid: (usize, usize),
}

impl<'a> ClosedForm<'a> {
    fn new(x: &'a Tensor, w: &'a ConvKernel, wt: &'a ConvKernel, e: usize) -> Result<Self> {
        let (h, width) = match x.shape() {
            [h, w] => (*h, *w),
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "closed form takes a single-channel [H, W] input, got {other:?}"
                )))
            }
        };
        if w.c_in() != 1 || w.c_out() != 1 || wt.c_in() != 1 || wt.c_out() != 1 {
            return Err(Error::ShapeMismatch(
                "closed form takes single-channel kernels".into(),
            ));
        }
        if wt.extent() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "inner kernel must be 3x3, got {0}x{0}",
                wt.extent()
            )));
        }
        let m = w.extent();
        if m > h {
            return Err(Error::KernelTooLarge { kernel: m, input: h });
        }
        if m > width {
            return Err(Error::KernelTooLarge { kernel: m, input: width });
        }
        let p = h - m + 1;
        let q = width - m + 1;
        for extent in [h, width, p, q] {
            if e == 0 || extent % e != 0 {
                return Err(Error::IndivisiblePoolSize { e, extent });
            }
        }

        let grid = (p / e, q / e);
        let mut cf = ClosedForm {
            x,
            w,
            wt,
            e,
            width,
            m,
            p,
            q,
            argmax: Vec::new(),
            grid,
        };
        cf.argmax = cf.find_argmaxes();
        Ok(cf)
    }

    /// First-convolution output by direct summation, never via the kernel
    /// pipeline: `y[r,c] = sum_{m,n} w[m,n] * x[r+m, c+n]`.
    fn y(&self, r: usize, c: usize) -> f64 {
        let xd = self.x.data();
        let wd = self.w.weights().data();
        let mut acc = 0.0;
        for mm in 0..self.m {
            let xrow = (r + mm) * self.width + c;
            let wrow = mm * self.m;
            for nn in 0..self.m {
                acc += wd[wrow + nn] * xd[xrow + nn];
            }
        }
        acc
    }

    /// Row-major first-occurrence argmax of each `e x e` block of y.
    fn find_argmaxes(&self) -> Vec<(usize, usize)> {
        let (bh, bw) = self.grid;
        let mut table = Vec::with_capacity(bh * bw);
        for u in 0..bh {
            for v in 0..bw {
                let mut best = f64::NEG_INFINITY;
                let mut at = (0, 0);
                for i in 0..self.e {
                    for j in 0..self.e {
                        let val = self.y(u * self.e + i, v * self.e + j);
                        if val > best {
                            best = val;
                            at = (i, j);
                        }
                    }
                }
                table.push(at);
            }
        }
        table
    }

    /// Whether global position `(r, c)` is the recorded argmax of its block.
    fn is_argmax(&self, r: usize, c: usize) -> bool {
        let (u, v) = (r / self.e, c / self.e);
        self.argmax[u * self.grid.1 + v] == (r % self.e, c % self.e)
    }

    /// The argmax positions feeding output `(i, j)` through the 3x3 inner
    /// kernel, as `(s, t, r, c)` tap/position tuples.
    fn active_taps(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let (p, q) = (self.p, self.q);
        (0..3).flat_map(move |s| (0..3).map(move |t| (s, t))).filter_map(move |(s, t)| {
            let r = (i + s).checked_sub(1)?;
            let c = (j + t).checked_sub(1)?;
            if r < p && c < q && self.is_argmax(r, c) {
                Some((s, t, r, c))
            } else {
                None
            }
        })
    }

    fn wt_at(&self, s: usize, t: usize) -> f64 {
        self.wt.weights().data()[s * 3 + t]
    }
}

/// Evaluates the composite output directly from the input `x`, the first
/// convolution `w` and the inner kernel `w_tilde`, without running the
/// pool/unpool/pad/conv pipeline.
///
/// At positions where an argmax of y falls inside the 3x3 neighbourhood, the
/// output picks up the compensated terms; everywhere else it is the plain
/// convolution `sum w[m,n] * x[i+m, j+n]`.
pub fn closed_form(x: &Tensor, w: &ConvKernel, w_tilde: &ConvKernel, e: usize) -> Result<Tensor> {
    let cf = ClosedForm::new(x, w, w_tilde, e)?;
    let mut out = vec![0.0; cf.p * cf.q];
    for i in 0..cf.p {
        for j in 0..cf.q {
            let mut acc = cf.y(i, j);
            for (s, t, r, c) in cf.active_taps(i, j) {
                acc += cf.wt_at(s, t) * cf.y(r, c);
            }
            out[i * cf.q + j] = acc;
        }
    }
    Tensor::from_data(&[cf.p, cf.q], out)
}

/// Splits each closed-form output element into its base term, affine
/// compensation and dimensional compensation.
#[derive(Debug, Clone)]
pub struct CompensationReport {
    /// The plain convolution y.
    pub base: Tensor,
    /// Extra `w~[s,t] * w[m,n] * x` terms at input positions already inside
    /// the output's own convolution window, i.e. the coefficient change from
    /// `w` to `(1 + w~) * w`.
    pub affine: Tensor,
    /// `w~[s,t] * w[m,n] * x` terms at input positions outside the window,
    /// enlarging the set of inputs that influence the output.
    pub dimensional: Tensor,
    /// True where the position is its block's argmax, i.e. where the
    /// mod condition of the compensated branch held.
    pub covered_mask: Vec<bool>,
}

impl CompensationReport {
    pub fn covered_count(&self) -> usize {
        self.covered_mask.iter().filter(|&&b| b).count()
    }
}

/// Decomposes the compensation of every output element. The three tensors
/// sum to the closed-form output.
pub fn compensation_decompose(
    x: &Tensor,
    w: &ConvKernel,
    w_tilde: &ConvKernel,
    e: usize,
) -> Result<CompensationReport> {
    let cf = ClosedForm::new(x, w, w_tilde, e)?;
    let xd = x.data();
    let wd = w.weights().data();
    let mut base = vec![0.0; cf.p * cf.q];
    let mut affine = vec![0.0; cf.p * cf.q];
    let mut dimensional = vec![0.0; cf.p * cf.q];
    let mut covered = vec![false; cf.p * cf.q];

    for i in 0..cf.p {
        for j in 0..cf.q {
            let at = i * cf.q + j;
            base[at] = cf.y(i, j);
            covered[at] = cf.is_argmax(i, j);
            for (s, t, r, c) in cf.active_taps(i, j) {
                let wt = cf.wt_at(s, t);
                for mm in 0..cf.m {
                    for nn in 0..cf.m {
                        let (xr, xc) = (r + mm, c + nn);
                        let term = wt * wd[mm * cf.m + nn] * xd[xr * cf.width + xc];
                        let folds_back = xr >= i && xr < i + cf.m && xc >= j && xc < j + cf.m;
                        if folds_back {
                            affine[at] += term;
                        } else {
                            dimensional[at] += term;
                        }
                    }
                }
            }
        }
    }

    Ok(CompensationReport {
        base: Tensor::from_data(&[cf.p, cf.q], base)?,
        affine: Tensor::from_data(&[cf.p, cf.q], affine)?,
        dimensional: Tensor::from_data(&[cf.p, cf.q], dimensional)?,
        covered_mask: covered,
    })
}
