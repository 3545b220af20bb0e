//! Model assembly from layer specs: conv blocks (conv -> optional batch
//! norm -> optional Pool Skip -> ReLU) followed by a linear classifier,
//! with static shape inference that mirrors the runtime exactly.

use rand::Rng;

use crate::autodiff::{GradTape, InertiaProbe, ParamId, ParamSet};
use crate::diagnostics::{snapshot_report, LayerDiagnostics, LayerProbe};
use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_infer, conv2d_forward, linear_forward, relu_forward, ConvKernel,
};
use crate::pool_skip::{self, init_inner_kernel, validate_pool_size, PoolSkipConfig, PoolSkipVariant};
use crate::rng::uniform;
use crate::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// One item of the model specification.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Conv block: `out` channels, odd `kernel` extent, optional per-layer
    /// bias start (overrides the model-wide offset), optional Pool Skip
    /// insertion between the convolution and its ReLU.
    Conv {
        out: usize,
        kernel: usize,
        bias: Option<f64>,
        pool_skip: Option<(PoolSkipVariant, usize)>,
    },
    /// Flatten + linear classifier; must be the last item.
    Linear { out: usize },
}

/// Walks the layer items computing the feature shape after each one, validating
/// kernel fit and Pool Skip divisibility. Returns `(c, h, w)` per item
/// (the linear item reports `(out, 1, 1)`).
pub fn infer_shapes(
    items: &[LayerSpec],
    input: (usize, usize, usize),
) -> std::result::Result<Vec<(usize, usize, usize)>, String> {
    let (_, mut h, mut w) = input;
    let mut shapes = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        match item {
            LayerSpec::Conv { out, kernel, pool_skip, .. } => {
                if i > 0 && matches!(items[i - 1], LayerSpec::Linear { .. }) {
                    return Err(format!("item {}: conv after the classifier", i + 1));
                }
                if *kernel % 2 == 0 {
                    return Err(format!("item {}: kernel extent {kernel} must be odd", i + 1));
                }
                if *kernel > h || *kernel > w {
                    return Err(format!(
                        "item {}: kernel {kernel} exceeds feature map {h}x{w}",
                        i + 1
                    ));
                }
                if let Some((variant, e)) = pool_skip {
                    if *variant != PoolSkipVariant::ConvSkipOnly {
                        let violations = validate_pool_size(h, w, *kernel, *e);
                        if !violations.is_empty() {
                            let list = violations
                                .iter()
                                .map(|v| v.to_string())
                                .collect::<Vec<_>>()
                                .join(", ");
                            return Err(format!(
                                "item {}: pool size {e} invalid on {h}x{w} with M={kernel}: {list}",
                                i + 1
                            ));
                        }
                    }
                }
                h = h - kernel + 1;
                w = w - kernel + 1;
                shapes.push((*out, h, w));
            }
            LayerSpec::Linear { out } => {
                if i + 1 != items.len() {
                    return Err(format!(
                        "item {}: the linear classifier must be the last item",
                        i + 1
                    ));
                }
                shapes.push((*out, 1, 1));
            }
        }
    }
    match items.last() {
        Some(LayerSpec::Linear { .. }) => Ok(shapes),
        _ => Err("model must end with a linear classifier".into()),
    }
}

#[derive(Debug)]
enum Layer {
    Conv {
        name: String,
        kernel: ParamId,
        bias: ParamId,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    PoolSkip {
        name: String,
        inner: ParamId,
        e: usize,
        variant: PoolSkipVariant,
    },
    Relu,
    Flatten,
    Linear {
        name: String,
        w: ParamId,
        b: ParamId,
    },
}

/// A sequential network over `[N, C, H, W]` batches.
#[derive(Debug)]
pub struct Model {
    layers: Vec<Layer>,
    pub params: ParamSet,
}

impl Model {
    /// Builds and initializes a model. Conv weights use a Kaiming-style
    /// uniform bound; conv biases start at `bias_offset` (the dead-unit
    /// lever); batch-norm affine starts at identity.
    pub fn build(
        items: &[LayerSpec],
        input: (usize, usize, usize),
        bias_offset: f64,
        batchnorm: bool,
        rng: &mut impl Rng,
    ) -> Result<Model> {
        Self::build_with_gain(items, input, bias_offset, 1.0, batchnorm, rng)
    }

    /// `build` with the Kaiming bound scaled by `init_gain`; larger gains
    /// keep signal alive through deep stacks with strongly negative biases.
    pub fn build_with_gain(
        items: &[LayerSpec],
        input: (usize, usize, usize),
        bias_offset: f64,
        init_gain: f64,
        batchnorm: bool,
        rng: &mut impl Rng,
    ) -> Result<Model> {
        let shapes = infer_shapes(items, input).map_err(Error::ShapeMismatch)?;
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = input;
        let mut conv_index = 0usize;

        for (item, &(oc, oh, ow)) in items.iter().zip(&shapes) {
            match item {
                LayerSpec::Conv { out, kernel, bias, pool_skip } => {
                    conv_index += 1;
                    let name = format!("conv{conv_index}");
                    let fan_in = (c * kernel * kernel) as f64;
                    let bound = init_gain * (6.0 / fan_in).sqrt();
                    let n = out * c * kernel * kernel;
                    let weights = Tensor::from_data(
                        &[*out, c, *kernel, *kernel],
                        (0..n).map(|_| uniform(rng, -bound, bound)).collect(),
                    )?;
                    let kernel_id = params.register(format!("{name}.weight"), weights);
                    let bias_id = params.register(
                        format!("{name}.bias"),
                        Tensor::filled(&[*out], bias.unwrap_or(bias_offset))?,
                    );
                    layers.push(Layer::Conv {
                        name: name.clone(),
                        kernel: kernel_id,
                        bias: bias_id,
                    });

                    if batchnorm {
                        let gamma = params
                            .register(format!("{name}.bn.gamma"), Tensor::filled(&[*out], 1.0)?);
                        let beta =
                            params.register(format!("{name}.bn.beta"), Tensor::zeros(&[*out])?);
                        layers.push(Layer::BatchNorm {
                            gamma,
                            beta,
                            running_mean: vec![0.0; *out],
                            running_var: vec![1.0; *out],
                        });
                    }

                    if let Some((variant, e)) = pool_skip {
                        let inner = init_inner_kernel(*out, rng);
                        let inner_id = params
                            .register(format!("{name}.ps.weight"), inner.into_weights());
                        layers.push(Layer::PoolSkip {
                            name: format!("{name}.ps"),
                            inner: inner_id,
                            e: *e,
                            variant: *variant,
                        });
                    }
                    layers.push(Layer::Relu);
                    (c, h, w) = (oc, oh, ow);
                }
                LayerSpec::Linear { out } => {
                    let features = c * h * w;
                    let bound = init_gain * (6.0 / features as f64).sqrt();
                    let weights = Tensor::from_data(
                        &[features, *out],
                        (0..features * out).map(|_| uniform(rng, -bound, bound)).collect(),
                    )?;
                    let w_id = params.register("fc.weight", weights);
                    let b_id = params.register("fc.bias", Tensor::zeros(&[*out])?);
                    layers.push(Layer::Flatten);
                    layers.push(Layer::Linear {
                        name: "fc".into(),
                        w: w_id,
                        b: b_id,
                    });
                }
            }
        }

        Ok(Model { layers, params })
    }

    /// Training forward pass recorded on a tape; batch-norm running
    /// statistics are updated with momentum 0.9.
    pub fn forward_train(&mut self, x: &Tensor, tape: &mut GradTape) -> Result<Tensor> {
        let Model { layers, params } = self;
        let mut cur = x.clone();
        for layer in layers.iter_mut() {
            cur = match layer {
                Layer::Conv { kernel, bias, .. } => tape.conv(params, &cur, *kernel, Some(*bias))?,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let (y, mean, var) = tape.batchnorm(params, &cur, *gamma, *beta, BN_EPS)?;
                    for (r, m) in running_mean.iter_mut().zip(&mean) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
                    }
                    for (r, v) in running_var.iter_mut().zip(&var) {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
                    }
                    y
                }
                Layer::PoolSkip { inner, e, variant, .. } => {
                    tape.pool_skip(params, &cur, *e, *variant, *inner)?
                }
                Layer::Relu => tape.relu(&cur)?,
                Layer::Flatten => tape.flatten(&cur)?,
                Layer::Linear { w, b, .. } => tape.linear(params, &cur, *w, *b)?,
            };
        }
        Ok(cur)
    }

    /// Inference forward pass: no tape, batch norm uses running averages.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.eval_pass(x, None)
    }

    fn eval_pass(
        &self,
        x: &Tensor,
        mut capture: Option<&mut Vec<(String, ParamId, Tensor)>>,
    ) -> Result<Tensor> {
        let params = &self.params;
        let mut cur = x.clone();
        // Parameterized layers awaiting their ReLU input.
        let mut pending: Vec<(String, ParamId)> = Vec::new();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv { name, kernel, bias } => {
                    let k = ConvKernel::new(params.get(*kernel).clone())?;
                    let mut y = conv2d_forward(&cur, &k, 1)?;
                    add_bias(&mut y, params.get(*bias))?;
                    pending.push((name.clone(), *kernel));
                    y
                }
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => batchnorm_infer(
                    &cur,
                    params.get(*gamma),
                    params.get(*beta),
                    running_mean,
                    running_var,
                    BN_EPS,
                )?,
                Layer::PoolSkip { name, inner, e, variant } => {
                    let cfg = PoolSkipConfig::new(
                        *e,
                        *variant,
                        ConvKernel::new(params.get(*inner).clone())?,
                    )?;
                    let (y, _) = pool_skip::forward(&cur, &cfg)?;
                    pending.push((name.clone(), *inner));
                    y
                }
                Layer::Relu => {
                    if let Some(cap) = capture.as_deref_mut() {
                        for (name, id) in pending.drain(..) {
                            cap.push((name, id, cur.clone()));
                        }
                    } else {
                        pending.clear();
                    }
                    relu_forward(&cur)
                }
                Layer::Flatten => {
                    let batch = cur.shape()[0];
                    let features: usize = cur.shape()[1..].iter().product();
                    Tensor::from_data(&[batch, features], cur.data().to_vec())?
                }
                Layer::Linear { name, w, b } => {
                    let y = linear_forward(&cur, params.get(*w), params.get(*b))?;
                    if let Some(cap) = capture.as_deref_mut() {
                        let (n, k) = (y.shape()[0], y.shape()[1]);
                        let logits4 = Tensor::from_data(&[n, k, 1, 1], y.data().to_vec())?;
                        cap.push((name.clone(), *w, logits4));
                    }
                    y
                }
            };
        }
        Ok(cur)
    }

    /// One diagnostics record per parameterized layer, in forward order,
    /// over a fixed probe batch.
    pub fn snapshot(
        &self,
        probe_batch: &Tensor,
        step: usize,
        inertia: &InertiaProbe,
    ) -> Result<Vec<LayerDiagnostics>> {
        let mut captured = Vec::new();
        let _ = self.eval_pass(probe_batch, Some(&mut captured))?;
        let probes: Vec<LayerProbe<'_>> = captured
            .iter()
            .map(|(name, id, preacts)| {
                let mask = inertia.inert_mask(*id);
                let inert = mask.iter().filter(|&&b| b).count();
                LayerProbe {
                    layer: name.clone(),
                    weights: self.params.get(*id),
                    preacts,
                    inert_fraction: if mask.is_empty() {
                        0.0
                    } else {
                        inert as f64 / mask.len() as f64
                    },
                }
            })
            .collect();
        Ok(snapshot_report(&probes, step))
    }

    /// Top-1 error in percent over a labeled set, evaluated in
    /// inference mode. Prediction ties break to the lowest class index.
    pub fn top1_error_percent(&self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward_eval(images)?;
        let (n, k) = (logits.shape()[0], logits.shape()[1]);
        let mut wrong = 0usize;
        for i in 0..n {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0usize;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best != labels[i] {
                wrong += 1;
            }
        }
        Ok(100.0 * wrong as f64 / n as f64)
    }

    /// Ids of the conv-block weight tensors, for inertia assertions.
    pub fn conv_weight_ids(&self) -> Vec<(String, ParamId)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { name, kernel, .. } => Some((name.clone(), *kernel)),
                _ => None,
            })
            .collect()
    }
}

fn add_bias(y: &mut Tensor, bias: &Tensor) -> Result<()> {
    let (n, c, h, w) = y.as_nchw()?;
    if bias.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "bias extent {:?} must be [{c}]",
            bias.shape()
        )));
    }
    let hw = h * w;
    let bd = bias.data().to_vec();
    let yd = y.data_mut();
    for b in 0..n {
        for ci in 0..c {
            let base = (b * c + ci) * hw;
            for k in 0..hw {
                yd[base + k] += bd[ci];
            }
        }
    }
    Ok(())
}

/// Stacks sample images into one `[N, C, H, W]` batch tensor.
pub fn batch_images(samples: &[&crate::harness::data::Sample]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
    let (c, h, w) = match first.image.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "sample image must be [C, H, W], got {other:?}"
            )))
        }
    };
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        if s.image.shape() != [c, h, w] {
            return Err(Error::ShapeMismatch("mixed image extents in batch".into()));
        }
        data.extend_from_slice(s.image.data());
    }
    Tensor::from_data(&[samples.len(), c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn spec_2conv() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv { out: 3, kernel: 3, bias: None, pool_skip: None },
            LayerSpec::Conv {
                out: 2,
                kernel: 3,
                bias: None,
                pool_skip: Some((PoolSkipVariant::Full, 2)),
            },
            LayerSpec::Linear { out: 4 },
        ]
    }

    #[test]
    fn infer_shapes_walks_conv_arithmetic() {
        let shapes = infer_shapes(&spec_2conv(), (1, 8, 8)).unwrap();
        assert_eq!(shapes, vec![(3, 6, 6), (2, 4, 4), (4, 1, 1)]);
    }

    #[test]
    fn infer_shapes_rejects_bad_pool_size() {
        let items = vec![
            LayerSpec::Conv {
                out: 2,
                kernel: 3,
                bias: None,
                pool_skip: Some((PoolSkipVariant::Full, 3)),
            },
            LayerSpec::Linear { out: 2 },
        ];
        let err = infer_shapes(&items, (1, 8, 8)).unwrap_err();
        assert!(err.contains("e does not divide H"), "{err}");
    }

    #[test]
    fn infer_shapes_requires_trailing_classifier() {
        let items = vec![LayerSpec::Conv { out: 2, kernel: 3, bias: None, pool_skip: None }];
        assert!(infer_shapes(&items, (1, 8, 8)).is_err());
    }

    #[test]
    fn static_shapes_match_runtime() {
        let items = spec_2conv();
        let mut rng = seeded(5);
        let mut model = Model::build(&items, (1, 8, 8), 0.0, true, &mut rng).unwrap();
        let x = Tensor::filled(&[2, 1, 8, 8], 0.3).unwrap();
        let mut tape = GradTape::new();
        let y = model.forward_train(&x, &mut tape).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        let z = model.forward_eval(&x).unwrap();
        assert_eq!(z.shape(), &[2, 4]);
    }

    #[test]
    fn snapshot_layer_order_and_zero_init() {
        let items = spec_2conv();
        let mut rng = seeded(6);
        let mut model = Model::build(&items, (1, 8, 8), 0.0, false, &mut rng).unwrap();
        // Zero out every parameter: all layers become all-zero.
        for id in model.params.ids().collect::<Vec<_>>() {
            let t = model.params.get_mut(id);
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let probe = Tensor::filled(&[2, 1, 8, 8], 0.5).unwrap();
        let inertia = InertiaProbe::new(&model.params, 1);
        let report = model.snapshot(&probe, 0, &inertia).unwrap();
        let names: Vec<_> = report.iter().map(|r| r.layer.as_str()).collect();
        assert_eq!(names, vec!["conv1", "conv2", "conv2.ps", "fc"]);
        assert!(report.iter().all(|r| r.l2_l1.is_none()));
    }
}
