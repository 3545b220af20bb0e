//! Reverse-mode differentiation over composed layers, the plain
//! gradient-descent update, finite-difference oracles, and the weight
//! inertia probe that detects persistently zero gradients.

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, linear_backward,
    linear_forward, relu_backward, relu_forward, BatchNormCache, ConvKernel, PoolIndices,
};
use crate::pool_skip::{self, PoolSkipConfig, PoolSkipVariant};
use crate::tensor::Tensor;

/// Handle of one parameter tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Registry of the trainable tensors of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.tensors.push(tensor);
        self.names.push(name.into());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    fn kernel(&self, id: ParamId) -> Result<ConvKernel> {
        ConvKernel::new(self.get(id).clone())
    }
}

/// Accumulated gradients of one backward pass, keyed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    /// Gradient with respect to the network input.
    pub input: Option<Tensor>,
}

impl Gradients {
    fn sized_for(params: &ParamSet) -> Self {
        Gradients {
            grads: vec![None; params.len()],
            input: None,
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    fn accumulate(&mut self, id: ParamId, grad: Tensor) -> Result<()> {
        match &mut self.grads[id.0] {
            Some(existing) => {
                *existing = existing.add(&grad)?;
            }
            slot => *slot = Some(grad),
        }
        Ok(())
    }
}

#[derive(Debug)]
enum TapeNode {
    Conv {
        x: Tensor,
        kernel: ParamId,
        bias: Option<ParamId>,
    },
    BatchNorm {
        cache: BatchNormCache,
        gamma: ParamId,
        beta: ParamId,
    },
    Relu {
        x: Tensor,
    },
    PoolSkip {
        x: Tensor,
        e: usize,
        variant: PoolSkipVariant,
        inner: ParamId,
        idx: PoolIndices,
    },
    Flatten {
        shape: Vec<usize>,
    },
    Linear {
        x: Tensor,
        w: ParamId,
        b: ParamId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TapeState {
    Recording,
    Complete,
    Consumed,
}

/// Reverse-mode record of one forward pass. Nodes are stored in execution
/// order; the backward traversal visits them in exact reverse order.
#[derive(Debug)]
pub struct GradTape {
    nodes: Vec<TapeNode>,
    state: TapeState,
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape {
            nodes: Vec::new(),
            state: TapeState::Recording,
        }
    }

    fn check_recording(&self) -> Result<()> {
        if self.state != TapeState::Recording {
            return Err(Error::IncompleteTape(
                "cannot record on a finished tape".into(),
            ));
        }
        Ok(())
    }

    /// Marks the forward pass as complete; required before `backward`.
    pub fn finish(&mut self) {
        if self.state == TapeState::Recording {
            self.state = TapeState::Complete;
        }
    }

    pub fn conv(
        &mut self,
        params: &ParamSet,
        x: &Tensor,
        kernel: ParamId,
        bias: Option<ParamId>,
    ) -> Result<Tensor> {
        self.check_recording()?;
        let k = params.kernel(kernel)?;
        let mut y = conv2d_forward(x, &k, 1)?;
        if let Some(b) = bias {
            add_channel_bias(&mut y, params.get(b))?;
        }
        self.nodes.push(TapeNode::Conv {
            x: x.clone(),
            kernel,
            bias,
        });
        Ok(y)
    }

    /// Training-mode batch norm. Returns the output and the batch
    /// statistics so the caller can maintain running averages.
    pub fn batchnorm(
        &mut self,
        params: &ParamSet,
        x: &Tensor,
        gamma: ParamId,
        beta: ParamId,
        eps: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        self.check_recording()?;
        let (y, cache) = batchnorm_forward(x, params.get(gamma), params.get(beta), eps)?;
        let (mean, var) = (cache.batch_mean.clone(), cache.batch_var.clone());
        self.nodes.push(TapeNode::BatchNorm { cache, gamma, beta });
        Ok((y, mean, var))
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_recording()?;
        let y = relu_forward(x);
        self.nodes.push(TapeNode::Relu { x: x.clone() });
        Ok(y)
    }

    pub fn pool_skip(
        &mut self,
        params: &ParamSet,
        x: &Tensor,
        e: usize,
        variant: PoolSkipVariant,
        inner: ParamId,
    ) -> Result<Tensor> {
        self.check_recording()?;
        let cfg = PoolSkipConfig::new(e, variant, params.kernel(inner)?)?;
        let (y, idx) = pool_skip::forward(x, &cfg)?;
        self.nodes.push(TapeNode::PoolSkip {
            x: x.clone(),
            e,
            variant,
            inner,
            idx,
        });
        Ok(y)
    }

    pub fn flatten(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_recording()?;
        let shape = x.shape().to_vec();
        let batch = shape[0];
        let features: usize = shape[1..].iter().product();
        self.nodes.push(TapeNode::Flatten { shape });
        Tensor::from_data(&[batch, features], x.data().to_vec())
    }

    pub fn linear(
        &mut self,
        params: &ParamSet,
        x: &Tensor,
        w: ParamId,
        b: ParamId,
    ) -> Result<Tensor> {
        self.check_recording()?;
        let y = linear_forward(x, params.get(w), params.get(b))?;
        self.nodes.push(TapeNode::Linear {
            x: x.clone(),
            w,
            b,
        });
        Ok(y)
    }
}

fn add_channel_bias(y: &mut Tensor, bias: &Tensor) -> Result<()> {
    let (n, c, h, w) = y.as_nchw()?;
    if bias.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "bias extent {:?} must be [{c}]",
            bias.shape()
        )));
    }
    let bd = bias.data().to_vec();
    let hw = h * w;
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

fn channel_bias_grad(grad: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = grad.as_nchw()?;
    let hw = h * w;
    let gd = grad.data();
    let mut out = vec![0.0; c];
    for b in 0..n {
        for ci in 0..c {
            let base = (b * c + ci) * hw;
            for k in 0..hw {
                out[ci] += gd[base + k];
            }
        }
    }
    Tensor::from_data(&[c], out)
}

/// Walks the tape in reverse execution order, accumulating one gradient per
/// referenced parameter plus the gradient at the network input.
///
/// Errors with `IncompleteTape` when called before the forward pass
/// finished or a second time on the same tape.
pub fn backward(tape: &mut GradTape, params: &ParamSet, loss_grad: &Tensor) -> Result<Gradients> {
    match tape.state {
        TapeState::Recording => {
            return Err(Error::IncompleteTape(
                "backward invoked before forward completed".into(),
            ))
        }
        TapeState::Consumed => {
            return Err(Error::IncompleteTape(
                "backward invoked twice on the same tape".into(),
            ))
        }
        TapeState::Complete => {}
    }
    tape.state = TapeState::Consumed;

    let mut grads = Gradients::sized_for(params);
    let mut grad = loss_grad.clone();

    for node in tape.nodes.iter().rev() {
        grad = match node {
            TapeNode::Conv { x, kernel, bias } => {
                if let Some(b) = bias {
                    grads.accumulate(*b, channel_bias_grad(&grad)?)?;
                }
                let k = params.kernel(*kernel)?;
                let (gx, gk) = conv2d_backward(x, &k, &grad)?;
                grads.accumulate(*kernel, gk)?;
                gx
            }
            TapeNode::BatchNorm { cache, gamma, beta } => {
                let (gx, ggamma, gbeta) = batchnorm_backward(cache, &grad)?;
                grads.accumulate(*gamma, ggamma)?;
                grads.accumulate(*beta, gbeta)?;
                gx
            }
            TapeNode::Relu { x } => relu_backward(x, &grad)?,
            TapeNode::PoolSkip {
                x,
                e,
                variant,
                inner,
                idx,
            } => {
                let cfg = PoolSkipConfig::new(*e, *variant, params.kernel(*inner)?)?;
                let (gx, gk) = pool_skip::backward(x, &cfg, idx, &grad)?;
                grads.accumulate(*inner, gk)?;
                gx
            }
            TapeNode::Flatten { shape } => Tensor::from_data(shape, grad.data().to_vec())?,
            TapeNode::Linear { x, w, b } => {
                let (gx, gw, gb) = linear_backward(x, params.get(*w), &grad)?;
                grads.accumulate(*w, gw)?;
                grads.accumulate(*b, gb)?;
                gx
            }
        };
    }

    grads.input = Some(grad);
    Ok(grads)
}

/// Learning-rate schedule of the gradient-descent update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// Multiply the rate by `factor` every `every_epochs` epochs.
    StepDecay { factor: f64, every_epochs: usize },
}

/// Learning rate, schedule and RNG seed of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl OptimizerConfig {
    pub fn new(eta: f64, schedule: Schedule, seed: u64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::ShapeMismatch(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        if let Schedule::StepDecay { factor, every_epochs } = schedule {
            if !(factor > 0.0 && factor <= 1.0) || every_epochs == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "decay factor must lie in (0, 1] with a positive period, got {factor} every {every_epochs}"
                )));
            }
        }
        Ok(OptimizerConfig { eta, schedule, seed })
    }

    pub fn constant(eta: f64, seed: u64) -> Result<Self> {
        Self::new(eta, Schedule::Constant, seed)
    }

    /// Effective learning rate at a given epoch.
    pub fn eta_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.eta,
            Schedule::StepDecay { factor, every_epochs } => {
                self.eta * factor.powi((epoch / every_epochs) as i32)
            }
        }
    }
}

/// One gradient-descent step: every parameter is decremented by
/// `eta * gradient`, with the schedule applied by epoch.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &Gradients,
    cfg: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    let eta = cfg.eta_at(epoch);
    for id in params.ids().collect::<Vec<_>>() {
        let grad = grads
            .get(id)
            .ok_or_else(|| Error::MissingGradient(params.name(id).to_string()))?;
        if grad.shape() != params.get(id).shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} vs parameter {:?} for `{}`",
                grad.shape(),
                params.get(id).shape(),
                params.name(id)
            )));
        }
        let grad = grad.clone();
        let p = params.get_mut(id);
        for (w, g) in p.data_mut().iter_mut().zip(grad.data()) {
            *w -= eta * g;
        }
    }
    Ok(())
}

/// Central-difference gradient of a scalar-valued function of one tensor:
/// `(f(w + h e_i) - f(w - h e_i)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(mut f: F, param: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0);
    let mut grad = Tensor::zeros(param.shape()).expect("param shape is valid");
    let mut probe = param.clone();
    for i in 0..param.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Inertia summary of one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamInertia {
    pub name: String,
    pub total_weights: usize,
    pub inert_weights: usize,
}

impl ParamInertia {
    pub fn fraction(&self) -> f64 {
        if self.total_weights == 0 {
            0.0
        } else {
            self.inert_weights as f64 / self.total_weights as f64
        }
    }
}

/// Per-parameter counts of weights whose gradient stayed exactly zero for
/// at least `k` consecutive observed steps.
#[derive(Debug, Clone)]
pub struct InertiaRecord {
    pub k: usize,
    pub steps_observed: usize,
    pub per_param: Vec<ParamInertia>,
}

impl InertiaRecord {
    pub fn inert_fraction(&self) -> f64 {
        let total: usize = self.per_param.iter().map(|p| p.total_weights).sum();
        let inert: usize = self.per_param.iter().map(|p| p.inert_weights).sum();
        if total == 0 {
            0.0
        } else {
            inert as f64 / total as f64
        }
    }
}

/// Streaming counter of consecutive exactly-zero gradients per weight.
///
/// "Exactly zero" means bit-equal `0.0`: the ReLU gate produces literal
/// zeros, and a threshold would conflate small live gradients with dead
/// ones. Counters reset on any nonzero gradient.
#[derive(Debug, Clone)]
pub struct InertiaProbe {
    k: usize,
    steps: usize,
    counters: Vec<Vec<u32>>,
}

impl InertiaProbe {
    pub fn new(params: &ParamSet, k: usize) -> Self {
        assert!(k >= 1);
        InertiaProbe {
            k,
            steps: 0,
            counters: params.ids().map(|id| vec![0; params.get(id).len()]).collect(),
        }
    }

    pub fn observe(&mut self, grads: &Gradients) {
        self.steps += 1;
        for (slot, counters) in grads.grads.iter().zip(&mut self.counters) {
            match slot {
                Some(g) => {
                    for (c, &v) in counters.iter_mut().zip(g.data()) {
                        if v == 0.0 {
                            *c += 1;
                        } else {
                            *c = 0;
                        }
                    }
                }
                // A parameter that received no gradient this step cannot
                // have been updated.
                None => counters.iter_mut().for_each(|c| *c += 1),
            }
        }
    }

    /// Mask of weights currently flagged inert for parameter `id`.
    pub fn inert_mask(&self, id: ParamId) -> Vec<bool> {
        self.counters[id.0]
            .iter()
            .map(|&c| c as usize >= self.k)
            .collect()
    }

    pub fn record(&self, params: &ParamSet) -> InertiaRecord {
        let per_param = params
            .ids()
            .map(|id| ParamInertia {
                name: params.name(id).to_string(),
                total_weights: self.counters[id.0].len(),
                inert_weights: self.counters[id.0]
                    .iter()
                    .filter(|&&c| c as usize >= self.k)
                    .count(),
            })
            .collect();
        InertiaRecord {
            k: self.k,
            steps_observed: self.steps,
            per_param,
        }
    }
}

/// Flags every weight whose gradient was exactly zero for `k` consecutive
/// recorded steps across the given gradient sequence.
pub fn inertia_probe(steps: &[Gradients], params: &ParamSet, k: usize) -> InertiaRecord {
    let mut probe = InertiaProbe::new(params, k);
    for g in steps {
        probe.observe(g);
    }
    probe.record(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::softmax_cross_entropy;

    #[test]
    fn identity_chain_passes_loss_grad_to_input() {
        // 1x1 unit conv, no activation.
        let mut params = ParamSet::new();
        let k = params.register("conv.k", Tensor::from_data(&[1, 1, 1, 1], vec![1.0]).unwrap());
        let x = Tensor::from_data(&[1, 1, 2, 2], vec![0.5, -1.0, 2.0, 3.0]).unwrap();

        let mut tape = GradTape::new();
        let y = tape.conv(&params, &x, k, None).unwrap();
        assert_eq!(y.data(), x.data());
        tape.finish();

        let loss_grad = Tensor::from_data(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let grads = backward(&mut tape, &params, &loss_grad).unwrap();
        assert_eq!(grads.input.as_ref().unwrap(), &loss_grad);
    }

    #[test]
    fn dying_relu_zeroes_all_parameter_gradients() {
        // Conv whose pre-activations are all <= 0: the gate closes every path.
        let mut params = ParamSet::new();
        let k = params.register("conv.k", Tensor::zeros(&[1, 1, 3, 3]).unwrap());
        let b = params.register("conv.b", Tensor::from_data(&[1], vec![-1.0]).unwrap());
        let x = Tensor::filled(&[1, 1, 4, 4], 1.0).unwrap();

        let mut tape = GradTape::new();
        let z = tape.conv(&params, &x, k, Some(b)).unwrap();
        assert!(z.data().iter().all(|&v| v == -1.0));
        let _ = tape.relu(&z).unwrap();
        tape.finish();

        let loss_grad = Tensor::filled(&[1, 1, 2, 2], 1.0).unwrap();
        let grads = backward(&mut tape, &params, &loss_grad).unwrap();
        assert!(grads.get(k).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_twice_errors() {
        let mut params = ParamSet::new();
        let k = params.register("k", Tensor::from_data(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let x = Tensor::filled(&[1, 1, 2, 2], 1.0).unwrap();
        let mut tape = GradTape::new();
        let _ = tape.conv(&params, &x, k, None).unwrap();

        let g = Tensor::filled(&[1, 1, 2, 2], 1.0).unwrap();
        assert!(matches!(
            backward(&mut tape, &params, &g),
            Err(Error::IncompleteTape(_))
        ));
        tape.finish();
        assert!(backward(&mut tape, &params, &g).is_ok());
        assert!(matches!(
            backward(&mut tape, &params, &g),
            Err(Error::IncompleteTape(_))
        ));
    }

    #[test]
    fn two_layer_net_matches_finite_differences() {
        let mut rng = crate::rng::seeded(21);
        let mut params = ParamSet::new();
        let k1 = params.register(
            "c1.k",
            Tensor::from_data(
                &[2, 1, 3, 3],
                (0..18).map(|_| crate::rng::uniform(&mut rng, -0.8, 0.8)).collect(),
            )
            .unwrap(),
        );
        let b1 = params.register(
            "c1.b",
            Tensor::from_data(&[2], vec![0.3, -0.2]).unwrap(),
        );
        let w = params.register(
            "fc.w",
            Tensor::from_data(
                &[8, 2],
                (0..16).map(|_| crate::rng::uniform(&mut rng, -0.8, 0.8)).collect(),
            )
            .unwrap(),
        );
        let b2 = params.register("fc.b", Tensor::from_data(&[2], vec![0.1, 0.0]).unwrap());
        let x = Tensor::from_data(
            &[1, 1, 4, 4],
            (0..16).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect(),
        )
        .unwrap();
        let labels = [1usize];

        let run = |params: &ParamSet| -> (f64, Tensor, GradTape) {
            let mut tape = GradTape::new();
            let z = tape.conv(params, &x, k1, Some(b1)).unwrap();
            let a = tape.relu(&z).unwrap();
            let f = tape.flatten(&a).unwrap();
            let logits = tape.linear(params, &f, w, b2).unwrap();
            let (loss, grad_logits) = softmax_cross_entropy(&logits, &labels).unwrap();
            tape.finish();
            (loss, grad_logits, tape)
        };

        let (_, grad_logits, mut tape) = run(&params);
        let grads = backward(&mut tape, &params, &grad_logits).unwrap();

        for id in params.ids().collect::<Vec<_>>() {
            let analytic = grads.get(id).unwrap().clone();
            let base = params.get(id).clone();
            let mut probe_params = params.clone();
            let numeric = finite_diff_grad(
                |p| {
                    *probe_params.get_mut(id) = p.clone();
                    run(&probe_params).0
                },
                &base,
                1e-5,
            );
            for (a, n) in analytic.data().iter().zip(numeric.data()) {
                let scale = a.abs().max(n.abs()).max(1.0);
                assert!(
                    (a - n).abs() / scale <= 1e-5,
                    "param {:?}: analytic {a} vs numeric {n}",
                    params.name(id)
                );
            }
        }
    }

    #[test]
    fn sgd_step_examples() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::from_data(&[1], vec![1.0]).unwrap());
        let mut grads = Gradients::sized_for(&params);
        grads
            .accumulate(w, Tensor::from_data(&[1], vec![0.5]).unwrap())
            .unwrap();
        let cfg = OptimizerConfig::constant(0.1, 0).unwrap();
        sgd_step(&mut params, &grads, &cfg, 0).unwrap();
        assert!((params.get(w).data()[0] - 0.95).abs() < 1e-15);

        // Zero gradient leaves the parameter unchanged.
        let mut grads = Gradients::sized_for(&params);
        grads.accumulate(w, Tensor::zeros(&[1]).unwrap()).unwrap();
        let before = params.get(w).data()[0];
        sgd_step(&mut params, &grads, &cfg, 0).unwrap();
        assert_eq!(params.get(w).data()[0], before);
    }

    #[test]
    fn sgd_step_elementwise_rule() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::from_data(&[2], vec![1.0, 2.0]).unwrap());
        let mut grads = Gradients::sized_for(&params);
        grads
            .accumulate(w, Tensor::from_data(&[2], vec![1.0, -1.0]).unwrap())
            .unwrap();
        let cfg = OptimizerConfig::constant(0.5, 0).unwrap();
        sgd_step(&mut params, &grads, &cfg, 0).unwrap();
        assert_eq!(params.get(w).data(), &[0.5, 2.5]);
    }

    #[test]
    fn sgd_missing_gradient_errors() {
        let mut params = ParamSet::new();
        let _ = params.register("w", Tensor::from_data(&[1], vec![1.0]).unwrap());
        let grads = Gradients::sized_for(&params);
        let cfg = OptimizerConfig::constant(0.1, 0).unwrap();
        assert!(matches!(
            sgd_step(&mut params, &grads, &cfg, 0),
            Err(Error::MissingGradient(_))
        ));
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = OptimizerConfig::new(
            1.0,
            Schedule::StepDecay {
                factor: 0.5,
                every_epochs: 2,
            },
            0,
        )
        .unwrap();
        assert_eq!(cfg.eta_at(0), 1.0);
        assert_eq!(cfg.eta_at(1), 1.0);
        assert_eq!(cfg.eta_at(2), 0.5);
        assert_eq!(cfg.eta_at(5), 0.25);
    }

    #[test]
    fn finite_diff_square_and_constant() {
        let w = Tensor::from_data(&[1], vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &w, 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);

        let g = finite_diff_grad(|_| 42.0, &w, 1e-5);
        assert!(g.data()[0].abs() < 1e-9);
    }

    #[test]
    fn inertia_counters_reset_on_live_gradient() {
        let mut params = ParamSet::new();
        let w = params.register("w", Tensor::zeros(&[2]).unwrap());
        let mut probe = InertiaProbe::new(&params, 2);

        let zero = {
            let mut g = Gradients::sized_for(&params);
            g.accumulate(w, Tensor::zeros(&[2]).unwrap()).unwrap();
            g
        };
        let half_live = {
            let mut g = Gradients::sized_for(&params);
            g.accumulate(w, Tensor::from_data(&[2], vec![0.0, 1.0]).unwrap())
                .unwrap();
            g
        };

        probe.observe(&zero);
        probe.observe(&zero);
        assert_eq!(probe.inert_mask(w), vec![true, true]);
        probe.observe(&half_live);
        probe.observe(&zero);
        // First weight kept its streak; second was reset by the live step.
        assert_eq!(probe.inert_mask(w), vec![true, false]);
    }

    #[test]
    fn zero_layer_fed_zero_input_is_fully_inert() {
        let mut params = ParamSet::new();
        let k = params.register("conv.k", Tensor::zeros(&[1, 1, 3, 3]).unwrap());
        let x = Tensor::zeros(&[1, 1, 4, 4]).unwrap();

        let steps: Vec<Gradients> = (0..5)
            .map(|_| {
                let mut tape = GradTape::new();
                let z = tape.conv(&params, &x, k, None).unwrap();
                let _ = tape.relu(&z).unwrap();
                tape.finish();
                let g = Tensor::filled(&[1, 1, 2, 2], 1.0).unwrap();
                backward(&mut tape, &params, &g).unwrap()
            })
            .collect();

        let record = inertia_probe(&steps, &params, 5);
        assert_eq!(record.per_param[0].inert_weights, 9);
        assert!((record.inert_fraction() - 1.0).abs() < 1e-15);
    }
}
