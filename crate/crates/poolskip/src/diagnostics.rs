//! Elimination-singularity metrics: the per-layer Hoyer l2/l1 ratio,
//! dead-unit fractions over a fixed probe batch, and snapshot reporting.

use crate::tensor::Tensor;

/// `||w||_2 / ||w||_1` over all weights flattened.
///
/// Returns `None` (rendered "NA" downstream) for an all-zero tensor, where
/// the ratio is undefined. For any nonzero vector the value lies in
/// `[1/sqrt(n), 1]`; higher means sparser.
pub fn hoyer_ratio(w: &Tensor) -> Option<f64> {
    let mut l1 = 0.0;
    let mut sq = 0.0;
    for &v in w.data() {
        l1 += v.abs();
        sq += v * v;
    }
    if l1 == 0.0 {
        None
    } else {
        Some(sq.sqrt() / l1)
    }
}

/// Whether a dead unit is a single spatial position or a whole channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// Fraction of (channel, row, col) positions whose pre-activation is
    /// <= 0 for every sample of the batch.
    Element,
    /// Fraction of channels whose entire map is <= 0 for every sample.
    Channel,
}

/// Fraction of dead units in a `[batch, C, H', W']` pre-activation tensor.
pub fn dead_unit_fraction(preacts: &Tensor, granularity: Granularity) -> f64 {
    let (n, c, h, w) = preacts
        .as_nchw()
        .expect("pre-activations must be a spatial tensor");
    let hw = h * w;
    let pd = preacts.data();

    match granularity {
        Granularity::Element => {
            let mut dead = 0usize;
            for ci in 0..c {
                for k in 0..hw {
                    let all_dead = (0..n).all(|b| pd[(b * c + ci) * hw + k] <= 0.0);
                    if all_dead {
                        dead += 1;
                    }
                }
            }
            dead as f64 / (c * hw) as f64
        }
        Granularity::Channel => {
            let mut dead = 0usize;
            for ci in 0..c {
                let all_dead =
                    (0..n).all(|b| (0..hw).all(|k| pd[(b * c + ci) * hw + k] <= 0.0));
                if all_dead {
                    dead += 1;
                }
            }
            dead as f64 / c as f64
        }
    }
}

/// Per-layer metrics of one training snapshot.
#[derive(Debug, Clone)]
pub struct LayerDiagnostics {
    pub layer: String,
    /// Hoyer l2/l1 of the layer weights; `None` when the layer is all-zero.
    pub l2_l1: Option<f64>,
    /// Channel-granularity dead fraction over the probe batch.
    pub dead_fraction: f64,
    pub zero_weight_count: usize,
    pub inert_fraction: f64,
    pub step: usize,
}

/// What a model exposes per parameterized layer to build a snapshot:
/// weights (biases excluded), the ReLU pre-activations of the probe batch,
/// and the current inert-weight fraction.
pub struct LayerProbe<'a> {
    pub layer: String,
    pub weights: &'a Tensor,
    pub preacts: &'a Tensor,
    pub inert_fraction: f64,
}

/// One record per parameterized layer, in forward execution order.
pub fn snapshot_report(probes: &[LayerProbe<'_>], step: usize) -> Vec<LayerDiagnostics> {
    probes
        .iter()
        .map(|p| LayerDiagnostics {
            layer: p.layer.clone(),
            l2_l1: hoyer_ratio(p.weights),
            dead_fraction: dead_unit_fraction(p.preacts, Granularity::Channel),
            zero_weight_count: p.weights.data().iter().filter(|&&v| v == 0.0).count(),
            inert_fraction: p.inert_fraction,
            step,
        })
        .collect()
}
