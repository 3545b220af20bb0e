//! Dataset ingestion: a deterministic synthetic blob generator and the
//! CIFAR binary record format (1 label byte + 3072 pixel bytes).

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};
use crate::tensor::Tensor;

/// One labeled image with values in `[0, 1]`, stored `[C, H, W]`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;

/// Parses a CIFAR binary file: each 3073-byte record is 1 label byte
/// followed by 1024 red, 1024 green and 1024 blue bytes in row-major
/// 32x32 order. Pixels are scaled by 1/255.
pub fn load_cifar_binary(path: &Path) -> Result<Vec<Sample>> {
    let bytes = std::fs::read(path)?;
    parse_cifar_bytes(&bytes, path.display().to_string())
}

fn parse_cifar_bytes(bytes: &[u8], origin: String) -> Result<Vec<Sample>> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::TruncatedFile(format!(
            "{origin}: {} bytes is not a multiple of {CIFAR_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(bytes.len() / CIFAR_RECORD_BYTES);
    for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::LabelOutOfRange {
                label,
                classes: CIFAR_CLASSES,
            });
        }
        let pixels: Vec<f64> = record[1..].iter().map(|&b| b as f64 / 255.0).collect();
        samples.push(Sample {
            image: Tensor::from_data(&[3, 32, 32], pixels)?,
            label,
        });
    }
    Ok(samples)
}

/// Parameters of the synthetic class-conditional blob generator.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num: usize,
    pub classes: usize,
    pub extent: usize,
    pub channels: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(num: usize, classes: usize, extent: usize, seed: u64) -> Self {
        SyntheticSpec {
            num,
            classes,
            extent,
            channels: 1,
            noise: DEFAULT_NOISE,
            seed,
        }
    }
}

/// Default noise level, calibrated so that a 2-layer net reaches >= 95%
/// train accuracy within 200 steps while classes stay visually distinct.
pub const DEFAULT_NOISE: f64 = 0.15;

/// Class-conditional Gaussian blobs: class k places a bump at a fixed
/// position on a ring, so classes are linearly separable at moderate noise.
/// Labels cycle through the classes; the same seed reproduces the dataset
/// bit for bit.
pub fn gen_synthetic(num: usize, classes: usize, extent: usize, seed: u64) -> Vec<Sample> {
    gen_synthetic_with(&SyntheticSpec::new(num, classes, extent, seed))
}

pub fn gen_synthetic_with(spec: &SyntheticSpec) -> Vec<Sample> {
    assert!(spec.classes >= 1 && spec.num >= spec.classes);
    assert!(spec.extent >= 2 && spec.channels >= 1);
    let mut rng = seeded(spec.seed);
    let ext = spec.extent as f64;
    let sigma = ext / 6.0;
    let ring = ext / 4.0;
    let mid = (ext - 1.0) / 2.0;

    let centers: Vec<(f64, f64)> = (0..spec.classes)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / spec.classes as f64
                + std::f64::consts::FRAC_PI_4;
            (mid + ring * angle.sin(), mid + ring * angle.cos())
        })
        .collect();

    (0..spec.num)
        .map(|i| {
            let label = i % spec.classes;
            let (cy, cx) = centers[label];
            let mut data = Vec::with_capacity(spec.channels * spec.extent * spec.extent);
            for _c in 0..spec.channels {
                for y in 0..spec.extent {
                    for x in 0..spec.extent {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        let mut v = (-d2 / (2.0 * sigma * sigma)).exp();
                        if spec.noise > 0.0 {
                            v += spec.noise * standard_normal(&mut rng);
                        }
                        data.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            Sample {
                image: Tensor::from_data(&[spec.channels, spec.extent, spec.extent], data)
                    .expect("synthetic shape is valid"),
                label,
            }
        })
        .collect()
}

/// Deterministic shuffled 80/20 train/held-out split. The split depends only
/// on the dataset-level seed, so every training seed sees the same data.
pub fn split_train_eval(samples: Vec<Sample>, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = seeded(seed ^ 0x5117);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let cut = (samples.len() * 8) / 10;
    let mut samples: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(cut);
    let mut eval = Vec::with_capacity(samples.len() - cut);
    for (pos, &idx) in order.iter().enumerate() {
        let s = samples[idx].take().expect("each index visited once");
        if pos < cut {
            train.push(s);
        } else {
            eval.push(s);
        }
    }
    (train, eval)
}
