//! Experiment orchestration: one deterministic training run per seed,
//! snapshot diagnostics on a fixed probe batch, and CSV emission with
//! per-seed results merged in seed order.

use std::path::PathBuf;

use rand::Rng;

use crate::autodiff::{backward, sgd_step, GradTape, InertiaProbe, OptimizerConfig, Schedule};
use crate::diagnostics::LayerDiagnostics;
use crate::error::{Error, Result};
use crate::harness::config::{DataSource, ExperimentConfig};
use crate::harness::data::{gen_synthetic_with, load_cifar_binary, split_train_eval, Sample, SyntheticSpec};
use crate::harness::model::{batch_images, Model};
use crate::harness::report::{
    diagnostics_row, fmt_f64, mean_std, results_row, CsvFile, EpochRow, AGGREGATE_HEADER,
    DIAGNOSTICS_HEADER, RESULTS_HEADER,
};
use crate::ops::softmax_cross_entropy;
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const PROBE_BATCH: usize = 64;

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub epoch_rows: Vec<EpochRow>,
    pub diagnostics: Vec<LayerDiagnostics>,
    pub final_train_loss: f64,
    pub final_top1_error: f64,
    /// Mean channel-granularity dead fraction over conv blocks at the last
    /// snapshot.
    pub final_mean_dead_fraction: f64,
}

/// Result directory contents after a run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub outcomes: Vec<SeedOutcome>,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<(Vec<Sample>, u64)> {
    match &cfg.data {
        DataSource::Synthetic {
            classes,
            samples,
            extent,
            channels,
            noise,
            seed,
        } => {
            let spec = SyntheticSpec {
                num: *samples,
                classes: *classes,
                extent: *extent,
                channels: *channels,
                noise: *noise,
                seed: *seed,
            };
            Ok((gen_synthetic_with(&spec), *seed))
        }
        DataSource::Cifar { path, limit } => {
            let mut samples = load_cifar_binary(path)?;
            if let Some(limit) = limit {
                samples.truncate(*limit);
            }
            Ok((samples, 7777))
        }
    }
}

struct Batches {
    images: Vec<Tensor>,
    labels: Vec<Vec<usize>>,
}

fn make_batches(samples: &[Sample], order: &[usize], batch_size: usize, min_batch: usize) -> Result<Batches> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for chunk in order.chunks(batch_size) {
        if chunk.len() < min_batch {
            continue;
        }
        let refs: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
        images.push(batch_images(&refs)?);
        labels.push(refs.iter().map(|s| s.label).collect());
    }
    Ok(Batches { images, labels })
}

/// Trains one seed to completion. Deterministic for a fixed
/// `(config, seed)` pair.
pub fn run_seed(
    cfg: &ExperimentConfig,
    train: &[Sample],
    eval: &[Sample],
    seed: u64,
) -> Result<SeedOutcome> {
    let mut init_rng = seeded(seed);
    let mut model = Model::build_with_gain(
        &cfg.layers,
        cfg.input_shape(),
        cfg.bias_offset,
        cfg.init_gain,
        cfg.batchnorm,
        &mut init_rng,
    )?;
    let optim = OptimizerConfig::new(
        cfg.lr,
        if cfg.lr_decay < 1.0 {
            Schedule::StepDecay {
                factor: cfg.lr_decay,
                every_epochs: cfg.decay_every,
            }
        } else {
            Schedule::Constant
        },
        seed,
    )?;

    let probe_refs: Vec<&Sample> = train.iter().take(PROBE_BATCH.min(train.len())).collect();
    let probe = batch_images(&probe_refs)?;

    let min_batch = if cfg.batchnorm { 2 } else { 1 };
    let eval_order: Vec<usize> = (0..eval.len()).collect();
    let eval_batches = make_batches(eval, &eval_order, cfg.batch_size, 1)?;

    let mut inertia = InertiaProbe::new(&model.params, cfg.inertia_k);
    let mut diagnostics = model.snapshot(&probe, 0, &inertia)?;
    let mut epoch_rows = Vec::new();
    let mut shuffle_rng = seeded(seed ^ 0x9e37_79b9);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let batches = make_batches(train, &order, cfg.batch_size, min_batch)?;

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (images, labels) in batches.images.iter().zip(&batches.labels) {
            let mut tape = GradTape::new();
            let logits = model.forward_train(images, &mut tape)?;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;
            tape.finish();
            let grads = backward(&mut tape, &model.params, &grad_logits)?;
            inertia.observe(&grads);
            sgd_step(&mut model.params, &grads, &optim, epoch - 1)?;

            loss_sum += loss;
            loss_count += 1;
            step += 1;
            if step % cfg.snapshot_interval == 0 {
                diagnostics.extend(model.snapshot(&probe, step, &inertia)?);
            }
        }
        if loss_count == 0 {
            return Err(Error::ShapeMismatch(
                "training split produced no full batches".into(),
            ));
        }

        let mut wrong = 0.0;
        let mut total = 0.0;
        for (images, labels) in eval_batches.images.iter().zip(&eval_batches.labels) {
            let err = model.top1_error_percent(images, labels)?;
            wrong += err * labels.len() as f64;
            total += labels.len() as f64;
        }
        let top1_error = if total > 0.0 { wrong / total } else { 0.0 };
        epoch_rows.push(EpochRow {
            seed,
            epoch,
            train_loss: loss_sum / loss_count as f64,
            top1_error,
        });
    }

    let final_row = epoch_rows.last().expect("at least one epoch");
    let last_step = diagnostics.iter().map(|d| d.step).max().unwrap_or(0);
    let dead: Vec<f64> = diagnostics
        .iter()
        .filter(|d| d.step == last_step && d.layer.starts_with("conv") && !d.layer.ends_with(".ps"))
        .map(|d| d.dead_fraction)
        .collect();
    let final_mean_dead_fraction = if dead.is_empty() {
        0.0
    } else {
        dead.iter().sum::<f64>() / dead.len() as f64
    };

    Ok(SeedOutcome {
        seed,
        final_train_loss: final_row.train_loss,
        final_top1_error: final_row.top1_error,
        final_mean_dead_fraction,
        epoch_rows,
        diagnostics,
    })
}

/// Runs every seed of the config and emits `results.csv`,
/// `diagnostics.csv`, `aggregate.csv` and `manifest.txt` under the output
/// directory. Seeds run as independent jobs; rows are merged in seed order
/// and flushed per seed, so completed seeds survive a later abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let (samples, data_seed) = load_dataset(cfg)?;
    let (train, eval) = split_train_eval(samples, data_seed);

    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut manifest = CsvFile::create(&cfg.output_dir.join("manifest.txt"), "# run manifest")?;
    manifest.row(&[format!("config_hash = {:016x}", cfg.content_hash())])?;
    manifest.row(&[format!(
        "seeds = {}",
        cfg.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    )])?;
    manifest.flush()?;

    let mut results = CsvFile::create(&cfg.output_dir.join("results.csv"), RESULTS_HEADER)?;
    let mut diags = CsvFile::create(&cfg.output_dir.join("diagnostics.csv"), DIAGNOSTICS_HEADER)?;

    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut outcomes: Vec<SeedOutcome> = Vec::with_capacity(cfg.seeds.len());

    let (train_ref, eval_ref) = (&train, &eval);
    for chunk in cfg.seeds.chunks(threads.max(1)) {
        let chunk_outcomes: Vec<Result<SeedOutcome>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| scope.spawn(move || run_seed(cfg, train_ref, eval_ref, seed)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect()
        });
        for outcome in chunk_outcomes {
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    // Flush what completed before aborting.
                    results.flush()?;
                    diags.flush()?;
                    return Err(e);
                }
            };
            for row in &outcome.epoch_rows {
                results.row(&results_row(row))?;
            }
            for d in &outcome.diagnostics {
                diags.row(&diagnostics_row(outcome.seed, d))?;
            }
            results.flush()?;
            diags.flush()?;
            outcomes.push(outcome);
        }
    }

    let mut aggregate = CsvFile::create(&cfg.output_dir.join("aggregate.csv"), AGGREGATE_HEADER)?;
    for (metric, values) in [
        (
            "final_top1_error",
            outcomes.iter().map(|o| o.final_top1_error).collect::<Vec<_>>(),
        ),
        (
            "final_train_loss",
            outcomes.iter().map(|o| o.final_train_loss).collect::<Vec<_>>(),
        ),
        (
            "final_mean_dead_fraction",
            outcomes.iter().map(|o| o.final_mean_dead_fraction).collect::<Vec<_>>(),
        ),
    ] {
        let (mean, std) = mean_std(&values);
        aggregate.row(&[metric.to_string(), fmt_f64(mean), fmt_f64(std)])?;
    }
    aggregate.flush()?;

    Ok(RunArtifacts {
        dir: cfg.output_dir.clone(),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn tiny_config(dir: &str) -> ExperimentConfig {
        let text = format!(
            "\
[model]
layers = conv 4 3, linear 4

[data]
source = synthetic
classes = 4
samples = 80
extent = 8

[train]
epochs = 2
batch_size = 8
lr = 0.1
seeds = 1, 2
snapshot_interval = 4

[output]
dir = {dir}
"
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn run_produces_expected_rows_and_learns_something() {
        let dir = std::env::temp_dir().join("poolskip_run_test");
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = tiny_config(dir.to_str().unwrap());
        let artifacts = run_experiment(&cfg).unwrap();
        assert_eq!(artifacts.outcomes.len(), 2);
        for o in &artifacts.outcomes {
            assert_eq!(o.epoch_rows.len(), 2);
            // 64 train samples / batch 8 = 8 steps per epoch, 16 total;
            // snapshots at 0, 4, 8, 12, 16.
            let steps: std::collections::BTreeSet<usize> =
                o.diagnostics.iter().map(|d| d.step).collect();
            assert_eq!(steps.into_iter().collect::<Vec<_>>(), vec![0, 4, 8, 12, 16]);
            // Loss should drop on this separable task.
            assert!(o.epoch_rows[1].train_loss < o.epoch_rows[0].train_loss);
        }
        let results = std::fs::read_to_string(dir.join("results.csv")).unwrap();
        assert!(results.starts_with("seed,epoch,train_loss,top1_error\n"));
        assert_eq!(results.lines().count(), 1 + 4);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir1 = std::env::temp_dir().join("poolskip_det_1");
        let dir2 = std::env::temp_dir().join("poolskip_det_2");
        for d in [&dir1, &dir2] {
            let _ = std::fs::remove_dir_all(d);
        }
        let cfg1 = tiny_config(dir1.to_str().unwrap());
        let cfg2 = tiny_config(dir2.to_str().unwrap());
        run_experiment(&cfg1).unwrap();
        run_experiment(&cfg2).unwrap();
        for name in ["results.csv", "diagnostics.csv", "aggregate.csv"] {
            let a = std::fs::read(dir1.join(name)).unwrap();
            let b = std::fs::read(dir2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        for d in [&dir1, &dir2] {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}
