use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::data::{epoch_batches, epoch_rng, AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::layers::{CapsNet, Mask, ModelConfig, ParamStore};
use crate::loss::{margin_loss, reconstruction_loss, total_loss, LossConfig};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Graph, Tensor, TensorError};

use super::{run_id, EpochMetrics, RunRecord, RunStatus};

/// RNG stream for augmentation draws (stream 1 is the epoch permutation).
const AUGMENT_STREAM: u64 = 2;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Print one line per epoch to stderr.
    pub verbose: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            verbose: false,
            eval_batch_size: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub params: ParamStore<f32>,
}

/// Network inputs, reconstruction targets and labels for one batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Standardized crops `B x H x W x C`.
    pub inputs: Tensor<f32>,
    /// The same crops in `[0, 1]`, flattened to `B x (H W C)`.
    pub targets: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Assembles a batch; with an RNG the training augmentation is applied,
/// otherwise the evaluation path (center crop).
pub fn make_batch(data: &Dataset, indices: &[usize], aug: &AugmentConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<Batch> {
    let c = data.dims()[3];
    let pixels = aug.crop * aug.crop * c;
    let mut inputs = Vec::with_capacity(indices.len() * pixels);
    let mut targets = Vec::with_capacity(indices.len() * pixels);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let image = data.image(i);
        let sample = match rng.as_deref_mut() {
            Some(rng) => aug.train_sample(&image, rng)?,
            None => aug.eval_sample(&image)?,
        };
        inputs.extend_from_slice(&sample.input.data);
        targets.extend_from_slice(&sample.target.data);
        labels.push(data.labels()[i]);
    }
    let b = indices.len();
    Ok(Batch {
        inputs: Tensor::new(vec![b, aug.crop, aug.crop, c], inputs)?,
        targets: Tensor::new(vec![b, pixels], targets)?,
        labels,
    })
}

fn check_dataset(config: &ModelConfig, data: &Dataset) -> Result<()> {
    let a = &config.architecture;
    let [_, h, w, c] = data.dims();
    if data.classes != a.classes {
        return Err(Error::Config(format!(
            "model has {} classes but the {} split has {}",
            a.classes,
            data.split.as_str(),
            data.classes
        )));
    }
    if c != a.input[2] || h < a.input[0] || w < a.input[1] || a.input[0] != a.input[1] {
        return Err(Error::Config(format!(
            "{h}x{w}x{c} images do not fit a {:?} network input",
            a.input
        )));
    }
    if data.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", data.split.as_str())));
    }
    Ok(())
}

fn augmentation(config: &ModelConfig) -> AugmentConfig {
    AugmentConfig {
        crop: config.architecture.input[0],
        ..AugmentConfig::for_dataset(config.dataset)
    }
}

/// Top-1 accuracy on center crops.
pub fn evaluate(net: &CapsNet, params: &ParamStore<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    check_dataset(net.config(), data)?;
    let aug = AugmentConfig {
        crop: net.config().architecture.input[0],
        ..AugmentConfig::none(0)
    };
    let order: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        let batch = make_batch(data, chunk, &aug, None)?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false)?;
        let x = g.constant(batch.inputs)?;
        let out = net.forward(&mut g, &p, x, &Mask::None)?;
        correct += out.predictions.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// One optimization step; returns the batch loss and correct predictions.
fn train_step(
    net: &CapsNet,
    params: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    batch: Batch,
    loss_cfg: &LossConfig,
) -> Result<(f64, usize)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, true)?;
    let x = g.constant(batch.inputs)?;
    let target = g.constant(batch.targets)?;
    let out = net.forward(&mut g, &p, x, &Mask::Labels(batch.labels.clone()))?;
    let margin = margin_loss(&mut g, out.activations, &batch.labels, loss_cfg)?;
    let recon = match out.reconstruction {
        Some(r) => Some(reconstruction_loss(&mut g, r, target)?),
        None => None,
    };
    let loss = total_loss(&mut g, margin, recon, loss_cfg)?;
    let value = g.value(loss).item() as f64;
    let mut grads = g.backward(loss)?;
    let grads: Vec<_> = p.vars().iter().map(|&v| grads.take(v)).collect();
    adam.step(params.tensors_mut(), &grads)?;
    let correct = out.predictions.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    Ok((value, correct))
}

/// Trains `config` on `train_set`, evaluating on `test_set` after every
/// epoch. A non-finite value anywhere in a step ends the run with status
/// [`RunStatus::Diverged`] instead of an error.
pub fn train(
    config: &ModelConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let net = CapsNet::new(config.clone())?;
    check_dataset(config, train_set)?;
    check_dataset(config, test_set)?;
    let mut params = ParamStore::<f32>::init(config)?;
    let adam_cfg = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_cfg, params.tensors());
    let loss_cfg = LossConfig {
        recon_weight: config.recon_weight,
        ..LossConfig::default()
    };
    loss_cfg.validate()?;
    let aug = augmentation(config);
    let batch_size = config.effective_batch_size();

    let mut record = RunRecord {
        run_id: run_id(config),
        config: config.clone(),
        status: RunStatus::Completed,
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        epochs: Vec::new(),
        final_test_accuracy: None,
        best_test_accuracy: None,
        best_epoch: None,
        wall_time_secs: 0.0,
        failure: None,
    };
    'epochs: for epoch in 0..config.epochs {
        let mut rng = epoch_rng(config.seed, epoch, AUGMENT_STREAM);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (step, indices) in epoch_batches(train_set.len(), batch_size, config.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let batch = make_batch(train_set, &indices, &aug, Some(&mut rng))?;
            let failure = match train_step(&net, &mut params, &mut adam, batch, &loss_cfg) {
                Ok((loss, _)) if !loss.is_finite() => Some(format!("loss is {loss}")),
                Ok((loss, c)) => {
                    loss_sum += loss * indices.len() as f64;
                    correct += c;
                    None
                }
                Err(Error::Tensor(TensorError::NonFinite { op })) => Some(format!("non-finite value in {op}")),
                Err(e) => return Err(e),
            };
            if let Some(reason) = failure {
                if opts.verbose {
                    eprintln!("{}: diverged at epoch {}, step {step}: {reason}", record.run_id, epoch + 1);
                }
                record.status = RunStatus::Diverged;
                record.failure = Some(format!("epoch {}, step {step}: {reason}", epoch + 1));
                break 'epochs;
            }
        }
        let test_accuracy = evaluate(&net, &params, test_set, opts.eval_batch_size)?;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy,
        };
        if opts.verbose {
            eprintln!(
                "{}: epoch {}/{} loss {:.5} train acc {:.4} test acc {:.4} ({:.0}s)",
                record.run_id,
                metrics.epoch,
                config.epochs,
                metrics.train_loss,
                metrics.train_accuracy,
                metrics.test_accuracy,
                started.elapsed().as_secs_f64()
            );
        }
        on_epoch(&metrics);
        if record.best_test_accuracy.map_or(true, |b| test_accuracy > b) {
            record.best_test_accuracy = Some(test_accuracy);
            record.best_epoch = Some(metrics.epoch);
        }
        record.final_test_accuracy = Some(test_accuracy);
        record.epochs.push(metrics);
    }
    record.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { record, params })
}
