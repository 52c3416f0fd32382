use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::augment::{augment, AugmentationConfig};
use super::loss::{composite_loss, LossBreakdown};
use crate::data::{check_labels, stack, LabeledImage};
use crate::error::{Error, Result};
use crate::graph::StreamGraph;
use crate::tensor::{Tape, Tensor};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_LAMBDA: f64 = 0.1;
const EVAL_BATCH: usize = 64;

/// Means over one pass of the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// Sample-weighted means of the per-batch losses.
    pub loss: LossBreakdown,
    /// Accuracy on the augmented training batches.
    pub accuracy: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_cross_entropy: f64,
}

/// Number of rows whose argmax equals the label; ties go to the lower index.
pub fn correct_predictions(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct BatchResult {
    grads: Vec<Tensor>,
    loss: LossBreakdown,
    correct: usize,
}

fn run_batch(graph: &StreamGraph, batch: &Tensor, labels: &[usize], lambda: f64) -> Result<BatchResult> {
    let mut tape = Tape::new();
    let p = graph.bind(&mut tape);
    let x = tape.constant(batch.clone());
    let out = graph.forward(&mut tape, &p, x)?;
    let loss = composite_loss(&mut tape, &out, labels, lambda)?;
    tape.backward(loss.total)?;
    Ok(BatchResult {
        grads: p.grads(&tape),
        loss: loss.breakdown(&tape),
        correct: correct_predictions(tape.value(out.logits), labels),
    })
}

/// Splits the batch into `workers` contiguous chunks, runs each on its own
/// tape, and combines the results in chunk order with weights `n_i / N`.
fn parallel_batch(
    graph: &StreamGraph,
    samples: &[Tensor],
    labels: &[usize],
    lambda: f64,
    workers: usize,
) -> Result<BatchResult> {
    let n = samples.len();
    let chunk = n.div_ceil(workers.clamp(1, n));
    if chunk == n {
        let refs: Vec<&Tensor> = samples.iter().collect();
        return run_batch(graph, &stack(&refs)?, labels, lambda);
    }
    let parts: Vec<Result<BatchResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .zip(labels.chunks(chunk))
            .map(|(xs, ys)| {
                s.spawn(move || {
                    let refs: Vec<&Tensor> = xs.iter().collect();
                    run_batch(graph, &stack(&refs)?, ys, lambda)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    let mut combined: Option<BatchResult> = None;
    let (mut ce, mut pen) = (0.0, 0.0);
    for (part, ys) in parts.into_iter().zip(labels.chunks(chunk)) {
        let mut part = part?;
        let w = ys.len() as f64 / n as f64;
        ce += w * part.loss.cross_entropy;
        pen += w * part.loss.prediction_penalty;
        for g in &mut part.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= w);
        }
        match &mut combined {
            None => combined = Some(part),
            Some(acc) => {
                for (a, g) in acc.grads.iter_mut().zip(&part.grads) {
                    a.add_assign(g)?;
                }
                acc.correct += part.correct;
            }
        }
    }
    let mut out = combined.expect("at least one chunk");
    out.loss = LossBreakdown::new(ce, pen, lambda);
    Ok(out)
}

/// Options for [`train_epoch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOptions {
    pub batch_size: usize,
    pub lambda: f64,
    pub augmentation: AugmentationConfig,
    pub workers: usize,
}

impl Default for EpochOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            lambda: DEFAULT_LAMBDA,
            augmentation: AugmentationConfig::default(),
            workers: 1,
        }
    }
}

/// One shuffled pass over `data`; the final partial batch is trained.
///
/// All randomness (order and augmentation) is drawn from `rng` on the
/// calling thread before any worker starts.
pub fn train_epoch<R: Rng + ?Sized>(
    graph: &mut StreamGraph,
    data: &[LabeledImage],
    adam: &mut AdamState,
    options: &EpochOptions,
    rng: &mut R,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if options.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    options.augmentation.validate_for(data[0].pixels.shape()[0])?;
    check_labels(data, graph.config().classes)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let (mut ce, mut pen, mut correct, mut steps) = (0.0, 0.0, 0usize, 0usize);
    for idx in order.chunks(options.batch_size) {
        let samples: Vec<Tensor> = idx
            .iter()
            .map(|&i| augment(&data[i].pixels, &options.augmentation, rng))
            .collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data[i].label).collect();
        let result = parallel_batch(graph, &samples, &labels, options.lambda, options.workers)?;
        adam.step(graph.params_mut().tensors_mut(), &result.grads)?;
        let w = idx.len() as f64;
        ce += w * result.loss.cross_entropy;
        pen += w * result.loss.prediction_penalty;
        correct += result.correct;
        steps += 1;
    }
    let n = data.len() as f64;
    Ok(EpochMetrics {
        loss: LossBreakdown::new(ce / n, pen / n, options.lambda),
        accuracy: correct as f64 / n,
        steps,
    })
}

/// Accuracy and mean cross-entropy without augmentation or updates.
pub fn evaluate(graph: &StreamGraph, data: &[LabeledImage]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_labels(data, graph.config().classes)?;
    let (mut correct, mut ce) = (0usize, 0.0);
    for chunk in data.chunks(EVAL_BATCH) {
        let refs: Vec<&Tensor> = chunk.iter().map(|s| &s.pixels).collect();
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let mut tape = Tape::new();
        let p = graph.bind(&mut tape);
        let x = tape.constant(stack(&refs)?);
        let out = graph.forward(&mut tape, &p, x)?;
        let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
        ce += tape.value(loss).data()[0] * chunk.len() as f64;
        correct += correct_predictions(tape.value(out.logits), &labels);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_cross_entropy: ce / data.len() as f64,
    })
}

/// One row of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
    pub train_pred_penalty: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_ce,train_pred_penalty,train_acc,val_acc,wall_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_ce,
            self.train_pred_penalty,
            self.train_acc,
            self.val_acc,
            self.wall_seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub epoch: EpochOptions,
    pub adam: AdamConfig,
    /// Seeds shuffling and augmentation.
    pub seed: u64,
    /// Record `wall_seconds` as 0 so the metrics stream is reproducible
    /// byte for byte.
    pub deterministic: bool,
    /// Run [`calibrate`] on the training set before the first epoch.
    pub calibrate: bool,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            epoch: EpochOptions::default(),
            adam: AdamConfig::default(),
            seed,
            deterministic: false,
            calibrate: true,
        }
    }
}

/// Stream offset separating the training RNG from parameter initialisation.
const TRAIN_STREAM: u64 = 1;
const CALIBRATION_STREAM: u64 = 2;

/// Unit-RMS calibration of a fresh model (see [`StreamGraph::calibrate`])
/// on up to `count` samples drawn from `data` by `seed`, on a stream of
/// its own so the training sequence is unaffected.
pub fn calibrate(graph: &mut StreamGraph, data: &[LabeledImage], count: usize, seed: u64) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CALIBRATION_STREAM);
    let mut picked = rand::seq::index::sample(&mut rng, data.len(), count.clamp(1, data.len())).into_vec();
    picked.sort_unstable();
    let batch: Vec<&Tensor> = picked.iter().map(|&i| &data[i].pixels).collect();
    graph.calibrate(&stack(&batch)?)
}

/// The generator [`fit`] draws shuffles and augmentations from, for callers
/// that drive [`train_epoch`] themselves.
pub fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAIN_STREAM);
    rng
}

/// Trains for `config.epochs`, evaluating on `val` after each epoch and
/// handing every record to `on_epoch` as it is produced.
pub fn fit(
    graph: &mut StreamGraph,
    train: &[LabeledImage],
    val: &[LabeledImage],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.calibrate {
        calibrate(graph, train, config.epoch.batch_size, config.seed)?;
    }
    let mut rng = training_rng(config.seed);
    let mut adam = AdamState::new(graph.params().tensors(), config.adam);
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let m = train_epoch(graph, train, &mut adam, &config.epoch, &mut rng)?;
        let v = evaluate(graph, val)?;
        let record = EpochRecord {
            epoch,
            train_loss: m.loss.total,
            train_ce: m.loss.cross_entropy,
            train_pred_penalty: m.loss.prediction_penalty,
            train_acc: m.accuracy,
            val_acc: v.accuracy,
            wall_seconds: if config.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        };
        on_epoch(&record)?;
        records.push(record);
    }
    Ok(records)
}
