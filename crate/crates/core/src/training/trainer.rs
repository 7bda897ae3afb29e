use std::fmt;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainRecipe;
use super::data::{Dataset, SampleBatch};
use super::loss::loss_bce_dice;
use super::metrics::per_image;
use super::optim::{cosine_lr, Adam};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Element;

pub const METRICS_HEADER: &str = "epoch,split,loss,iou,f1,lr,saved_bytes,step_time_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// One metrics-log row. `saved_bytes` is the largest per-step tape size and
/// `step_time_ms` the mean wall time per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub iou: f64,
    pub f1: f64,
    pub lr: f64,
    pub saved_bytes: usize,
    pub step_time_ms: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.6e},{},{:.3}",
            self.epoch,
            self.split,
            self.loss,
            self.iou,
            self.f1,
            self.lr,
            self.saved_bytes,
            self.step_time_ms
        )
    }

    /// Equality on every column except wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        EpochMetrics {
            step_time_ms: 0.0,
            ..self.clone()
        } == EpochMetrics {
            step_time_ms: 0.0,
            ..other.clone()
        }
    }
}

/// Loss and mean per-image IoU/F1 over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub iou: f64,
    pub f1: f64,
    pub step_time_ms: f64,
}

#[derive(Default)]
struct Tally {
    loss: f64,
    iou: f64,
    f1: f64,
    samples: usize,
    seconds: f64,
    steps: usize,
    saved: usize,
}

impl Tally {
    fn add_batch(&mut self, loss: f64, scores: &[(f64, f64)], seconds: f64) {
        self.loss += loss * scores.len() as f64;
        for &(i, f) in scores {
            self.iou += i;
            self.f1 += f;
        }
        self.samples += scores.len();
        self.seconds += seconds;
        self.steps += 1;
    }

    fn finish(&self) -> Evaluation {
        let n = self.samples.max(1) as f64;
        Evaluation {
            loss: self.loss / n,
            iou: self.iou / n,
            f1: self.f1 / n,
            step_time_ms: 1e3 * self.seconds / self.steps.max(1) as f64,
        }
    }
}

fn batch_indices(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Assembles the batches either inline or on `threads - 1` worker threads
/// feeding a bounded queue, always delivering them in order.
fn for_each_batch<T: Element>(
    data: &Dataset<T>,
    batches: &[Vec<usize>],
    threads: usize,
    mut f: impl FnMut(SampleBatch<T>) -> Result<()>,
) -> Result<()> {
    if threads <= 1 {
        for idx in batches {
            f(data.batch(idx)?)?;
        }
        return Ok(());
    }
    std::thread::scope(|s| {
        let (tx, rx) = sync_channel(threads);
        s.spawn(move || {
            for idx in batches {
                if tx.send(data.batch(idx)).is_err() {
                    break;
                }
            }
        });
        for batch in rx {
            f(batch?)?;
        }
        Ok(())
    })
}

/// Loss and per-image metrics without taping.
pub fn evaluate<T: Element>(
    net: &Network<T>,
    data: &Dataset<T>,
    recipe: &TrainRecipe,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut tally = Tally::default();
    for_each_batch(
        data,
        &batch_indices(&order, recipe.batch_size),
        recipe.loader_threads,
        |b| {
            let start = Instant::now();
            let g = Graph::inference();
            let logits = net.forward(g.constant(b.images))?;
            let masks = g.constant(b.masks);
            let loss = loss_bce_dice(logits, masks, recipe.w_bce, recipe.w_dice)?;
            let scores = per_image(&logits.sigmoid().value(), &masks.value())?;
            let loss = loss.value().item()?.to_f64().unwrap_or(f64::NAN);
            tally.add_batch(loss, &scores, start.elapsed().as_secs_f64());
            Ok(())
        },
    )?;
    Ok(tally.finish())
}

/// Trains with Adam under a per-epoch cosine schedule, reporting a train
/// and a validation row per epoch to `on_epoch` as soon as they exist.
pub fn train<T: Element>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    recipe: &TrainRecipe,
    mut on_epoch: impl FnMut(&[EpochMetrics]) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    recipe.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Contract(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..recipe.epochs {
        let lr = cosine_lr(epoch, recipe.epochs, recipe.lr_init, recipe.lr_min)?;
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for_each_batch(
            train_set,
            &batch_indices(&order, recipe.batch_size),
            recipe.loader_threads,
            |b| {
                let start = Instant::now();
                let (loss, scores, saved) = {
                    let g = Graph::new();
                    let logits = net.forward(g.constant(b.images))?;
                    let masks = g.constant(b.masks);
                    let loss = loss_bce_dice(logits, masks, recipe.w_bce, recipe.w_dice)?;
                    let scores = per_image(&logits.sigmoid().value(), &masks.value())?;
                    let saved = g.saved_activation_bytes();
                    g.backward(loss)?;
                    for (_, p) in net.named_params_mut() {
                        g.accumulate_into(p)?;
                    }
                    (
                        loss.value().item()?.to_f64().unwrap_or(f64::NAN),
                        scores,
                        saved,
                    )
                };
                if !loss.is_finite() {
                    return Err(Error::Contract(format!(
                        "loss became {loss} in epoch {}",
                        epoch + 1
                    )));
                }
                adam.step(net.named_params_mut().into_iter().map(|(_, p)| p), lr)?;
                tally.add_batch(loss, &scores, start.elapsed().as_secs_f64());
                tally.saved = tally.saved.max(saved);
                Ok(())
            },
        )?;
        let t = tally.finish();
        let v = evaluate(net, val_set, recipe)?;
        let rows = [
            EpochMetrics {
                epoch: epoch + 1,
                split: Split::Train,
                loss: t.loss,
                iou: t.iou,
                f1: t.f1,
                lr,
                saved_bytes: tally.saved,
                step_time_ms: t.step_time_ms,
            },
            EpochMetrics {
                epoch: epoch + 1,
                split: Split::Val,
                loss: v.loss,
                iou: v.iou,
                f1: v.f1,
                lr,
                saved_bytes: 0,
                step_time_ms: v.step_time_ms,
            },
        ];
        on_epoch(&rows)?;
        log.extend(rows);
    }
    Ok(log)
}
