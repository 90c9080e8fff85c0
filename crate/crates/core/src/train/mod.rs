//! Loss, optimizer, epoch loop, evaluation schemes and early stopping.

mod adam;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::MelFrontend;
use crate::dataset::{assemble_batch, load_clip, Batch, ClipSource, SampleClip, Scheme};
use crate::error::{Error, Result};
use crate::model::{is_fake, probability, FtfdModel, ParamStore};
use crate::tensor::{Mode, Tape};

pub use adam::{adam_step, AdamState};

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Training batches whose averaged statistics replace the batch-norm
    /// running estimates after each epoch; 0 keeps the momentum estimates.
    pub bn_recalibration_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            bn_recalibration_batches: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0;
        if !ok {
            return Err(Error::invalid(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy of raw logits against 0/1 targets, computed as
/// `softplus(ŷ) − y·ŷ` so it never takes the log of a saturated sigmoid.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let n = logits.len();
    let x = tape.constant(crate::tensor::Tensor::new(vec![n, 1], logits.to_vec())?);
    let loss = tape.bce_with_logits(x, labels)?;
    tape.value(loss).item()
}

/// Running means over one pass of the training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

/// A video that could not be evaluated under the requested scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub video_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub start_frame: usize,
    pub label: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub accuracy: f64,
    pub loss: f64,
    pub evaluated: usize,
    pub skipped: Vec<Skip>,
    pub predictions: Vec<Prediction>,
}

const EVAL_BATCH: usize = 32;

// Distinct random streams derived from the training seed.
const STREAM_ORDER: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    rng.set_stream(stream);
    rng
}

/// Clip sampling scheme used for training epoch `epoch`.
pub fn train_scheme(seed: u64, epoch: usize) -> Scheme {
    Scheme::Random {
        seed: seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(epoch as u64),
    }
}

/// Validation clips are drawn once per seed so epochs compare like for like.
pub fn validation_scheme(seed: u64) -> Scheme {
    Scheme::Random {
        seed: seed ^ 0x005e_ed0f_0a11,
    }
}

fn load_clips<S: ClipSource + ?Sized>(
    source: &S,
    indices: &[usize],
    scheme: Scheme,
    frames: usize,
    frontend: &MelFrontend,
) -> Result<Vec<SampleClip>> {
    indices
        .par_iter()
        .map(|&i| load_clip(source, i, scheme, frames, frontend))
        .collect()
}

/// One pass over `source` in seeded shuffled order with one random clip per
/// video. A trailing batch of a single clip is dropped when the set has more
/// than one video (train-mode batch norm needs two values per channel).
///
/// Afterwards the running batch-norm statistics are re-estimated from the
/// epoch's first `cfg.bn_recalibration_batches` batches under the final
/// weights; momentum estimates lag behind fast weight changes and can make
/// eval-mode outputs diverge from train-mode ones.
pub fn train_epoch<S: ClipSource + ?Sized>(
    model: &mut FtfdModel,
    state: &mut AdamState,
    source: &S,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let frontend = MelFrontend::default();
    let frames = model.config().frames;
    let scheme = train_scheme(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut epoch_rng(cfg.seed, epoch, STREAM_ORDER));
    let mut dropout_rng = epoch_rng(cfg.seed, epoch, STREAM_DROPOUT);

    let batches: Vec<&[usize]> = order
        .chunks(cfg.batch_size)
        .filter(|c| c.len() > 1 || order.len() == 1)
        .collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for (b, &chunk) in batches.iter().enumerate() {
        let clips = load_clips(source, chunk, scheme, frames, &frontend)?;
        let batch = assemble_batch(&clips, model.config())?;

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward(
            &mut tape,
            &bound,
            &batch.input,
            Mode::Train,
            &mut dropout_rng,
        )?;
        let loss = tape.bce_with_logits(out.logits, &batch.labels)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {value} at epoch {epoch}, batch {b} (videos {})",
                batch.video_ids.join(", ")
            )));
        }
        correct += count_correct(tape.value(out.logits).data(), &batch.labels);
        tape.backward(loss)?;
        let grads = bound.grads(&tape);
        if let Some(i) = grads
            .iter()
            .position(|g| g.as_ref().is_some_and(|g| !g.all_finite()))
        {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {} at epoch {epoch}, batch {b}",
                model.params().entries()[i].name
            )));
        }
        adam_step(model.params_mut(), &grads, state, cfg)?;
        model.apply_bn_updates(&out.bn_updates);
        loss_sum += value * batch.len() as f64;
        seen += batch.len();
    }
    let recal: Vec<_> = batches
        .iter()
        .take(cfg.bn_recalibration_batches)
        .map(|chunk| {
            let clips = load_clips(source, chunk, scheme, frames, &frontend)?;
            Ok(assemble_batch(&clips, model.config())?.input)
        })
        .collect::<Result<_>>()?;
    if !recal.is_empty() {
        model.recalibrate_batch_norm(&recal)?;
    }
    Ok(EpochMetrics {
        loss: loss_sum / seen as f64,
        accuracy: correct as f64 / seen as f64,
        samples: seen,
    })
}

fn count_correct(logits: &[f64], labels: &[f64]) -> usize {
    logits
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| is_fake(probability(z)) == (y == 1.0))
        .count()
}

/// Eval-mode logits for a batch.
pub fn batch_logits(model: &FtfdModel, batch: &Batch) -> Result<Vec<f64>> {
    Ok(model.logits(&batch.input)?.into_data())
}

/// One clip per video under `scheme`; videos too short for it are skipped
/// and reported, and do not count towards accuracy or loss.
pub fn evaluate<S: ClipSource + ?Sized>(
    model: &FtfdModel,
    source: &S,
    scheme: Scheme,
) -> Result<EvalReport> {
    let frames = model.config().frames;
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..source.len() {
        match scheme.start_frame(source.video_id(i), source.frame_count(i), frames) {
            Ok(_) => usable.push(i),
            Err(e) => skipped.push(Skip {
                video_id: source.video_id(i).to_string(),
                reason: e.to_string(),
            }),
        }
    }
    if usable.is_empty() {
        return Err(Error::data(format!(
            "no video can be evaluated with {scheme} and T = {frames} ({} skipped)",
            skipped.len()
        )));
    }
    let frontend = MelFrontend::default();
    let mut predictions = Vec::with_capacity(usable.len());
    let mut logits = Vec::with_capacity(usable.len());
    let mut labels = Vec::with_capacity(usable.len());
    for chunk in usable.chunks(EVAL_BATCH) {
        let clips = load_clips(source, chunk, scheme, frames, &frontend)?;
        let batch = assemble_batch(&clips, model.config())?;
        let z = batch_logits(model, &batch)?;
        for ((clip, &zi), &y) in clips.iter().zip(&z).zip(&batch.labels) {
            predictions.push(Prediction {
                video_id: clip.video_id.clone(),
                start_frame: clip.start_frame,
                label: y,
                probability: probability(zi),
            });
        }
        logits.extend(z);
        labels.extend(batch.labels);
    }
    let loss = bce_with_logits(&logits, &labels)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("evaluation loss is {loss}")));
    }
    Ok(EvalReport {
        scheme,
        accuracy: count_correct(&logits, &labels) as f64 / labels.len() as f64,
        loss,
        evaluated: labels.len(),
        skipped,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: EpochMetrics,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

pub const METRICS_HEADER: &str = "epoch\tsplit\tloss\taccuracy";

pub fn metrics_line(epoch: usize, split: &str, loss: f64, accuracy: f64) -> String {
    format!("{epoch}\t{split}\t{loss}\t{accuracy}")
}

/// Trains until `cfg.max_epochs` or until validation loss has not improved
/// for `cfg.patience` epochs, then restores the best-validation weights.
///
/// `log` receives the tab-separated metrics lines; `on_epoch` is called
/// after every epoch with the current model (e.g. to write checkpoints).
pub fn fit<S, V>(
    model: &mut FtfdModel,
    train: &S,
    val: &V,
    cfg: &TrainConfig,
    log: &mut dyn Write,
    on_epoch: &mut dyn FnMut(&EpochRecord, &FtfdModel) -> Result<()>,
) -> Result<FitReport>
where
    S: ClipSource + ?Sized,
    V: ClipSource + ?Sized,
{
    cfg.validate()?;
    let log_err = |e| Error::io("metrics log", e);
    writeln!(log, "{METRICS_HEADER}").map_err(log_err)?;
    let mut state = AdamState::new(model.params());
    let val_scheme = validation_scheme(cfg.seed);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let metrics = train_epoch(model, &mut state, train, cfg, epoch)?;
        let report = evaluate(model, val, val_scheme)?;
        let improved = best.as_ref().is_none_or(|(_, l, _)| report.loss < *l);
        if improved {
            best = Some((epoch, report.loss, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        writeln!(
            log,
            "{}",
            metrics_line(epoch, "train", metrics.loss, metrics.accuracy)
        )
        .map_err(log_err)?;
        writeln!(
            log,
            "{}",
            metrics_line(epoch, "val", report.loss, report.accuracy)
        )
        .map_err(log_err)?;
        let record = EpochRecord {
            epoch,
            train: metrics,
            val_loss: report.loss,
            val_accuracy: report.accuracy,
            improved,
        };
        on_epoch(&record, model)?;
        history.push(record);
        if stale >= cfg.patience.max(1) && epoch < cfg.max_epochs {
            break;
        }
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    Ok(FitReport {
        stopped_early: history.len() < cfg.max_epochs,
        history,
        best_epoch,
        best_val_loss,
    })
}
