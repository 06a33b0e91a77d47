//! Training loops: the head alone on fixed features, and encoder + head
//! end to end.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{argmax, cross_entropy, Mlp, Mode};
use crate::encoder::{Encoder, TokenInput};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{AdamW, AdamWConfig, Grads};
use crate::rng::rng_for;
use crate::split::carve_validation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of each class's training samples held out for model selection.
    pub val_fraction: f64,
    /// Re-estimate batch-norm running statistics over the fit set before
    /// each validation pass instead of relying on the moving average alone.
    #[serde(default = "yes")]
    pub recalibrate_bn: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.00746,
            epochs: 100,
            batch_size: 64,
            val_fraction: 0.15,
            recalibrate_bn: true,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("train.lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!("train.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            out.push("train.epochs must be positive".into());
        }
        if self.batch_size == 0 {
            out.push("train.batch_size must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            out.push(format!("train.val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        out
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainTrace {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_acc));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelRange { label: bad, classes });
    }
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&l| seen[l] = true);
    let distinct = seen.iter().filter(|&&s| s).count();
    if distinct < 2 {
        return Err(Error::SingleClass(distinct));
    }
    Ok(())
}

/// Loss and accuracy of eval-mode predictions.
fn evaluate(logits: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
    let (loss, _) = cross_entropy(logits, labels)?;
    let correct = (0..logits.rows()).filter(|&i| argmax(logits.row(i)) == labels[i]).count();
    Ok((loss, correct as f64 / labels.len().max(1) as f64))
}

fn shuffled(fit: &[usize], seed: u64, label: &str, epoch: usize) -> Vec<usize> {
    let mut order = fit.to_vec();
    order.shuffle(&mut rng_for(seed, label, epoch as u64));
    order
}

/// Holds out the validation share; falls back to selecting on the fit set
/// when every class is too small to spare a sample.
fn fit_val(labels: &[usize], config: &TrainConfig, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let (fit, val) = carve_validation(labels, config.val_fraction, seed);
    if val.is_empty() {
        (fit.clone(), fit)
    } else {
        (fit, val)
    }
}

/// Trains `mlp` on fixed features, keeping the parameters of the epoch
/// with the lowest validation loss.
pub fn train_mlp(
    mut mlp: Mlp,
    features: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> Result<(Mlp, TrainTrace)> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", features.rows(), labels.len())));
    }
    check_labels(labels, mlp.classes)?;
    let (fit, val) = fit_val(labels, config, seed);
    let x_val = features.select_rows(&val);
    let y_val: Vec<usize> = val.iter().map(|&i| labels[i]).collect();

    let mut opt = AdamW::new(&mlp.store, config.optimizer());
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, Mlp)> = None;
    for epoch in 0..config.epochs {
        let order = shuffled(&fit, seed, "mlp-epoch", epoch);
        let mut train_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let x = features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, cache, stats) = mlp.forward_logits(&x, Mode::Train)?;
            let (loss, dlogits) = cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            let mut grads = mlp.store.zero_grads();
            mlp.backward(&cache, &dlogits, &mut grads);
            opt.step(&mut mlp.store, &grads);
            mlp.update_running(&stats);
            train_loss += loss * batch.len() as f64;
        }
        if config.recalibrate_bn {
            mlp.recalibrate(&features.select_rows(&fit))?;
        }
        let (logits, _, _) = mlp.forward_logits(&x_val, Mode::Eval)?;
        let (val_loss, val_acc) = evaluate(&logits, &y_val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: usize::MAX });
        }
        trace.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: train_loss / fit.len() as f64,
            val_loss,
            val_acc,
        });
        if best.as_ref().map_or(true, |(l, _)| val_loss < *l) {
            best = Some((val_loss, mlp.clone()));
            trace.best_epoch = epoch + 1;
        }
    }
    Ok((best.expect("at least one epoch").1, trace))
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub encoder: Encoder,
    pub mlp: Mlp,
    pub trace: TrainTrace,
    /// Norm of the encoder gradient on the very first batch.
    pub first_encoder_grad_norm: f64,
}

/// Deep features of many token sets, computed in parallel.
pub fn embed_inputs(encoder: &Encoder, inputs: &[&[TokenInput]]) -> Result<Matrix> {
    let rows = inputs
        .par_iter()
        .map(|t| encoder.forward(t).map(|(f, _)| f))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, encoder.config.out_dim));
    }
    Matrix::from_rows(&rows)
}

/// Trains encoder and head jointly on labelled token inputs. With
/// `freeze_encoder` only the head moves.
pub fn finetune(
    mut encoder: Encoder,
    mut mlp: Mlp,
    inputs: &[Vec<TokenInput>],
    labels: &[usize],
    config: &TrainConfig,
    freeze_encoder: bool,
    seed: u64,
) -> Result<FinetuneResult> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!("{} samples for {} labels", inputs.len(), labels.len())));
    }
    if mlp.input != encoder.config.out_dim {
        return Err(Error::Shape(format!(
            "encoder emits {} features, head expects {}",
            encoder.config.out_dim, mlp.input
        )));
    }
    check_labels(labels, mlp.classes)?;
    let (fit, val) = fit_val(labels, config, seed);
    let fit_inputs: Vec<&[TokenInput]> = fit.iter().map(|&i| inputs[i].as_slice()).collect();
    let val_inputs: Vec<&[TokenInput]> = val.iter().map(|&i| inputs[i].as_slice()).collect();
    let y_val: Vec<usize> = val.iter().map(|&i| labels[i]).collect();

    encoder.store.set_trainable(!freeze_encoder);
    let mut enc_opt = AdamW::new(&encoder.store, config.optimizer());
    let mut head_opt = AdamW::new(&mlp.store, config.optimizer());
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, Encoder, Mlp)> = None;
    let mut first_norm = None;

    for epoch in 0..config.epochs {
        let order = shuffled(&fit, seed, "finetune-epoch", epoch);
        let mut train_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let forward = batch
                .par_iter()
                .map(|&i| encoder.forward(&inputs[i]))
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<Vec<f64>> = forward.iter().map(|(f, _)| f.clone()).collect();
            let x = Matrix::from_rows(&rows)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, cache, stats) = mlp.forward_logits(&x, Mode::Train)?;
            let (loss, dlogits) = cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            let mut head_grads = mlp.store.zero_grads();
            let dx = mlp.backward(&cache, &dlogits, &mut head_grads);
            if !freeze_encoder || first_norm.is_none() {
                let per_sample = forward
                    .par_iter()
                    .enumerate()
                    .map(|(r, (_, c))| {
                        let mut g = encoder.store.zero_grads();
                        encoder.backward(c, dx.row(r), &mut g).map(|_| g)
                    })
                    .collect::<Result<Vec<Grads>>>()?;
                let mut enc_grads = encoder.store.zero_grads();
                per_sample.iter().for_each(|g| enc_grads.add(g));
                first_norm.get_or_insert(enc_grads.norm());
                if !freeze_encoder {
                    enc_opt.step(&mut encoder.store, &enc_grads);
                }
            }
            head_opt.step(&mut mlp.store, &head_grads);
            mlp.update_running(&stats);
            train_loss += loss * batch.len() as f64;
        }
        if config.recalibrate_bn {
            mlp.recalibrate(&embed_inputs(&encoder, &fit_inputs)?)?;
        }
        let feats = embed_inputs(&encoder, &val_inputs)?;
        let (logits, _, _) = mlp.forward_logits(&feats, Mode::Eval)?;
        let (val_loss, val_acc) = evaluate(&logits, &y_val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: usize::MAX });
        }
        trace.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: train_loss / fit.len() as f64,
            val_loss,
            val_acc,
        });
        if best.as_ref().map_or(true, |(l, _, _)| val_loss < *l) {
            best = Some((val_loss, encoder.clone(), mlp.clone()));
            trace.best_epoch = epoch + 1;
        }
    }
    let (_, mut encoder, mlp) = best.expect("at least one epoch");
    encoder.store.set_trainable(true);
    Ok(FinetuneResult {
        encoder,
        mlp,
        trace,
        first_encoder_grad_norm: first_norm.unwrap_or(0.0),
    })
}
