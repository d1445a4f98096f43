//! Training, evaluation, Monte-Carlo prediction and the angular-resolution sweep.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::{simulate_snapshots, CoprimeGeometry, SourceScenario};
use crate::coarray::{AngleGrid, FeatureExtractor};
use crate::datagen::Record;
use crate::error::{Error, Result};
use crate::nn::{bernoulli_nll, Mode, Model, RmsProp, Tensor};
use crate::rng::{mix_seed, rng_from_seed};

/// Default number of Monte-Carlo weight draws for prediction.
pub const DEFAULT_MC_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub val_split: f64,
    pub shuffle_each_epoch: bool,
    pub seed: u64,
    /// Weight of the KL term; `None` means `1 / N_s` (training-set size).
    pub kl_weight: Option<f64>,
    /// Weight draws per record when scoring the validation split of a
    /// variational model.
    pub val_mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            decay: RmsProp::DEFAULT_DECAY,
            epsilon: RmsProp::DEFAULT_EPSILON,
            val_split: 0.10,
            shuffle_each_epoch: true,
            seed: 0,
            kl_weight: None,
            val_mc_samples: 10,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return bad(format!("val_split must be in (0, 1), got {}", self.val_split));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.val_mc_samples == 0 {
            return bad("val_mc_samples must be at least 1".into());
        }
        if let Some(w) = self.kl_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("kl_weight must be >= 0, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_rmse: f64,
    pub val_loss: f64,
    pub val_rmse: f64,
}

/// Loss terms of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub batch: usize,
    pub nll: f64,
    pub kl: f64,
    pub kl_weight: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepLog>,
}

impl TrainingCurves {
    /// Writes `epoch,train_loss,train_rmse,val_loss,val_rmse` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,train_rmse,val_loss,val_rmse")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_rmse, e.val_loss, e.val_rmse
            )?;
        }
        Ok(())
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub curves: TrainingCurves,
    pub kl_weight: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn check_widths(model: &Model, records: &[Record]) -> Result<()> {
    let out = model.output_shape().size();
    for (i, r) in records.iter().enumerate() {
        if r.features.len() != model.input_len() {
            return Err(Error::SchemaViolation {
                index: i,
                message: format!(
                    "feature width {} does not match model input {}",
                    r.features.len(),
                    model.input_len()
                ),
            });
        }
        if r.label.len() != out {
            return Err(Error::SchemaViolation {
                index: i,
                message: format!("label width {} does not match model output {out}", r.label.len()),
            });
        }
    }
    Ok(())
}

fn batch_tensors(records: &[Record], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let feats: Vec<&[f64]> = idx.iter().map(|&i| records[i].features.as_slice()).collect();
    let labels: Vec<Vec<f64>> = idx.iter().map(|&i| records[i].label_f64()).collect();
    let label_refs: Vec<&[f64]> = labels.iter().map(Vec::as_slice).collect();
    Ok((Tensor::batch_of_sequences(&feats)?, Tensor::batch_of_rows(&label_refs)?))
}

/// Trains a copy of `model` with minibatch RMSProp on the ELBO (plain
/// Bernoulli NLL for deterministic models).
///
/// The records are shuffled once with `config.seed`; the last `val_split`
/// fraction of that order is held out for validation.
pub fn train(model: &Model, records: &[Record], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_widths(model, records)?;
    let n = records.len();
    let n_val = ((n as f64 * config.val_split).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} records are too few for a {} validation split",
            config.val_split
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(config.seed));
    let val_indices = order.split_off(n - n_val);
    let mut train_indices = order;
    let kl_weight = config.kl_weight.unwrap_or(1.0 / train_indices.len() as f64);

    let mut model = model.clone();
    let mut optimizer = RmsProp::new(config.learning_rate, config.decay, config.epsilon)?;
    let mut curves = TrainingCurves::default();
    let val_records: Vec<Record> = val_indices.iter().map(|&i| records[i].clone()).collect();

    for epoch in 1..=config.epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        if config.shuffle_each_epoch {
            train_indices.shuffle(&mut rng_from_seed(epoch_seed));
        }
        let mut loss_sum = 0.0;
        let mut sq_err = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in train_indices.chunks(config.batch_size).enumerate() {
            let (x, y) = batch_tensors(records, chunk)?;
            let pass = model.forward(&x, Mode::Train, mix_seed(epoch_seed, b as u64 + 1))?;
            let loss = model.loss(&pass, &y, kl_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::DivergedLoss { epoch, batch: b });
            }
            let grads = model.backward(&pass, &y, kl_weight)?;
            loss_sum += loss.total * chunk.len() as f64;
            sq_err += pass
                .output()
                .data()
                .iter()
                .zip(y.data())
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>();
            seen += chunk.len();
            curves.steps.push(StepLog {
                epoch,
                batch: b,
                nll: loss.nll,
                kl: loss.kl,
                kl_weight,
                loss: loss.total,
            });
            model.update_running_stats(&pass);
            optimizer.step(&mut model, &grads)?;
        }
        let width = model.output_shape().size() as f64;
        let val = evaluate(&model, &val_records, config.val_mc_samples, mix_seed(epoch_seed, 0))?;
        let kl_term = if model.is_variational() {
            kl_weight * model.kl()?
        } else {
            0.0
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_rmse: (sq_err / (seen as f64 * width)).sqrt(),
            val_loss: val.nll + kl_term,
            val_rmse: val.rmse,
        };
        if !(metrics.val_loss.is_finite() && metrics.train_loss.is_finite()) {
            return Err(Error::DivergedLoss {
                epoch,
                batch: train_indices.len().div_ceil(config.batch_size),
            });
        }
        curves.epochs.push(metrics);
    }
    Ok(TrainOutcome {
        model,
        curves,
        kl_weight,
        train_indices,
        val_indices,
    })
}

/// Predictive mean and spread over Monte-Carlo weight draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPrediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population standard deviation of `s` stochastic forward
/// passes. Models without variational layers are evaluated once with zero
/// spread.
pub fn predict_mc(model: &Model, features: &[f64], s: usize, seed: u64) -> Result<McPrediction> {
    if s == 0 {
        return Err(Error::InvalidArgument("mc sample count must be at least 1".into()));
    }
    let x = Tensor::batch_of_sequences(&[features])?;
    if !model.is_variational() || s == 1 {
        let mode = if model.is_variational() {
            Mode::Sample
        } else {
            Mode::Infer
        };
        let pass = model.forward(&x, mode, mix_seed(seed, 0))?;
        let mean = pass.output().row(0).to_vec();
        let std = vec![0.0; mean.len()];
        return Ok(McPrediction { mean, std });
    }
    let w = model.output_shape().size();
    let mut draws = Vec::with_capacity(s);
    for i in 0..s {
        let pass = model.forward(&x, Mode::Sample, mix_seed(seed, i as u64))?;
        draws.push(pass.output().row(0).to_vec());
    }
    let mut mean = vec![0.0; w];
    for d in &draws {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= s as f64);
    let mut std = vec![0.0; w];
    for d in &draws {
        for ((sd, v), m) in std.iter_mut().zip(d).zip(&mean) {
            *sd += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|sd| *sd = (*sd / s as f64).sqrt());
    Ok(McPrediction { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub index: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Per-record NLL (summed over bins), averaged over records.
    pub nll: f64,
    /// Root mean squared probability error over all records and bins.
    pub rmse: f64,
    /// Sorted by record index.
    pub predictions: Vec<RecordPrediction>,
}

/// Scores `records`; the per-record seed is keyed by `Record::index`, and
/// aggregation runs in index order, so the result does not depend on the
/// order of `records`.
pub fn evaluate(model: &Model, records: &[Record], mc_samples: usize, seed: u64) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_widths(model, records)?;
    let mut sorted: Vec<&Record> = records.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let predictions: Vec<RecordPrediction> = sorted
        .par_iter()
        .map(|r| {
            predict_mc(model, &r.features, mc_samples, mix_seed(seed, r.index as u64)).map(|p| RecordPrediction {
                index: r.index,
                mean: p.mean,
                std: p.std,
            })
        })
        .collect::<Result<_>>()?;
    let mut nll = 0.0;
    let mut sq = 0.0;
    let mut bins = 0usize;
    for (r, p) in sorted.iter().zip(&predictions) {
        let label = r.label_f64();
        nll += bernoulli_nll(&p.mean, &label)?;
        sq += p.mean.iter().zip(&label).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        bins += label.len();
    }
    Ok(Evaluation {
        nll: nll / records.len() as f64,
        rmse: (sq / bins as f64).sqrt(),
        predictions,
    })
}

/// Root mean squared error between probability rows and labels.
pub fn rmse(probs: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: probs.len(),
        });
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for (p, l) in probs.iter().zip(labels) {
        if p.len() != l.len() {
            return Err(Error::LengthMismatch {
                expected: l.len(),
                actual: p.len(),
            });
        }
        sq += p.iter().zip(l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((sq / count as f64).sqrt())
}

/// Indices of local maxima; a plateau counts once, at its first index.
fn local_maxima(probs: &[f64]) -> Vec<usize> {
    let w = probs.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < w {
        let mut j = i;
        while j + 1 < w && probs[j + 1] == probs[i] {
            j += 1;
        }
        let left_ok = i == 0 || probs[i - 1] < probs[i];
        let right_ok = j == w - 1 || probs[j + 1] < probs[i];
        if left_ok && right_ok {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Grid angles of the `k` highest local maxima, ascending. Falls back to
/// the `k` highest values when there are fewer than `k` local maxima.
pub fn pick_doas(probs: &[f64], k: usize, grid: &AngleGrid) -> Result<Vec<f64>> {
    if probs.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            actual: probs.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > probs.len() {
        return Err(Error::KTooLarge { k, size: probs.len() });
    }
    let by_value = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    let mut candidates = local_maxima(probs);
    if candidates.len() < k {
        candidates = (0..probs.len()).collect();
    }
    candidates.sort_by(by_value);
    let mut angles: Vec<f64> = candidates[..k].iter().map(|&i| grid.angles()[i]).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// What turns a pseudo-spectrum into DOA probabilities in the sweep.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    /// Peak-pick the normalized pseudo-spectrum directly.
    Oracle,
    Model {
        model: &'a Model,
        mc_samples: usize,
    },
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub separations_deg: Vec<f64>,
    pub trials: usize,
    pub snr_db: f64,
    pub snapshots: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub separation_deg: f64,
    pub success_rate: f64,
    pub mean_abs_error_deg: f64,
}

/// Two equal-power sources `s` apart, the first drawn uniformly among the
/// grid bins that keep both on the grid. A trial succeeds when both picked
/// DOAs are within one grid step of the truth.
pub fn resolution_sweep(
    predictor: Predictor<'_>,
    geometry: &CoprimeGeometry,
    grid: &AngleGrid,
    config: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if config.trials == 0 || config.snapshots == 0 {
        return Err(Error::InvalidArgument("trials and snapshots must be at least 1".into()));
    }
    if let Predictor::Model { model, mc_samples } = predictor {
        if model.input_len() != grid.len() || model.output_shape().size() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "model maps {} -> {} bins, grid has {}",
                model.input_len(),
                model.output_shape().size(),
                grid.len()
            )));
        }
        if mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
        }
    }
    let span = grid.angles()[grid.len() - 1] - grid.min_deg();
    let extractor = FeatureExtractor::new(geometry.clone(), grid.clone());
    let tol = grid.step_deg() + 1e-9;
    let mut rows = Vec::with_capacity(config.separations_deg.len());
    for (si, &sep) in config.separations_deg.iter().enumerate() {
        if !(sep > 0.0) || !grid.is_multiple_of_step(sep) || sep > span + 1e-9 {
            return Err(Error::SeparationOffGrid(sep));
        }
        let steps = (sep / grid.step_deg()).round() as usize;
        let sep_seed = mix_seed(config.seed, si as u64);
        let outcomes: Vec<(bool, f64)> = (0..config.trials)
            .into_par_iter()
            .map(|t| -> Result<(bool, f64)> {
                let trial_seed = mix_seed(sep_seed, t as u64);
                let mut rng = rng_from_seed(trial_seed);
                let first = rng.random_range(0..grid.len() - steps);
                let truth = [grid.angles()[first], grid.angles()[first + steps]];
                let scenario = SourceScenario::from_snr_db(truth.to_vec(), config.snr_db)?;
                let x = simulate_snapshots(geometry, &scenario, config.snapshots, mix_seed(trial_seed, 1))?;
                let features = extractor.features(&x)?.into_values();
                let probs = match predictor {
                    Predictor::Oracle => features,
                    Predictor::Model { model, mc_samples } => {
                        predict_mc(model, &features, mc_samples, mix_seed(trial_seed, 2))?.mean
                    }
                };
                let picked = pick_doas(&probs, 2, grid)?;
                let errs = [(picked[0] - truth[0]).abs(), (picked[1] - truth[1]).abs()];
                Ok((errs.iter().all(|&e| e <= tol), errs[0] + errs[1]))
            })
            .collect::<Result<_>>()?;
        let successes = outcomes.iter().filter(|(ok, _)| *ok).count();
        let err_sum: f64 = outcomes.iter().map(|(_, e)| e).sum();
        rows.push(SweepRow {
            separation_deg: sep,
            success_rate: successes as f64 / config.trials as f64,
            mean_abs_error_deg: err_sum / (2 * config.trials) as f64,
        });
    }
    Ok(rows)
}

/// Writes `separation_deg,success_rate,mean_abs_error_deg` rows.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "separation_deg,success_rate,mean_abs_error_deg")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.separation_deg, r.success_rate, r.mean_abs_error_deg)?;
    }
    Ok(())
}
