use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_labels, Model};
use crate::data::{DataConfig, Document, Segment};
use crate::decode::{micro_prf, DecodeConfig, SpanPrediction};
use crate::encoder::{apply_wwm, word_spans};
use crate::error::{Error, Result};
use crate::numerics::{adamw_step, AdamW, Graph, OptimizerState, ParamId, ParamStore, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub lr: Scalar,
    pub weight_decay: Scalar,
    pub seed: u64,
    /// Dev evaluation every this many steps; 0 evaluates at each epoch end.
    pub eval_every: usize,
    /// Directory for the best-dev-F1 checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Line-delimited JSON metrics history.
    pub metrics: Option<PathBuf>,
    /// Freeze every base encoder weight and train LoRA adapters on Q and V.
    pub freeze_base: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Stop once this many seconds of wall time have passed.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            lr: 3e-4,
            weight_decay: 1e-2,
            seed: 42,
            eval_every: 0,
            checkpoint: None,
            metrics: None,
            freeze_base: false,
            max_steps: None,
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("train: lr must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: usize,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<MetricRecord>,
    /// Mean loss per completed (or interrupted) epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub best_f1: f64,
    pub best_step: usize,
    /// Training windows in which some gold entity exceeded the band.
    pub dropped_entities: usize,
}

struct Example {
    segment: Segment,
    labels: super::LabelBand,
}

fn seed_for(seed: u64, step: usize, slot: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (slot as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

fn example_grads(model: &Model, store: &ParamStore, ex: &Example, rng_seed: u64) -> Result<(Scalar, Vec<(ParamId, Vec<Scalar>)>)> {
    let ids = model.vocab.encode_with_cls(&ex.segment.tokens);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (ids, _) = apply_wwm(&ids, &word_spans(ids.len()), model.config.encoder.mask_prob, &mut rng);
    let mut g = Graph::new();
    let y = model.forward_scores(&mut g, store, &ids)?;
    let loss = model.loss(&mut g, y, &ex.labels)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    Ok((value, g.param_grads()))
}

/// Dev-set decode with the current parameters.
pub fn predict_all(
    model: &Model,
    store: &ParamStore,
    docs: &[Document],
    data: &DataConfig,
    decode: &DecodeConfig,
) -> Result<Vec<Vec<SpanPrediction>>> {
    docs.par_iter()
        .map(|d| model.predict_document(store, d, data, decode.threshold))
        .collect()
}

fn evaluate_dev(model: &Model, store: &ParamStore, dev: &[Document], data: &DataConfig, decode: &DecodeConfig) -> Result<(f64, f64, f64)> {
    let preds = predict_all(model, store, dev, data, decode)?;
    let c = micro_prf(preds.iter().map(Vec::as_slice), dev.iter().map(|d| d.entities.as_slice()));
    Ok((c.precision(), c.recall(), c.f1()))
}

/// Trains `model` in place. Windows are processed independently (one graph
/// each, in parallel), gradients are summed in batch order and averaged.
/// The store ends holding the parameters of the best dev evaluation.
pub fn train(
    model: &mut Model,
    store: &mut ParamStore,
    train_docs: &[Document],
    dev_docs: &[Document],
    cfg: &TrainConfig,
    data: &DataConfig,
    decode: &DecodeConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    data.validate()?;
    if train_docs.is_empty() {
        return Err(Error::Config("train: the training set is empty".into()));
    }
    if data.segment_len + 1 > model.config.encoder.max_len {
        return Err(Error::Config(format!(
            "data.segment_len {} plus [CLS] exceeds encoder.max_len {}",
            data.segment_len, model.config.encoder.max_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.freeze_base {
        for id in model.encoder.base_params() {
            store.freeze(id);
        }
        if !model.has_lora() {
            let (r, a) = (model.config.encoder.lora_rank, model.config.encoder.lora_alpha);
            model.encoder.attach_lora_all(store, r, a, &mut rng)?;
        }
    }
    let model: &Model = model;
    let (m, num_types) = (model.m(), model.num_types());
    let examples: Vec<Example> = train_docs
        .iter()
        .flat_map(|d| data.segments(d))
        .map(|segment| Example {
            labels: build_labels(&segment, m, num_types),
            segment,
        })
        .collect();
    let mut report = TrainReport {
        dropped_entities: examples.iter().map(|e| e.labels.dropped_count).sum(),
        best_f1: -1.0,
        ..TrainReport::default()
    };
    if report.dropped_entities > 0 {
        log::warn!(
            "{} gold entities are longer than the band (m + 1 = {}) and cannot be learned",
            report.dropped_entities,
            m + 1
        );
    }

    let opt = AdamW {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let mut state = OptimizerState::new(store);
    let mut metrics_file = cfg.metrics.as_ref().map(fs::File::create).transpose()?;
    let mut best_store: Option<ParamStore> = None;
    let started = Instant::now();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let (mut since_sum, mut since_n) = (0.0f64, 0usize);
    let mut step = 0usize;

    let mut record =
        |epoch: usize, step: usize, since_sum: &mut f64, since_n: &mut usize, store: &ParamStore, report: &mut TrainReport| -> Result<()> {
            let (p, r, f1) = if dev_docs.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                evaluate_dev(model, store, dev_docs, data, decode)?
            };
            let rec = MetricRecord {
                epoch,
                step,
                loss: if *since_n > 0 { *since_sum / *since_n as f64 } else { f64::NAN },
                dev_precision: p,
                dev_recall: r,
                dev_f1: f1,
            };
            log::info!("epoch {epoch} step {step} loss {:.5} dev P {p:.4} R {r:.4} F1 {f1:.4}", rec.loss);
            if let Some(f) = metrics_file.as_mut() {
                serde_json::to_writer(&mut *f, &rec)?;
                f.write_all(b"\n")?;
            }
            (*since_sum, *since_n) = (0.0, 0);
            if f1 > report.best_f1 {
                report.best_f1 = f1;
                report.best_step = step;
                best_store = Some(store.clone());
                if let Some(dir) = &cfg.checkpoint {
                    model.save(store, dir)?;
                }
            }
            report.history.push(rec);
            Ok(())
        };

    let out_of_budget = |step: usize| {
        cfg.max_steps.is_some_and(|s| step >= s) || cfg.time_budget_secs.is_some_and(|t| started.elapsed().as_secs_f64() >= t)
    };

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_sum, mut epoch_n) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if out_of_budget(step) {
                report.epoch_losses.push(epoch_sum / epoch_n.max(1) as f64);
                break 'epochs;
            }
            let results: Vec<(Scalar, Vec<(ParamId, Vec<Scalar>)>)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &ix)| example_grads(model, store, &examples[ix], seed_for(cfg.seed, step, slot)))
                .collect::<Result<_>>()?;
            if results.iter().any(|(l, _)| !l.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step,
                    batch: batch
                        .iter()
                        .map(|&ix| format!("{}@{}", examples[ix].segment.parent_id, examples[ix].segment.origin))
                        .collect(),
                });
            }
            let scale = 1.0 / batch.len() as Scalar;
            let mut summed: HashMap<ParamId, Vec<Scalar>> = HashMap::new();
            let mut ids_in_order: Vec<ParamId> = Vec::new();
            let mut batch_loss = 0.0;
            for (loss, grads) in results {
                batch_loss += loss as f64;
                for (id, gr) in grads {
                    match summed.get_mut(&id) {
                        Some(acc) => acc.iter_mut().zip(&gr).for_each(|(a, b)| *a += b),
                        None => {
                            ids_in_order.push(id);
                            summed.insert(id, gr);
                        }
                    }
                }
            }
            let grads: Vec<(ParamId, Vec<Scalar>)> = ids_in_order
                .into_iter()
                .map(|id| {
                    let mut g = summed.remove(&id).unwrap();
                    g.iter_mut().for_each(|v| *v *= scale);
                    (id, g)
                })
                .collect();
            adamw_step(store, &grads, &mut state, &opt)?;
            step += 1;
            let mean = batch_loss / batch.len() as f64;
            epoch_sum += mean;
            epoch_n += 1;
            since_sum += mean;
            since_n += 1;
            log::debug!("step {step} loss {mean:.6}");
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                record(epoch, step, &mut since_sum, &mut since_n, store, &mut report)?;
            }
        }
        report.epoch_losses.push(epoch_sum / epoch_n.max(1) as f64);
        if cfg.eval_every == 0 {
            record(epoch, step, &mut since_sum, &mut since_n, store, &mut report)?;
        }
    }
    if since_n > 0 || report.history.is_empty() {
        let epoch = report.epoch_losses.len();
        record(epoch, step, &mut since_sum, &mut since_n, store, &mut report)?;
    }
    report.steps = step;
    if let Some(best) = best_store {
        *store = best;
    }
    Ok(report)
}
