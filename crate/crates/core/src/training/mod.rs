//! PLCC multi-task training with Adam and a per-epoch cosine schedule.

mod loss;
mod optim;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{plcc_loss, plcc_loss_grad, plcc_loss_value, total_loss, LossTermValues, LossWeights, PlccTerm, TotalLoss};
pub use optim::{cosine_lr, Adam};

use crate::datastore::{Dimension, Labels, TrainState, VideoRecord};
use crate::error::{Error, Result};
use crate::evaluation::srcc;
use crate::model::{EduVqa, PredictionBundle, SampleFeatures};
use crate::numerics::{Graph, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches whose gradients are averaged before each optimizer step.
    pub accumulation: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            lr: 1e-5,
            epochs: 50,
            batch_size: 4,
            accumulation: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation window must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs 0 <= beta < 1 and eps > 0".into()));
        }
        self.weights.validate()
    }
}

/// A training or evaluation sample held in memory.
#[derive(Debug, Clone)]
pub struct Example {
    pub video_id: String,
    pub features: SampleFeatures,
    pub labels: Labels,
}

impl Example {
    pub fn load(record: &VideoRecord, base: &Path) -> Result<Self> {
        Ok(Example {
            video_id: record.video_id.clone(),
            features: record.load_features(base)?,
            labels: record.labels.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Validation SRCC per dimension (`word` pools every unmasked position).
    pub val_srcc: BTreeMap<String, f64>,
}

impl EpochLog {
    /// Mean validation SRCC over the reported dimensions.
    pub fn selection_score(&self) -> f64 {
        if self.val_srcc.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.val_srcc.values().sum::<f64>() / self.val_srcc.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation score.
    pub best_params: ParamStore,
    pub best_epoch: Option<usize>,
    /// Parameters after the last completed epoch.
    pub last_params: ParamStore,
    pub optimizer: TrainState,
    pub log: Vec<EpochLog>,
    /// Why training stopped early, if it did.
    pub aborted: Option<String>,
}

pub fn predict_all(model: &EduVqa, params: &ParamStore, examples: &[Example]) -> Result<Vec<PredictionBundle>> {
    examples.iter().map(|e| model.predict(params, &e.features)).collect()
}

/// Validation SRCC per dimension; dimensions whose SRCC is undefined are left out.
pub fn validation_srcc(examples: &[Example], preds: &[PredictionBundle]) -> Result<BTreeMap<String, f64>> {
    let mut cols: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut push = |name: &str, p: f64, l: f64| {
        let e = cols.entry(name.to_string()).or_default();
        e.0.push(p);
        e.1.push(l);
    };
    for (e, b) in examples.iter().zip(preds) {
        if let Some(p) = b.q_spatial {
            push(&Dimension::Spatial.to_string(), p, e.labels.spatial);
        }
        if let Some(p) = b.q_temporal {
            push(&Dimension::Temporal.to_string(), p, e.labels.temporal);
        }
        push(&Dimension::OverallPercept.to_string(), b.q_overall_percept, e.labels.overall_percept);
        push(&Dimension::Sentence.to_string(), b.q_sentence, e.labels.sentence);
        for (i, (&p, &l)) in b.q_word.iter().zip(&e.labels.word).enumerate() {
            if e.features.token_mask.get(i).copied().unwrap_or(false) {
                push("word", p, l);
            }
        }
    }
    let mut out = BTreeMap::new();
    for (name, (p, l)) in cols {
        if p.len() >= 2 {
            let s = srcc(&p, &l)?;
            if !s.degenerate {
                out.insert(name, s.value);
            }
        }
    }
    Ok(out)
}

fn batch_gradients(
    model: &EduVqa,
    params: &ParamStore,
    batch: &[&Example],
    weights: &LossWeights,
) -> Result<(f64, ParamStore)> {
    let mut g = Graph::new();
    let mut bundles = Vec::with_capacity(batch.len());
    for e in batch {
        bundles.push(model.forward(&mut g, params, &e.features)?.bundle);
    }
    let labels: Vec<&Labels> = batch.iter().map(|e| &e.labels).collect();
    let masks: Vec<&[bool]> = batch.iter().map(|e| e.features.token_mask.as_slice()).collect();
    g.set_scope("loss");
    let total = total_loss(&mut g, &bundles, &labels, &masks, weights)?;
    let value = g.scalar_value(total.loss);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            op: "total_loss",
            scope: "loss".into(),
        });
    }
    let grads = g.backward(total.loss)?;
    Ok((value, g.param_grads(&grads, params)))
}

fn accumulate(into: &mut Option<ParamStore>, grads: ParamStore) -> Result<()> {
    match into {
        None => *into = Some(grads),
        Some(acc) => {
            for (name, t) in acc.iter_mut() {
                *t = t.add(&grads[name])?;
            }
        }
    }
    Ok(())
}

/// Train `params` in place of a copy; returns best and last parameters.
///
/// A trailing batch smaller than two samples is dropped, since a correlation
/// needs at least two points. Numerical failures stop training and return the
/// parameters of the last completed epoch with `aborted` set.
pub fn train(
    model: &EduVqa,
    init: ParamStore,
    train_set: &[Example],
    val_set: &[Example],
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    schedule.validate()?;
    model.check_params(&init)?;
    if train_set.len() < 2 {
        return Err(Error::Data(format!("training needs at least 2 samples, got {}", train_set.len())));
    }
    let dtype = model.config().dtype;
    let mut params: ParamStore = init.into_iter().map(|(k, t)| (k, t.cast(dtype))).collect();
    let mut adam = Adam::new(&params, schedule.beta1, schedule.beta2, schedule.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut last_good = (params.clone(), adam.state(0));
    let mut aborted = None;

    'epochs: for epoch in 0..schedule.epochs {
        let lr = cosine_lr(schedule.lr, epoch, schedule.epochs);
        order.shuffle(&mut rng);
        let batches: Vec<Vec<&Example>> = order
            .chunks(schedule.batch_size)
            .filter(|c| c.len() >= 2)
            .map(|c| c.iter().map(|&i| &train_set[i]).collect())
            .collect();
        let mut losses = Vec::with_capacity(batches.len());
        let mut pending: Option<ParamStore> = None;
        let mut pending_count = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let (value, grads) = match batch_gradients(model, &params, batch, &schedule.weights) {
                Ok(v) => v,
                Err(e) if e.is_numerical() => {
                    aborted = Some(format!("epoch {epoch}, batch {b}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            losses.push(value);
            accumulate(&mut pending, grads)?;
            pending_count += 1;
            if pending_count == schedule.accumulation || b + 1 == batches.len() {
                let mut grads = pending.take().expect("accumulated gradients");
                if pending_count > 1 {
                    let s = 1.0 / pending_count as f64;
                    grads = grads.into_iter().map(|(k, t)| (k, t.scale(s))).collect();
                }
                pending_count = 0;
                if let Err(e) = adam.update(&mut params, &grads, lr, dtype) {
                    if e.is_numerical() {
                        aborted = Some(format!("epoch {epoch}, batch {b}: {e}"));
                        break 'epochs;
                    }
                    return Err(e);
                }
            }
        }
        let train_loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let val_srcc = if val_set.is_empty() {
            BTreeMap::new()
        } else {
            match predict_all(model, &params, val_set) {
                Ok(preds) => validation_srcc(val_set, &preds)?,
                Err(e) if e.is_numerical() => {
                    aborted = Some(format!("epoch {epoch}, validation: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            val_srcc,
        };
        on_epoch(&entry);
        let score = entry.selection_score();
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
        }
        log.push(entry);
        last_good = (params.clone(), adam.state(epoch + 1));
    }

    let (last_params, optimizer) = last_good;
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (Some(e), p),
        None => (None, last_params.clone()),
    };
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        last_params,
        optimizer,
        log,
        aborted,
    })
}
