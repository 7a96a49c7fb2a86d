use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, IntentClassifier, LabelMap};
use crate::error::{Error, Result};
use crate::manifest::{Condition, ManifestEntry};
use crate::nn::{apply_gradients, keyed_rng, reduce_gradients, AdamConfig, AdamState, Module, Tensor};
use crate::signal::{log_mel_features, read_wav};

/// Features of one utterance with its class index.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    pub id: String,
    pub condition: Condition,
    pub features: Tensor,
    pub class: usize,
}

/// Reads and featurizes every entry; failures are returned per entry.
pub fn extract_features(entries: &[ManifestEntry], labels: &LabelMap) -> Vec<Result<LabeledFeatures>> {
    entries
        .par_iter()
        .map(|e| {
            let class = labels
                .index_of(&e.intent())
                .ok_or_else(|| Error::Manifest(format!("entry '{}': intent {} not in label map", e.id, e.intent())))?;
            let clip = read_wav(&e.path)?;
            Ok(LabeledFeatures {
                id: e.id.clone(),
                condition: e.condition,
                features: log_mel_features(&clip)?,
                class,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop once a full pass over the training set reaches this accuracy.
    #[serde(default)]
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for ClassifierTrainParams {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 100,
            adam: AdamConfig::default(),
            seed: 0,
            stop_at_train_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    /// Mean loss over the epoch's batches (pre-update values).
    pub loss: f64,
    /// Running accuracy over the epoch's batches.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainLog {
    /// Mean loss of the initial model over the training set.
    pub initial_loss: f64,
    pub epochs: Vec<ClassifierEpoch>,
    pub best_epoch: Option<usize>,
    /// Accuracy of a full pass that triggered early stopping.
    pub stopped_at_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: IntentClassifier,
    /// Checkpoint with the best validation accuracy, when validation ran.
    pub best: Option<IntentClassifier>,
    pub log: ClassifierTrainLog,
}

fn pad_batch(items: &[&LabeledFeatures]) -> (Vec<Tensor>, Vec<usize>) {
    let t_max = items.iter().map(|i| i.features.shape()[1]).max().unwrap_or(0);
    let mut padded = Vec::with_capacity(items.len());
    let mut valid = Vec::with_capacity(items.len());
    for it in items {
        let (c, t) = (it.features.shape()[0], it.features.shape()[1]);
        let mut data = vec![0.0; c * t_max];
        for ch in 0..c {
            data[ch * t_max..ch * t_max + t].copy_from_slice(&it.features.data()[ch * t..(ch + 1) * t]);
        }
        padded.push(Tensor::matrix(c, t_max, data).expect("sizes match"));
        valid.push(t);
    }
    (padded, valid)
}

fn predictions(model: &IntentClassifier, items: &[&LabeledFeatures]) -> Result<Vec<(usize, f64)>> {
    items
        .par_iter()
        .map(|it| {
            let z = model.logits(&it.features, it.features.shape()[1])?;
            let loss = crate::nn::cross_entropy(&z, it.class)?;
            Ok((argmax(&z), loss))
        })
        .collect()
}

fn accuracy_of(model: &IntentClassifier, items: &[&LabeledFeatures]) -> Result<(f64, f64)> {
    let p = predictions(model, items)?;
    let correct = p.iter().zip(items).filter(|((c, _), it)| *c == it.class).count();
    let loss = p.iter().map(|(_, l)| l).sum::<f64>() / items.len().max(1) as f64;
    Ok((correct as f64 / items.len().max(1) as f64, loss))
}

/// Minibatch Adam on cross-entropy.
///
/// Training items are sorted by id before the seeded per-epoch shuffle, so
/// the result does not depend on input order. Each batch is zero-padded to
/// its longest utterance; per-sample gradients are summed in batch order.
pub fn train_classifier(
    mut model: IntentClassifier,
    train: &[LabeledFeatures],
    valid: &[LabeledFeatures],
    params: &ClassifierTrainParams,
) -> Result<TrainedClassifier> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if params.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let k = model.config().n_classes;
    if let Some(bad) = train.iter().chain(valid).find(|it| it.class >= k) {
        return Err(Error::Manifest(format!("'{}' has class {} outside 0..{k}", bad.id, bad.class)));
    }
    let mut order: Vec<&LabeledFeatures> = train.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut valid_sorted: Vec<&LabeledFeatures> = valid.iter().collect();
    valid_sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut adam = AdamState::new(params.adam, &model.parameters_mut().iter().map(|p| &**p).collect::<Vec<_>>());
    let mut log = ClassifierTrainLog {
        initial_loss: accuracy_of(&model, &order)?.1,
        ..Default::default()
    };
    let mut best: Option<(f64, IntentClassifier)> = None;

    for epoch in 0..params.epochs {
        let mut rng = keyed_rng(params.seed, &format!("intent/shuffle/{epoch}"));
        let mut batch_order = order.clone();
        batch_order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in batch_order.chunks(params.batch_size) {
            let (feats, lens) = pad_batch(batch);
            let results: Vec<Result<(f64, Vec<f64>, Vec<Vec<f64>>)>> = feats
                .par_iter()
                .zip(&lens)
                .zip(batch)
                .map(|((f, &v), it)| model.loss_and_gradients(f, v, it.class))
                .collect();
            let mut grads = Vec::with_capacity(batch.len());
            for (r, it) in results.into_iter().zip(batch) {
                let (loss, logits, g) = r?;
                loss_sum += loss;
                correct += usize::from(argmax(&logits) == it.class);
                grads.push(g);
            }
            let g = reduce_gradients(grads, 1.0 / batch.len() as f64);
            apply_gradients(&mut model, &mut adam, g)?;
        }
        let n = train.len() as f64;
        let mut entry = ClassifierEpoch {
            epoch,
            loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_accuracy: None,
        };
        if !valid.is_empty() {
            let acc = accuracy_of(&model, &valid_sorted)?.0;
            entry.val_accuracy = Some(acc);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.clone()));
                log.best_epoch = Some(epoch);
            }
        }
        log::debug!("intent epoch {epoch}: loss {:.4} acc {:.3}", entry.loss, entry.train_accuracy);
        let running = entry.train_accuracy;
        log.epochs.push(entry);
        if let Some(target) = params.stop_at_train_accuracy {
            if running >= target {
                let full = accuracy_of(&model, &order)?.0;
                if full >= target {
                    log.stopped_at_accuracy = Some(full);
                    break;
                }
            }
        }
    }
    Ok(TrainedClassifier {
        model,
        best: best.map(|(_, m)| m),
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_condition: BTreeMap<Condition, ConditionAccuracy>,
    /// `(id, reason)` for entries that could not be scored.
    pub errors: Vec<(String, String)>,
}

/// Exact-match intent accuracy over `entries`; unreadable or unlabeled
/// entries are reported and excluded.
pub fn evaluate(model: &IntentClassifier, entries: &[ManifestEntry]) -> Result<EvalReport> {
    let k = model.labels().len();
    let feats = extract_features(entries, model.labels());
    let preds: Vec<Result<(usize, usize, Condition)>> = feats
        .into_par_iter()
        .map(|f| {
            let f = f?;
            let z = model.logits(&f.features, f.features.shape()[1])?;
            Ok((f.class, argmax(&z), f.condition))
        })
        .collect();
    let mut report = EvalReport {
        accuracy: 0.0,
        correct: 0,
        total: 0,
        confusion: vec![vec![0; k]; k],
        per_condition: BTreeMap::new(),
        errors: Vec::new(),
    };
    for (p, e) in preds.into_iter().zip(entries) {
        match p {
            Ok((truth, pred, cond)) => {
                report.total += 1;
                report.confusion[truth][pred] += 1;
                let slot = report.per_condition.entry(cond).or_insert(ConditionAccuracy {
                    correct: 0,
                    total: 0,
                    accuracy: 0.0,
                });
                slot.total += 1;
                if truth == pred {
                    report.correct += 1;
                    slot.correct += 1;
                }
            }
            Err(err) => report.errors.push((e.id.clone(), err.to_string())),
        }
    }
    for c in report.per_condition.values_mut() {
        c.accuracy = c.correct as f64 / c.total as f64;
    }
    report.accuracy = if report.total == 0 {
        0.0
    } else {
        report.correct as f64 / report.total as f64
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::{ClassifierConfig, IntentLabel};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(k: usize, seed: u64) -> IntentClassifier {
        let labels = LabelMap::from_labels((0..k).map(|i| IntentLabel::new("a", &format!("o{i}"), "none"))).unwrap();
        let cfg = ClassifierConfig {
            bottleneck_channels: 8,
            n_stacks: 1,
            blocks_per_stack: 2,
            dilations: vec![1, 2],
            ..ClassifierConfig::paper(k)
        };
        IntentClassifier::build(cfg, labels, seed).unwrap()
    }

    fn dataset(k: usize, per: usize) -> Vec<LabeledFeatures> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut out = Vec::new();
        for c in 0..k {
            for j in 0..per {
                let t = rng.gen_range(8..14);
                let data = (0..40 * t)
                    .map(|i| if i / t == c * 5 { 4.0 } else { 0.0 } + rng.gen_range(-0.5..0.5))
                    .collect();
                out.push(LabeledFeatures {
                    id: format!("c{c}-{j}"),
                    condition: Condition::Clean,
                    features: Tensor::matrix(40, t, data).unwrap(),
                    class: c,
                });
            }
        }
        out
    }

    #[test]
    fn training_is_order_invariant_and_deterministic() {
        let data = dataset(3, 4);
        let params = ClassifierTrainParams {
            epochs: 3,
            batch_size: 5,
            seed: 11,
            ..Default::default()
        };
        let a = train_classifier(tiny_model(3, 1), &data, &[], &params).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let b = train_classifier(tiny_model(3, 1), &rev, &[], &params).unwrap();
        assert_eq!(a.model.flat_parameters(), b.model.flat_parameters());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn learns_separable_toy_problem() {
        let data = dataset(3, 4);
        let params = ClassifierTrainParams {
            epochs: 60,
            batch_size: 4,
            adam: AdamConfig {
                lr: 0.01,
                ..Default::default()
            },
            seed: 2,
            stop_at_train_accuracy: Some(1.0),
        };
        let out = train_classifier(tiny_model(3, 3), &data, &data, &params).unwrap();
        assert_eq!(out.log.stopped_at_accuracy, Some(1.0));
        assert!(out.best.is_some());
        assert!((out.log.initial_loss - 3f64.ln()).abs() < 0.5);
    }
}
