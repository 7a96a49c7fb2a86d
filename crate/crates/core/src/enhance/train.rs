use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WaveUNet;
use crate::error::{Error, Result};
use crate::manifest::{file_stem_for, pairs_from_manifest, write_manifest, write_pairs, Condition, ManifestEntry, PairRecord};
use crate::metrics::stoi;
use crate::nn::{apply_gradients, keyed_rng, reduce_gradients, AdamConfig, AdamState, Module};
use crate::signal::{read_wav, write_wav, AudioClip};

/// Time-aligned noisy input and clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioPair {
    pub id: String,
    pub noisy: AudioClip,
    pub clean: AudioClip,
}

/// Reads every pair and checks alignment.
pub fn load_pairs(records: &[PairRecord]) -> Result<Vec<AudioPair>> {
    records
        .par_iter()
        .map(|r| {
            let clean = read_wav(&r.clean_path)?;
            let noisy = read_wav(&r.processed_path)?;
            if clean.len() != noisy.len() || clean.sample_rate != noisy.sample_rate {
                return Err(Error::InvalidArgument(format!(
                    "pair '{}' is misaligned: {} vs {} samples",
                    r.id,
                    clean.len(),
                    noisy.len()
                )));
            }
            Ok(AudioPair {
                id: r.id.clone(),
                noisy,
                clean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceTrainParams {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Epochs between validation STOI evaluations.
    pub eval_interval: usize,
    /// Consecutive non-improving evaluations before stopping.
    pub patience: usize,
}

impl Default for EnhanceTrainParams {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            batch_size: 10,
            adam: AdamConfig::default(),
            seed: 0,
            eval_interval: 50,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience rule over a sequence of validation scores (higher is better).
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, score: f64) -> StopDecision {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.bad = 0;
            StopDecision::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean training MSE per epoch (pre-update values).
    pub epoch_loss: Vec<f64>,
    /// `(epoch, mean validation STOI)`.
    pub evals: Vec<(usize, f64)>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainedEnhancer {
    /// Best-STOI checkpoint when validation ran, else the final weights.
    pub model: WaveUNet,
    pub final_model: WaveUNet,
    pub log: TrainingLog,
}

fn segment(samples: &[f64], offset: usize, len: usize) -> Vec<f64> {
    let mut s: Vec<f64> = samples.iter().skip(offset).take(len).copied().collect();
    s.resize(len, 0.0);
    s
}

fn mean_stoi(model: &WaveUNet, pairs: &[&AudioPair]) -> Result<f64> {
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|p| stoi(&p.clean, &model.enhance_clip(&p.noisy)?))
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// MSE + Adam on random aligned segments with STOI-based early stopping.
///
/// Pairs are sorted by id before shuffling; one segment offset is drawn per
/// pair per epoch from the epoch-keyed generator.
pub fn train_enhancer(
    mut model: WaveUNet,
    train: &[AudioPair],
    valid: &[AudioPair],
    params: &EnhanceTrainParams,
) -> Result<TrainedEnhancer> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if params.batch_size == 0 || params.eval_interval == 0 {
        return Err(Error::Config("batch size and eval interval must be >= 1".into()));
    }
    for p in train.iter().chain(valid) {
        if p.noisy.len() != p.clean.len() {
            return Err(Error::InvalidArgument(format!("pair '{}' is misaligned", p.id)));
        }
    }
    let n = model.config().input_len;
    let mut order: Vec<&AudioPair> = train.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut val: Vec<&AudioPair> = valid.iter().collect();
    val.sort_by(|a, b| a.id.cmp(&b.id));

    let mut adam = AdamState::new(params.adam, &model.parameters_mut().iter().map(|p| &**p).collect::<Vec<_>>());
    let mut log = TrainingLog::default();
    let mut stopper = EarlyStopping::new(params.patience);
    let mut best: Option<WaveUNet> = None;

    for epoch in 0..params.max_epochs {
        let mut rng = keyed_rng(params.seed, &format!("enhance/epoch/{epoch}"));
        let mut epoch_order = order.clone();
        epoch_order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in epoch_order.chunks(params.batch_size) {
            let segs: Vec<(Vec<f64>, Vec<f64>)> = batch
                .iter()
                .map(|p| {
                    let offset = if p.noisy.len() > n { rng.gen_range(0..=p.noisy.len() - n) } else { 0 };
                    (segment(&p.noisy.samples, offset, n), segment(&p.clean.samples, offset, n))
                })
                .collect();
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> =
                segs.par_iter().map(|(x, t)| model.loss_and_gradients(x, t)).collect();
            let mut grads = Vec::with_capacity(batch.len());
            for r in results {
                let (l, g) = r?;
                loss_sum += l;
                grads.push(g);
            }
            let g = reduce_gradients(grads, 1.0 / batch.len() as f64);
            apply_gradients(&mut model, &mut adam, g)?;
        }
        let loss = loss_sum / train.len() as f64;
        log.epoch_loss.push(loss);
        log::debug!("enhance epoch {epoch}: mse {loss:.3e}");
        if !val.is_empty() && (epoch + 1) % params.eval_interval == 0 {
            let score = mean_stoi(&model, &val)?;
            log.evals.push((epoch, score));
            log::info!("enhance epoch {epoch}: validation STOI {score:.4}");
            match stopper.observe(score) {
                StopDecision::Improved => {
                    best = Some(model.clone());
                    log.best_epoch = Some(epoch);
                }
                StopDecision::Continue => {}
                StopDecision::Stop => {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainedEnhancer {
        model: best.unwrap_or_else(|| model.clone()),
        final_model: model,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct EnhancedCorpus {
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<(String, String)>,
}

fn enhance_entry(model: &WaveUNet, entry: &ManifestEntry, out_dir: &Path) -> Result<ManifestEntry> {
    let noisy = read_wav(&entry.path)?;
    let enhanced = model.enhance_clip(&noisy)?;
    let path = out_dir.join("enh").join(format!("{}.wav", file_stem_for(&entry.id)));
    write_wav(&enhanced, &path)?;
    Ok(ManifestEntry {
        path,
        condition: Condition::Enh,
        ..entry.clone()
    })
}

/// Enhances every entry into `out_dir/enh/` and writes `manifest.jsonl` and
/// `pairs.csv` (for entries with a clean reference). Labels, splits, clean
/// references and provenance are carried over.
pub fn produce_enhanced_corpus(model: &WaveUNet, entries: &[ManifestEntry], out_dir: &Path) -> Result<EnhancedCorpus> {
    let results: Vec<Result<ManifestEntry>> = entries.par_iter().map(|e| enhance_entry(model, e, out_dir)).collect();
    let mut out = EnhancedCorpus {
        entries: Vec::with_capacity(entries.len()),
        failures: Vec::new(),
    };
    for (r, e) in results.into_iter().zip(entries) {
        match r {
            Ok(x) => out.entries.push(x),
            Err(err) => {
                log::warn!("enhancement failed for '{}': {err}", e.id);
                out.failures.push((e.id.clone(), err.to_string()));
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_manifest(&out_dir.join("manifest.jsonl"), &out.entries)?;
    write_pairs(&out_dir.join("pairs.csv"), &pairs_from_manifest(&out.entries))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::WaveUNetConfig;
    use super::*;

    #[test]
    fn patience_three_stops_on_fourth_eval() {
        let mut s = EarlyStopping::new(3);
        let d: Vec<StopDecision> = [0.5, 0.49, 0.48, 0.47].iter().map(|&v| s.observe(v)).collect();
        assert_eq!(
            d,
            [StopDecision::Improved, StopDecision::Continue, StopDecision::Continue, StopDecision::Stop]
        );
        let mut s = EarlyStopping::new(3);
        let d: Vec<StopDecision> = [0.5, 0.49, 0.6, 0.59, 0.58].iter().map(|&v| s.observe(v)).collect();
        assert!(!d.contains(&StopDecision::Stop));
        assert_eq!(s.best(), Some(0.6));
    }

    fn pairs(n: usize) -> Vec<AudioPair> {
        (0..n)
            .map(|i| {
                let clean: Vec<f64> = (0..100).map(|t| 0.3 * ((t * (i + 1)) as f64 * 0.1).sin()).collect();
                let noisy: Vec<f64> = clean.iter().enumerate().map(|(t, v)| v + 0.05 * ((t * 7) as f64).sin()).collect();
                AudioPair {
                    id: format!("p{i}"),
                    noisy: AudioClip::new(noisy, 16000).unwrap(),
                    clean: AudioClip::new(clean, 16000).unwrap(),
                }
            })
            .collect()
    }

    fn small() -> WaveUNet {
        WaveUNet::build(
            WaveUNetConfig {
                depth: 2,
                base_filters: 2,
                growth_per_level: 2,
                kernel_down: 15,
                kernel_up: 5,
                input_len: 32,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_curve_and_order_invariant() {
        let p = EnhanceTrainParams {
            max_epochs: 4,
            batch_size: 2,
            seed: 5,
            ..Default::default()
        };
        let data = pairs(3);
        let a = train_enhancer(small(), &data, &[], &p).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let b = train_enhancer(small(), &rev, &[], &p).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.flat_parameters(), b.model.flat_parameters());
    }

    #[test]
    fn loss_falls_on_a_small_set() {
        let p = EnhanceTrainParams {
            max_epochs: 40,
            batch_size: 3,
            adam: AdamConfig {
                lr: 0.01,
                ..Default::default()
            },
            seed: 2,
            ..Default::default()
        };
        let log = train_enhancer(small(), &pairs(3), &[], &p).unwrap().log;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let n = log.epoch_loss.len();
        assert!(mean(&log.epoch_loss[n - 5..]) < 0.5 * mean(&log.epoch_loss[..5]), "{:?}", log.epoch_loss);
    }

    #[test]
    fn rejects_empty_and_misaligned() {
        let p = EnhanceTrainParams::default();
        assert!(train_enhancer(small(), &[], &[], &p).is_err());
        let mut bad = pairs(1);
        bad[0].noisy.samples.pop();
        assert!(train_enhancer(small(), &bad, &[], &p).is_err());
    }
}
