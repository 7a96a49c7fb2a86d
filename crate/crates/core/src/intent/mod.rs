//! Intent classifier over log-mel features.
//!
//! Per-utterance channel normalization, a 1×1 bottleneck convolution, stacks
//! of dilated residual blocks with an accumulated skip path, ReLU, mean
//! pooling over valid frames and an affine head.
//!
//! Inputs may be zero-padded in time beyond their valid length; every layer
//! output is masked past the valid length so padding does not change logits.

mod train;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::ManifestEntry;
use crate::nn::{keyed_rng, Conv1dLayer, Linear, Module, Tape, Tensor, Var, WeightFile};
use crate::signal::features::{FRAME_SECS, HOP_SECS};
use crate::signal::N_MELS;

pub use train::{
    evaluate, extract_features, train_classifier, ClassifierEpoch, ClassifierTrainLog, ClassifierTrainParams,
    ConditionAccuracy, EvalReport, LabeledFeatures, TrainedClassifier,
};

pub const ARCHITECTURE: &str = "intent-tcn";

/// An (action, object, location) slot triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntentLabel {
    pub action: String,
    pub object: String,
    pub location: String,
}

impl IntentLabel {
    pub fn new(action: &str, object: &str, location: &str) -> Self {
        Self {
            action: action.to_string(),
            object: object.to_string(),
            location: location.to_string(),
        }
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.action, self.object, self.location)
    }
}

/// Sorted, bijective map from intent triples to class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    labels: Vec<IntentLabel>,
}

impl LabelMap {
    pub fn from_labels(labels: impl IntoIterator<Item = IntentLabel>) -> Result<Self> {
        let set: BTreeSet<IntentLabel> = labels.into_iter().collect();
        if let Some(bad) = set
            .iter()
            .find(|l| l.action.is_empty() || l.object.is_empty() || l.location.is_empty())
        {
            return Err(Error::Manifest(format!("intent '{bad}' has an empty slot")));
        }
        if set.is_empty() {
            return Err(Error::Manifest("no labels".into()));
        }
        Ok(Self {
            labels: set.into_iter().collect(),
        })
    }

    /// Distinct triples of a manifest, sorted lexicographically.
    pub fn build(entries: &[ManifestEntry]) -> Result<Self> {
        Self::from_labels(entries.iter().map(ManifestEntry::intent))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &IntentLabel) -> Option<usize> {
        self.labels.binary_search(label).ok()
    }

    pub fn label(&self, index: usize) -> Option<&IntentLabel> {
        self.labels.get(index)
    }

    pub fn labels(&self) -> &[IntentLabel] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub bottleneck_channels: usize,
    pub n_stacks: usize,
    pub blocks_per_stack: usize,
    pub kernel: usize,
    /// Dilation of each block within a stack.
    pub dilations: Vec<usize>,
    pub n_classes: usize,
}

impl ClassifierConfig {
    /// 64-channel bottleneck, 2 stacks of 5 blocks, kernel 3, dilations 1..16.
    pub fn paper(n_classes: usize) -> Self {
        Self {
            n_mels: N_MELS,
            window_ms: FRAME_SECS * 1000.0,
            hop_ms: HOP_SECS * 1000.0,
            bottleneck_channels: 64,
            n_stacks: 2,
            blocks_per_stack: 5,
            kernel: 3,
            dilations: vec![1, 2, 4, 8, 16],
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.len() != self.blocks_per_stack {
            return Err(Error::Config(format!(
                "{} dilations for {} blocks per stack",
                self.dilations.len(),
                self.blocks_per_stack
            )));
        }
        if self.n_mels != N_MELS {
            return Err(Error::Config(format!("frontend produces {N_MELS} mels, config asks for {}", self.n_mels)));
        }
        if (self.window_ms - FRAME_SECS * 1000.0).abs() > 1e-9 || (self.hop_ms - HOP_SECS * 1000.0).abs() > 1e-9 {
            return Err(Error::Config("frontend framing is fixed at 20 ms window, 10 ms hop".into()));
        }
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.bottleneck_channels == 0 || self.n_stacks == 0 || self.n_classes < 2 {
            return Err(Error::Config("channels, stacks and classes (>= 2) must be positive".into()));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        Ok(())
    }

    /// Frames seen by one output frame of a single stack.
    pub fn receptive_field_per_stack(&self) -> usize {
        1 + self.dilations.iter().map(|d| (self.kernel - 1) * d).sum::<usize>()
    }

    /// Frames seen by one output frame of the whole network.
    pub fn receptive_field(&self) -> usize {
        1 + self.n_stacks * (self.receptive_field_per_stack() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ResidualBlock {
    dilated: Conv1dLayer,
    skip: Conv1dLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentClassifier {
    config: ClassifierConfig,
    labels: LabelMap,
    seed: u64,
    input: Conv1dLayer,
    blocks: Vec<ResidualBlock>,
    head: Linear,
}

/// A recorded forward pass.
pub(crate) struct Recorded {
    pub tape: Tape,
    pub logits: Var,
    pub params: Vec<Var>,
}

impl IntentClassifier {
    pub fn build(config: ClassifierConfig, labels: LabelMap, seed: u64) -> Result<Self> {
        config.validate()?;
        if labels.len() != config.n_classes {
            return Err(Error::Config(format!(
                "config declares {} classes, label map has {}",
                config.n_classes,
                labels.len()
            )));
        }
        let mut rng = keyed_rng(seed, "intent/init");
        let c = config.bottleneck_channels;
        let input = Conv1dLayer::same(config.n_mels, c, 1, 1, &mut rng)?;
        let mut blocks = Vec::new();
        for _ in 0..config.n_stacks {
            for &d in &config.dilations {
                blocks.push(ResidualBlock {
                    dilated: Conv1dLayer::same(c, c, config.kernel, d, &mut rng)?,
                    skip: Conv1dLayer::same(c, c, 1, 1, &mut rng)?,
                });
            }
        }
        let head = Linear::new(c, config.n_classes, &mut rng);
        Ok(Self {
            config,
            labels,
            seed,
            input,
            blocks,
            head,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = WeightFile::read(path)?;
        file.expect_architecture(ARCHITECTURE)?;
        let config: ClassifierConfig = serde_json::from_value(file.header.config.clone())
            .map_err(|e| Error::WeightFile(format!("bad classifier config: {e}")))?;
        let labels: LabelMap = serde_json::from_value(file.header.extra.clone())
            .map_err(|e| Error::WeightFile(format!("bad label map: {e}")))?;
        let mut model = Self::build(config, labels, file.header.seed)?;
        file.load_into(&mut model)?;
        Ok(model)
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    /// Records the network on a fresh tape for `[n_mels × T]` features whose
    /// first `valid` frames are real.
    pub(crate) fn record(&self, features: &Tensor, valid: usize) -> Result<Recorded> {
        let (c, t) = features.dims2()?;
        if c != self.config.n_mels {
            return Err(Error::Shape(format!("features have {c} channels, model expects {}", self.config.n_mels)));
        }
        if t == 0 || valid == 0 {
            return Err(Error::InvalidArgument("empty feature matrix".into()));
        }
        let mut tape = Tape::new();
        let mut params = Vec::new();
        let x = tape.input(c, t, features.data().to_vec())?;
        let x = tape.normalize_channels(x, valid)?;
        let (x, p) = self.input.apply(&mut tape, x)?;
        params.extend(p);
        let mut x = tape.mask_time(x, valid)?;
        let mut skip: Option<Var> = None;
        for block in &self.blocks {
            let (h, p) = block.dilated.apply(&mut tape, x)?;
            params.extend(p);
            let h = tape.relu(h);
            let h = tape.mask_time(h, valid)?;
            x = tape.add(x, h)?;
            let (s, p) = block.skip.apply(&mut tape, h)?;
            params.extend(p);
            let s = tape.mask_time(s, valid)?;
            skip = Some(match skip {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let y = tape.relu(skip.unwrap_or(x));
        let pooled = tape.mean_pool(y, valid)?;
        let (logits, p) = self.head.apply(&mut tape, pooled)?;
        params.extend(p);
        Ok(Recorded { tape, logits, params })
    }

    /// Logits for `[n_mels × T]` features; `valid` frames are used.
    pub fn logits(&self, features: &Tensor, valid: usize) -> Result<Vec<f64>> {
        let r = self.record(features, valid)?;
        Ok(r.tape.value(r.logits).to_vec())
    }

    /// Cross-entropy loss and per-parameter gradients for one utterance.
    pub fn loss_and_gradients(&self, features: &Tensor, valid: usize, class: usize) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let mut r = self.record(features, valid)?;
        let logits = r.tape.value(r.logits).to_vec();
        let loss = r.tape.cross_entropy(r.logits, class)?;
        r.tape.backward(loss)?;
        let grads = crate::nn::collect_gradients(&r.tape, &r.params);
        Ok((r.tape.scalar(loss), logits, grads))
    }
}

/// Index of the largest logit (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Module for IntentClassifier {
    fn architecture(&self) -> &'static str {
        ARCHITECTURE
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn extra_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.labels).expect("labels serialize")
    }

    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("input.weight".to_string(), &self.input.weight),
            ("input.bias".to_string(), &self.input.bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.dilated.weight"), &b.dilated.weight));
            out.push((format!("block{i}.dilated.bias"), &b.dilated.bias));
            out.push((format!("block{i}.skip.weight"), &b.skip.weight));
            out.push((format!("block{i}.skip.bias"), &b.skip.bias));
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.input.weight, &mut self.input.bias];
        for b in &mut self.blocks {
            out.push(&mut b.dilated.weight);
            out.push(&mut b.dilated.bias);
            out.push(&mut b.skip.weight);
            out.push(&mut b.skip.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}
