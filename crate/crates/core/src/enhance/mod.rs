//! Wave-U-Net time-domain speech enhancer.
//!
//! Level `i` of the encoder convolves to `base + growth·i` channels (kernel
//! 15, same padding, ReLU), keeps the result as a skip tensor and decimates
//! by two. A kernel-15 bottleneck follows. Each decoder level upsamples
//! linearly by two, concatenates the matching skip tensor and convolves back
//! to that level's width (kernel 5, ReLU). The raw input is concatenated
//! before a 1×1 output convolution with tanh.

mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{keyed_rng, Conv1dLayer, Module, Tape, Tensor, Var, WeightFile};
use crate::signal::AudioClip;

pub use train::{
    load_pairs, produce_enhanced_corpus, train_enhancer, AudioPair, EarlyStopping, EnhanceTrainParams,
    EnhancedCorpus, StopDecision, TrainedEnhancer, TrainingLog,
};

pub const ARCHITECTURE: &str = "wave-u-net";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveUNetConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub growth_per_level: usize,
    pub kernel_down: usize,
    pub kernel_up: usize,
    pub input_len: usize,
}

impl WaveUNetConfig {
    /// 6 levels, 8-filter growth, 16384-sample segments.
    pub fn desk() -> Self {
        Self {
            depth: 6,
            base_filters: 8,
            growth_per_level: 8,
            kernel_down: 15,
            kernel_up: 5,
            input_len: 16384,
        }
    }

    /// 12 levels, 24-filter growth, 16384-sample segments.
    pub fn full() -> Self {
        Self {
            depth: 12,
            base_filters: 24,
            growth_per_level: 24,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth >= usize::BITS as usize {
            return Err(Error::Config(format!("depth {} must be >= 1", self.depth)));
        }
        if self.base_filters == 0 {
            return Err(Error::Config("base_filters must be >= 1".into()));
        }
        if self.kernel_down.is_multiple_of(2) || self.kernel_up.is_multiple_of(2) {
            return Err(Error::Config("kernels must be odd for same padding".into()));
        }
        let unit = 1usize << self.depth;
        if self.input_len == 0 || !self.input_len.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "input_len {} is not divisible by 2^depth = {unit}",
                self.input_len
            )));
        }
        Ok(())
    }

    /// Channel count of encoder level `i` (`i == depth` is the bottleneck).
    pub fn channels(&self, level: usize) -> usize {
        self.base_filters + self.growth_per_level * level
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveUNet {
    config: WaveUNetConfig,
    seed: u64,
    down: Vec<Conv1dLayer>,
    bottleneck: Conv1dLayer,
    /// `up[i]` restores level `i`.
    up: Vec<Conv1dLayer>,
    output: Conv1dLayer,
}

impl WaveUNet {
    pub fn build(config: WaveUNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = keyed_rng(seed, "enhance/init");
        let d = config.depth;
        let mut down = Vec::with_capacity(d);
        let mut cin = 1;
        for i in 0..d {
            down.push(Conv1dLayer::same(cin, config.channels(i), config.kernel_down, 1, &mut rng)?);
            cin = config.channels(i);
        }
        let bottleneck = Conv1dLayer::same(cin, config.channels(d), config.kernel_down, 1, &mut rng)?;
        let mut up = Vec::with_capacity(d);
        for i in 0..d {
            let from_below = config.channels(i + 1);
            up.push(Conv1dLayer::same(
                from_below + config.channels(i),
                config.channels(i),
                config.kernel_up,
                1,
                &mut rng,
            )?);
        }
        let output = Conv1dLayer::same(config.channels(0) + 1, 1, 1, 1, &mut rng)?;
        Ok(Self {
            config,
            seed,
            down,
            bottleneck,
            up,
            output,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = WeightFile::read(path)?;
        file.expect_architecture(ARCHITECTURE)?;
        let config: WaveUNetConfig = serde_json::from_value(file.header.config.clone())
            .map_err(|e| Error::WeightFile(format!("bad enhancer config: {e}")))?;
        let mut model = Self::build(config, file.header.seed)?;
        file.load_into(&mut model)?;
        Ok(model)
    }

    pub fn config(&self) -> &WaveUNetConfig {
        &self.config
    }

    /// Convolution layers in forward order.
    pub fn layers(&self) -> Vec<&Conv1dLayer> {
        let mut v: Vec<&Conv1dLayer> = self.down.iter().collect();
        v.push(&self.bottleneck);
        v.extend(self.up.iter().rev());
        v.push(&self.output);
        v
    }

    /// Records the network for one `[1 × input_len]` segment.
    pub(crate) fn record(&self, tape: &mut Tape, segment: &[f64]) -> Result<(Var, Vec<Var>)> {
        if segment.len() != self.config.input_len {
            return Err(Error::Shape(format!(
                "segment has {} samples, model expects {}",
                segment.len(),
                self.config.input_len
            )));
        }
        let mut params = Vec::new();
        let input = tape.input(1, segment.len(), segment.to_vec())?;
        let mut h = input;
        let mut skips = Vec::with_capacity(self.config.depth);
        for layer in &self.down {
            let (y, p) = layer.apply(tape, h)?;
            params.extend(p);
            let y = tape.relu(y);
            skips.push(y);
            h = tape.decimate(y, 2)?;
        }
        let (y, p) = self.bottleneck.apply(tape, h)?;
        params.extend(p);
        h = tape.relu(y);
        let mut up_params = vec![[params[0]; 2]; self.config.depth];
        for i in (0..self.config.depth).rev() {
            let u = tape.upsample(h, 2)?;
            let c = tape.concat(u, skips[i])?;
            let (y, p) = self.up[i].apply(tape, c)?;
            up_params[i] = p;
            h = tape.relu(y);
        }
        for p in up_params {
            params.extend(p);
        }
        let c = tape.concat(h, input)?;
        let (y, p) = self.output.apply(tape, c)?;
        params.extend(p);
        Ok((tape.tanh(y), params))
    }

    /// Enhances one segment of exactly `input_len` samples.
    pub fn forward(&self, segment: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (y, _) = self.record(&mut tape, segment)?;
        Ok(tape.value(y).to_vec())
    }

    /// MSE against `target` and gradients in [`Module::named_parameters`] order.
    pub fn loss_and_gradients(&self, segment: &[f64], target: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let (y, params) = self.record(&mut tape, segment)?;
        let loss = tape.mse(y, target, &[1, self.config.input_len])?;
        tape.backward(loss)?;
        Ok((tape.scalar(loss), crate::nn::collect_gradients(&tape, &params)))
    }

    /// Enhances a whole clip in consecutive non-overlapping segments; the
    /// last segment is zero-padded and the output trimmed to the clip length.
    pub fn enhance_clip(&self, clip: &AudioClip) -> Result<AudioClip> {
        let n = self.config.input_len;
        let mut out = Vec::with_capacity(clip.len().div_ceil(n) * n);
        for chunk in clip.samples.chunks(n) {
            let mut seg = chunk.to_vec();
            seg.resize(n, 0.0);
            out.extend(self.forward(&seg)?);
        }
        out.truncate(clip.len());
        AudioClip::new(out, clip.sample_rate)
    }
}

impl Module for WaveUNet {
    fn architecture(&self) -> &'static str {
        ARCHITECTURE
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.down.iter().enumerate() {
            out.push((format!("down{i}.weight"), &l.weight));
            out.push((format!("down{i}.bias"), &l.bias));
        }
        out.push(("bottleneck.weight".into(), &self.bottleneck.weight));
        out.push(("bottleneck.bias".into(), &self.bottleneck.bias));
        for (i, l) in self.up.iter().enumerate() {
            out.push((format!("up{i}.weight"), &l.weight));
            out.push((format!("up{i}.bias"), &l.bias));
        }
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.down {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.bottleneck.weight);
        out.push(&mut self.bottleneck.bias);
        for l in &mut self.up {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::save_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(depth: usize, base: usize, len: usize) -> WaveUNetConfig {
        WaveUNetConfig {
            depth,
            base_filters: base,
            growth_per_level: base,
            kernel_down: 15,
            kernel_up: 5,
            input_len: len,
        }
    }

    fn signal(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn depth_one_structure() {
        let m = WaveUNet::build(cfg(1, 1, 8), 0).unwrap();
        let shapes: Vec<Vec<usize>> = m.layers().iter().map(|l| l.weight.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![1, 1, 15], vec![2, 1, 15], vec![1, 3, 5], vec![1, 2, 1]]);
    }

    #[test]
    fn parameter_count_closed_form() {
        for (d, b) in [(1, 1), (3, 4), (6, 8)] {
            let c = cfg(d, b, 1 << d);
            let m = WaveUNet::build(c.clone(), 0).unwrap();
            let ch = |i: usize| b * (i + 1);
            let mut want = 0;
            for i in 0..d {
                let cin = if i == 0 { 1 } else { ch(i - 1) };
                want += ch(i) * cin * 15 + ch(i);
                want += ch(i) * (ch(i + 1) + ch(i)) * 5 + ch(i);
            }
            want += ch(d) * ch(d - 1) * 15 + ch(d);
            want += ch(0) + 1 + 1;
            assert_eq!(m.parameter_count(), want);
        }
    }

    #[test]
    fn shape_and_range_preserved() {
        for d in 1..=3 {
            let m = WaveUNet::build(cfg(d, 2, 64), d as u64).unwrap();
            let y = m.forward(&signal(1, 64)).unwrap();
            assert_eq!(y.len(), 64);
            assert!(y.iter().all(|v| v.abs() < 1.0));
            let z = m.forward(&[0.0; 64]).unwrap();
            assert!(z.iter().all(|v| v.abs() < 1.0));
        }
        let m = WaveUNet::build(cfg(2, 2, 64), 0).unwrap();
        assert!(m.forward(&signal(1, 63)).is_err());
    }

    #[test]
    fn rejects_indivisible_length() {
        assert!(WaveUNet::build(cfg(3, 2, 100), 0).is_err());
        let mut c = WaveUNetConfig::desk();
        c.input_len = 16834;
        assert!(c.validate().is_err());
        assert!(WaveUNetConfig::desk().validate().is_ok());
        assert!(WaveUNetConfig::full().validate().is_ok());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = WaveUNet::build(cfg(2, 3, 32), 7).unwrap();
        let b = WaveUNet::build(cfg(2, 3, 32), 7).unwrap();
        let c = WaveUNet::build(cfg(2, 3, 32), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flat_parameters(), c.flat_parameters());
    }

    #[test]
    fn enhance_clip_pads_and_seams() {
        let m = WaveUNet::build(cfg(2, 2, 32), 1).unwrap();
        let short = AudioClip::new(signal(1, 20), 16000).unwrap();
        assert_eq!(m.enhance_clip(&short).unwrap().len(), 20);
        let long = AudioClip::new(signal(2, 64), 16000).unwrap();
        let out = m.enhance_clip(&long).unwrap();
        assert_eq!(&out.samples[..32], &m.forward(&long.samples[..32]).unwrap()[..]);
        assert_eq!(&out.samples[32..], &m.forward(&long.samples[32..]).unwrap()[..]);
    }

    #[test]
    fn weights_round_trip_and_reject_mismatch() {
        let m = WaveUNet::build(cfg(2, 2, 32), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.nil");
        save_weights(&m, &p).unwrap();
        assert_eq!(WaveUNet::load(&p).unwrap(), m);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(WaveUNet::load(&p).is_err());
    }
}
