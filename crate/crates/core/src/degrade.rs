//! Seeded corpus contamination: each clean utterance is mixed with a randomly
//! drawn noise clip at a randomly drawn SNR, and every draw is logged so the
//! mixture can be replayed bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{
    append_jsonl, file_stem_for, pairs_from_manifest, write_manifest, write_pairs, Condition,
    ManifestEntry,
};
use crate::nn::keyed_rng;
use crate::signal::power_of;
use crate::signal::{read_wav, write_wav, AudioClip};

/// SNR grid of the contamination protocol, in dB.
pub const PAPER_SNRS_DB: [f64; 6] = [-20.0, -15.0, -5.0, 5.0, 15.0, 20.0];

/// Peak level the mixture is rescaled to when it would clip.
pub const CLIP_HEADROOM: f64 = 0.99;

/// Named noise recordings sharing one sample rate.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    clips: BTreeMap<String, AudioClip>,
}

impl NoiseBank {
    pub fn new(clips: impl IntoIterator<Item = (String, AudioClip)>) -> Result<Self> {
        let clips: BTreeMap<_, _> = clips.into_iter().collect();
        if clips.is_empty() {
            return Err(Error::Config("noise bank is empty".into()));
        }
        let rate = clips.values().next().map(|c| c.sample_rate).unwrap_or_default();
        for (name, clip) in &clips {
            if clip.sample_rate != rate {
                return Err(Error::Config(format!(
                    "noise '{name}' is at {} Hz, bank is at {rate} Hz",
                    clip.sample_rate
                )));
            }
            if clip.len() <= clip.sample_rate as usize {
                return Err(Error::Config(format!(
                    "noise '{name}' lasts {:.3} s; at least 1 s is required",
                    clip.duration_secs()
                )));
            }
        }
        Ok(Self { clips })
    }

    /// Loads every `*.wav` in `dir`, named by file stem.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut clips = Vec::new();
        let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in listing {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|s| s.to_str()) == Some("wav") {
                let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                clips.push((name, read_wav(&path)?));
            }
        }
        Self::new(clips)
    }

    pub fn names(&self) -> Vec<&str> {
        self.clips.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Option<&AudioClip> {
        self.clips.get(name)
    }

    pub fn sample_rate(&self) -> u32 {
        self.clips.values().next().map(|c| c.sample_rate).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub snr_choices_db: Vec<f64>,
    pub seed: u64,
}

impl ContaminationSpec {
    pub fn paper_default(seed: u64) -> Self {
        Self {
            snr_choices_db: PAPER_SNRS_DB.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_choices_db.is_empty() {
            return Err(Error::Config("SNR choice list is empty".into()));
        }
        if let Some(bad) = self.snr_choices_db.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("SNR choice {bad} is not finite")));
        }
        Ok(())
    }
}

/// Provenance of one mixture; enough to replay it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub utterance_id: String,
    pub noise_name: String,
    /// Start sample within the (cyclically extended) noise clip.
    pub noise_offset: usize,
    pub snr_db: f64,
    /// Gain applied to the noise segment before addition.
    pub noise_gain: f64,
    /// Joint scale applied to mixture and clean reference (1 when no clipping).
    pub norm_factor: f64,
}

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: AudioClip,
    /// Clean signal scaled by the same normalization as the mixture.
    pub clean_ref: AudioClip,
    pub noise_gain: f64,
    pub norm_factor: f64,
}

/// `len` samples of `noise` starting at `offset`, wrapping around as needed.
pub fn noise_segment(noise: &[f64], offset: usize, len: usize) -> Vec<f64> {
    let n = noise.len();
    (0..len).map(|i| noise[(offset + i) % n]).collect()
}

/// Mixes `noise` into `clean` so the result has the requested SNR.
pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64, offset: usize) -> Result<Mixture> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "clean at {} Hz, noise at {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if noise.is_empty() || clean.is_empty() {
        return Err(Error::InvalidArgument("cannot mix empty audio".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("SNR {snr_db} dB is not finite")));
    }
    let segment = noise_segment(&noise.samples, offset % noise.len(), clean.len());
    let p_clean = power_of(&clean.samples)?;
    let p_noise = power_of(&segment)?;
    if p_clean == 0.0 {
        return Err(Error::InvalidArgument("clean signal is silent; SNR undefined".into()));
    }
    if p_noise == 0.0 {
        return Err(Error::InvalidArgument("noise segment is silent; SNR undefined".into()));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut noisy: Vec<f64> = clean
        .samples
        .iter()
        .zip(&segment)
        .map(|(c, n)| c + gain * n)
        .collect();
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (norm, clean_ref) = if peak > 1.0 {
        let f = CLIP_HEADROOM / peak;
        noisy.iter_mut().for_each(|v| *v *= f);
        (f, clean.scaled(f))
    } else {
        (1.0, clean.clone())
    };
    Ok(Mixture {
        noisy: AudioClip::new(noisy, clean.sample_rate)?,
        clean_ref,
        noise_gain: gain,
        norm_factor: norm,
    })
}

/// `10·log10(P(clean) / P(noisy − clean))`.
pub fn measured_snr_db(clean_ref: &[f64], noisy: &[f64]) -> f64 {
    let ps: f64 = clean_ref.iter().map(|v| v * v).sum();
    let pn: f64 = clean_ref.iter().zip(noisy).map(|(c, y)| (y - c) * (y - c)).sum();
    10.0 * (ps / pn).log10()
}

/// Noise name, offset and SNR for one utterance; depends only on the seed and
/// the utterance id.
pub fn draw_assignment(spec: &ContaminationSpec, bank: &NoiseBank, utterance_id: &str) -> (String, usize, f64) {
    let mut rng = keyed_rng(spec.seed, &format!("contaminate/{utterance_id}"));
    let names = bank.names();
    let name = names[rng.gen_range(0..names.len())];
    let snr = spec.snr_choices_db[rng.gen_range(0..spec.snr_choices_db.len())];
    let noise_len = bank.get(name).map(AudioClip::len).unwrap_or(1);
    let offset = rng.gen_range(0..noise_len);
    (name.to_string(), offset, snr)
}

/// Re-creates a logged mixture from its clean source.
pub fn replay(record: &MixRecord, clean: &AudioClip, bank: &NoiseBank) -> Result<Mixture> {
    let noise = bank
        .get(&record.noise_name)
        .ok_or_else(|| Error::Config(format!("noise '{}' not in bank", record.noise_name)))?;
    mix_at_snr(clean, noise, record.snr_db, record.noise_offset)
}

#[derive(Debug, Clone, Default)]
pub struct ContaminationOutcome {
    /// Noisy entries in input order (failed files omitted).
    pub entries: Vec<ManifestEntry>,
    pub records: Vec<MixRecord>,
    /// `(utterance id, reason)` for each skipped file.
    pub failures: Vec<(String, String)>,
}

fn contaminate_one(
    entry: &ManifestEntry,
    bank: &NoiseBank,
    spec: &ContaminationSpec,
    out_dir: &Path,
) -> Result<(ManifestEntry, MixRecord)> {
    let clean = read_wav(&entry.path)?;
    if clean.sample_rate != bank.sample_rate() {
        return Err(Error::InvalidArgument(format!(
            "clean audio at {} Hz, noise bank at {} Hz",
            clean.sample_rate,
            bank.sample_rate()
        )));
    }
    let (noise_name, offset, snr_db) = draw_assignment(spec, bank, &entry.id);
    let noise = bank.get(&noise_name).expect("drawn from bank");
    let mix = mix_at_snr(&clean, noise, snr_db, offset)?;
    let stem = file_stem_for(&entry.id);
    let noisy_path = out_dir.join("noisy").join(format!("{stem}.wav"));
    let ref_path = out_dir.join("clean_ref").join(format!("{stem}.wav"));
    write_wav(&mix.noisy, &noisy_path)?;
    write_wav(&mix.clean_ref, &ref_path)?;
    let record = MixRecord {
        utterance_id: entry.id.clone(),
        noise_name,
        noise_offset: offset,
        snr_db,
        noise_gain: mix.noise_gain,
        norm_factor: mix.norm_factor,
    };
    let noisy_entry = ManifestEntry {
        path: noisy_path,
        condition: Condition::Noisy,
        clean_ref: Some(ref_path),
        provenance: Some(record.clone()),
        ..entry.clone()
    };
    Ok((noisy_entry, record))
}

/// Contaminates every entry, writing `noisy/`, `clean_ref/`, `manifest.jsonl`,
/// `provenance.jsonl` and `pairs.csv` under `out_dir`.
///
/// Unreadable inputs are skipped and reported in
/// [`ContaminationOutcome::failures`]; outputs keep manifest order.
pub fn contaminate_corpus(
    entries: &[ManifestEntry],
    bank: &NoiseBank,
    spec: &ContaminationSpec,
    out_dir: &Path,
) -> Result<ContaminationOutcome> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<_> = entries
        .par_iter()
        .map(|e| contaminate_one(e, bank, spec, out_dir))
        .collect();
    let mut outcome = ContaminationOutcome::default();
    for (entry, result) in entries.iter().zip(results) {
        match result {
            Ok((noisy, record)) => {
                outcome.entries.push(noisy);
                outcome.records.push(record);
            }
            Err(err) => {
                log::warn!("skipping '{}': {err}", entry.id);
                outcome.failures.push((entry.id.clone(), err.to_string()));
            }
        }
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &outcome.entries)?;
    append_jsonl(&out_dir.join("provenance.jsonl"), &outcome.records)?;
    write_pairs(&out_dir.join("pairs.csv"), &pairs_from_manifest(&outcome.entries))?;
    Ok(outcome)
}

/// Paths written by [`contaminate_corpus`].
pub fn output_manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.jsonl")
}
