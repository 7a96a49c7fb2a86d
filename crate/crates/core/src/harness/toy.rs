//! Synthetic stand-in corpus: each class is a sequence of three tone or chirp
//! segments at class-keyed fundamentals, with per-utterance jitter and a
//! low-level seeded background. Segments are harmonic complex tones so that,
//! like speech, they cover most of the mel range.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::fsc_intents;
use crate::error::{Error, Result};
use crate::intent::LabelMap;
use crate::manifest::{write_manifest, Condition, ManifestEntry, Split, SCHEMA_VERSION};
use crate::nn::keyed_rng;
use crate::signal::{write_wav, AudioClip, SAMPLE_RATE};

/// Candidate segment fundamentals (Hz), roughly mel-spaced.
const FREQS: [f64; 20] = [
    140.0, 160.0, 182.0, 206.0, 232.0, 260.0, 290.0, 322.0, 356.0, 392.0, 430.0, 470.0, 512.0, 556.0, 602.0,
    650.0, 700.0, 752.0, 806.0, 862.0,
];
/// Highest harmonic frequency (Hz).
const HARMONIC_CEILING: f64 = 7000.0;
const BACKGROUND_LEVEL: f64 = 0.003;
const NOISE_SECS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
enum SegmentKind {
    Tone,
    /// Linear sweep up by half the start frequency.
    Chirp,
}

#[derive(Debug, Clone, PartialEq)]
struct Signature {
    segments: [(usize, SegmentKind); 3],
}

fn signatures(n_classes: usize, seed: u64) -> Vec<Signature> {
    let mut rng = keyed_rng(seed, "toy/signatures");
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(n_classes);
    while out.len() < n_classes {
        let mut idx: Vec<usize> = (0..FREQS.len()).collect();
        idx.shuffle(&mut rng);
        let mut set = [idx[0], idx[1], idx[2]];
        set.sort_unstable();
        if !used.insert(set) {
            continue;
        }
        let kind = |r: &mut rand_chacha::ChaCha8Rng| if r.gen_bool(0.5) { SegmentKind::Tone } else { SegmentKind::Chirp };
        out.push(Signature {
            segments: [(idx[0], kind(&mut rng)), (idx[1], kind(&mut rng)), (idx[2], kind(&mut rng))],
        });
    }
    out
}

fn render(sig: &Signature, seed: u64, id: &str) -> Vec<f64> {
    let mut rng = keyed_rng(seed, &format!("toy/utterance/{id}"));
    let sr = SAMPLE_RATE as f64;
    let len = SAMPLE_RATE as usize + rng.gen_range(0..1600) - 800;
    let mut out: Vec<f64> = (0..len).map(|_| rng.gen_range(-BACKGROUND_LEVEL..BACKGROUND_LEVEL)).collect();
    let lead = rng.gen_range(800..2400);
    let gap = 480;
    let seg_len = (len - lead - 2 * gap - 800) / 3;
    let fade = 160;
    let mut start = lead;
    for &(fi, kind) in &sig.segments {
        let f0 = FREQS[fi] * rng.gen_range(0.97..1.03);
        let amp = rng.gen_range(0.25..0.45);
        let sweep = match kind {
            SegmentKind::Tone => 0.0,
            SegmentKind::Chirp => 0.5,
        };
        let n_harm = (HARMONIC_CEILING / (f0 * (1.0 + sweep))).floor().max(1.0) as usize;
        let norm: f64 = (1..=n_harm).map(|h| 1.0 / h as f64).sum();
        let mut phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        for n in 0..seg_len {
            let frac = n as f64 / seg_len as f64;
            let f = f0 * (1.0 + sweep * frac);
            let env = if n < fade {
                0.5 - 0.5 * (PI * n as f64 / fade as f64).cos()
            } else if n >= seg_len - fade {
                0.5 - 0.5 * (PI * (seg_len - n) as f64 / fade as f64).cos()
            } else {
                1.0
            };
            let mut v = 0.0;
            for (h, ph) in phases.iter_mut().enumerate() {
                *ph += 2.0 * PI * f * (h + 1) as f64 / sr;
                v += ph.sin() / (h + 1) as f64;
            }
            out[start + n] += amp * env * v / norm;
        }
        start += seg_len + gap;
    }
    out
}

/// Three noise clips of three seconds each: white, babble-like
/// (amplitude-modulated harmonic complexes) and mains hum.
pub fn toy_noise_bank(seed: u64) -> Vec<(String, AudioClip)> {
    let n = NOISE_SECS * SAMPLE_RATE as usize;
    let sr = SAMPLE_RATE as f64;
    let mut rng = keyed_rng(seed, "toy/noise/white");
    let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();

    let mut rng = keyed_rng(seed, "toy/noise/babble");
    let mut babble = vec![0.0; n];
    for _ in 0..6 {
        let f0 = rng.gen_range(100.0..240.0);
        let rate = rng.gen_range(2.5..6.0);
        let offset = rng.gen_range(0.0..2.0 * PI);
        for (i, b) in babble.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = (0.5 + 0.5 * (2.0 * PI * rate * t + offset).sin()).powi(2);
            let voice: f64 = (1..=8).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum();
            *b += 0.02 * env * voice;
        }
    }

    let mut rng = keyed_rng(seed, "toy/noise/hum");
    let phases: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let hum: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            phases
                .iter()
                .enumerate()
                .map(|(h, p)| 0.12 / (h + 1) as f64 * (2.0 * PI * 50.0 * (h + 1) as f64 * t + p).sin())
                .sum()
        })
        .collect();

    [("babble", babble), ("hum", hum), ("white", white)]
        .into_iter()
        .map(|(name, s)| (name.to_string(), AudioClip::new(s, SAMPLE_RATE).expect("positive rate")))
        .collect()
}

/// Files written by [`synthesize_toy_corpus`].
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    /// All splits, clean condition.
    pub manifest: PathBuf,
    pub split_manifests: Vec<(Split, PathBuf)>,
    pub entries: Vec<ManifestEntry>,
    pub labels: LabelMap,
    pub noise_dir: PathBuf,
}

impl ToyCorpus {
    pub fn split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).cloned().collect()
    }
}

fn split_counts(n: usize) -> (usize, usize, usize) {
    let held = ((0.15 * n as f64).round() as usize).max(1);
    (n - 2 * held, held, held)
}

/// Writes `n_classes × n_per_class` clips under `out_dir/clean/`, the toy
/// noise bank under `out_dir/noise/`, `manifest.jsonl` and one manifest per
/// split. Splits are stratified 70/15/15 per class.
pub fn synthesize_toy_corpus(n_classes: usize, n_per_class: usize, seed: u64, out_dir: &Path) -> Result<ToyCorpus> {
    let intents = fsc_intents();
    if n_classes < 2 || n_classes > intents.len() {
        return Err(Error::Config(format!("toy corpus needs 2..={} classes, got {n_classes}", intents.len())));
    }
    if n_per_class < 3 {
        return Err(Error::Config(format!("toy corpus needs >= 3 clips per class, got {n_per_class}")));
    }
    let sigs = signatures(n_classes, seed);
    let (n_train, n_valid, _) = split_counts(n_per_class);
    let clean_dir = out_dir.join("clean");
    fs::create_dir_all(&clean_dir).map_err(|e| Error::io(&clean_dir, e))?;
    let mut entries = Vec::with_capacity(n_classes * n_per_class);
    for (c, (sig, label)) in sigs.iter().zip(&intents).enumerate() {
        let mut order: Vec<usize> = (0..n_per_class).collect();
        order.shuffle(&mut keyed_rng(seed, &format!("toy/split/{c}")));
        for (rank, &u) in order.iter().enumerate() {
            let id = format!("toy-c{c:02}-u{u:02}");
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            let path = clean_dir.join(format!("{id}.wav"));
            write_wav(&AudioClip::new(render(sig, seed, &id), SAMPLE_RATE)?, &path)?;
            entries.push(ManifestEntry {
                schema: SCHEMA_VERSION,
                id,
                path,
                split,
                action: label.action.clone(),
                object: label.object.clone(),
                location: label.location.clone(),
                condition: Condition::Clean,
                clean_ref: None,
                provenance: None,
            });
        }
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    let noise_dir = out_dir.join("noise");
    fs::create_dir_all(&noise_dir).map_err(|e| Error::io(&noise_dir, e))?;
    for (name, clip) in toy_noise_bank(seed) {
        write_wav(&clip, &noise_dir.join(format!("{name}.wav")))?;
    }

    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    let mut split_manifests = Vec::new();
    for split in Split::ALL {
        let path = out_dir.join(format!("{split}.jsonl"));
        let part: Vec<ManifestEntry> = entries.iter().filter(|e| e.split == split).cloned().collect();
        write_manifest(&path, &part)?;
        split_manifests.push((split, path));
    }
    Ok(ToyCorpus {
        manifest,
        split_manifests,
        labels: LabelMap::build(&entries)?,
        entries,
        noise_dir,
    })
}
