//! Corpus manifests (JSON lines) and clean/processed pair lists (CSV).
//!
//! Paths are written relative to the manifest's directory when they live
//! under it, and resolved against that directory on load.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::MixRecord;
use crate::error::{Error, Result};
use crate::intent::IntentLabel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which version of the audio an entry points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Noisy,
    Enh,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Clean, Condition::Noisy, Condition::Enh];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Noisy => "noisy",
            Condition::Enh => "enh",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Condition::Clean),
            "noisy" => Ok(Condition::Noisy),
            "enh" => Ok(Condition::Enh),
            other => Err(Error::Config(format!("unknown condition '{other}'"))),
        }
    }
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
    pub action: String,
    pub object: String,
    pub location: String,
    pub condition: Condition,
    /// Time-aligned clean reference for noisy or enhanced audio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_ref: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<MixRecord>,
}

impl ManifestEntry {
    pub fn intent(&self) -> IntentLabel {
        IntentLabel::new(&self.action, &self.object, &self.location)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn relativize(base: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Parses a manifest without touching the filesystem beyond the file itself.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(line)
            .map_err(|err| Error::Manifest(format!("line {}: {err}", lineno + 1)))?;
        if e.schema != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "line {}: schema version {} unsupported",
                lineno + 1,
                e.schema
            )));
        }
        if !seen.insert(e.id.clone()) {
            return Err(Error::Manifest(format!("duplicate id '{}'", e.id)));
        }
        e.path = resolve(base, &e.path);
        e.clean_ref = e.clean_ref.map(|p| resolve(base, &p));
        entries.push(e);
    }
    Ok(entries)
}

/// Loads a manifest and checks that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    for e in &entries {
        if !e.path.exists() {
            return Err(Error::Manifest(format!(
                "entry '{}': audio file {} does not exist",
                e.id,
                e.path.display()
            )));
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    if !base.as_os_str().is_empty() {
        fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    }
    let mut out = Vec::new();
    for e in entries {
        let mut e = e.clone();
        e.path = relativize(&base, &e.path);
        e.clean_ref = e.clean_ref.map(|p| relativize(&base, &p));
        serde_json::to_writer(&mut out, &e)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A clean reference and its processed (noisy or enhanced) counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub clean_path: PathBuf,
    #[serde(alias = "noisy_path")]
    pub processed_path: PathBuf,
}

/// Pairs for every entry carrying a clean reference.
pub fn pairs_from_manifest(entries: &[ManifestEntry]) -> Vec<PairRecord> {
    entries
        .iter()
        .filter_map(|e| {
            e.clean_ref.as_ref().map(|c| PairRecord {
                id: e.id.clone(),
                clean_path: c.clone(),
                processed_path: e.path.clone(),
            })
        })
        .collect()
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let mut p: PairRecord = row?;
        p.clean_path = resolve(&base, &p.clean_path);
        p.processed_path = resolve(&base, &p.processed_path);
        out.push(p);
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    if !base.as_os_str().is_empty() {
        fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    }
    let mut wtr = csv::Writer::from_path(path)?;
    for p in pairs {
        wtr.serialize(PairRecord {
            id: p.id.clone(),
            clean_path: relativize(&base, &p.clean_path),
            processed_path: relativize(&base, &p.processed_path),
        })?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Content digest over entry metadata and the bytes of every referenced file.
pub fn corpus_digest(entries: &[ManifestEntry]) -> Result<String> {
    let mut h = Sha256::new();
    for e in entries {
        for field in [e.id.as_str(), e.split.as_str(), &e.action, &e.object, &e.location, e.condition.as_str()] {
            h.update(field.as_bytes());
            h.update([0u8]);
        }
        for p in std::iter::once(&e.path).chain(e.clean_ref.iter()) {
            let bytes = fs::read(p).map_err(|err| Error::io(p, err))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Makes an id safe to use as a file stem.
pub fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn append_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, path: &Path) -> ManifestEntry {
        ManifestEntry {
            schema: SCHEMA_VERSION,
            id: id.into(),
            path: path.to_path_buf(),
            split: Split::Train,
            action: "increase".into(),
            object: "heat".into(),
            location: "kitchen".into(),
            condition: Condition::Clean,
            clean_ref: None,
            provenance: None,
        }
    }

    #[test]
    fn round_trip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("a.wav");
        fs::write(&wav, b"x").unwrap();
        let m = dir.path().join("m.jsonl");
        write_manifest(&m, &[entry("a", &wav)]).unwrap();
        let text = fs::read_to_string(&m).unwrap();
        assert!(text.contains("\"path\":\"a.wav\""), "{text}");
        let back = read_manifest(&m).unwrap();
        assert_eq!(back[0].path, wav);
    }

    #[test]
    fn duplicate_ids_and_bad_vocabulary_rejected() {
        let base = Path::new("/tmp");
        let line = r#"{"id":"a","path":"a.wav","split":"train","action":"x","object":"y","location":"z","condition":"clean"}"#;
        assert!(parse_manifest(&format!("{line}\n{line}\n"), base).is_err());
        let bad = line.replace("\"train\"", "\"dev\"");
        assert!(parse_manifest(&bad, base).is_err());
        let bad = line.replace("\"clean\"", "\"reverb\"");
        assert!(parse_manifest(&bad, base).is_err());
        assert_eq!(parse_manifest(line, base).unwrap().len(), 1);
    }

    #[test]
    fn missing_audio_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        write_manifest(&m, &[entry("a", &dir.path().join("missing.wav"))]).unwrap();
        assert!(read_manifest(&m).unwrap_err().to_string().contains("does not exist"));
    }

    #[test]
    fn file_stems_are_sanitized() {
        assert_eq!(file_stem_for("spk/utt 01.wav"), "spk_utt_01.wav");
    }
}
