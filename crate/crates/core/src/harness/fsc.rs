//! Import of a corpus laid out like Fluent Speech Commands:
//! `data/{train,valid,test}_data.csv` with columns
//! `(index), path, speakerId, transcription, action, object, location`,
//! audio paths relative to the corpus root.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{fsc_intents, fsc_label_map};
use crate::error::{Error, Result};
use crate::intent::LabelMap;
use crate::manifest::{write_manifest, Condition, ManifestEntry, Split, SCHEMA_VERSION};

#[derive(Debug, Deserialize)]
struct FscRow {
    path: String,
    #[serde(rename = "speakerId")]
    speaker_id: String,
    action: String,
    object: String,
    location: String,
}

#[derive(Debug, Clone)]
pub struct FscImport {
    pub manifest: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub labels: LabelMap,
}

fn read_split(root: &Path, split: Split, limit: Option<usize>) -> Result<Vec<ManifestEntry>> {
    let csv_path = root.join("data").join(format!("{split}_data.csv"));
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| Error::Manifest(format!("{}: {e}", csv_path.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<FscRow>() {
        if limit.is_some_and(|n| out.len() >= n) {
            break;
        }
        let row = row.map_err(|e| Error::Manifest(format!("{}: {e}", csv_path.display())))?;
        let path = root.join(&row.path);
        if !path.is_file() {
            return Err(Error::Manifest(format!("{}: missing audio {}", csv_path.display(), path.display())));
        }
        let stem = Path::new(&row.path).file_stem().and_then(|s| s.to_str()).unwrap_or(&row.path).to_string();
        out.push(ManifestEntry {
            schema: SCHEMA_VERSION,
            id: format!("{}/{stem}", row.speaker_id),
            path,
            split,
            action: row.action,
            object: row.object,
            location: row.location,
            condition: Condition::Clean,
            clean_ref: None,
            provenance: None,
        });
    }
    if out.is_empty() {
        return Err(Error::Manifest(format!("{}: no rows", csv_path.display())));
    }
    Ok(out)
}

/// Reads the three split tables, keeping at most `limit` rows of each, and
/// writes a clean manifest to `out_dir/manifest.jsonl`. The label map is the
/// canonical 31-intent map whenever every row falls inside it.
pub fn import_fsc(root: &Path, limit: Option<usize>, out_dir: &Path) -> Result<FscImport> {
    let mut entries = Vec::new();
    for split in Split::ALL {
        entries.extend(read_split(root, split, limit)?);
    }
    let known = fsc_intents();
    let labels = if entries.iter().all(|e| known.contains(&e.intent())) {
        fsc_label_map()
    } else {
        LabelMap::build(&entries)?
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(FscImport { manifest, entries, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{write_wav, AudioClip};

    fn fixture(root: &Path, per_split: usize) {
        fs::create_dir_all(root.join("data")).unwrap();
        let intents = fsc_intents();
        for split in Split::ALL {
            let mut text = String::from(",path,speakerId,transcription,action,object,location\n");
            for i in 0..per_split {
                let rel = format!("wavs/speakers/spk{i}/{split}-{i}.wav");
                let p = root.join(&rel);
                fs::create_dir_all(p.parent().unwrap()).unwrap();
                let s: Vec<f64> = (0..4000).map(|n| 0.1 * (n as f64 * 0.05 * (i + 1) as f64).sin()).collect();
                write_wav(&AudioClip::new(s, 16000).unwrap(), &p).unwrap();
                let l = &intents[i % intents.len()];
                text.push_str(&format!("{i},{rel},spk{i},\"say it\",{},{},{}\n", l.action, l.object, l.location));
            }
            fs::write(root.join("data").join(format!("{split}_data.csv")), text).unwrap();
        }
    }

    #[test]
    fn imports_layout_with_limit() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 5);
        let out = dir.path().join("out");
        let imp = import_fsc(dir.path(), Some(3), &out).unwrap();
        assert_eq!(imp.entries.len(), 9);
        assert_eq!(imp.labels.len(), 31);
        assert_eq!(imp.entries[0].id, "spk0/train-0");
        assert!(imp.manifest.is_file());
    }

    #[test]
    fn missing_table_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(import_fsc(dir.path(), None, &dir.path().join("o")).is_err());
    }
}
