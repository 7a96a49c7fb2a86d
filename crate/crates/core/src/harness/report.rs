//! Results grid (CSV, text, metadata) and the enhancement quality report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::ResultsTable;
use crate::error::{Error, Result};
use crate::manifest::{pairs_from_manifest, ManifestEntry};
use crate::metrics::{histogram_range, score_corpus, HistogramBin, MetricKind, MetricReport, MetricSelection, PesqScorer};

/// Rows are training conditions, columns evaluation conditions; failed
/// cells read `FAIL`.
pub fn render_csv(table: &ResultsTable) -> String {
    let mut s = String::from("training");
    for e in &table.evaluation {
        write!(s, ",{e}").expect("string write");
    }
    s.push('\n');
    for t in &table.training {
        s.push_str(t.as_str());
        for e in &table.evaluation {
            match table.accuracy(*t, *e) {
                Some(a) => write!(s, ",{a:.6}").expect("string write"),
                None => s.push_str(",FAIL"),
            }
        }
        s.push('\n');
    }
    s
}

/// Percentages in a fixed-width grid. `*` marks cells the reference table
/// leaves empty.
pub fn render_grid(table: &ResultsTable) -> String {
    let width = 13;
    let mut s = format!("{:<width$}", "training");
    for e in &table.evaluation {
        write!(s, "{:>width$}", e.as_str()).expect("string write");
    }
    s.push('\n');
    for t in &table.training {
        write!(s, "{:<width$}", t.as_str()).expect("string write");
        for e in &table.evaluation {
            let cell = table.cell(*t, *e);
            let text = match cell {
                Some(c) => match c.accuracy {
                    Some(a) => format!("{:.1}%{}", 100.0 * a, if c.in_paper { " " } else { "*" }),
                    None => "FAIL ".to_string(),
                },
                None => "- ".to_string(),
            };
            write!(s, "{text:>width$}").expect("string write");
        }
        s.push('\n');
    }
    if table.cells.iter().any(|c| !c.in_paper) {
        s.push_str("* not reported in the reference table\n");
    }
    for c in table.cells.iter().filter(|c| c.error.is_some()) {
        writeln!(s, "FAIL {} -> {}: {}", c.training, c.evaluation, c.error.as_deref().unwrap_or("")).expect("string write");
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `results.txt` and `results.meta.json` (seed,
/// per-cell counts and flags, content digests) into `dir`.
pub fn emit_report(table: &ResultsTable, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (dir.join("results.csv"), render_csv(table).into_bytes()),
        (dir.join("results.txt"), render_grid(table).into_bytes()),
        (dir.join("results.meta.json"), serde_json::to_vec_pretty(table)?),
    ];
    for (p, bytes) in &files {
        write_file(p, bytes)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Test-split quality of unprocessed (noisy) and enhanced audio against the
/// clean references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    pub unprocessed: MetricReport,
    pub enhanced: MetricReport,
    pub fwsnrseg_unprocessed: Vec<f64>,
    pub fwsnrseg_enhanced: Vec<f64>,
    pub pairs: usize,
    pub failures: usize,
    /// Description of the external PESQ scorer, if one was used.
    pub pesq: Option<String>,
}

pub fn score_enhancement(
    noisy: &[ManifestEntry],
    enhanced: &[ManifestEntry],
    pesq: Option<&dyn PesqScorer>,
) -> EnhancementReport {
    let sel = MetricSelection::all();
    let before = score_corpus(&pairs_from_manifest(noisy), &sel, pesq);
    let after = score_corpus(&pairs_from_manifest(enhanced), &sel, pesq);
    EnhancementReport {
        unprocessed: before.summary,
        enhanced: after.summary,
        fwsnrseg_unprocessed: before.values(MetricKind::Fwsnrseg),
        fwsnrseg_enhanced: after.values(MetricKind::Fwsnrseg),
        pairs: before.rows.len(),
        failures: before.failures + after.failures,
        pesq: pesq.map(|p| p.describe()),
    }
}

const TABLE1_COLUMNS: [MetricKind; 6] = [
    MetricKind::Pesq,
    MetricKind::Stoi,
    MetricKind::Fwsnrseg,
    MetricKind::Cbak,
    MetricKind::Csig,
    MetricKind::Covl,
];

pub fn render_table1(report: &EnhancementReport) -> String {
    let mut s = String::from("model");
    for k in TABLE1_COLUMNS {
        write!(s, ",{}", k.name()).expect("string write");
    }
    s.push('\n');
    for (name, m) in [("unprocessed", &report.unprocessed), ("wave-u-net", &report.enhanced)] {
        s.push_str(name);
        for k in TABLE1_COLUMNS {
            match m.get(k) {
                Some(v) => write!(s, ",{v:.6}").expect("string write"),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

/// Shared-bin histograms of fwSNRseg before and after enhancement.
pub fn fwsnrseg_histograms(report: &EnhancementReport, bins: usize) -> (Vec<HistogramBin>, Vec<HistogramBin>) {
    let all = report.fwsnrseg_unprocessed.iter().chain(&report.fwsnrseg_enhanced);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (Vec::new(), Vec::new());
    }
    (
        histogram_range(&report.fwsnrseg_unprocessed, bins, lo, hi),
        histogram_range(&report.fwsnrseg_enhanced, bins, lo, hi),
    )
}

/// Writes `table1.csv`, `fwsnrseg_hist.csv` (bin_low, bin_high, unprocessed,
/// enhanced) and `enhancement.json` into `dir`.
pub fn emit_enhancement_report(report: &EnhancementReport, dir: &Path, bins: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (before, after) = fwsnrseg_histograms(report, bins);
    let mut hist = String::from("bin_low,bin_high,unprocessed,enhanced\n");
    for (b, a) in before.iter().zip(&after) {
        writeln!(hist, "{:.6},{:.6},{},{}", b.bin_low, b.bin_high, b.count, a.count).expect("string write");
    }
    let files = [
        (dir.join("table1.csv"), render_table1(report).into_bytes()),
        (dir.join("fwsnrseg_hist.csv"), hist.into_bytes()),
        (dir.join("enhancement.json"), serde_json::to_vec_pretty(report)?),
    ];
    for (p, bytes) in &files {
        write_file(p, bytes)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::super::matrix::{CellResult, TrainingCondition};
    use super::*;
    use crate::manifest::Condition;
    use std::collections::BTreeMap;

    fn table() -> ResultsTable {
        let mut cells = Vec::new();
        for (i, t) in TrainingCondition::ALL.into_iter().enumerate() {
            for (j, e) in Condition::ALL.into_iter().enumerate() {
                let failed = i == 2 && j == 1;
                cells.push(CellResult {
                    training: t,
                    evaluation: e,
                    accuracy: (!failed).then_some(0.5 + 0.01 * (3 * i + j) as f64),
                    correct: 10,
                    total: 20,
                    in_paper: t.in_paper(e),
                    error: failed.then(|| "boom".to_string()),
                });
            }
        }
        ResultsTable {
            seed: 9,
            training: TrainingCondition::ALL.to_vec(),
            evaluation: Condition::ALL.to_vec(),
            cells,
            digests: BTreeMap::from([("plan".to_string(), "ab".to_string())]),
        }
    }

    #[test]
    fn csv_shape_and_fail_cells() {
        let csv = render_csv(&table());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "training,clean,noisy,enh");
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 4));
        assert_eq!(lines[3], "enh,0.560000,FAIL,0.580000");
        assert_eq!(lines[4].split(',').next(), Some("clean+noisy"));
    }

    #[test]
    fn grid_flags_cells_outside_reference() {
        let g = render_grid(&table());
        assert!(g.contains("53.0%*"));
        assert!(g.contains("FAIL enh -> noisy: boom"));
    }

    #[test]
    fn re_emission_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let t = table();
        let a = emit_report(&t, &dir.path().join("a")).unwrap();
        let b = emit_report(&t, &dir.path().join("b")).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let meta: ResultsTable = serde_json::from_slice(&fs::read(&a[2]).unwrap()).unwrap();
        assert_eq!(meta, t);
    }

    #[test]
    fn table1_layout_without_scorer() {
        let r = EnhancementReport {
            unprocessed: MetricReport {
                stoi: Some(0.6),
                fwsnrseg: Some(5.0),
                ..MetricReport::default()
            },
            enhanced: MetricReport {
                stoi: Some(0.7),
                fwsnrseg: Some(9.0),
                ..MetricReport::default()
            },
            fwsnrseg_unprocessed: vec![1.0, 2.0, 5.0],
            fwsnrseg_enhanced: vec![6.0, 9.0, 12.0],
            pairs: 3,
            failures: 0,
            pesq: None,
        };
        assert_eq!(
            render_table1(&r),
            "model,pesq,stoi,fwsnrseg,cbak,csig,covl\nunprocessed,,0.600000,5.000000,,,\nwave-u-net,,0.700000,9.000000,,,\n"
        );
        let (b, a) = fwsnrseg_histograms(&r, 11);
        assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), 3);
        assert_eq!(a.iter().map(|x| x.count).sum::<usize>(), 3);
        assert_eq!(b[0].bin_low, 1.0);
        assert_eq!(a[10].bin_high, 12.0);
    }
}
