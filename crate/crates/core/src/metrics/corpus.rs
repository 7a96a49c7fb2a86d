use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{composites, fwsnrseg, llr, segmental_snr, stoi, wss, PesqScorer};
use crate::error::{Error, Result};
use crate::manifest::PairRecord;
use crate::signal::{read_wav, AudioClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Stoi,
    Fwsnrseg,
    Segsnr,
    Llr,
    Wss,
    Pesq,
    Csig,
    Cbak,
    Covl,
}

impl MetricKind {
    pub const ALL: [MetricKind; 9] = [
        MetricKind::Stoi,
        MetricKind::Fwsnrseg,
        MetricKind::Segsnr,
        MetricKind::Llr,
        MetricKind::Wss,
        MetricKind::Pesq,
        MetricKind::Csig,
        MetricKind::Cbak,
        MetricKind::Covl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Stoi => "stoi",
            MetricKind::Fwsnrseg => "fwsnrseg",
            MetricKind::Segsnr => "segsnr",
            MetricKind::Llr => "llr",
            MetricKind::Wss => "wss",
            MetricKind::Pesq => "pesq",
            MetricKind::Csig => "csig",
            MetricKind::Cbak => "cbak",
            MetricKind::Covl => "covl",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))
    }
}

/// Which natively computed measures to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub stoi: bool,
    pub fwsnrseg: bool,
    pub segsnr: bool,
    pub llr: bool,
    pub wss: bool,
}

impl MetricSelection {
    pub fn all() -> Self {
        Self {
            stoi: true,
            fwsnrseg: true,
            segsnr: true,
            llr: true,
            wss: true,
        }
    }

    pub fn none() -> Self {
        Self {
            stoi: false,
            fwsnrseg: false,
            segsnr: false,
            llr: false,
            wss: false,
        }
    }

    /// Comma-separated list such as `stoi,fwsnrseg`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut s = Self::none();
        for name in list.split(',').filter(|t| !t.trim().is_empty()) {
            match name.parse::<MetricKind>()? {
                MetricKind::Stoi => s.stoi = true,
                MetricKind::Fwsnrseg => s.fwsnrseg = true,
                MetricKind::Segsnr => s.segsnr = true,
                MetricKind::Llr => s.llr = true,
                MetricKind::Wss => s.wss = true,
                other => return Err(Error::Config(format!("'{other}' cannot be selected directly"))),
            }
        }
        Ok(s)
    }

    /// Adds the inputs the composite measures need.
    pub fn with_composite_inputs(mut self) -> Self {
        self.segsnr = true;
        self.llr = true;
        self.wss = true;
        self
    }
}

/// Scores for one clean/processed pair; unselected measures are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub stoi: Option<f64>,
    pub fwsnrseg: Option<f64>,
    pub segsnr: Option<f64>,
    pub llr: Option<f64>,
    pub wss: Option<f64>,
    pub pesq: Option<f64>,
    pub csig: Option<f64>,
    pub cbak: Option<f64>,
    pub covl: Option<f64>,
}

impl MetricReport {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Stoi => self.stoi,
            MetricKind::Fwsnrseg => self.fwsnrseg,
            MetricKind::Segsnr => self.segsnr,
            MetricKind::Llr => self.llr,
            MetricKind::Wss => self.wss,
            MetricKind::Pesq => self.pesq,
            MetricKind::Csig => self.csig,
            MetricKind::Cbak => self.cbak,
            MetricKind::Covl => self.covl,
        }
    }

    fn set(&mut self, kind: MetricKind, v: Option<f64>) {
        let slot = match kind {
            MetricKind::Stoi => &mut self.stoi,
            MetricKind::Fwsnrseg => &mut self.fwsnrseg,
            MetricKind::Segsnr => &mut self.segsnr,
            MetricKind::Llr => &mut self.llr,
            MetricKind::Wss => &mut self.wss,
            MetricKind::Pesq => &mut self.pesq,
            MetricKind::Csig => &mut self.csig,
            MetricKind::Cbak => &mut self.cbak,
            MetricKind::Covl => &mut self.covl,
        };
        *slot = v;
    }

    /// Fills csig/cbak/covl when PESQ and their other inputs are present.
    pub fn attach_pesq(&mut self, pesq: f64) {
        self.pesq = Some(pesq);
        if let (Some(l), Some(w), Some(s)) = (self.llr, self.wss, self.segsnr) {
            let c = composites(pesq, l, w, s);
            self.csig = Some(c.csig);
            self.cbak = Some(c.cbak);
            self.covl = Some(c.covl);
        }
    }
}

/// Computes the selected native measures for one pair.
pub fn score_pair(clean: &AudioClip, processed: &AudioClip, selection: &MetricSelection) -> Result<MetricReport> {
    let run = |on: bool, f: fn(&AudioClip, &AudioClip) -> Result<f64>| -> Result<Option<f64>> {
        if on {
            f(clean, processed).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(MetricReport {
        stoi: run(selection.stoi, stoi)?,
        fwsnrseg: run(selection.fwsnrseg, fwsnrseg)?,
        segsnr: run(selection.segsnr, segmental_snr)?,
        llr: run(selection.llr, llr)?,
        wss: run(selection.wss, wss)?,
        ..MetricReport::default()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRow {
    pub id: String,
    /// Scores, or the reason the pair could not be scored.
    pub result: std::result::Result<MetricReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusScores {
    /// One row per pair, in input order.
    pub rows: Vec<ScoredRow>,
    /// Per-measure means over successfully scored rows.
    pub summary: MetricReport,
    pub failures: usize,
}

impl CorpusScores {
    pub fn values(&self, kind: MetricKind) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.result.as_ref().ok().and_then(|m| m.get(kind)))
            .collect()
    }
}

fn score_record(pair: &PairRecord, selection: &MetricSelection, pesq: Option<&dyn PesqScorer>) -> Result<MetricReport> {
    let clean = read_wav(&pair.clean_path)?;
    let processed = read_wav(&pair.processed_path)?;
    let mut report = score_pair(&clean, &processed, selection)?;
    if let Some(scorer) = pesq {
        report.attach_pesq(scorer.score(&pair.clean_path, &pair.processed_path)?);
    }
    Ok(report)
}

/// Scores every pair in parallel; row order follows `pairs`.
pub fn score_corpus(pairs: &[PairRecord], selection: &MetricSelection, pesq: Option<&dyn PesqScorer>) -> CorpusScores {
    let selection = if pesq.is_some() {
        selection.with_composite_inputs()
    } else {
        *selection
    };
    let rows: Vec<ScoredRow> = pairs
        .par_iter()
        .map(|p| ScoredRow {
            id: p.id.clone(),
            result: score_record(p, &selection, pesq).map_err(|e| e.to_string()),
        })
        .collect();
    let failures = rows.iter().filter(|r| r.result.is_err()).count();
    let mut scores = CorpusScores {
        rows,
        summary: MetricReport::default(),
        failures,
    };
    for kind in MetricKind::ALL {
        let v = scores.values(kind);
        if !v.is_empty() {
            scores.summary.set(kind, Some(v.iter().sum::<f64>() / v.len() as f64));
        }
    }
    scores
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with one row per pair and a trailing `MEAN` row.
pub fn write_report(path: &Path, scores: &CorpusScores) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "status".to_string()];
    header.extend(MetricKind::ALL.iter().map(|k| k.name().to_string()));
    w.write_record(&header)?;
    for row in &scores.rows {
        let mut rec = vec![row.id.clone()];
        match &row.result {
            Ok(m) => {
                rec.push("ok".into());
                rec.extend(MetricKind::ALL.iter().map(|&k| fmt_opt(m.get(k))));
            }
            Err(e) => {
                rec.push(format!("FAIL: {e}"));
                rec.extend(MetricKind::ALL.iter().map(|_| String::new()));
            }
        }
        w.write_record(&rec)?;
    }
    let mut mean = vec!["MEAN".to_string(), format!("n={}", scores.rows.len() - scores.failures)];
    mean.extend(MetricKind::ALL.iter().map(|&k| fmt_opt(scores.summary.get(k))));
    w.write_record(&mean)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    histogram_range(values, bins, lo, hi)
}

/// Equal-width histogram over a fixed `[lo, hi]`, so several value sets can
/// share bins. Values outside the range land in the edge bins.
pub fn histogram_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
    if bins == 0 {
        return Vec::new();
    }
    let hi = if hi <= lo { lo + 1.0 } else { hi };
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            bin_low: lo + i as f64 * width,
            bin_high: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let i = (((v - lo) / width).max(0.0) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

pub fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in bins {
        w.serialize(b)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
