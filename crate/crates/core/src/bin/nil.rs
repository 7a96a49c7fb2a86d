//! Command-line front end. Exit codes: 0 success, 1 partial failure or
//! runtime error, 2 configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nil_core::degrade::{contaminate_corpus, ContaminationSpec, NoiseBank};
use nil_core::enhance::{load_pairs, produce_enhanced_corpus, train_enhancer, EnhanceTrainParams, WaveUNet, WaveUNetConfig};
use nil_core::harness::matrix::default_cache_dir;
use nil_core::harness::report::render_grid;
use nil_core::harness::{emit_enhancement_report, emit_report, import_fsc, run_matrix, synthesize_toy_corpus, ExperimentPlan};
use nil_core::intent::{evaluate, extract_features, train_classifier, ClassifierConfig, ClassifierTrainParams, IntentClassifier, LabelMap};
use nil_core::manifest::{read_manifest, read_pairs};
use nil_core::metrics::{histogram, score_corpus, write_histogram, write_report, CommandPesq, MetricKind, MetricSelection, PesqScorer};
use nil_core::nn::{save_weights, AdamConfig};
use nil_core::{Error, Result};

#[derive(Parser)]
#[command(name = "nil", version, about = "Noise-robust intent classification lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the toy corpus, its split manifests and noise bank.
    ToyCorpus {
        #[arg(long, default_value_t = 31)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Import a corpus in the FSC directory layout as a clean manifest.
    ImportFsc {
        #[arg(long)]
        root: PathBuf,
        /// Keep at most this many rows per split.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix every manifest entry with seeded noise at a drawn SNR.
    Contaminate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        noise_dir: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-20,-15,-5,5,15,20")]
        snrs: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the Wave-U-Net enhancer on noisy/clean pairs.
    EnhanceTrain {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Model config JSON; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training params JSON; flags below override single fields.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance every file of a noisy manifest.
    EnhanceApply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the intent classifier.
    IcTrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Classifier config JSON; `n_classes` follows the label map.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a classifier on a manifest.
    IcEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Score clean/processed pairs.
    Metrics {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "stoi,fwsnrseg,segsnr,llr,wss")]
        metrics: String,
        /// Command template with {ref} and {deg} placeholders.
        #[arg(long)]
        pesq_cmd: Option<String>,
        /// `metric:Nbins`, e.g. `fwsnrseg:40bins`; repeatable.
        #[arg(long)]
        hist: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the desk-scale toy plan as JSON, a starting point for `matrix`.
    ToyPlan {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a training × evaluation condition matrix.
    Matrix {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        hist_bins: usize,
    },
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_hist(spec: &str) -> Result<(MetricKind, usize)> {
    let (name, bins) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("histogram spec '{spec}' should look like fwsnrseg:40bins")))?;
    let bins = bins
        .trim_end_matches("bins")
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("bad bin count in '{spec}'")))?;
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    Ok((name.parse()?, bins))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Returns the process exit code for a run that did not error out.
fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::ToyCorpus {
            classes,
            per_class,
            seed,
            out,
        } => {
            let toy = synthesize_toy_corpus(classes, per_class, seed, &out)?;
            println!("{} clips, {} intents -> {}", toy.entries.len(), toy.labels.len(), toy.manifest.display());
            Ok(0)
        }
        Command::ImportFsc { root, limit, out } => {
            let imp = import_fsc(&root, limit, &out)?;
            println!("{} utterances, {} intents -> {}", imp.entries.len(), imp.labels.len(), imp.manifest.display());
            Ok(0)
        }
        Command::Contaminate {
            manifest,
            noise_dir,
            snrs,
            seed,
            out,
        } => {
            let entries = read_manifest(&manifest)?;
            let bank = NoiseBank::load_dir(&noise_dir)?;
            let spec = ContaminationSpec {
                snr_choices_db: snrs,
                seed,
            };
            let outcome = contaminate_corpus(&entries, &bank, &spec, &out)?;
            println!("{} mixed, {} skipped -> {}", outcome.entries.len(), outcome.failures.len(), out.display());
            for (id, why) in &outcome.failures {
                eprintln!("skipped {id}: {why}");
            }
            Ok(u8::from(!outcome.failures.is_empty()))
        }
        Command::EnhanceTrain {
            pairs,
            val,
            config,
            params,
            epochs,
            batch,
            lr,
            seed,
            out,
        } => {
            let config = match config {
                Some(p) => read_json::<WaveUNetConfig>(&p)?,
                None => WaveUNetConfig::desk(),
            };
            let mut params = match params {
                Some(p) => read_json::<EnhanceTrainParams>(&p)?,
                None => EnhanceTrainParams::default(),
            };
            params.seed = seed;
            if let Some(e) = epochs {
                params.max_epochs = e;
            }
            if let Some(b) = batch {
                params.batch_size = b;
            }
            if let Some(lr) = lr {
                params.adam = AdamConfig { lr, ..params.adam };
            }
            let train = load_pairs(&read_pairs(&pairs)?)?;
            let valid = match val {
                Some(v) => load_pairs(&read_pairs(&v)?)?,
                None => Vec::new(),
            };
            let model = WaveUNet::build(config, seed)?;
            let trained = train_enhancer(model, &train, &valid, &params)?;
            save_weights(&trained.model, &out)?;
            write_json(&sibling(&out, "train.json"), &trained.log)?;
            println!(
                "{} epochs, final mse {:.4e}, best epoch {:?} -> {}",
                trained.log.epoch_loss.len(),
                trained.log.epoch_loss.last().copied().unwrap_or(f64::NAN),
                trained.log.best_epoch,
                out.display()
            );
            Ok(0)
        }
        Command::EnhanceApply { model, manifest, out } => {
            let model = WaveUNet::load(&model)?;
            let entries = read_manifest(&manifest)?;
            let corpus = produce_enhanced_corpus(&model, &entries, &out)?;
            println!("{} enhanced, {} failed -> {}", corpus.entries.len(), corpus.failures.len(), out.display());
            for (id, why) in &corpus.failures {
                eprintln!("failed {id}: {why}");
            }
            Ok(u8::from(!corpus.failures.is_empty()))
        }
        Command::IcTrain {
            manifest,
            val,
            config,
            seed,
            epochs,
            batch,
            lr,
            out,
        } => {
            let train_entries = read_manifest(&manifest)?;
            let val_entries = match val {
                Some(v) => read_manifest(&v)?,
                None => Vec::new(),
            };
            let all: Vec<_> = train_entries.iter().chain(&val_entries).cloned().collect();
            let labels = LabelMap::build(&all)?;
            let mut config = match config {
                Some(p) => read_json::<ClassifierConfig>(&p)?,
                None => ClassifierConfig::paper(labels.len()),
            };
            config.n_classes = labels.len();
            let params = ClassifierTrainParams {
                epochs,
                batch_size: batch,
                adam: AdamConfig { lr, ..AdamConfig::default() },
                seed,
                stop_at_train_accuracy: None,
            };
            let feats = |entries| -> Result<Vec<_>> { extract_features(entries, &labels).into_iter().collect() };
            let train = feats(&train_entries)?;
            let valid = feats(&val_entries)?;
            let model = IntentClassifier::build(config, labels.clone(), seed)?;
            let trained = train_classifier(model, &train, &valid, &params)?;
            let log = trained.log.clone();
            save_weights(&trained.best.unwrap_or(trained.model), &out)?;
            write_json(&sibling(&out, "train.json"), &log)?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "{} epochs, train accuracy {:.4}, validation accuracy {:?} -> {}",
                    log.epochs.len(),
                    last.train_accuracy,
                    last.val_accuracy,
                    out.display()
                );
            }
            Ok(0)
        }
        Command::IcEval { model, manifest, report } => {
            let model = IntentClassifier::load(&model)?;
            let entries = read_manifest(&manifest)?;
            let r = evaluate(&model, &entries)?;
            write_json(&report, &r)?;
            println!("accuracy {:.4} ({}/{})", r.accuracy, r.correct, r.total);
            for (id, why) in &r.errors {
                eprintln!("failed {id}: {why}");
            }
            Ok(u8::from(!r.errors.is_empty()))
        }
        Command::Metrics {
            pairs,
            metrics,
            pesq_cmd,
            hist,
            out,
        } => {
            let selection = MetricSelection::parse(&metrics)?;
            let hist: Vec<(MetricKind, usize)> = hist.iter().map(|h| parse_hist(h)).collect::<Result<_>>()?;
            let pesq = pesq_cmd.as_deref().map(|c| CommandPesq::new(c, 1)).transpose()?;
            let records = read_pairs(&pairs)?;
            let scores = score_corpus(&records, &selection, pesq.as_ref().map(|p| p as &dyn PesqScorer));
            write_report(&out, &scores)?;
            for (kind, bins) in hist {
                let path = sibling(&out, &format!("{}_hist.csv", kind.name()));
                write_histogram(&path, &histogram(&scores.values(kind), bins))?;
            }
            println!("{} pairs, {} failed -> {}", scores.rows.len(), scores.failures, out.display());
            Ok(u8::from(scores.failures > 0))
        }
        Command::ToyPlan { seed, out } => {
            write_json(&out, &ExperimentPlan::toy_desk(seed))?;
            Ok(0)
        }
        Command::Matrix { plan, out, hist_bins } => {
            let plan = ExperimentPlan::load(&plan)?;
            let outcome = run_matrix(&plan, &out, &default_cache_dir(&out))?;
            emit_report(&outcome.table, &out)?;
            if let Some(report) = &outcome.enhancement {
                emit_enhancement_report(report, &out, hist_bins)?;
            }
            write_json(&out.join("stages.json"), &outcome.counts)?;
            print!("{}", render_grid(&outcome.table));
            for (stage, why) in &outcome.stage_errors {
                eprintln!("stage {stage} failed: {why}");
            }
            Ok(outcome.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if matches!(err, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
