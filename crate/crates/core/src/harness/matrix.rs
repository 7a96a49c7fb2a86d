//! Experiment plan, stage cache and the training × evaluation matrix runner.
//!
//! Stages run in dependency order: clean corpus, contamination, enhancer
//! training, enhanced corpus, then one classifier per training condition
//! evaluated on the test split of every evaluation condition. Corpus stages
//! are cached under a key derived from their inputs and revalidated by
//! content digest before reuse.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::fsc::import_fsc;
use super::report::{score_enhancement, EnhancementReport};
use super::toy::synthesize_toy_corpus;
use crate::degrade::{contaminate_corpus, ContaminationSpec, NoiseBank, PAPER_SNRS_DB};
use crate::enhance::{load_pairs, produce_enhanced_corpus, train_enhancer, EnhanceTrainParams, WaveUNet, WaveUNetConfig};
use crate::error::{Error, Result};
use crate::intent::{
    evaluate, extract_features, train_classifier, ClassifierConfig, ClassifierTrainParams, IntentClassifier, LabelMap,
    LabeledFeatures,
};
use crate::manifest::{corpus_digest, pairs_from_manifest, read_manifest, Condition, ManifestEntry, Split};
use crate::metrics::CommandPesq;
use crate::nn::weights::encode_weights;
use crate::nn::{keyed_rng, save_weights, AdamConfig};

/// Classifier training material: one condition or the concatenation of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainingCondition {
    Clean,
    Noisy,
    Enh,
    CleanNoisy,
    EnhNoisy,
}

impl TrainingCondition {
    pub const ALL: [TrainingCondition; 5] = [
        TrainingCondition::Clean,
        TrainingCondition::Noisy,
        TrainingCondition::Enh,
        TrainingCondition::CleanNoisy,
        TrainingCondition::EnhNoisy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingCondition::Clean => "clean",
            TrainingCondition::Noisy => "noisy",
            TrainingCondition::Enh => "enh",
            TrainingCondition::CleanNoisy => "clean+noisy",
            TrainingCondition::EnhNoisy => "enh+noisy",
        }
    }

    pub fn components(self) -> &'static [Condition] {
        match self {
            TrainingCondition::Clean => &[Condition::Clean],
            TrainingCondition::Noisy => &[Condition::Noisy],
            TrainingCondition::Enh => &[Condition::Enh],
            TrainingCondition::CleanNoisy => &[Condition::Clean, Condition::Noisy],
            TrainingCondition::EnhNoisy => &[Condition::Enh, Condition::Noisy],
        }
    }

    /// Whether the reference results table reports this cell.
    pub fn in_paper(self, eval: Condition) -> bool {
        self == TrainingCondition::Clean || eval != Condition::Clean
    }
}

impl fmt::Display for TrainingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainingCondition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown training condition '{s}'")))
    }
}

impl Serialize for TrainingCondition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TrainingCondition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Generated by [`synthesize_toy_corpus`] with its own noise bank.
    Toy { n_classes: usize, n_per_class: usize },
    /// A clean manifest covering all three splits.
    Manifest { path: PathBuf },
    /// A corpus root in the FSC layout, optionally truncated per split.
    Fsc {
        root: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

/// A config given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inline<T> {
    Path(PathBuf),
    Value(T),
}

impl<T: for<'de> Deserialize<'de>> Inline<T> {
    fn resolve(self, base: &Path) -> Result<Inline<T>> {
        match self {
            Inline::Value(v) => Ok(Inline::Value(v)),
            Inline::Path(p) => {
                let p = base.join(p);
                let text = fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let v = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Ok(Inline::Value(v))
            }
        }
    }

    fn value(&self) -> Result<&T> {
        match self {
            Inline::Value(v) => Ok(v),
            Inline::Path(p) => Err(Error::Config(format!("config path {} was not resolved", p.display()))),
        }
    }
}

fn default_subset() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancerPlan {
    pub config: Inline<WaveUNetConfig>,
    pub params: Inline<EnhanceTrainParams>,
    /// Fraction of train (and valid) ids used to train the enhancer.
    #[serde(default = "default_subset")]
    pub subset_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPlan {
    /// `n_classes` is replaced by the size of the corpus label map.
    pub config: Inline<ClassifierConfig>,
    pub params: Inline<ClassifierTrainParams>,
}

fn paper_snrs() -> Vec<f64> {
    PAPER_SNRS_DB.to_vec()
}

/// The seed fields inside the training params are replaced by stage seeds
/// derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub corpus: CorpusSource,
    /// Required unless the corpus is the toy corpus.
    #[serde(default)]
    pub noise_dir: Option<PathBuf>,
    pub training: Vec<TrainingCondition>,
    pub evaluation: Vec<Condition>,
    pub seed: u64,
    #[serde(default = "paper_snrs")]
    pub snrs_db: Vec<f64>,
    pub enhancer: EnhancerPlan,
    pub classifier: ClassifierPlan,
    #[serde(default)]
    pub pesq_cmd: Option<String>,
}

impl ExperimentPlan {
    /// Reads a plan and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let plan: ExperimentPlan =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        plan.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(mut self, base: &Path) -> Result<Self> {
        self.corpus = match self.corpus {
            CorpusSource::Manifest { path } => CorpusSource::Manifest { path: base.join(path) },
            CorpusSource::Fsc { root, limit } => CorpusSource::Fsc {
                root: base.join(root),
                limit,
            },
            toy => toy,
        };
        self.noise_dir = self.noise_dir.map(|d| base.join(d));
        self.enhancer.config = self.enhancer.config.resolve(base)?;
        self.enhancer.params = self.enhancer.params.resolve(base)?;
        self.classifier.config = self.classifier.config.resolve(base)?;
        self.classifier.params = self.classifier.params.resolve(base)?;
        Ok(self)
    }

    /// Toy corpus (31 classes × 20), full 5 × 3 grid, small networks sized
    /// for a single CPU.
    pub fn toy_desk(seed: u64) -> Self {
        Self {
            corpus: CorpusSource::Toy {
                n_classes: 31,
                n_per_class: 20,
            },
            noise_dir: None,
            training: TrainingCondition::ALL.to_vec(),
            evaluation: Condition::ALL.to_vec(),
            seed,
            snrs_db: paper_snrs(),
            enhancer: EnhancerPlan {
                config: Inline::Value(WaveUNetConfig {
                    depth: 4,
                    base_filters: 8,
                    growth_per_level: 8,
                    kernel_down: 15,
                    kernel_up: 5,
                    input_len: 2048,
                }),
                params: Inline::Value(EnhanceTrainParams {
                    max_epochs: 150,
                    batch_size: 8,
                    adam: AdamConfig {
                        lr: 0.002,
                        ..AdamConfig::default()
                    },
                    seed: 0,
                    eval_interval: 25,
                    patience: 3,
                }),
                subset_fraction: default_subset(),
            },
            classifier: ClassifierPlan {
                config: Inline::Value(ClassifierConfig {
                    bottleneck_channels: 16,
                    blocks_per_stack: 4,
                    dilations: vec![1, 2, 4, 8],
                    ..ClassifierConfig::paper(31)
                }),
                params: Inline::Value(ClassifierTrainParams {
                    epochs: 40,
                    batch_size: 16,
                    adam: AdamConfig {
                        lr: 0.003,
                        ..AdamConfig::default()
                    },
                    seed: 0,
                    stop_at_train_accuracy: Some(1.0),
                }),
            },
            pesq_cmd: None,
        }
    }

    fn needs(&self, cond: Condition) -> bool {
        self.evaluation.contains(&cond) || self.training.iter().any(|t| t.components().contains(&cond))
    }

    pub fn validate(&self) -> Result<()> {
        if self.training.is_empty() || self.evaluation.is_empty() {
            return Err(Error::Config("plan needs at least one training and one evaluation condition".into()));
        }
        for (name, n) in [("training", dedup_len(&self.training)), ("evaluation", dedup_len(&self.evaluation))] {
            let given = if name == "training" { self.training.len() } else { self.evaluation.len() };
            if n != given {
                return Err(Error::Config(format!("duplicate {name} condition")));
            }
        }
        if !(self.enhancer.subset_fraction > 0.0 && self.enhancer.subset_fraction <= 1.0) {
            return Err(Error::Config("enhancer subset fraction must lie in (0, 1]".into()));
        }
        if let CorpusSource::Toy { n_classes, n_per_class } = self.corpus {
            if !(2..=31).contains(&n_classes) || n_per_class < 3 {
                return Err(Error::Config("toy corpus needs 2..=31 classes and >= 3 clips per class".into()));
            }
        } else if self.noise_dir.is_none() && self.needs(Condition::Noisy) {
            return Err(Error::Config("noise_dir is required for noisy conditions".into()));
        }
        if self.needs(Condition::Noisy) {
            ContaminationSpec {
                snr_choices_db: self.snrs_db.clone(),
                seed: 0,
            }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        }
        self.enhancer.config.value()?.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.enhancer.params.value()?;
        let mut cc = self.classifier.config.value()?.clone();
        cc.n_classes = cc.n_classes.max(2);
        cc.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.classifier.params.value()?;
        if let Some(cmd) = &self.pesq_cmd {
            CommandPesq::new(cmd, 1)?;
        }
        Ok(())
    }

    /// SHA-256 of the plan's canonical JSON.
    pub fn digest(&self) -> String {
        sha_hex(&serde_json::to_vec(self).expect("plan serializes"))
    }
}

fn dedup_len<T: Ord + Clone>(v: &[T]) -> usize {
    let mut s = v.to_vec();
    s.sort();
    s.dedup();
    s.len()
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Independent seed for one pipeline stage.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    keyed_rng(seed, &format!("stage/{stage}")).gen()
}

/// Deterministic id-hash subset: keeps ids whose hash falls below `fraction`.
pub fn in_subset(seed: u64, id: &str, fraction: f64) -> bool {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (x as f64 / u64::MAX as f64) < fraction
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub training: TrainingCondition,
    pub evaluation: Condition,
    pub accuracy: Option<f64>,
    pub correct: usize,
    pub total: usize,
    /// False for cells the reference table leaves empty.
    pub in_paper: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub seed: u64,
    pub training: Vec<TrainingCondition>,
    pub evaluation: Vec<Condition>,
    /// Row-major over `training` × `evaluation`.
    pub cells: Vec<CellResult>,
    /// Content digests of the plan, corpora and models.
    pub digests: BTreeMap<String, String>,
}

impl ResultsTable {
    pub fn cell(&self, training: TrainingCondition, evaluation: Condition) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.training == training && c.evaluation == evaluation)
    }

    pub fn accuracy(&self, training: TrainingCondition, evaluation: Condition) -> Option<f64> {
        self.cell(training, evaluation).and_then(|c| c.accuracy)
    }

    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.accuracy.is_none()).count()
    }
}

/// How often each stage actually ran (as opposed to being loaded from cache).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub corpus_builds: usize,
    pub contaminations: usize,
    pub enhancer_trainings: usize,
    pub enhancements: usize,
    pub classifier_trainings: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub table: ResultsTable,
    pub counts: StageCounts,
    /// Test-split quality of noisy and enhanced audio, when both exist.
    pub enhancement: Option<EnhancementReport>,
    /// `(stage, error)` for every failed stage.
    pub stage_errors: Vec<(String, String)>,
}

impl MatrixOutcome {
    /// 0 when every cell has a result, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.table.failed() > 0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StageRecord {
    stage: String,
    key: String,
    digest: String,
}

struct Cache<'a> {
    root: &'a Path,
    counts: StageCounts,
}

impl Cache<'_> {
    fn dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(format!("{stage}-{}", &key[..16]))
    }

    fn load_record(dir: &Path, key: &str) -> Option<StageRecord> {
        let text = fs::read_to_string(dir.join("stage.json")).ok()?;
        let rec: StageRecord = serde_json::from_str(&text).ok()?;
        (rec.key == key).then_some(rec)
    }

    fn store_record(dir: &Path, stage: &str, key: &str, digest: &str) -> Result<()> {
        let rec = StageRecord {
            stage: stage.into(),
            key: key.into(),
            digest: digest.into(),
        };
        let p = dir.join("stage.json");
        fs::write(&p, serde_json::to_vec_pretty(&rec)?).map_err(|e| Error::io(&p, e))
    }

    fn fresh_dir(dir: &Path) -> Result<()> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    /// Reuses `<dir>/manifest.jsonl` when its content digest matches the
    /// record, otherwise rebuilds it with `build`.
    fn corpus(
        &mut self,
        stage: &str,
        key: &str,
        build: impl FnOnce(&Path) -> Result<Vec<ManifestEntry>>,
    ) -> Result<(Vec<ManifestEntry>, String)> {
        let dir = self.dir(stage, key);
        if let Some(rec) = Self::load_record(&dir, key) {
            if let Ok(entries) = read_manifest(&dir.join("manifest.jsonl")) {
                if corpus_digest(&entries).ok().as_deref() == Some(rec.digest.as_str()) {
                    log::info!("{stage}: reusing cached corpus {}", dir.display());
                    self.counts.cache_hits += 1;
                    return Ok((entries, rec.digest));
                }
            }
            log::warn!("{stage}: cached corpus failed digest check, regenerating");
        }
        Self::fresh_dir(&dir)?;
        let entries = build(&dir)?;
        let digest = corpus_digest(&entries)?;
        Self::store_record(&dir, stage, key, &digest)?;
        Ok((entries, digest))
    }

    /// Reuses `<dir>/model.nil` when its byte digest matches the record.
    fn model(&mut self, stage: &str, key: &str, build: impl FnOnce(&Path) -> Result<WaveUNet>) -> Result<(WaveUNet, String)> {
        let dir = self.dir(stage, key);
        let path = dir.join("model.nil");
        if let Some(rec) = Self::load_record(&dir, key) {
            if let Ok(bytes) = fs::read(&path) {
                if sha_hex(&bytes) == rec.digest {
                    if let Ok(m) = WaveUNet::load(&path) {
                        log::info!("{stage}: reusing cached model {}", path.display());
                        self.counts.cache_hits += 1;
                        return Ok((m, rec.digest));
                    }
                }
            }
            log::warn!("{stage}: cached model failed digest check, retraining");
        }
        Self::fresh_dir(&dir)?;
        let model = build(&dir)?;
        save_weights(&model, &path)?;
        let digest = sha_hex(&fs::read(&path).map_err(|e| Error::io(&path, e))?);
        Self::store_record(&dir, stage, key, &digest)?;
        Ok((model, digest))
    }
}

fn key_of(parts: &[&dyn erased::Json]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.json());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

mod erased {
    use serde::Serialize;

    pub trait Json {
        fn json(&self) -> Vec<u8>;
    }

    impl<T: Serialize> Json for T {
        fn json(&self) -> Vec<u8> {
            serde_json::to_vec(self).expect("key part serializes")
        }
    }
}

struct CleanCorpus {
    entries: Vec<ManifestEntry>,
    labels: LabelMap,
    noise_dir: Option<PathBuf>,
}

fn build_clean(plan: &ExperimentPlan, cache: &mut Cache, out_dir: &Path) -> Result<(CleanCorpus, String)> {
    match &plan.corpus {
        CorpusSource::Toy { n_classes, n_per_class } => {
            let seed = stage_seed(plan.seed, "corpus");
            let key = key_of(&[&"toy", &seed, n_classes, n_per_class]);
            let mut labels = None;
            let (entries, digest) = cache.corpus("clean", &key, |dir| {
                let toy = synthesize_toy_corpus(*n_classes, *n_per_class, seed, dir)?;
                labels = Some(toy.labels);
                Ok(toy.entries)
            })?;
            cache.counts.corpus_builds += usize::from(labels.is_some());
            let labels = match labels {
                Some(l) => l,
                None => LabelMap::build(&entries)?,
            };
            let noise_dir = plan.noise_dir.clone().or_else(|| Some(cache.dir("clean", &key).join("noise")));
            Ok((
                CleanCorpus {
                    entries,
                    labels,
                    noise_dir,
                },
                digest,
            ))
        }
        CorpusSource::Manifest { path } => {
            let entries = read_manifest(path)?;
            let digest = corpus_digest(&entries)?;
            Ok((
                CleanCorpus {
                    labels: LabelMap::build(&entries)?,
                    entries,
                    noise_dir: plan.noise_dir.clone(),
                },
                digest,
            ))
        }
        CorpusSource::Fsc { root, limit } => {
            let imp = import_fsc(root, *limit, &out_dir.join("corpus"))?;
            cache.counts.corpus_builds += 1;
            let digest = corpus_digest(&imp.entries)?;
            Ok((
                CleanCorpus {
                    entries: imp.entries,
                    labels: imp.labels,
                    noise_dir: plan.noise_dir.clone(),
                },
                digest,
            ))
        }
    }
}

fn check_clean(entries: &[ManifestEntry]) -> Result<()> {
    if let Some(e) = entries.iter().find(|e| e.condition != Condition::Clean) {
        return Err(Error::Manifest(format!("corpus entry '{}' is tagged {}, expected clean", e.id, e.condition)));
    }
    for split in [Split::Train, Split::Test] {
        if !entries.iter().any(|e| e.split == split) {
            return Err(Error::Manifest(format!("corpus has no {split} entries")));
        }
    }
    Ok(())
}

fn split_of(entries: &[ManifestEntry], splits: &[Split]) -> Vec<ManifestEntry> {
    entries.iter().filter(|e| splits.contains(&e.split)).cloned().collect()
}

fn features(entries: &[ManifestEntry], labels: &LabelMap) -> Result<Vec<LabeledFeatures>> {
    let mut out = Vec::with_capacity(entries.len());
    for (r, e) in extract_features(entries, labels).into_iter().zip(entries) {
        match r {
            Ok(f) => out.push(f),
            Err(err) => log::warn!("skipping '{}': {err}", e.id),
        }
    }
    if out.is_empty() && !entries.is_empty() {
        return Err(Error::InvalidArgument("no usable utterances".into()));
    }
    Ok(out)
}

fn train_one(
    plan: &ExperimentPlan,
    condition: TrainingCondition,
    corpora: &BTreeMap<Condition, std::result::Result<Vec<ManifestEntry>, String>>,
    labels: &LabelMap,
    out_dir: &Path,
) -> std::result::Result<(IntentClassifier, String), String> {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for c in condition.components() {
        let entries = corpora
            .get(c)
            .ok_or_else(|| format!("{c} corpus was not produced"))?
            .as_ref()
            .map_err(|e| format!("{c} corpus unavailable: {e}"))?;
        train.extend(split_of(entries, &[Split::Train]));
        valid.extend(split_of(entries, &[Split::Valid]));
    }
    let run = || -> Result<(IntentClassifier, String)> {
        let train_f = features(&train, labels)?;
        let valid_f = features(&valid, labels)?;
        let mut config = plan.classifier.config.value()?.clone();
        config.n_classes = labels.len();
        let mut params = plan.classifier.params.value()?.clone();
        params.seed = stage_seed(plan.seed, "classifier/train");
        let init_seed = stage_seed(plan.seed, "classifier/init");
        let model = IntentClassifier::build(config, labels.clone(), init_seed)?;
        log::info!("training classifier on {condition} ({} utterances)", train_f.len());
        let trained = train_classifier(model, &train_f, &valid_f, &params)?;
        let name = condition.as_str().replace('+', "-");
        let log_path = out_dir.join("logs").join(format!("classifier-{name}.json"));
        fs::create_dir_all(log_path.parent().expect("has parent")).map_err(|e| Error::io(&log_path, e))?;
        fs::write(&log_path, serde_json::to_vec_pretty(&trained.log)?).map_err(|e| Error::io(&log_path, e))?;
        let model = trained.best.unwrap_or(trained.model);
        let path = out_dir.join("models").join(format!("classifier-{name}.nil"));
        save_weights(&model, &path)?;
        Ok((model.clone(), sha_hex(&encode_weights(&model)?)))
    };
    run().map_err(|e| e.to_string())
}

/// Runs every stage the plan needs and fills the results grid.
///
/// Only configuration problems and failures to create `out_dir` are returned
/// as errors; a failing stage marks the cells depending on it as failed.
pub fn run_matrix(plan: &ExperimentPlan, out_dir: &Path, cache_dir: &Path) -> Result<MatrixOutcome> {
    plan.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let mut cache = Cache {
        root: cache_dir,
        counts: StageCounts::default(),
    };
    let mut digests = BTreeMap::new();
    digests.insert("plan".to_string(), plan.digest());
    let mut stage_errors = Vec::new();
    let mut corpora: BTreeMap<Condition, std::result::Result<Vec<ManifestEntry>, String>> = BTreeMap::new();
    let mut enhancement = None;

    let clean = build_clean(plan, &mut cache, out_dir).and_then(|(c, d)| {
        check_clean(&c.entries)?;
        Ok((c, d))
    });
    let (labels, noise_dir, clean_digest) = match clean {
        Ok((c, d)) => {
            digests.insert("corpus/clean".into(), d.clone());
            corpora.insert(Condition::Clean, Ok(c.entries));
            (Some(c.labels), c.noise_dir, Some(d))
        }
        Err(e) => {
            stage_errors.push(("clean".into(), e.to_string()));
            corpora.insert(Condition::Clean, Err(e.to_string()));
            (None, None, None)
        }
    };

    let mut noisy_digest = None;
    if plan.needs(Condition::Noisy) || plan.needs(Condition::Enh) {
        let result = (|| -> Result<(Vec<ManifestEntry>, String)> {
            let clean_digest = clean_digest.as_ref().ok_or_else(|| Error::InvalidArgument("clean corpus unavailable".into()))?;
            let clean_entries = corpora[&Condition::Clean].as_ref().expect("present when digest is");
            let noise_dir = noise_dir.as_ref().ok_or_else(|| Error::Config("no noise directory".into()))?;
            let bank = NoiseBank::load_dir(noise_dir)?;
            let spec = ContaminationSpec {
                snr_choices_db: plan.snrs_db.clone(),
                seed: stage_seed(plan.seed, "contaminate"),
            };
            let bank_digest = {
                let mut h = Sha256::new();
                for name in bank.names() {
                    h.update(name.as_bytes());
                    for s in &bank.get(name).expect("listed").samples {
                        h.update(s.to_le_bytes());
                    }
                }
                hex::encode(h.finalize())
            };
            let key = key_of(&[&"noisy", clean_digest, &bank_digest, &spec.snr_choices_db, &spec.seed]);
            let mut built = false;
            let r = cache.corpus("noisy", &key, |dir| {
                built = true;
                let out = contaminate_corpus(clean_entries, &bank, &spec, dir)?;
                if !out.failures.is_empty() {
                    log::warn!("contamination skipped {} files", out.failures.len());
                }
                Ok(out.entries)
            })?;
            cache.counts.contaminations += usize::from(built);
            Ok(r)
        })();
        match result {
            Ok((entries, d)) => {
                digests.insert("corpus/noisy".into(), d.clone());
                noisy_digest = Some(d);
                corpora.insert(Condition::Noisy, Ok(entries));
            }
            Err(e) => {
                stage_errors.push(("noisy".into(), e.to_string()));
                corpora.insert(Condition::Noisy, Err(e.to_string()));
            }
        }
    }

    if plan.needs(Condition::Enh) {
        let result = (|| -> Result<(Vec<ManifestEntry>, String)> {
            let noisy_digest = noisy_digest.as_ref().ok_or_else(|| Error::InvalidArgument("noisy corpus unavailable".into()))?;
            let noisy = corpora[&Condition::Noisy].as_ref().expect("present when digest is");
            let config = plan.enhancer.config.value()?.clone();
            let mut params = plan.enhancer.params.value()?.clone();
            params.seed = stage_seed(plan.seed, "enhancer/train");
            let init_seed = stage_seed(plan.seed, "enhancer/init");
            let subset_seed = stage_seed(plan.seed, "enhancer/subset");
            let fraction = plan.enhancer.subset_fraction;
            let key = key_of(&[&"enhancer", noisy_digest, &config, &params, &init_seed, &subset_seed, &fraction]);
            let mut trained = false;
            let (model, model_digest) = cache.model("enhancer", &key, |dir| {
                trained = true;
                let pick = |split: Split| -> Vec<ManifestEntry> {
                    noisy
                        .iter()
                        .filter(|e| e.split == split && in_subset(subset_seed, &e.id, fraction))
                        .cloned()
                        .collect()
                };
                let train = load_pairs(&pairs_from_manifest(&pick(Split::Train)))?;
                let valid = load_pairs(&pairs_from_manifest(&pick(Split::Valid)))?;
                if train.is_empty() {
                    return Err(Error::InvalidArgument("enhancer subset selects no training pairs".into()));
                }
                log::info!("training enhancer on {} pairs ({} validation)", train.len(), valid.len());
                let model = WaveUNet::build(config.clone(), init_seed)?;
                let out = train_enhancer(model, &train, &valid, &params)?;
                let p = dir.join("training.json");
                fs::write(&p, serde_json::to_vec_pretty(&out.log)?).map_err(|e| Error::io(&p, e))?;
                Ok(out.model)
            })?;
            cache.counts.enhancer_trainings += usize::from(trained);
            digests.insert("model/enhancer".into(), model_digest.clone());
            let key = key_of(&[&"enh", noisy_digest, &model_digest]);
            let mut built = false;
            let r = cache.corpus("enh", &key, |dir| {
                built = true;
                let out = produce_enhanced_corpus(&model, noisy, dir)?;
                if !out.failures.is_empty() {
                    log::warn!("enhancement skipped {} files", out.failures.len());
                }
                Ok(out.entries)
            })?;
            cache.counts.enhancements += usize::from(built);
            Ok(r)
        })();
        match result {
            Ok((entries, d)) => {
                digests.insert("corpus/enh".into(), d);
                corpora.insert(Condition::Enh, Ok(entries));
            }
            Err(e) => {
                stage_errors.push(("enh".into(), e.to_string()));
                corpora.insert(Condition::Enh, Err(e.to_string()));
            }
        }
        if let (Some(Ok(noisy)), Some(Ok(enh))) = (corpora.get(&Condition::Noisy), corpora.get(&Condition::Enh)) {
            let pesq = match &plan.pesq_cmd {
                Some(cmd) => Some(CommandPesq::new(cmd, 1)?),
                None => None,
            };
            enhancement = Some(score_enhancement(
                &split_of(noisy, &[Split::Test]),
                &split_of(enh, &[Split::Test]),
                pesq.as_ref().map(|p| p as _),
            ));
        }
    }

    let mut cells = Vec::new();
    for &t in &plan.training {
        let model = match &labels {
            Some(labels) => {
                let r = train_one(plan, t, &corpora, labels, out_dir);
                if r.is_ok() {
                    cache.counts.classifier_trainings += 1;
                }
                r
            }
            None => Err("clean corpus unavailable".to_string()),
        };
        match &model {
            Ok((_, d)) => {
                digests.insert(format!("model/classifier/{t}"), d.clone());
            }
            Err(e) => stage_errors.push((format!("classifier/{t}"), e.clone())),
        }
        for &ev in &plan.evaluation {
            let outcome = model.as_ref().map_err(|e| format!("classifier: {e}")).and_then(|(m, _)| {
                let entries = corpora
                    .get(&ev)
                    .ok_or_else(|| format!("{ev} corpus was not produced"))?
                    .as_ref()
                    .map_err(|e| format!("{ev} corpus unavailable: {e}"))?;
                let test = split_of(entries, &[Split::Test]);
                if let Some(bad) = test.iter().find(|e| e.condition != ev) {
                    return Err(format!("entry '{}' is tagged {}, expected {ev}", bad.id, bad.condition));
                }
                let report = evaluate(m, &test).map_err(|e| e.to_string())?;
                if report.total == 0 {
                    return Err("no evaluable test utterances".to_string());
                }
                Ok(report)
            });
            cells.push(match outcome {
                Ok(r) => CellResult {
                    training: t,
                    evaluation: ev,
                    accuracy: Some(r.accuracy),
                    correct: r.correct,
                    total: r.total,
                    in_paper: t.in_paper(ev),
                    error: None,
                },
                Err(e) => CellResult {
                    training: t,
                    evaluation: ev,
                    accuracy: None,
                    correct: 0,
                    total: 0,
                    in_paper: t.in_paper(ev),
                    error: Some(e),
                },
            });
        }
    }

    Ok(MatrixOutcome {
        table: ResultsTable {
            seed: plan.seed,
            training: plan.training.clone(),
            evaluation: plan.evaluation.clone(),
            cells,
            digests,
        },
        counts: cache.counts,
        enhancement,
        stage_errors,
    })
}

/// `NIL_CACHE_DIR` if set, otherwise `<out_dir>/cache`.
pub fn default_cache_dir(out_dir: &Path) -> PathBuf {
    std::env::var_os("NIL_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| out_dir.join("cache"))
}
