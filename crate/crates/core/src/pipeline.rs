//! Config-driven experiment chain. Every stage writes its artifacts under the
//! work directory and records them in `manifest.json` with their content
//! hash, the hashes of their inputs, the config hash and the global seed.
//! Stages refuse inputs that are missing, untracked, modified on disk or
//! produced under a different config hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{load_catalog, load_sessions, write_catalog, write_sessions, Catalog, ClickSession, Period};
use crate::corpus::{
    build_vocabulary, extract_phrases, filter_phrases, read_phrases, read_vocab, write_phrases, write_vocab,
    DEFAULT_MIN_PHRASE_COUNT,
};
use crate::dataset::{
    build_instances, filter_high_coverage, read_dataset_tsv, split_dataset, write_dataset_tsv, DatasetVariant,
    FeatureSelection, RankingDataset, Role, SplitFractions, MIN_ITEMS_TEST, MIN_ITEMS_TRAIN,
};
use crate::embed::{read_embeddings_text, train_skipgram_logged, write_embeddings_text, EmbedConfig, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{compare_models, evaluate, Comparison, EvalReport, DEFAULT_RESAMPLES};
use crate::lambdamart::{train_lambdamart, BoostConfig, TreeEnsemble};
use crate::seed;
use crate::synth::{by_period, generate_sessions, generate_world, WorldSpec};

pub const MANIFEST: &str = "manifest.json";
pub const CATALOG: &str = "catalog.jsonl";
pub const SESSIONS: &str = "sessions.jsonl";
pub const TRUTH: &str = "truth.json";
pub const PHRASES: &str = "phrases.txt";
pub const VOCAB: &str = "vocab.tsv";
pub const EMBEDDINGS: &str = "embeddings.txt";
pub const EMBED_LOG: &str = "embed_log.json";
pub const DATASETS: &str = "datasets.json";
pub const SWEEP: &str = "sweep.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

pub const DATASET_VARIANTS: [DatasetVariant; 2] = [DatasetVariant::Full, DatasetVariant::HighCoverage];

pub fn dataset_file(dv: DatasetVariant, role: Role) -> String {
    format!("dataset_{}_{}.tsv", dv.as_str(), role.as_str())
}

pub fn model_file(variant: FeatureSelection, dv: DatasetVariant) -> String {
    format!("model_{}_{}.json", variant.as_str(), dv.as_str())
}

pub fn rr_file(variant: FeatureSelection, dv: DatasetVariant) -> String {
    format!("rr_{}_{}.tsv", variant.as_str(), dv.as_str())
}

pub fn evaluation_file(dv: DatasetVariant) -> String {
    format!("evaluation_{}.json", dv.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub workdir: PathBuf,
    /// External inputs, used when no `[world]` section is given.
    pub catalog: Option<PathBuf>,
    pub sessions: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            workdir: PathBuf::from("srank-out"),
            catalog: None,
            sessions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Every module seed is derived from this one by labeled hashing.
    pub seed: u64,
    pub workers: usize,
    pub paths: Paths,
    pub world: Option<WorldSpec>,
    pub embed: EmbedConfig,
    pub boost: BoostConfig,
    pub fractions: SplitFractions,
    pub min_phrase_count: u64,
    pub min_items_train: usize,
    pub min_items_test: usize,
    pub dimension_sweep: Vec<usize>,
    pub model_variants: Vec<FeatureSelection>,
    pub resamples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            workers: 1,
            paths: Paths::default(),
            world: None,
            embed: EmbedConfig::default(),
            boost: BoostConfig::default(),
            fractions: SplitFractions::default(),
            min_phrase_count: DEFAULT_MIN_PHRASE_COUNT,
            min_items_train: MIN_ITEMS_TRAIN,
            min_items_test: MIN_ITEMS_TEST,
            dimension_sweep: vec![32, 16, 8, 4],
            model_variants: FeatureSelection::ALL_VARIANTS.to_vec(),
            resamples: DEFAULT_RESAMPLES,
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub dim: Option<usize>,
    pub variant: Option<FeatureSelection>,
    pub workdir: Option<PathBuf>,
}

/// The part of the config that determines artifact contents.
#[derive(Serialize)]
struct HashedConfig<'a> {
    seed: u64,
    world: &'a Option<WorldSpec>,
    embed: EmbedConfig,
    boost: &'a BoostConfig,
    fractions: SplitFractions,
    min_phrase_count: u64,
    min_items_train: usize,
    min_items_test: usize,
    dimension_sweep: &'a [usize],
    resamples: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
            self.embed.workers = w;
        }
        if let Some(d) = o.dim {
            self.embed.dimension = d;
        }
        if let Some(v) = o.variant {
            self.model_variants = vec![v];
        }
        if let Some(w) = &o.workdir {
            self.paths.workdir = w.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers must be >= 1"));
        }
        if self.dimension_sweep.contains(&0) {
            return Err(Error::config("dimension_sweep values must be >= 1"));
        }
        if self.model_variants.is_empty() {
            return Err(Error::config("model_variants is empty"));
        }
        if self.resamples == 0 {
            return Err(Error::config("resamples must be >= 1"));
        }
        if self.min_phrase_count == 0 {
            return Err(Error::config("min_phrase_count must be >= 1"));
        }
        if self.world.is_none() && (self.paths.catalog.is_none() || self.paths.sessions.is_none()) {
            return Err(Error::config(
                "either a [world] section or paths.catalog and paths.sessions are required",
            ));
        }
        if let Some(w) = &self.world {
            w.validate()?;
        }
        self.embed.validate()?;
        self.boost.validate()
    }

    pub fn world_spec(&self) -> Option<WorldSpec> {
        self.world.clone().map(|w| WorldSpec {
            seed: seed::derive(self.seed, "world"),
            ..w
        })
    }

    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig {
            seed: seed::derive(self.seed, "embed"),
            ..self.embed.clone()
        }
    }

    pub fn boost_config(&self) -> BoostConfig {
        BoostConfig {
            seed: seed::derive(self.seed, "boost"),
            ..self.boost.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, "split")
    }

    pub fn bootstrap_seed(&self) -> u64 {
        seed::derive(self.seed, "bootstrap")
    }

    pub fn compare_seed(&self) -> u64 {
        seed::derive(self.seed, "compare")
    }

    /// Hex sha256 of the content-determining settings. Paths, the variant
    /// subset and the worker count of deterministic runs are excluded.
    pub fn config_hash(&self) -> String {
        let mut embed = self.embed.clone();
        if embed.deterministic {
            embed.workers = 1;
        }
        let view = HashedConfig {
            seed: self.seed,
            world: &self.world,
            embed,
            boost: &self.boost,
            fractions: self.fractions,
            min_phrase_count: self.min_phrase_count,
            min_items_train: self.min_items_train,
            min_items_test: self.min_items_test,
            dimension_sweep: &self.dimension_sweep,
            resamples: self.resamples,
        };
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub sha256: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input name (work-directory relative, or the external path) to sha256.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Phrases,
    Embed,
    BuildData,
    Train,
    Evaluate,
    SweepDims,
    Report,
    All,
}

impl Command {
    pub const STAGES: [Command; 8] = [
        Command::Simulate,
        Command::Phrases,
        Command::Embed,
        Command::BuildData,
        Command::Train,
        Command::Evaluate,
        Command::SweepDims,
        Command::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Phrases => "phrases",
            Command::Embed => "embed",
            Command::BuildData => "build-data",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::SweepDims => "sweep-dims",
            Command::Report => "report",
            Command::All => "all",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::STAGES
            .into_iter()
            .chain([Command::All])
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown command {s:?}")))
    }
}

/// Row and coverage summary written by `build-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub variant: DatasetVariant,
    /// Query groups per role name.
    pub groups: BTreeMap<String, usize>,
    pub instances: BTreeMap<String, usize>,
    /// Fraction of instances with each feature present, over all roles.
    pub coverage: Vec<(String, f64)>,
}

impl DatasetSummary {
    fn usable(&self) -> bool {
        Role::ALL.iter().all(|r| self.groups.get(r.as_str()).copied().unwrap_or(0) > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub dimension: usize,
    pub mrr: f64,
    /// Relative to Baseline at the same dimension.
    pub relative_improvement: Option<f64>,
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model_name: String,
    pub cells: Vec<SweepCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub dataset_variant: DatasetVariant,
    pub dimensions: Vec<usize>,
    pub rows: Vec<SweepRow>,
    /// Set when the sweep could not train, e.g. an empty split.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset_variant: DatasetVariant,
    pub test_queries: usize,
    pub coverage: Vec<(String, f64)>,
    pub models: Vec<EvalReport>,
    pub comparisons: Vec<Comparison>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub config_hash: String,
    pub datasets: Vec<DatasetReport>,
    pub dimension_sweep: Option<SweepResult>,
}

/// Stage runner bound to one config and work directory.
pub struct Pipeline {
    cfg: ExperimentConfig,
    workdir: PathBuf,
    config_hash: String,
    manifest: Manifest,
}

struct Inputs(BTreeMap<String, String>);

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let workdir = cfg.paths.workdir.clone();
        std::fs::create_dir_all(&workdir).map_err(|e| Error::io(&workdir, e))?;
        let manifest = Manifest::load(workdir.join(MANIFEST))?;
        Ok(Pipeline {
            config_hash: cfg.config_hash(),
            cfg,
            workdir,
            manifest,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    pub fn run(&mut self, command: Command) -> Result<()> {
        match command {
            Command::Simulate => self.simulate(),
            Command::Phrases => self.phrases(),
            Command::Embed => self.embed(),
            Command::BuildData => self.build_data(),
            Command::Train => self.train(),
            Command::Evaluate => self.evaluate(),
            Command::SweepDims => self.sweep_dims(),
            Command::Report => self.report(),
            Command::All => {
                for stage in Command::STAGES {
                    let skip = (stage == Command::Simulate && self.cfg.world.is_none())
                        || (stage == Command::SweepDims && self.cfg.dimension_sweep.is_empty());
                    if !skip {
                        self.run(stage)?;
                    }
                }
                Ok(())
            }
        }
    }

    /// Verify a tracked work-directory artifact and note it as an input.
    fn tracked(&self, name: &str, kind: &str, producer: Command, inputs: &mut Inputs) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::Pipeline(format!(
                "missing {kind} artifact {name}; run `srank {}` first",
                producer.as_str()
            )));
        }
        let record = self
            .manifest
            .artifacts
            .get(name)
            .ok_or_else(|| Error::Pipeline(format!("artifact {name} is not recorded in {MANIFEST}")))?;
        if record.config_hash != self.config_hash {
            return Err(Error::Pipeline(format!(
                "stale artifact {name}: built under config {} but the current config is {}; rerun `srank {}`",
                &record.config_hash[..12],
                &self.config_hash[..12],
                producer.as_str()
            )));
        }
        let sha = sha256_file(&path)?;
        if sha != record.sha256 {
            return Err(Error::Pipeline(format!("artifact {name} changed on disk since it was recorded")));
        }
        inputs.0.insert(name.to_string(), sha);
        Ok(path)
    }

    fn external(&self, path: &Path, inputs: &mut Inputs) -> Result<PathBuf> {
        let sha = sha256_file(path)?;
        inputs.0.insert(path.display().to_string(), sha);
        Ok(path.to_path_buf())
    }

    fn catalog_path(&self, inputs: &mut Inputs) -> Result<PathBuf> {
        match &self.cfg.paths.catalog {
            Some(p) if self.cfg.world.is_none() => self.external(p, inputs),
            _ => self.tracked(CATALOG, "catalog", Command::Simulate, inputs),
        }
    }

    fn sessions_path(&self, inputs: &mut Inputs) -> Result<PathBuf> {
        match &self.cfg.paths.sessions {
            Some(p) if self.cfg.world.is_none() => self.external(p, inputs),
            _ => self.tracked(SESSIONS, "sessions", Command::Simulate, inputs),
        }
    }

    fn record(&mut self, name: &str, stage: Command, inputs: &Inputs) -> Result<()> {
        let sha = sha256_file(&self.path(name))?;
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactRecord {
                sha256: sha,
                stage: stage.as_str().to_string(),
                config_hash: self.config_hash.clone(),
                seed: self.cfg.seed,
                inputs: inputs.0.clone(),
            },
        );
        self.manifest.save(self.path(MANIFEST))
    }

    fn save_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn simulate(&mut self) -> Result<()> {
        let spec = self
            .cfg
            .world_spec()
            .ok_or_else(|| Error::config("simulate needs a [world] section"))?;
        let (catalog, mut truth) = generate_world(&spec)?;
        let sessions = generate_sessions(&catalog, &mut truth, &spec)?;
        write_catalog(&catalog, self.path(CATALOG))?;
        write_sessions(&sessions, self.path(SESSIONS))?;
        truth.save(self.path(TRUTH))?;
        let none = Inputs(BTreeMap::new());
        for name in [CATALOG, SESSIONS, TRUTH] {
            self.record(name, Command::Simulate, &none)?;
        }
        Ok(())
    }

    fn phrases(&mut self) -> Result<()> {
        let mut inputs = Inputs(BTreeMap::new());
        let sessions = load_sessions(self.sessions_path(&mut inputs)?)?;
        let corpus = extract_phrases(&by_period(&sessions, Period::EmbeddingWeek))?;
        let vocab = build_vocabulary(&corpus, self.cfg.min_phrase_count)?;
        write_phrases(&filter_phrases(&corpus, &vocab), self.path(PHRASES))?;
        write_vocab(&vocab, self.path(VOCAB))?;
        self.record(PHRASES, Command::Phrases, &inputs)?;
        self.record(VOCAB, Command::Phrases, &inputs)
    }

    fn train_embeddings(&self, dimension: usize, inputs: &mut Inputs) -> Result<(EmbeddingTable, Vec<f64>)> {
        let corpus = read_phrases(self.tracked(PHRASES, "phrase", Command::Phrases, inputs)?)?;
        let vocab = read_vocab(
            self.tracked(VOCAB, "vocabulary", Command::Phrases, inputs)?,
            self.cfg.min_phrase_count,
        )?;
        let config = EmbedConfig {
            dimension,
            ..self.cfg.embed_config()
        };
        train_skipgram_logged(&corpus, &vocab, &config)
    }

    fn embed(&mut self) -> Result<()> {
        let mut inputs = Inputs(BTreeMap::new());
        let (table, losses) = self.train_embeddings(self.cfg.embed.dimension, &mut inputs)?;
        write_embeddings_text(&table, self.path(EMBEDDINGS))?;
        self.save_json(EMBED_LOG, &serde_json::json!({ "epoch_mean_loss": losses }))?;
        self.record(EMBEDDINGS, Command::Embed, &inputs)?;
        self.record(EMBED_LOG, Command::Embed, &inputs)
    }

    fn ranking_inputs(&self, inputs: &mut Inputs) -> Result<(Catalog, Vec<ClickSession>)> {
        let catalog = load_catalog(self.catalog_path(inputs)?)?;
        let sessions = load_sessions(self.sessions_path(inputs)?)?;
        Ok((catalog, by_period(&sessions, Period::RankingWeek)))
    }

    /// Split the full dataset, then filter each split for high coverage.
    fn make_datasets(
        &self,
        catalog: &Catalog,
        sessions: &[ClickSession],
        table: &EmbeddingTable,
    ) -> Result<BTreeMap<&'static str, [RankingDataset; 3]>> {
        let full = build_instances(sessions, catalog, table, FeatureSelection::All)?;
        let (train, validation, test) = split_dataset(&full, self.cfg.fractions, self.cfg.split_seed())?;
        let hc = |d: &RankingDataset| filter_high_coverage(d, table, self.cfg.min_items_train, self.cfg.min_items_test);
        let high = [hc(&train), hc(&validation), hc(&test)];
        Ok(BTreeMap::from([
            (DatasetVariant::Full.as_str(), [train, validation, test]),
            (DatasetVariant::HighCoverage.as_str(), high),
        ]))
    }

    fn build_data(&mut self) -> Result<()> {
        let mut inputs = Inputs(BTreeMap::new());
        let (catalog, sessions) = self.ranking_inputs(&mut inputs)?;
        let table = read_embeddings_text(self.tracked(EMBEDDINGS, "embedding", Command::Embed, &mut inputs)?)?;
        let sets = self.make_datasets(&catalog, &sessions, &table)?;
        let mut summaries = Vec::new();
        for dv in DATASET_VARIANTS {
            let parts = &sets[dv.as_str()];
            for (role, ds) in Role::ALL.iter().zip(parts) {
                write_dataset_tsv(ds, self.path(&dataset_file(dv, *role)))?;
            }
            summaries.push(summarize_dataset(dv, parts));
        }
        self.save_json(DATASETS, &summaries)?;
        for dv in DATASET_VARIANTS {
            for role in Role::ALL {
                self.record(&dataset_file(dv, role), Command::BuildData, &inputs)?;
            }
        }
        self.record(DATASETS, Command::BuildData, &inputs)
    }

    fn summaries(&self, inputs: &mut Inputs) -> Result<Vec<DatasetSummary>> {
        Self::load_json(&self.tracked(DATASETS, "dataset", Command::BuildData, inputs)?)
    }

    fn read_split(&self, dv: DatasetVariant, role: Role, inputs: &mut Inputs) -> Result<RankingDataset> {
        let path = self.tracked(&dataset_file(dv, role), "dataset", Command::BuildData, inputs)?;
        read_dataset_tsv(path, dv, Some(role))
    }

    fn train(&mut self) -> Result<()> {
        let mut shared = Inputs(BTreeMap::new());
        let summaries = self.summaries(&mut shared)?;
        let boost = self.cfg.boost_config();
        for summary in summaries.iter().filter(|s| s.usable()) {
            let dv = summary.variant;
            let mut inputs = Inputs(shared.0.clone());
            let train = self.read_split(dv, Role::Train, &mut inputs)?;
            let validation = self.read_split(dv, Role::Validation, &mut inputs)?;
            let variants = self.cfg.model_variants.clone();
            let models = parallel_map(&variants, self.cfg.workers, |&v| {
                train_lambdamart(&train.select(v)?, &validation.select(v)?, &boost)
            })?;
            for (v, model) in variants.iter().zip(models) {
                let name = model_file(*v, dv);
                model.save(self.path(&name))?;
                self.record(&name, Command::Train, &inputs)?;
            }
        }
        Ok(())
    }

    fn evaluate(&mut self) -> Result<()> {
        let mut shared = Inputs(BTreeMap::new());
        let summaries = self.summaries(&mut shared)?;
        for summary in summaries.iter().filter(|s| s.usable()) {
            let dv = summary.variant;
            let mut inputs = Inputs(shared.0.clone());
            let test = self.read_split(dv, Role::Test, &mut inputs)?;
            let mut reports = Vec::new();
            for v in self.cfg.model_variants.clone() {
                let name = model_file(v, dv);
                let model = TreeEnsemble::load(self.tracked(&name, "model", Command::Train, &mut inputs)?)?;
                let mut report = evaluate(
                    &model,
                    &test.select(v)?,
                    v.model_name(),
                    self.cfg.resamples,
                    self.cfg.bootstrap_seed(),
                )?;
                let rr = rr_file(v, dv);
                report.write_per_query(self.path(&rr))?;
                report.per_query_rr_path = Some(rr);
                reports.push(report);
            }
            let eval_name = evaluation_file(dv);
            self.save_json(&eval_name, &reports)?;
            for r in &reports {
                self.record(r.per_query_rr_path.as_deref().unwrap(), Command::Evaluate, &inputs)?;
            }
            self.record(&eval_name, Command::Evaluate, &inputs)?;
        }
        Ok(())
    }

    fn sweep_dims(&mut self) -> Result<()> {
        let mut inputs = Inputs(BTreeMap::new());
        let (catalog, sessions) = self.ranking_inputs(&mut inputs)?;
        let dims = self.cfg.dimension_sweep.clone();
        let variants = self.cfg.model_variants.clone();
        let boost = self.cfg.boost_config();
        let dv = DatasetVariant::HighCoverage;
        let inputs_lock = Mutex::new(&mut inputs);

        // one result per dimension: Ok(None) when a split is empty
        let per_dim = parallel_map(&dims, self.cfg.workers, |&dim| -> Result<Option<Vec<EvalReport>>> {
            let mut local = Inputs(BTreeMap::new());
            let (table, _) = self.train_embeddings(dim, &mut local)?;
            inputs_lock.lock().unwrap().0.extend(local.0);
            let sets = self.make_datasets(&catalog, &sessions, &table)?;
            let [train, validation, test] = &sets[dv.as_str()];
            if train.is_empty() || validation.is_empty() || test.is_empty() {
                return Ok(None);
            }
            let mut reports = Vec::new();
            for &v in &variants {
                let model = train_lambdamart(&train.select(v)?, &validation.select(v)?, &boost)?;
                reports.push(evaluate(
                    &model,
                    &test.select(v)?,
                    v.model_name(),
                    self.cfg.resamples,
                    self.cfg.bootstrap_seed(),
                )?);
            }
            Ok(Some(reports))
        })?;

        let mut result = SweepResult {
            dataset_variant: dv,
            dimensions: dims.clone(),
            rows: Vec::new(),
            skipped: None,
        };
        if per_dim.iter().any(Option::is_none) {
            result.skipped = Some("high-coverage split is empty at some dimension".into());
        } else {
            let per_dim: Vec<Vec<EvalReport>> = per_dim.into_iter().flatten().collect();
            for (k, v) in variants.iter().enumerate() {
                let mut cells = Vec::new();
                for (d, reports) in dims.iter().zip(&per_dim) {
                    let treated = &reports[k];
                    let base = variants
                        .iter()
                        .position(|b| *b == FeatureSelection::Baseline)
                        .map(|b| &reports[b]);
                    let cmp = base
                        .filter(|_| *v != FeatureSelection::Baseline)
                        .map(|b| compare_models(b, treated, self.cfg.resamples, self.cfg.compare_seed()))
                        .transpose()?;
                    cells.push(SweepCell {
                        dimension: *d,
                        mrr: treated.mrr,
                        relative_improvement: cmp.as_ref().map(|c| c.relative_improvement),
                        significant: cmp.as_ref().map(|c| c.significant),
                    });
                }
                result.rows.push(SweepRow {
                    model_name: v.model_name().to_string(),
                    cells,
                });
            }
        }
        self.save_json(SWEEP, &result)?;
        self.record(SWEEP, Command::SweepDims, &inputs)
    }

    fn report(&mut self) -> Result<()> {
        let mut inputs = Inputs(BTreeMap::new());
        let summaries = self.summaries(&mut inputs)?;
        let mut datasets = Vec::new();
        for summary in &summaries {
            let dv = summary.variant;
            let mut dr = DatasetReport {
                dataset_variant: dv,
                test_queries: summary.groups.get(Role::Test.as_str()).copied().unwrap_or(0),
                coverage: summary.coverage.clone(),
                models: Vec::new(),
                comparisons: Vec::new(),
                skipped: None,
            };
            if !summary.usable() {
                dr.skipped = Some("a train, validation or test split is empty".into());
                datasets.push(dr);
                continue;
            }
            let eval_path = self.tracked(&evaluation_file(dv), "evaluation", Command::Evaluate, &mut inputs)?;
            let mut reports: Vec<EvalReport> = Self::load_json(&eval_path)?;
            for r in &mut reports {
                let rr = r
                    .per_query_rr_path
                    .clone()
                    .ok_or_else(|| Error::Pipeline(format!("{} lacks per-query results", r.model_name)))?;
                r.per_query_rr = EvalReport::read_per_query(self.tracked(&rr, "evaluation", Command::Evaluate, &mut inputs)?)?;
            }
            if let Some(base) = reports.iter().find(|r| r.model_name == FeatureSelection::Baseline.model_name()) {
                for r in reports.iter().filter(|r| r.model_name != base.model_name) {
                    dr.comparisons
                        .push(compare_models(base, r, self.cfg.resamples, self.cfg.compare_seed())?);
                }
            }
            dr.models = reports;
            datasets.push(dr);
        }
        let dimension_sweep = if self.cfg.dimension_sweep.is_empty() {
            None
        } else {
            Some(Self::load_json(&self.tracked(SWEEP, "sweep", Command::SweepDims, &mut inputs)?)?)
        };
        let report = Report {
            seed: self.cfg.seed,
            config_hash: self.config_hash.clone(),
            datasets,
            dimension_sweep,
        };
        self.save_json(REPORT_JSON, &report)?;
        let txt = self.path(REPORT_TXT);
        std::fs::write(&txt, render_report(&report)).map_err(|e| Error::io(&txt, e))?;
        self.record(REPORT_JSON, Command::Report, &inputs)?;
        self.record(REPORT_TXT, Command::Report, &inputs)
    }
}

fn summarize_dataset(dv: DatasetVariant, parts: &[RankingDataset; 3]) -> DatasetSummary {
    let mut groups = BTreeMap::new();
    let mut instances = BTreeMap::new();
    for (role, ds) in Role::ALL.iter().zip(parts) {
        groups.insert(role.as_str().to_string(), ds.groups.len());
        instances.insert(role.as_str().to_string(), ds.instance_count());
    }
    let merged = RankingDataset {
        groups: parts.iter().flat_map(|p| p.groups.iter().cloned()).collect(),
        feature_schema: parts[0].feature_schema.clone(),
        variant: dv,
        role: None,
    };
    DatasetSummary {
        variant: dv,
        groups,
        instances,
        coverage: merged.coverage(),
    }
}

/// Order-preserving map over at most `workers` threads.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

fn pct(x: f64) -> String {
    format!("{:+.1}%", 100.0 * x)
}

pub fn render_report(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed {}  config {}", report.seed, &report.config_hash[..12]);
    for d in &report.datasets {
        let _ = writeln!(out, "\n== dataset {} ({} test queries) ==", d.dataset_variant.as_str(), d.test_queries);
        if let Some(why) = &d.skipped {
            let _ = writeln!(out, "skipped: {why}");
        } else {
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>8} {:>8} {:>8}",
                "model", "mrr", "median", "ci_low", "ci_high"
            );
            for m in &d.models {
                let b = &m.bootstrap;
                let _ = writeln!(
                    out,
                    "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                    m.model_name, m.mrr, b.median, b.ci_low, b.ci_high
                );
            }
            if !d.comparisons.is_empty() {
                let _ = writeln!(
                    out,
                    "\n{:<14} {:>9} {:>9} {:>10} {:>10} {:>5}",
                    "vs Baseline", "relative", "absolute", "diff_low", "diff_high", "sig"
                );
                for c in &d.comparisons {
                    let _ = writeln!(
                        out,
                        "{:<14} {:>9} {:>+9.4} {:>+10.4} {:>+10.4} {:>5}",
                        c.treated_model,
                        pct(c.relative_improvement),
                        c.absolute_improvement,
                        c.difference.ci_low,
                        c.difference.ci_high,
                        if c.significant { "yes" } else { "no" }
                    );
                }
            }
        }
        let _ = writeln!(out, "\nfeature coverage");
        for (name, frac) in &d.coverage {
            let _ = writeln!(out, "  {:<20} {:>6.1}%", name, 100.0 * frac);
        }
    }
    if let Some(s) = &report.dimension_sweep {
        let _ = writeln!(
            out,
            "\n== MRR improvement over Baseline by embedding dimension ({}) ==",
            s.dataset_variant.as_str()
        );
        if let Some(why) = &s.skipped {
            let _ = writeln!(out, "skipped: {why}");
        } else {
            let mut header = format!("{:<14}", "model");
            for d in &s.dimensions {
                let _ = write!(header, " {:>10}", format!("{d} dim."));
            }
            let _ = writeln!(out, "{header}");
            for row in s.rows.iter().filter(|r| r.cells.iter().any(|c| c.relative_improvement.is_some())) {
                let mut line = format!("{:<14}", row.model_name);
                for c in &row.cells {
                    let mark = if c.significant == Some(true) { "*" } else { " " };
                    let v = c.relative_improvement.map_or("-".into(), pct);
                    let _ = write!(line, " {:>9}{mark}", v);
                }
                let _ = writeln!(out, "{line}");
            }
            let _ = writeln!(out, "(* paired bootstrap 95% interval excludes zero)");
        }
    }
    out
}
