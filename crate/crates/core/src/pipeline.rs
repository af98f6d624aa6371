//! Staged batch runs driven by a single config file.
//!
//! Each stage reads upstream artifacts from the output directory, writes its
//! own CSV (and model) files, and records a `manifest_<stage>.json` holding
//! the config hash, seeds and artifact digests. A stage refuses to run when
//! an upstream manifest is missing or when the directory holds manifests of
//! a different config.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{self, derive_seed, ForestParams};
use crate::botcrit::{self, BotParams};
use crate::classifier::{self, gbt::GbtModel, GbtParams, DEFAULT_THRESHOLD};
use crate::corpus::{self, AccountId, Corpus, DateWindow, IngestConfig};
use crate::error::{Error, Result};
use crate::features::{self, FeatureParams};
use crate::netcomm::{self, CommunityClass, SbmParams};
use crate::nullmodel;
use crate::seeding::{self, LabelSet, ManualLabel, SeedLexicon};
use crate::synth::{self, GroundTruth, SynthSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Ingest,
    Seed,
    Featurize,
    Train,
    Predict,
    Associate,
    Anomaly,
    Nullmodel,
    Botflag,
    Network,
    Report,
    Evaluate,
}

impl Stage {
    /// Canonical execution order.
    pub const ALL: [Stage; 13] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Seed,
        Stage::Featurize,
        Stage::Train,
        Stage::Predict,
        Stage::Associate,
        Stage::Anomaly,
        Stage::Nullmodel,
        Stage::Botflag,
        Stage::Network,
        Stage::Report,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Seed => "seed",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Associate => "associate",
            Stage::Anomaly => "anomaly",
            Stage::Nullmodel => "nullmodel",
            Stage::Botflag => "botflag",
            Stage::Network => "network",
            Stage::Report => "report",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn requires(self, config: &PipelineConfig) -> Vec<Stage> {
        use Stage::*;
        match self {
            Synth => vec![],
            Ingest if config.paths.input.is_none() => vec![Synth],
            Ingest => vec![],
            Seed => vec![Ingest],
            Featurize => vec![Ingest, Seed],
            Train => vec![Seed, Featurize],
            Predict => vec![Seed, Featurize, Train],
            Associate => vec![Featurize, Predict],
            Anomaly => vec![Ingest],
            Nullmodel => vec![Predict, Anomaly],
            Botflag => vec![Ingest, Predict, Anomaly],
            Network => vec![Ingest, Botflag],
            Report => vec![Ingest, Seed, Predict, Associate, Nullmodel, Botflag, Network],
            Evaluate => vec![Synth, Predict, Botflag, Network],
        }
    }

    /// Every stage needed for an end-to-end run of `config`: the synthetic
    /// stages only when no input corpus is configured.
    pub fn default_plan(config: &PipelineConfig) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| config.paths.input.is_none() || !matches!(s, Stage::Synth | Stage::Evaluate))
            .collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Corpus JSONL. When unset, `ingest` reads the corpus written by `synth`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub max_malformed_fraction: f64,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            max_malformed_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSettings {
    pub threshold: f64,
    /// Additive smoothing of the log-odds association.
    pub smoothing: f64,
    pub gbt: GbtParams,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings {
            threshold: DEFAULT_THRESHOLD,
            smoothing: 0.5,
            gbt: GbtParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NullModelSettings {
    pub permutations: usize,
}

impl Default for NullModelSettings {
    fn default() -> Self {
        NullModelSettings { permutations: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSettings {
    pub b_min: usize,
    pub b_max: usize,
    pub max_sweeps: usize,
    pub min_community_size: usize,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        let sbm = SbmParams::default();
        NetworkSettings {
            b_min: sbm.b_min,
            b_max: sbm.b_max,
            max_sweeps: sbm.max_sweeps,
            min_community_size: 10,
        }
    }
}

impl NetworkSettings {
    pub fn sbm(&self) -> SbmParams {
        SbmParams {
            b_min: self.b_min,
            b_max: self.b_max,
            max_sweeps: self.max_sweeps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage seed derives from it.
    #[serde(default)]
    pub seed: Option<u64>,
    pub paths: Paths,
    #[serde(default)]
    pub window: Option<DateWindow>,
    #[serde(default)]
    pub ingest: IngestSettings,
    #[serde(default)]
    pub lexicon: SeedLexicon,
    #[serde(default)]
    pub overrides: Vec<ManualLabel>,
    #[serde(default)]
    pub features: FeatureParams,
    #[serde(default)]
    pub classifier: ClassifierSettings,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub bots: BotParams,
    #[serde(default)]
    pub nullmodel: NullModelSettings,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub synth: SynthSpec,
}

impl PipelineConfig {
    /// Config with every default, writing to `output`.
    pub fn with_output(output: impl Into<PathBuf>, seed: u64) -> Self {
        PipelineConfig {
            seed: Some(seed),
            paths: Paths {
                input: None,
                output: output.into(),
            },
            window: None,
            ingest: IngestSettings::default(),
            lexicon: SeedLexicon::default(),
            overrides: Vec::new(),
            features: FeatureParams::default(),
            classifier: ClassifierSettings::default(),
            forest: ForestParams::default(),
            bots: BotParams::default(),
            nullmodel: NullModelSettings::default(),
            network: NetworkSettings::default(),
            synth: SynthSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.paths.output.is_relative() {
            cfg.paths.output = base.join(&cfg.paths.output);
        }
        if let Some(input) = cfg.paths.input.as_mut().filter(|p| p.is_relative()) {
            *input = base.join(&*input);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seed.is_none() {
            return fail("`seed` is required (or pass a seed override)".into());
        }
        if let Some(w) = self.window {
            DateWindow::new(w.start, w.end)?;
        }
        let f = self.ingest.max_malformed_fraction;
        if !(0.0..=1.0).contains(&f) {
            return fail(format!("ingest.max_malformed_fraction must be in [0, 1], got {f}"));
        }
        self.lexicon.validate()?;
        let c = &self.classifier;
        if !(0.5..=1.0).contains(&c.threshold) {
            return fail(format!("classifier.threshold must be in [0.5, 1], got {}", c.threshold));
        }
        if !(c.smoothing > 0.0) {
            return fail(format!("classifier.smoothing must be positive, got {}", c.smoothing));
        }
        let g = &c.gbt;
        if g.rounds == 0 || g.max_depth == 0 || !(g.shrinkage > 0.0) || !(g.l2 >= 0.0) || !(g.subsample > 0.0 && g.subsample <= 1.0) {
            return fail("classifier.gbt needs rounds >= 1, max_depth >= 1, shrinkage > 0, l2 >= 0, subsample in (0, 1]".into());
        }
        if self.forest.trees == 0 || self.forest.sample_size < 2 {
            return fail("forest needs trees >= 1 and sample_size >= 2".into());
        }
        self.bots.validate()?;
        if self.nullmodel.permutations < 2 {
            return fail("nullmodel.permutations must be at least 2".into());
        }
        let n = &self.network;
        if n.b_min == 0 || n.b_min > n.b_max || n.min_community_size == 0 {
            return fail("network needs 1 <= b_min <= b_max and min_community_size >= 1".into());
        }
        self.synth.validate()
    }

    /// Study window applied at ingest: the configured one, or the synthetic
    /// spec's window when the corpus is synthetic.
    pub fn effective_window(&self) -> Option<DateWindow> {
        self.window.or_else(|| self.paths.input.is_none().then_some(self.synth.window))
    }

    /// SHA-256 over the analysis settings (everything except paths).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths {
            input: None,
            output: PathBuf::new(),
        };
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Seed of `stage`, from the master seed and a hash of the stage name.
pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    let digest = Sha256::digest(stage.name().as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    derive_seed(master, u64::from_le_bytes(head))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub stage_seed: u64,
    /// Artifact file name to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub created_at: String,
}

pub fn manifest_name(stage: Stage) -> String {
    format!("manifest_{}.json", stage.name())
}

/// A failed stage and its cause.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    seed: u64,
    hash: String,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

struct StageRun<'a> {
    p: &'a Pipeline,
    stage: Stage,
    artifacts: BTreeMap<String, String>,
}

impl StageRun<'_> {
    fn seed(&self) -> u64 {
        stage_seed(self.p.seed, self.stage)
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.p.out().join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        drop(w);
        self.artifacts.insert(name.to_string(), sha256_file(&path)?);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let manifest = Manifest {
            stage: self.stage.name().to_string(),
            config_hash: self.p.hash.clone(),
            master_seed: self.p.seed,
            stage_seed: self.seed(),
            artifacts: self.artifacts,
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let path = self.p.out().join(manifest_name(self.stage));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn io_err(name: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(name, e)
}

impl Pipeline {
    /// Validates the config before any work is done.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed.expect("validated seed");
        let hash = config.config_hash();
        Ok(Pipeline { config, seed, hash })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn out(&self) -> &Path {
        &self.config.paths.output
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out().join(name)
    }

    /// Runs the given stages in canonical order.
    pub fn run(&self, stages: &[Stage]) -> std::result::Result<(), StageError> {
        let mut plan = stages.to_vec();
        plan.sort();
        plan.dedup();
        for stage in plan {
            info!("running stage {stage}");
            self.run_stage(stage).map_err(|source| StageError { stage, source })?;
        }
        Ok(())
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        fs::create_dir_all(self.out()).map_err(|e| Error::io(self.out(), e))?;
        self.check_directory()?;
        for req in stage.requires(&self.config) {
            self.check_upstream(stage, req)?;
        }
        let mut run = StageRun {
            p: self,
            stage,
            artifacts: BTreeMap::new(),
        };
        match stage {
            Stage::Synth => self.synth(&mut run)?,
            Stage::Ingest => self.ingest(&mut run)?,
            Stage::Seed => self.seed_stage(&mut run)?,
            Stage::Featurize => self.featurize(&mut run)?,
            Stage::Train => self.train(&mut run)?,
            Stage::Predict => self.predict(&mut run)?,
            Stage::Associate => self.associate(&mut run)?,
            Stage::Anomaly => self.anomaly(&mut run)?,
            Stage::Nullmodel => self.nullmodel(&mut run)?,
            Stage::Botflag => self.botflag(&mut run)?,
            Stage::Network => self.network(&mut run)?,
            Stage::Report => self.report(&mut run)?,
            Stage::Evaluate => self.evaluate(&mut run)?,
        }
        run.finish()
    }

    /// Rejects a directory holding manifests written under another config.
    fn check_directory(&self) -> Result<()> {
        for stage in Stage::ALL {
            let path = self.path(&manifest_name(stage));
            if path.exists() {
                let m = read_manifest(&path)?;
                if m.config_hash != self.hash {
                    return Err(Error::MixedConfig {
                        dir: self.out().to_path_buf(),
                        found: m.config_hash,
                        expected: self.hash.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_upstream(&self, stage: Stage, req: Stage) -> Result<()> {
        let path = self.path(&manifest_name(req));
        if !path.exists() {
            return Err(Error::MissingStage {
                stage: stage.name(),
                requires: req.name(),
                detail: format!("{} not found", path.display()),
            });
        }
        let m = read_manifest(&path)?;
        for (name, digest) in &m.artifacts {
            let p = self.path(name);
            if !p.exists() || sha256_file(&p)? != *digest {
                return Err(Error::MissingStage {
                    stage: stage.name(),
                    requires: req.name(),
                    detail: format!("artifact {name} is missing or was modified"),
                });
            }
        }
        Ok(())
    }

    // ---- artifact loaders ----

    fn load_corpus(&self) -> Result<Corpus> {
        let cfg = IngestConfig {
            window: self.config.effective_window(),
            max_malformed_fraction: Some(0.0),
        };
        corpus::ingest_jsonl(&self.path("corpus.jsonl"), &cfg)
    }

    fn load_labels(&self) -> Result<LabelSet> {
        LabelSet::read_csv(open(&self.path("labels.csv"))?)
    }

    fn load_features(&self) -> Result<features::FeatureMatrix> {
        features::read_feature_matrix(
            open(&self.path("features.mtx"))?,
            open(&self.path("feature_rows.csv"))?,
            open(&self.path("feature_columns.csv"))?,
        )
    }

    fn load_predictions(&self) -> Result<Vec<classifier::StancePrediction>> {
        classifier::read_predictions_csv(open(&self.path("predictions.csv"))?)
    }

    fn load_anomaly(&self) -> Result<Vec<anomaly::AnomalyRecord>> {
        anomaly::read_records_csv(open(&self.path("anomaly.csv"))?)
    }

    fn load_bot_flags(&self) -> Result<BTreeMap<AccountId, bool>> {
        botcrit::read_bot_flags(open(&self.path("bot_verdicts.csv"))?)
    }

    fn load_partition(&self) -> Result<BTreeMap<AccountId, usize>> {
        let mut rd = csv::Reader::from_reader(open(&self.path("partition.csv"))?);
        let mut out = BTreeMap::new();
        for row in rd.records() {
            let row = row?;
            let bad = || Error::Format {
                what: "partition csv",
                detail: format!("bad row {:?}", row.iter().collect::<Vec<_>>()),
            };
            let id: u64 = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let b: usize = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            out.insert(AccountId(id), b);
        }
        Ok(out)
    }

    // ---- stages ----

    fn synth(&self, run: &mut StageRun) -> Result<()> {
        let (corpus, truth) = synth::generate_corpus(&self.config.synth, run.seed())?;
        info!("synthetic corpus: {} accounts, {} tweets", corpus.accounts.len(), corpus.tweets.len());
        run.write("synth_corpus.jsonl", |w| corpus::write_jsonl(&corpus, w).map_err(io_err("synth_corpus.jsonl")))?;
        run.write("synth_truth.csv", |w| truth.write_csv(w))
    }

    fn ingest(&self, run: &mut StageRun) -> Result<()> {
        let input = self.config.paths.input.clone().unwrap_or_else(|| self.path("synth_corpus.jsonl"));
        let window = self.config.effective_window();
        let cfg = IngestConfig {
            window,
            max_malformed_fraction: Some(self.config.ingest.max_malformed_fraction),
        };
        let (raw, report) = corpus::ingest_jsonl_with_report(&input, &cfg)?;
        let corpus = match window {
            Some(w) => corpus::filter_corpus(&raw, w)?,
            None => raw,
        };
        if report.malformed > 0 {
            warn!("{} of {} lines malformed in {}", report.malformed, report.lines, input.display());
        }
        let stats = corpus::corpus_stats(&corpus);
        run.write("corpus.jsonl", |w| corpus::write_jsonl(&corpus, w).map_err(io_err("corpus.jsonl")))?;
        run.write("corpus_stats.csv", |w| stats.write_csv(w))?;
        run.write("weekly_volume.csv", |w| stats.write_weekly_csv(w))?;
        run.write("ingest_report.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["metric", "value"])?;
            for (k, v) in [
                ("lines", report.lines),
                ("malformed", report.malformed),
                ("duplicates", report.duplicates),
                ("tweets_kept", corpus.tweets.len()),
                ("accounts_kept", corpus.accounts.len()),
            ] {
                c.write_record([k, &v.to_string()])?;
            }
            c.flush().map_err(io_err("ingest_report.csv"))
        })
    }

    fn seed_stage(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.load_corpus()?;
        let labels = seeding::apply_seeds(&corpus, &self.config.lexicon, &self.config.overrides)?;
        info!("{} accounts seed-labeled", labels.len());
        let tags = seeding::extract_profile_hashtags(&corpus);
        run.write("labels.csv", |w| labels.write_csv(w))?;
        run.write("profile_hashtags.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["hashtag", "accounts"])?;
            for (t, n) in &tags {
                c.write_record([t.as_str(), &n.to_string()])?;
            }
            c.flush().map_err(io_err("profile_hashtags.csv"))
        })
    }

    fn featurize(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.load_corpus()?;
        let labels = self.load_labels()?;
        let blocks = features::build_all_blocks(&corpus, &labels, &self.config.features);
        let fm = features::assemble_features(&blocks, &self.config.lexicon.all_terms())?;
        info!("feature matrix {} x {} ({} nonzeros)", fm.n_rows(), fm.n_cols(), fm.matrix.nnz());
        run.write("features.mtx", |w| features::write_triplets(&fm, w).map_err(io_err("features.mtx")))?;
        run.write("feature_rows.csv", |w| features::write_rows_csv(&fm, w))?;
        run.write("feature_columns.csv", |w| features::write_columns_csv(&fm, w))
    }

    fn train(&self, run: &mut StageRun) -> Result<()> {
        let fm = self.load_features()?;
        let labels = self.load_labels()?;
        let (model, log) = classifier::train_stance_model(&fm, &labels, &self.config.classifier.gbt, run.seed())?;
        run.write("model.txt", |w| model.write_text(w).map_err(io_err("model.txt")))?;
        run.write("train_log.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["round", "log_loss"])?;
            for (i, l) in log.loss.iter().enumerate() {
                c.write_record([i.to_string(), l.to_string()])?;
            }
            c.flush().map_err(io_err("train_log.csv"))
        })
    }

    fn predict(&self, run: &mut StageRun) -> Result<()> {
        let fm = self.load_features()?;
        let labels = self.load_labels()?;
        let model = GbtModel::<f64>::read_text(open(&self.path("model.txt"))?)?;
        let preds = classifier::predict_stances(&model, &fm, &labels, self.config.classifier.threshold)?;
        let shares = classifier::stance_shares(&preds);
        run.write("predictions.csv", |w| classifier::write_predictions_csv(&preds, w))?;
        run.write("stance_shares.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["label", "percent"])?;
            for (l, v) in [("apruebo", shares.apruebo), ("rechazo", shares.rechazo), ("undisclosed", shares.undisclosed)] {
                c.write_record([l, &v.to_string()])?;
            }
            c.flush().map_err(io_err("stance_shares.csv"))
        })
    }

    fn associate(&self, run: &mut StageRun) -> Result<()> {
        let fm = self.load_features()?;
        let preds = self.load_predictions()?;
        let rows = classifier::associate_features(&fm, &preds, self.config.classifier.smoothing)?;
        run.write("term_associations.csv", |w| classifier::write_associations_csv(&rows, w))
    }

    fn anomaly(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.load_corpus()?;
        let comps = anomaly::interaction_components(&corpus);
        let feats = anomaly::behavior_features(&corpus, &comps)?;
        let records = anomaly::fit_and_score(&feats, &self.config.forest, run.seed())?;
        let curves = anomaly::anomaly_curves(&records, &corpus);
        run.write("anomaly.csv", |w| anomaly::write_records_csv(&records, w))?;
        run.write("anomaly_curves.csv", |w| anomaly::write_curves_csv(&curves, w))
    }

    fn nullmodel(&self, run: &mut StageRun) -> Result<()> {
        let records = self.load_anomaly()?;
        let preds = self.load_predictions()?;
        let ranking: Vec<AccountId> = records.iter().map(|r| r.account_id).collect();
        let env = nullmodel::permutation_envelope(&ranking, &preds, self.config.nullmodel.permutations, run.seed())?;
        run.write("nullmodel.csv", |w| env.write_csv(w))?;
        run.write("nullmodel_runs.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["first_k", "last_k", "length"])?;
            for (a, b) in env.outside_runs() {
                c.write_record([a.to_string(), b.to_string(), (b - a + 1).to_string()])?;
            }
            c.flush().map_err(io_err("nullmodel_runs.csv"))
        })
    }

    fn botflag(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.load_corpus()?;
        let records = self.load_anomaly()?;
        let preds = self.load_predictions()?;
        let params = &self.config.bots;
        let groups = botcrit::assign_anomaly_groups(&records, params.anomaly_fraction)?;
        let verdicts = botcrit::flag_bots(&groups, &corpus.accounts, params)?;
        let regs = botcrit::registrations_by_week(&corpus.accounts, &groups, &preds)?;
        let content = botcrit::content_distribution(&preds, &verdicts, &corpus);
        let quantiles = botcrit::digit_score_quantiles(&records);
        info!(
            "{} of {} accounts flagged as bots",
            verdicts.iter().filter(|v| v.is_bot).count(),
            verdicts.len()
        );
        run.write("bot_verdicts.csv", |w| botcrit::write_verdicts_csv(&verdicts, &groups, w))?;
        run.write("anomaly_groups.csv", |w| {
            let sizes = groups.sizes();
            let e = groups.edges;
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["group", "accounts", "score_low", "score_high"])?;
            c.write_record(["0".to_string(), sizes[0].to_string(), e[4].to_string(), String::new()])?;
            for (g, size) in sizes.iter().enumerate().skip(1) {
                let j = 4 - g;
                c.write_record([g.to_string(), size.to_string(), e[j].to_string(), e[j + 1].to_string()])?;
            }
            c.flush().map_err(io_err("anomaly_groups.csv"))
        })?;
        run.write("registrations_by_group.csv", |w| regs.write_group_csv(w))?;
        run.write("registrations_by_stance.csv", |w| regs.write_stance_csv(w))?;
        run.write("content_distribution.csv", |w| content.write_csv(w))?;
        run.write("digit_score_quantiles.csv", |w| botcrit::write_digit_quantiles_csv(&quantiles, w))
    }

    fn network(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.load_corpus()?;
        let flags = self.load_bot_flags()?;
        let graph = netcomm::build_retweet_graph(&corpus);
        let lcc = netcomm::extract_lcc(&graph)?;
        info!("retweet graph: {} nodes, LCC {} nodes / {} edges", graph.n_nodes(), lcc.n_nodes(), lcc.n_edges());
        let (partition, trace) = netcomm::fit_dcsbm_traced(&lcc, &self.config.network.sbm(), run.seed())?;
        let is_bot = |a: AccountId| flags.get(&a).copied().unwrap_or(false);
        let min_size = self.config.network.min_community_size;
        let profiles = match netcomm::community_bot_profile(&partition, &is_bot, &lcc, min_size) {
            Ok(p) => p,
            Err(e) => {
                warn!("community bot presence not standardized: {e}");
                let mut p = netcomm::community_counts(&partition, &is_bot, &lcc)?;
                netcomm::sort_profiles(&mut p);
                p
            }
        };
        run.write("retweet_graph.csv", |w| graph.write_csv(w))?;
        run.write("partition.csv", |w| netcomm::write_partition_csv(&lcc, &partition, w))?;
        run.write("community_profiles.csv", |w| netcomm::write_profiles_csv(&profiles, w))?;
        run.write("sbm_candidates.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["blocks", "log_likelihood", "description_length", "selected"])?;
            for &(b, l, dl) in &trace.candidates {
                c.write_record([
                    b.to_string(),
                    l.to_string(),
                    dl.to_string(),
                    ((b == partition.n_blocks) as u8).to_string(),
                ])?;
            }
            c.flush().map_err(io_err("sbm_candidates.csv"))
        })
    }

    fn report(&self, run: &mut StageRun) -> Result<()> {
        let corpus = self.load_corpus()?;
        let labels = self.load_labels()?;
        let preds = self.load_predictions()?;
        let flags = self.load_bot_flags()?;
        let shares = classifier::stance_shares(&preds);
        let stats = corpus::corpus_stats(&corpus);
        let n_bots = flags.values().filter(|&&b| b).count();
        let bot_share = if flags.is_empty() { 0.0 } else { n_bots as f64 / flags.len() as f64 };

        let mut classes: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_comm = 0usize;
        let mut rd = csv::Reader::from_reader(open(&self.path("community_profiles.csv"))?);
        for row in rd.records() {
            let row = row?;
            n_comm += 1;
            *classes.entry(row.get(5).unwrap_or("").to_string()).or_default() += 1;
        }
        let class_count = |c: CommunityClass| classes.get(c.as_str()).copied().unwrap_or(0);

        let mut outside = 0usize;
        let mut points = 0usize;
        let mut rd = csv::Reader::from_reader(open(&self.path("nullmodel.csv"))?);
        for row in rd.records() {
            let row = row?;
            points += 1;
            outside += (row.get(4) == Some("1")) as usize;
        }

        let mut terms: Vec<(String, String)> = Vec::new();
        let mut rd = csv::Reader::from_reader(open(&self.path("term_associations.csv"))?);
        let headers = rd.headers()?.clone();
        let label_col = headers.iter().position(|h| h == "label").unwrap_or(0);
        let score_col = headers.iter().position(|h| h == "score").unwrap_or(headers.len().saturating_sub(1));
        for row in rd.records() {
            let row = row?;
            terms.push((row.get(label_col).unwrap_or("").to_string(), row.get(score_col).unwrap_or("").to_string()));
        }

        let summary: Vec<(&str, String)> = vec![
            ("accounts", corpus.accounts.len().to_string()),
            ("tweets", corpus.tweets.len().to_string()),
            ("fraction_original", stats.kind_fractions[0].to_string()),
            ("fraction_retweet", stats.kind_fractions[1].to_string()),
            ("fraction_quote", stats.kind_fractions[2].to_string()),
            ("fraction_reply", stats.kind_fractions[3].to_string()),
            ("seed_labeled", labels.len().to_string()),
            ("share_apruebo_pct", shares.apruebo.to_string()),
            ("share_rechazo_pct", shares.rechazo.to_string()),
            ("share_undisclosed_pct", shares.undisclosed.to_string()),
            ("bots", n_bots.to_string()),
            ("bot_share", bot_share.to_string()),
            ("reference_bot_share", "0.0066".to_string()),
            ("communities", n_comm.to_string()),
            ("communities_bot_heavy", class_count(CommunityClass::BotHeavy).to_string()),
            ("communities_mixed", class_count(CommunityClass::Mixed).to_string()),
            ("communities_bot_scarce", class_count(CommunityClass::BotScarce).to_string()),
            ("nullmodel_points", points.to_string()),
            ("nullmodel_outside", outside.to_string()),
        ];
        run.write("summary.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["metric", "value"])?;
            for (k, v) in &summary {
                c.write_record([k, v.as_str()])?;
            }
            c.flush().map_err(io_err("summary.csv"))
        })?;
        run.write("report.md", |w| {
            let e = io_err("report.md");
            writeln!(w, "# Run summary\n").map_err(&e)?;
            writeln!(w, "| metric | value |\n|---|---|").map_err(&e)?;
            for (k, v) in &summary {
                writeln!(w, "| {k} | {v} |").map_err(&e)?;
            }
            let k = 10.min(terms.len());
            writeln!(w, "\n## Features most associated with apruebo\n").map_err(&e)?;
            for (t, s) in &terms[..k] {
                writeln!(w, "- `{t}` ({s})").map_err(&e)?;
            }
            writeln!(w, "\n## Features most associated with rechazo\n").map_err(&e)?;
            for (t, s) in terms.iter().rev().take(k) {
                writeln!(w, "- `{t}` ({s})").map_err(&e)?;
            }
            writeln!(w, "\nAnomaly scores: higher means more anomalous.").map_err(&e)
        })
    }

    fn evaluate(&self, run: &mut StageRun) -> Result<()> {
        let truth = GroundTruth::read_csv(open(&self.path("synth_truth.csv"))?)?;
        let preds = self.load_predictions()?;
        let flags = self.load_bot_flags()?;
        let blocks = self.load_partition()?;
        let e = synth::evaluate_against_truth(&preds, &flags, Some(&blocks), &truth)?;
        run.write("evaluation.csv", |w| e.write_csv(w))
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn stage_seeds_differ_and_are_stable() {
        let a = stage_seed(7, Stage::Train);
        assert_eq!(a, stage_seed(7, Stage::Train));
        assert_ne!(a, stage_seed(7, Stage::Anomaly));
        assert_ne!(a, stage_seed(8, Stage::Train));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig::with_output("out", 3);
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn seed_is_required() {
        let mut cfg = PipelineConfig::with_output("out", 3);
        cfg.seed = None;
        assert!(matches!(Pipeline::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_paths() {
        let a = PipelineConfig::with_output("a", 1);
        let b = PipelineConfig::with_output("b", 1);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), PipelineConfig::with_output("a", 2).config_hash());
    }
}
