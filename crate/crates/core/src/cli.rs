//! Command-line interface: `fit`, `simulate`, `evaluate`, `export` and
//! `build-features`. Every command writes a `manifest.json` into its output
//! directory recording the resolved arguments and input hashes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{self, CoocMode};
use crate::ingest::{self, Corpus, RawTextCollection, SemanticFeatures};
use crate::likelihood::LikelihoodMode;
use crate::model::{Hyperparameters, StateSnapshot};
use crate::sampler::{self, InitStrategy, PiUpdate, SampleTrace, SamplerConfig};
use crate::synthetic::{self, BilingualConfig, BlockConfig, FeatureMode, GroundTruth};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SUPERWORDS_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "superwords-out";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "superwords", version, about = "Sparse superword concepts from text and semantic features")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sampler on a corpus.
    Fit(FitArgs),
    /// Write a synthetic corpus, features and ground truth.
    Simulate(SimulateArgs),
    /// Score a fit against ground truth or translation pairs, or summarise it.
    Evaluate(EvaluateArgs),
    /// Write plot-ready CSV/JSON from a fit.
    Export(ExportArgs),
    /// Build co-occurrence PCA features from raw text.
    BuildFeatures(BuildFeaturesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Kmeans,
    Random,
    Singleton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiUpdateArg {
    Exact,
    IndependentGamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoocModeArg {
    Corpus,
    Doc,
}

impl From<CoocModeArg> for CoocMode {
    fn from(m: CoocModeArg) -> Self {
        match m {
            CoocModeArg::Corpus => CoocMode::Corpus,
            CoocModeArg::Doc => CoocMode::Doc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureModeArg {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct HyperArgs {
    /// Concept-level concentration of the beta process.
    #[arg(long, default_value_t = 2.0)]
    pub alpha_omega: f64,
    /// Shape of the gamma prior on concept prevalences.
    #[arg(long, default_value_t = 1.0)]
    pub alpha_pi: f64,
    /// Shape of the inverse-gamma prior on feature noise.
    #[arg(long, default_value_t = 1.0)]
    pub alpha_sigma: f64,
    /// Scale of the inverse-gamma prior on feature noise.
    #[arg(long, default_value_t = 1.0)]
    pub beta_sigma: f64,
    /// Ratio of feature noise variance to latent loading variance.
    #[arg(long = "k-scale", default_value_t = 1.0)]
    pub k_scale: f64,
    /// Word-level concentration λ for every word (overrides the sidecar).
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl HyperArgs {
    fn build(&self, num_words: usize) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::with_defaults(num_words);
        h.alpha_omega = self.alpha_omega;
        h.alpha_pi = self.alpha_pi;
        h.alpha_sigma = self.alpha_sigma;
        h.beta_sigma = self.beta_sigma;
        h.k = self.k_scale;
        h.validate(num_words)?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Corpus JSON.
    #[arg(long, required_unless_present = "from_manifest")]
    pub corpus: Option<PathBuf>,
    /// Feature TSV (`F V` header). Without it the fit uses text only.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Fail instead of fitting text only when --features is missing.
    #[arg(long)]
    pub require_features: bool,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Sweeps discarded before recording (default: 20% of --iters).
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitKind::Kmeans)]
    pub init: InitKind,
    /// Clusters (k-means) or concepts (random) at initialisation.
    #[arg(long = "init-k", default_value_t = 10)]
    pub init_k: usize,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, value_enum, default_value_t = PiUpdateArg::Exact)]
    pub pi_update: PiUpdateArg,
    /// Sample from the prior, ignoring text and features.
    #[arg(long)]
    pub prior_only: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output directory (default: $SUPERWORDS_OUT_DIR or ./superwords-out).
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Re-run the fit recorded in a manifest; input hashes must match.
    #[arg(long, conflicts_with_all = ["corpus", "features"])]
    #[serde(skip)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Five planted word blocks over 25 words, 100 documents.
    Identifiability,
    /// Two disjoint vocabularies linked only through features.
    Bilingual,
    /// Forward draw from the full generative model.
    Generative,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Preset::Identifiability)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FeatureModeArg::On)]
    pub feature_mode: FeatureModeArg,
    #[arg(long, default_value_t = 100)]
    pub docs: usize,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    #[arg(long, default_value_t = 5)]
    pub words_per_block: usize,
    #[arg(long, default_value_t = 50)]
    pub tokens_per_doc: usize,
    #[arg(long, default_value_t = 0.5)]
    pub activation_prob: f64,
    #[arg(long, default_value_t = 10)]
    pub num_features: usize,
    /// Within-group feature noise (identifiability and bilingual presets).
    #[arg(long)]
    pub feature_noise: Option<f64>,
    /// Vocabulary size for the generative preset.
    #[arg(long, default_value_t = 25)]
    pub num_words: usize,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(subcommand)]
    pub what: EvaluateCommand,
}

#[derive(Debug, Clone, Subcommand)]
pub enum EvaluateCommand {
    /// Jaccard recovery of planted concepts.
    Recovery(RecoveryArgs),
    /// Rank accuracy of translation pairs under co-occurrence marginals.
    Rank(RankArgs),
    /// Per-concept word weights, optionally restricted to a partition.
    Summaries(SummariesArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RecoveryArgs {
    /// Trace to average word sets over.
    #[arg(long, required_unless_present = "map", conflicts_with = "map")]
    pub trace: Option<PathBuf>,
    /// MAP snapshot to score instead of a trace.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RankArgs {
    /// Trace files; records from all of them are pooled.
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    /// JSON list of `{"source": [i..], "target": [j..]}` word-index sets.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Only records after this sweep count.
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = CoocModeArg::Corpus)]
    pub cooc_mode: CoocModeArg,
    /// Vocabulary size (default: read from the fit manifest beside the trace).
    #[arg(long)]
    pub num_words: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SummariesArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub partition: Option<String>,
    /// Corpus whose vocabulary labels the words.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportKind {
    Summaries,
    Histogram,
    Cooccurrence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long, value_enum)]
    pub kind: ExportKind,
    #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
    pub format: ExportFormat,
    /// MAP snapshot (summaries, histogram).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Trace files (co-occurrence).
    #[arg(long, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    #[arg(long)]
    pub partition: Option<String>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = CoocModeArg::Corpus)]
    pub cooc_mode: CoocModeArg,
    #[arg(long)]
    pub num_words: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BuildFeaturesArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory of raw `.txt` files; sentences end at `.`, `!` or `?`.
    #[arg(long)]
    pub text_dir: PathBuf,
    /// Principal components to keep.
    #[arg(long, default_value_t = 50)]
    pub components: usize,
    #[arg(long, default_value_t = ingest::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Written to every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: serde_json::Value,
    /// SHA-256 of every input file, by role.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, by file name.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub info: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    fn new(command: &str, args: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            args: serde_json::to_value(args)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            info: BTreeMap::new(),
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.into(), hash_file(path)?);
        Ok(())
    }

    fn output(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.outputs.insert(name.into(), hash_file(&dir.join(name))?);
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(&path, e))
}

fn load_snapshot(path: &Path) -> Result<StateSnapshot> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StateSnapshot::from_json(&text)
}

pub fn trace_file_name(chain: usize) -> String {
    format!("trace_chain{chain}.jsonl")
}

pub const MAP_FILE: &str = "map.json";

/// Runs the sampler and writes one trace per chain, the MAP snapshot and the
/// manifest.
pub fn cmd_fit(args: &FitArgs) -> Result<PathBuf> {
    if let Some(manifest) = &args.from_manifest {
        return fit_from_manifest(manifest, args.out.clone());
    }
    let corpus_path = args
        .corpus
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--corpus is required".into()))?;
    if args.require_features && args.features.is_none() {
        return Err(Error::InvalidArgument("--require-features given without --features".into()));
    }
    let corpus = ingest::load_corpus(corpus_path)?;
    let v = corpus.num_words();
    let mut features = match &args.features {
        Some(p) => ingest::load_features(p, &corpus)?,
        None => SemanticFeatures::empty(v, ingest::DEFAULT_LAMBDA)?,
    };
    if let Some(l) = args.hyper.lambda {
        features.set_lambda(vec![l; v])?;
    }
    let hyper = args.hyper.build(v)?;
    let mut config = SamplerConfig::new(args.iters, args.seed);
    if let Some(b) = args.burn_in {
        config.burn_in = b;
    }
    config.chains = args.chains;
    config.record_every = args.record_every;
    config.init = match args.init {
        InitKind::Kmeans => InitStrategy::KMeans { k: args.init_k },
        InitKind::Random => InitStrategy::Random { k: args.init_k },
        InitKind::Singleton => InitStrategy::Singleton,
    };
    config.pi_update = match args.pi_update {
        PiUpdateArg::Exact => PiUpdate::Exact,
        PiUpdateArg::IndependentGamma => PiUpdate::IndependentGamma,
    };
    config.mode = if args.prior_only {
        LikelihoodMode::PriorOnly
    } else {
        LikelihoodMode::Full
    };
    config.validate()?;

    let dir = out_dir(&args.out);
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("fit", args)?;
    manifest.input("corpus", corpus_path)?;
    if let Some(p) = &args.features {
        manifest.input("features", p)?;
        let side = ingest::lambda_sidecar_path(p);
        if side.exists() {
            manifest.input("features.lambda", &side)?;
        }
    }
    manifest.info.insert("num_words".into(), v.into());
    manifest.info.insert("num_docs".into(), corpus.num_docs().into());

    log::info!("fitting {} documents over {v} words, {} chains", corpus.num_docs(), config.chains);
    let run = sampler::run_chains(&corpus, &features, &hyper, &config)?;
    for (c, trace) in run.traces.iter().enumerate() {
        let name = trace_file_name(c);
        trace.write_jsonl(dir.join(&name))?;
        manifest.output(&dir, &name)?;
    }
    let map_path = dir.join(MAP_FILE);
    fs::write(&map_path, run.map.to_json()? + "\n").map_err(|e| Error::io(&map_path, e))?;
    manifest.output(&dir, MAP_FILE)?;
    manifest.info.insert("map_chain".into(), run.map_chain.into());
    manifest.info.insert("map_iter".into(), run.map_iter.into());
    manifest.write(&dir)?;
    println!(
        "MAP: chain {} sweep {}, {} concepts, joint log-probability {:.4}",
        run.map_chain,
        run.map_iter,
        run.map.concepts.len(),
        run.map.joint_log_prob
    );
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn fit_from_manifest(path: &Path, out: Option<PathBuf>) -> Result<PathBuf> {
    let manifest = RunManifest::load(path)?;
    if manifest.command != "fit" {
        return Err(Error::Validation(format!("manifest records `{}`, not `fit`", manifest.command)));
    }
    let mut args: FitArgs = serde_json::from_value(manifest.args.clone())?;
    args.out = out;
    for (role, file) in [("corpus", &args.corpus), ("features", &args.features)] {
        if let Some(file) = file {
            let expected = manifest
                .inputs
                .get(role)
                .ok_or_else(|| Error::Validation(format!("manifest has no hash for {role}")))?;
            let actual = hash_file(file)?;
            if &actual != expected {
                return Err(Error::Validation(format!(
                    "{} changed since the manifest was written (sha256 {actual}, recorded {expected})",
                    file.display()
                )));
            }
        }
    }
    cmd_fit(&args)
}

/// Writes `corpus.json`, `features.tsv`, `features.lambda.json`,
/// `truth.json` and the manifest.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let lambda = args.hyper.lambda.unwrap_or(ingest::DEFAULT_LAMBDA);
    let data = match args.preset {
        Preset::Identifiability => {
            let defaults = BlockConfig::default();
            let config = BlockConfig {
                num_docs: args.docs,
                blocks: args.blocks,
                words_per_block: args.words_per_block,
                tokens_per_doc: args.tokens_per_doc,
                activation_prob: args.activation_prob,
                num_features: args.num_features,
                feature_noise: args.feature_noise.unwrap_or(defaults.feature_noise),
                feature_mode: match args.feature_mode {
                    FeatureModeArg::On => FeatureMode::On,
                    FeatureModeArg::Off => FeatureMode::Off,
                },
                lambda,
                ..defaults
            };
            synthetic::generate_block_benchmark(&config, &mut rng)?
        }
        Preset::Bilingual => {
            let defaults = BilingualConfig::default();
            let config = BilingualConfig {
                word_noise: args.feature_noise.unwrap_or(defaults.word_noise),
                lambda,
                ..defaults
            };
            let mut data = synthetic::generate_bilingual_benchmark(&config, &mut rng)?;
            if args.feature_mode == FeatureModeArg::Off {
                data.features = SemanticFeatures::empty(data.corpus.num_words(), lambda)?;
            }
            data
        }
        Preset::Generative => {
            if args.num_words == 0 || args.docs == 0 {
                return Err(Error::InvalidArgument("dimensions must be positive".into()));
            }
            let hyper = args.hyper.build(args.num_words)?;
            let f = if args.feature_mode == FeatureModeArg::On { args.num_features } else { 0 };
            synthetic::generate_corpus(&hyper, &vec![lambda; args.num_words], args.docs, args.tokens_per_doc, f, &mut rng)?
                .data
        }
    };
    let dir = out_dir(&args.out);
    synthetic::save_synthetic(&data, &dir)?;
    let mut manifest = RunManifest::new("simulate", args)?;
    for name in ["corpus.json", "features.tsv", "features.lambda.json", "truth.json"] {
        manifest.output(&dir, name)?;
    }
    if !data.truth.pairs.is_empty() {
        let pairs: Vec<eval::WordPair> = data
            .truth
            .pairs
            .iter()
            .map(|&(s, t)| eval::WordPair {
                source: vec![s],
                target: vec![t],
            })
            .collect();
        write_json(&dir, "pairs.json", &pairs)?;
        manifest.output(&dir, "pairs.json")?;
    }
    manifest.write(&dir)?;
    println!(
        "simulated {} documents over {} words with {} planted concepts into {}",
        data.corpus.num_docs(),
        data.corpus.num_words(),
        data.truth.concepts.len(),
        dir.display()
    );
    Ok(dir)
}

fn num_words_for(traces: &[PathBuf], flag: Option<usize>) -> Result<usize> {
    if let Some(v) = flag {
        return Ok(v);
    }
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("no trace given".into()))?;
    let manifest = first.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    if manifest.exists() {
        if let Some(v) = RunManifest::load(&manifest)?.info.get("num_words").and_then(|v| v.as_u64()) {
            return Ok(v as usize);
        }
    }
    Err(Error::InvalidArgument(
        "vocabulary size unknown: pass --num-words or keep the fit manifest beside the trace".into(),
    ))
}

fn pooled_trace(paths: &[PathBuf]) -> Result<SampleTrace> {
    let mut all = SampleTrace::default();
    for p in paths {
        all.records.extend(SampleTrace::read_jsonl(p)?.records);
    }
    Ok(all)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<PathBuf> {
    match &args.what {
        EvaluateCommand::Recovery(a) => {
            let truth = GroundTruth::load(&a.truth)?;
            let v = truth.config.num_words;
            let mut manifest = RunManifest::new("evaluate recovery", a)?;
            manifest.input("truth", &a.truth)?;
            let recovered = match (&a.trace, &a.map) {
                (_, Some(map)) => {
                    manifest.input("map", map)?;
                    synthetic::recovered_from_snapshot(&load_snapshot(map)?, a.threshold)
                }
                (Some(trace), None) => {
                    manifest.input("trace", trace)?;
                    synthetic::recovered_from_trace(&SampleTrace::read_jsonl(trace)?, v, a.threshold)
                }
                (None, None) => return Err(Error::InvalidArgument("pass --trace or --map".into())),
            };
            let score = synthetic::score_recovery(recovered, &truth);
            let dir = out_dir(&a.out);
            create_dir(&dir)?;
            write_json(&dir, "recovery.json", &score)?;
            manifest.output(&dir, "recovery.json")?;
            manifest.write(&dir)?;
            for (t, s) in score.per_concept.iter().enumerate() {
                println!("concept {t}: jaccard {s:.3}");
            }
            println!("mean jaccard {:.3}", score.mean);
            Ok(dir)
        }
        EvaluateCommand::Rank(a) => {
            let v = num_words_for(&a.trace, a.num_words)?;
            let pairs = eval::load_pairs(&a.pairs)?;
            let trace = pooled_trace(&a.trace)?;
            let matrix = eval::cooccurrence_marginals(&trace, v, a.burn_in, a.cooc_mode.into())?;
            let acc = eval::rank_accuracy(matrix.values(), &pairs)?;
            let dir = out_dir(&a.out);
            create_dir(&dir)?;
            let mut manifest = RunManifest::new("evaluate rank", a)?;
            for (i, t) in a.trace.iter().enumerate() {
                manifest.input(&format!("trace{i}"), t)?;
            }
            manifest.input("pairs", &a.pairs)?;
            write_json(&dir, "rank.json", &acc)?;
            manifest.output(&dir, "rank.json")?;
            manifest.write(&dir)?;
            println!("mean rank accuracy {:.4} over {} pairs", acc.mean, acc.per_pair.len());
            Ok(dir)
        }
        EvaluateCommand::Summaries(a) => {
            let snapshot = load_snapshot(&a.map)?;
            let summaries = eval::concept_summaries(&snapshot, a.partition.as_deref())?;
            let vocab = match &a.corpus {
                Some(p) => ingest::load_corpus(p)?.vocabulary,
                None => Vec::new(),
            };
            let dir = out_dir(&a.out);
            create_dir(&dir)?;
            let mut manifest = RunManifest::new("evaluate summaries", a)?;
            manifest.input("map", &a.map)?;
            eval::write_summaries_json(&summaries, dir.join("summaries.json"))?;
            eval::write_summaries_csv(&summaries, &vocab, dir.join("summaries.csv"))?;
            let hist = eval::words_per_concept_histogram(&summaries);
            eval::write_histogram_csv(&hist, dir.join("histogram.csv"))?;
            for name in ["summaries.json", "summaries.csv", "histogram.csv"] {
                manifest.output(&dir, name)?;
            }
            manifest.write(&dir)?;
            for s in &summaries {
                let words: Vec<String> = s
                    .weights
                    .iter()
                    .map(|w| {
                        let name = vocab.get(w.word).cloned().unwrap_or_else(|| w.word.to_string());
                        format!("{name}:{}", w.docs)
                    })
                    .collect();
                println!("concept {} ({} docs): {}", s.concept_id, s.num_docs, words.join(" "));
            }
            Ok(dir)
        }
    }
}

pub fn cmd_export(args: &ExportArgs) -> Result<PathBuf> {
    let vocab = match &args.corpus {
        Some(p) => ingest::load_corpus(p)?.vocabulary,
        None => Vec::new(),
    };
    let dir = out_dir(&args.out);
    create_dir(&dir)?;
    let mut manifest = RunManifest::new("export", args)?;
    let map = || -> Result<StateSnapshot> {
        let p = args
            .map
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--map is required for this export".into()))?;
        load_snapshot(p)
    };
    if let Some(p) = &args.map {
        manifest.input("map", p)?;
    }
    let name = match args.kind {
        ExportKind::Summaries => {
            let summaries = eval::concept_summaries(&map()?, args.partition.as_deref())?;
            match args.format {
                ExportFormat::Csv => {
                    eval::write_summaries_csv(&summaries, &vocab, dir.join("summaries.csv"))?;
                    "summaries.csv"
                }
                ExportFormat::Json => {
                    eval::write_summaries_json(&summaries, dir.join("summaries.json"))?;
                    "summaries.json"
                }
            }
        }
        ExportKind::Histogram => {
            let summaries = eval::concept_summaries(&map()?, args.partition.as_deref())?;
            let hist = eval::words_per_concept_histogram(&summaries);
            match args.format {
                ExportFormat::Csv => {
                    eval::write_histogram_csv(&hist, dir.join("histogram.csv"))?;
                    "histogram.csv"
                }
                ExportFormat::Json => {
                    write_json(&dir, "histogram.json", &hist)?;
                    "histogram.json"
                }
            }
        }
        ExportKind::Cooccurrence => {
            if args.trace.is_empty() {
                return Err(Error::InvalidArgument("--trace is required for the co-occurrence export".into()));
            }
            let v = num_words_for(&args.trace, args.num_words.or((!vocab.is_empty()).then_some(vocab.len())))?;
            for (i, t) in args.trace.iter().enumerate() {
                manifest.input(&format!("trace{i}"), t)?;
            }
            let matrix = eval::cooccurrence_marginals(&pooled_trace(&args.trace)?, v, args.burn_in, args.cooc_mode.into())?;
            match args.format {
                ExportFormat::Csv => {
                    eval::write_matrix_csv(matrix.values(), &vocab, dir.join("cooccurrence.csv"))?;
                    "cooccurrence.csv"
                }
                ExportFormat::Json => {
                    let rows: Vec<Vec<f64>> = matrix.values().row_iter().map(|r| r.iter().copied().collect()).collect();
                    write_json(&dir, "cooccurrence.json", &rows)?;
                    "cooccurrence.json"
                }
            }
        }
    };
    manifest.output(&dir, name)?;
    manifest.write(&dir)?;
    println!("wrote {}", dir.join(name).display());
    Ok(dir)
}

pub fn cmd_build_features(args: &BuildFeaturesArgs) -> Result<PathBuf> {
    let corpus: Corpus = ingest::load_corpus(&args.corpus)?;
    let raw = RawTextCollection::from_dir(&args.text_dir)?;
    let mut built = ingest::build_cooccurrence_features(&raw, &corpus, args.components)?;
    built.features.set_lambda(vec![args.lambda; corpus.num_words()])?;
    let dir = out_dir(&args.out);
    create_dir(&dir)?;
    built.features.save(dir.join("features.tsv"))?;
    let mut manifest = RunManifest::new("build-features", args)?;
    manifest.input("corpus", &args.corpus)?;
    manifest.output(&dir, "features.tsv")?;
    manifest.output(&dir, "features.lambda.json")?;
    manifest.info.insert("variance_captured".into(), built.variance_captured.into());
    manifest
        .info
        .insert("unobserved_words".into(), serde_json::to_value(&built.unobserved_words)?);
    manifest.write(&dir)?;
    println!(
        "{} components capture {:.1}% of co-occurrence variance; {} words unseen",
        args.components,
        100.0 * built.variance_captured,
        built.unobserved_words.len()
    );
    Ok(dir)
}

pub fn run(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Export(a) => cmd_export(a),
        Command::BuildFeatures(a) => cmd_build_features(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 success, 2 usage, 3 validation, 4 numerical failure, 1 I/O.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
