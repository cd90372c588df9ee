//! Forward simulation from the generative model and the planted-concept
//! benchmarks used to check identifiability.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, Document, SemanticFeatures};
use crate::likelihood::{compute_phi, ModelData};
use crate::model::{ConceptId, Hyperparameters, LatentState, StateSnapshot, WordSet};
use crate::sampler::SampleTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_docs: usize,
    pub num_words: usize,
    pub tokens_per_doc: usize,
    pub num_features: usize,
    /// Within-group feature noise (standard deviation); zero when features
    /// come from the generative model itself.
    pub feature_noise: f64,
    pub kind: String,
}

/// Planted structure of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Word set of every planted concept.
    pub concepts: Vec<Vec<usize>>,
    /// Indices into `concepts` active in each document.
    pub activations: Vec<Vec<usize>>,
    pub config: GeneratorConfig,
    /// Translation pairs `(source, target)` for two-vocabulary benchmarks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: GroundTruth = serde_json::from_str(&text)?;
        if t.concepts.iter().any(|c| c.is_empty()) {
            return Err(Error::Validation("ground truth has an empty concept".into()));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub features: SemanticFeatures,
    pub truth: GroundTruth,
}

/// Output of [`generate_corpus`]: the data plus the latent state that
/// produced it (token assignments included).
#[derive(Debug, Clone)]
pub struct GeneratedModel {
    pub data: SyntheticData,
    pub state: LatentState,
}

fn vocabulary(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    rand_distr::Gamma::new(shape, 1.0)
        .expect("positive shape")
        .sample(rng)
        .max(f64::MIN_POSITIVE)
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).expect("some positive weight")
}

/// Samples a corpus from the full generative model.
///
/// Documents arrive one at a time: document `d` (1-based) reuses concept `j`
/// with probability `m_j / d` and opens `Poisson(α_ω / d)` new ones. A reused
/// concept switches word `i` on with probability `(m_ji + λ_i) / (m_j + 1)`,
/// a new one with probability `λ_i`. Prevalences are Gamma(α_π, 1); each
/// token picks a concept in proportion to its prevalence among the active
/// concepts with a non-empty word set, then a word in proportion to `θ`
/// within that set. Documents with no such concept get no tokens.
///
/// Feature rows are drawn given the realised `Φ`: `σ_k² ~ InvGamma(α_σ, β_σ)`,
/// latent rows `X_k ~ N(0, σ_k²/K)` and `Y_k = X_k Φ + N(0, σ_k²)` noise.
pub fn generate_corpus<R: Rng + ?Sized>(
    hyper: &Hyperparameters,
    lambda: &[f64],
    num_docs: usize,
    tokens_per_doc: usize,
    num_features: usize,
    rng: &mut R,
) -> Result<GeneratedModel> {
    let v = hyper.theta.len();
    if num_docs == 0 || v == 0 {
        return Err(Error::InvalidArgument("need at least one document and one word".into()));
    }
    if lambda.len() != v {
        return Err(Error::Dimension(format!("lambda has {} entries, theta has {v}", lambda.len())));
    }
    hyper.validate(v)?;
    let mut state = LatentState::new(hyper.clone(), num_docs, v);
    let mut documents = Vec::with_capacity(num_docs);
    let mut assignments = Vec::with_capacity(num_docs);

    for d in 0..num_docs {
        let customers = (d + 1) as f64;
        let existing: Vec<(ConceptId, u32, Vec<u32>)> = state
            .concepts()
            .iter()
            .map(|(&id, s)| (id, s.docs, s.word_docs.clone()))
            .collect();
        for (id, m, word_docs) in existing {
            if rng.random::<f64>() < m as f64 / customers {
                let words = WordSet::from_indices(
                    v,
                    (0..v)
                        .filter(|&i| rng.random::<f64>() < (word_docs[i] as f64 + lambda[i]) / (m as f64 + 1.0))
                        .collect::<Vec<_>>(),
                );
                let pi = gamma(hyper.alpha_pi, rng);
                state.activate_concept(d, id, words, pi)?;
            }
        }
        let fresh = Poisson::new(hyper.alpha_omega / customers)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(rng) as usize;
        for _ in 0..fresh {
            let words = WordSet::from_indices(v, (0..v).filter(|&i| rng.random::<f64>() < lambda[i]).collect::<Vec<_>>());
            let pi = gamma(hyper.alpha_pi, rng);
            let id = state.fresh_concept_id();
            state.activate_concept(d, id, words, pi)?;
        }

        let usable: Vec<_> = state.doc(d).concepts.iter().filter(|c| !c.words.is_empty()).collect();
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        let mut tokens: Vec<(usize, ConceptId)> = Vec::new();
        if !usable.is_empty() {
            let pis: Vec<f64> = usable.iter().map(|c| c.pi).collect();
            for _ in 0..tokens_per_doc {
                let c = usable[categorical(&pis, rng)];
                let members: Vec<usize> = c.words.iter().collect();
                let weights: Vec<f64> = members.iter().map(|&w| hyper.theta[w]).collect();
                let w = members[categorical(&weights, rng)];
                *counts.entry(w).or_insert(0) += 1;
                tokens.push((w, c.id));
            }
        }
        // token order in the model is by word index
        tokens.sort_by_key(|&(w, _)| w);
        assignments.push(tokens.into_iter().map(|(_, z)| z).collect::<Vec<_>>());
        documents.push(Document::new(format!("doc{d}"), counts));
    }
    for (d, z) in assignments.into_iter().enumerate() {
        state.set_assignments(d, z);
    }

    let y = if num_features == 0 {
        DMatrix::zeros(0, v)
    } else {
        let phi = compute_phi(&state).values;
        let n = phi.nrows();
        let mut y = DMatrix::zeros(num_features, v);
        for k in 0..num_features {
            let sigma2 = hyper.beta_sigma / gamma(hyper.alpha_sigma, rng);
            let sd = sigma2.sqrt();
            let latent = Normal::new(0.0, (sigma2 / hyper.k).sqrt()).expect("finite sd");
            let noise = Normal::new(0.0, sd).expect("finite sd");
            let x: Vec<f64> = (0..n).map(|_| latent.sample(rng)).collect();
            for i in 0..v {
                let mean: f64 = (0..n).map(|j| x[j] * phi[(j, i)]).sum();
                y[(k, i)] = mean + noise.sample(rng);
            }
        }
        y
    };
    let corpus = Corpus::new(vocabulary("w", v), documents)?;
    let features = SemanticFeatures::new(y, lambda.to_vec())?;

    let mut index = BTreeMap::new();
    let mut concepts = Vec::new();
    for (&id, s) in state.concepts() {
        let words: Vec<usize> = (0..v).filter(|&i| s.word_docs[i] > 0).collect();
        if !words.is_empty() {
            index.insert(id, concepts.len());
            concepts.push(words);
        }
    }
    let activations = state
        .docs()
        .iter()
        .map(|doc| doc.concepts.iter().filter_map(|c| index.get(&c.id).copied()).collect())
        .collect();
    let truth = GroundTruth {
        concepts,
        activations,
        config: GeneratorConfig {
            num_docs,
            num_words: v,
            tokens_per_doc,
            num_features,
            feature_noise: 0.0,
            kind: "generative".into(),
        },
        pairs: Vec::new(),
    };
    Ok(GeneratedModel {
        data: SyntheticData { corpus, features, truth },
        state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    On,
    Off,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(FeatureMode::On),
            "off" => Ok(FeatureMode::Off),
            other => Err(Error::InvalidArgument(format!("feature mode must be on or off, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub num_docs: usize,
    pub blocks: usize,
    pub words_per_block: usize,
    pub tokens_per_doc: usize,
    pub activation_prob: f64,
    pub num_features: usize,
    /// Standard deviation of block centroids.
    pub centroid_scale: f64,
    /// Standard deviation of each word around its block centroid.
    pub feature_noise: f64,
    pub feature_mode: FeatureMode,
    pub lambda: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            num_docs: 100,
            blocks: 5,
            words_per_block: 5,
            tokens_per_doc: 50,
            activation_prob: 0.5,
            num_features: 10,
            centroid_scale: 1.0,
            feature_noise: 0.1,
            feature_mode: FeatureMode::On,
            lambda: crate::ingest::DEFAULT_LAMBDA,
        }
    }
}

fn dist(y: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..y.nrows()).map(|k| (y[(k, a)] - y[(k, b)]).powi(2)).sum::<f64>().sqrt()
}

/// Words around group centroids, redrawn until every within-group distance
/// is below every between-group distance and centroids are at least five
/// noise scales apart.
fn clustered_features<R: Rng + ?Sized>(
    groups: &[Vec<usize>],
    num_words: usize,
    num_features: usize,
    centroid_scale: f64,
    noise: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let centroid = Normal::new(0.0, centroid_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut group_of = vec![usize::MAX; num_words];
    for (g, members) in groups.iter().enumerate() {
        for &w in members {
            group_of[w] = g;
        }
    }
    for _ in 0..1000 {
        let centers: Vec<Vec<f64>> = groups
            .iter()
            .map(|_| (0..num_features).map(|_| centroid.sample(rng)).collect())
            .collect();
        let min_center = (0..centers.len())
            .flat_map(|a| (a + 1..centers.len()).map(move |b| (a, b)))
            .map(|(a, b)| centers[a].iter().zip(&centers[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        if min_center < 5.0 * noise * (num_features as f64).sqrt() {
            continue;
        }
        let y = DMatrix::from_fn(num_features, num_words, |k, i| centers[group_of[i]][k] + jitter.sample(rng));
        let mut within = 0.0f64;
        let mut between = f64::INFINITY;
        for a in 0..num_words {
            for b in a + 1..num_words {
                let dd = dist(&y, a, b);
                if group_of[a] == group_of[b] {
                    within = within.max(dd);
                } else {
                    between = between.min(dd);
                }
            }
        }
        if within < between {
            return Ok(y);
        }
    }
    Err(Error::InvalidArgument(
        "could not separate feature groups; lower the noise or raise the dimension".into(),
    ))
}

/// Disjoint word blocks as planted concepts. Each document switches each
/// block on independently; tokens pick an active block uniformly, then a
/// word of the block uniformly.
pub fn generate_block_benchmark<R: Rng + ?Sized>(config: &BlockConfig, rng: &mut R) -> Result<SyntheticData> {
    let (b, w) = (config.blocks, config.words_per_block);
    if config.num_docs == 0 || b == 0 || w == 0 {
        return Err(Error::InvalidArgument("benchmark dimensions must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.activation_prob) {
        return Err(Error::InvalidArgument("activation probability must lie in [0, 1]".into()));
    }
    let v = b * w;
    let blocks: Vec<Vec<usize>> = (0..b).map(|k| (k * w..(k + 1) * w).collect()).collect();
    let mut documents = Vec::with_capacity(config.num_docs);
    let mut activations = Vec::with_capacity(config.num_docs);
    for d in 0..config.num_docs {
        let active: Vec<usize> = (0..b).filter(|_| rng.random::<f64>() < config.activation_prob).collect();
        let mut counts = BTreeMap::new();
        if !active.is_empty() {
            for _ in 0..config.tokens_per_doc {
                let blk = active[rng.random_range(0..active.len())];
                let word = blocks[blk][rng.random_range(0..w)];
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        documents.push(Document::new(format!("doc{d}"), counts));
        activations.push(active);
    }
    let y = match config.feature_mode {
        FeatureMode::On => clustered_features(&blocks, v, config.num_features, config.centroid_scale, config.feature_noise, rng)?,
        FeatureMode::Off => {
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            DMatrix::from_fn(config.num_features, v, |_, _| n.sample(rng))
        }
    };
    let corpus = Corpus::new(vocabulary("w", v), documents)?;
    let features = SemanticFeatures::new(y, vec![config.lambda; v])?;
    Ok(SyntheticData {
        corpus,
        features,
        truth: GroundTruth {
            concepts: blocks,
            activations,
            config: GeneratorConfig {
                num_docs: config.num_docs,
                num_words: v,
                tokens_per_doc: config.tokens_per_doc,
                num_features: config.num_features,
                feature_noise: config.feature_noise,
                kind: format!("blocks-features-{}", if config.feature_mode == FeatureMode::On { "on" } else { "off" }),
            },
            pairs: Vec::new(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilingualConfig {
    /// Topic groups; each is a planted concept in either language.
    pub groups: usize,
    /// Translation pairs per group.
    pub pairs_per_group: usize,
    pub docs_per_language: usize,
    pub tokens_per_doc: usize,
    /// Distinct groups each document draws from.
    pub groups_per_doc: usize,
    pub num_features: usize,
    /// Spread of group centroids.
    pub group_scale: f64,
    /// Spread of pair centroids around their group centroid.
    pub pair_scale: f64,
    /// Spread of each word around its pair centroid.
    pub word_noise: f64,
    pub lambda: f64,
}

impl Default for BilingualConfig {
    fn default() -> Self {
        BilingualConfig {
            groups: 5,
            pairs_per_group: 8,
            docs_per_language: 50,
            tokens_per_doc: 20,
            groups_per_doc: 1,
            num_features: 30,
            group_scale: 1.0,
            pair_scale: 0.3,
            word_noise: 2.0,
            lambda: crate::ingest::DEFAULT_LAMBDA,
        }
    }
}

/// Two disjoint vocabularies (`en*` then `de*`) built from the same topic
/// groups. Documents are monolingual; translation pairs share a feature
/// centroid but never co-occur in text. Word features are the pair centroid
/// plus noise, so single-word distances are unreliable while group means
/// are not.
pub fn generate_bilingual_benchmark<R: Rng + ?Sized>(config: &BilingualConfig, rng: &mut R) -> Result<SyntheticData> {
    let (g, p) = (config.groups, config.pairs_per_group);
    if g == 0 || p == 0 || config.docs_per_language == 0 {
        return Err(Error::InvalidArgument("benchmark dimensions must be positive".into()));
    }
    if config.groups_per_doc == 0 || config.groups_per_doc > g {
        return Err(Error::InvalidArgument(format!(
            "groups per document must lie in 1..={g}, got {}",
            config.groups_per_doc
        )));
    }
    let half = g * p;
    let v = 2 * half;
    let en = |grp: usize, k: usize| grp * p + k;
    let de = |grp: usize, k: usize| half + grp * p + k;
    let mut vocab = vocabulary("en", half);
    vocab.extend(vocabulary("de", half));

    let mut concepts = Vec::new();
    for grp in 0..g {
        concepts.push((0..p).map(|k| en(grp, k)).collect::<Vec<_>>());
    }
    for grp in 0..g {
        concepts.push((0..p).map(|k| de(grp, k)).collect::<Vec<_>>());
    }
    let pairs: Vec<(usize, usize)> = (0..g).flat_map(|grp| (0..p).map(move |k| (en(grp, k), de(grp, k)))).collect();

    let mut documents = Vec::new();
    let mut activations = Vec::new();
    for (lang, offset) in [("en", 0usize), ("de", g)] {
        for d in 0..config.docs_per_language {
            let mut active = rand::seq::index::sample(rng, g, config.groups_per_doc).into_vec();
            active.sort_unstable();
            let mut counts = BTreeMap::new();
            for _ in 0..config.tokens_per_doc {
                let grp = active[rng.random_range(0..active.len())];
                let word = concepts[offset + grp][rng.random_range(0..p)];
                *counts.entry(word).or_insert(0) += 1;
            }
            let mut doc = Document::new(format!("{lang}{d}"), counts);
            doc.partition = Some(lang.to_string());
            documents.push(doc);
            activations.push(active.iter().map(|&a| offset + a).collect());
        }
    }

    let f = config.num_features;
    let group_n = Normal::new(0.0, config.group_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pair_n = Normal::new(0.0, config.pair_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let word_n = Normal::new(0.0, config.word_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut y = DMatrix::zeros(f, v);
    for grp in 0..g {
        let gc: Vec<f64> = (0..f).map(|_| group_n.sample(rng)).collect();
        for k in 0..p {
            let pc: Vec<f64> = gc.iter().map(|c| c + pair_n.sample(rng)).collect();
            for word in [en(grp, k), de(grp, k)] {
                for (row, c) in pc.iter().enumerate() {
                    y[(row, word)] = c + word_n.sample(rng);
                }
            }
        }
    }
    let corpus = Corpus::new(vocab, documents)?;
    let features = SemanticFeatures::new(y, vec![config.lambda; v])?;
    Ok(SyntheticData {
        corpus,
        features,
        truth: GroundTruth {
            concepts,
            activations,
            config: GeneratorConfig {
                num_docs: 2 * config.docs_per_language,
                num_words: v,
                tokens_per_doc: config.tokens_per_doc,
                num_features: f,
                feature_noise: config.word_noise,
                kind: "bilingual".into(),
            },
            pairs,
        },
    })
}

/// Writes `corpus.json`, `features.tsv` (+ λ sidecar) and `truth.json`.
pub fn save_synthetic(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    data.corpus.save(dir.join("corpus.json"))?;
    data.features.save(dir.join("features.tsv"))?;
    data.truth.save(dir.join("truth.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredConcept {
    pub id: ConceptId,
    pub words: Vec<usize>,
    /// Average `f̂` over the documents where the concept is active.
    pub mean_f: Vec<f64>,
}

/// Thresholds each concept's average word set. Concepts whose thresholded
/// set is empty are dropped.
pub fn recovered_concepts<'a, I>(docs: I, num_words: usize, threshold: f64) -> Vec<RecoveredConcept>
where
    I: IntoIterator<Item = &'a [crate::model::ActiveRecord]>,
{
    let mut sums: BTreeMap<ConceptId, (u32, Vec<f64>)> = BTreeMap::new();
    for doc in docs {
        for c in doc {
            let e = sums.entry(c.cid).or_insert_with(|| (0, vec![0.0; num_words]));
            e.0 += 1;
            for &w in &c.words {
                e.1[w] += 1.0;
            }
        }
    }
    sums.into_iter()
        .map(|(id, (n, s))| {
            let mean_f: Vec<f64> = s.iter().map(|x| x / n as f64).collect();
            let words = (0..num_words).filter(|&i| mean_f[i] >= threshold).collect();
            RecoveredConcept { id, words, mean_f }
        })
        .filter(|c| !c.words.is_empty())
        .collect()
}

pub fn recovered_from_snapshot(snapshot: &StateSnapshot, threshold: f64) -> Vec<RecoveredConcept> {
    recovered_concepts(snapshot.docs.iter().map(|d| d.concepts.as_slice()), snapshot.num_words, threshold)
}

pub fn recovered_from_trace(trace: &SampleTrace, num_words: usize, threshold: f64) -> Vec<RecoveredConcept> {
    recovered_concepts(
        trace.records.iter().flat_map(|r| r.docs.iter().map(|d| d.concepts.as_slice())),
        num_words,
        threshold,
    )
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Maximum-weight assignment of rows to columns (rectangular allowed).
/// Returns, for every row, the matched column if any.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let max = weights.iter().flatten().copied().fold(0.0f64, f64::max);
    // square minimisation problem over padded costs; 1-based potentials
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max - weights[i][j]
        } else {
            max
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = owner[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    /// Jaccard similarity of each planted concept with its match.
    pub per_concept: Vec<f64>,
    pub mean: f64,
    /// Index into `recovered` matched to each planted concept.
    pub matching: Vec<Option<usize>>,
    pub recovered: Vec<RecoveredConcept>,
}

/// Matches recovered concepts to planted ones so that total Jaccard
/// similarity is maximal.
pub fn score_recovery(recovered: Vec<RecoveredConcept>, truth: &GroundTruth) -> RecoveryScore {
    let weights: Vec<Vec<f64>> = truth
        .concepts
        .iter()
        .map(|t| recovered.iter().map(|r| jaccard(t, &r.words)).collect())
        .collect();
    let matching = if recovered.is_empty() {
        vec![None; truth.concepts.len()]
    } else {
        max_weight_matching(&weights)
    };
    let per_concept: Vec<f64> = matching
        .iter()
        .enumerate()
        .map(|(t, m)| m.map_or(0.0, |r| weights[t][r]))
        .collect();
    let mean = if per_concept.is_empty() {
        0.0
    } else {
        per_concept.iter().sum::<f64>() / per_concept.len() as f64
    };
    RecoveryScore {
        per_concept,
        mean,
        matching,
        recovered,
    }
}

/// Builds the state the sampler would see for a synthetic corpus, for
/// validation against the model's invariants.
pub fn model_data(data: &SyntheticData) -> Result<ModelData> {
    ModelData::new(&data.corpus, data.features.clone())
}
