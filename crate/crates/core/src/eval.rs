//! Posterior summaries over recorded samples: word co-occurrence marginals,
//! rank accuracy, per-concept word weights and plot-ready exports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SemanticFeatures;
use crate::model::{ConceptId, StateSnapshot};
use crate::sampler::SampleTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoocMode {
    /// Per sample: some concept has both words on, each in at least one
    /// document (the union of the concept's word sets across the corpus).
    #[default]
    Corpus,
    /// Per sample: fraction of documents in which some concept has both on.
    Doc,
}

impl std::str::FromStr for CoocMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(CoocMode::Corpus),
            "doc" => Ok(CoocMode::Doc),
            other => Err(Error::InvalidArgument(format!("co-occurrence mode must be corpus or doc, got {other:?}"))),
        }
    }
}

/// Symmetric V×V matrix of co-activation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    values: DMatrix<f64>,
}

impl CooccurrenceMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn num_words(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[(a, b)]
    }
}

fn mark_set(hits: &mut DMatrix<bool>, words: &[usize]) {
    for (k, &a) in words.iter().enumerate() {
        for &b in &words[k..] {
            hits[(a, b)] = true;
            hits[(b, a)] = true;
        }
    }
}

/// Estimates co-activation marginals from the records after sweep `burn_in`.
pub fn cooccurrence_marginals(
    trace: &SampleTrace,
    num_words: usize,
    burn_in: usize,
    mode: CoocMode,
) -> Result<CooccurrenceMatrix> {
    let records: Vec<_> = trace.records.iter().filter(|r| r.iter > burn_in).collect();
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("no recorded samples after sweep {burn_in}")));
    }
    for r in &records {
        for d in &r.docs {
            if let Some(&w) = d.concepts.iter().flat_map(|c| &c.words).find(|&&w| w >= num_words) {
                return Err(Error::Dimension(format!("trace word {w} outside vocabulary of {num_words}")));
            }
        }
    }
    let mut sum = DMatrix::<f64>::zeros(num_words, num_words);
    for r in &records {
        match mode {
            CoocMode::Corpus => {
                let mut unions: BTreeMap<ConceptId, std::collections::BTreeSet<usize>> = BTreeMap::new();
                for c in r.docs.iter().flat_map(|d| &d.concepts) {
                    unions.entry(c.cid).or_default().extend(c.words.iter().copied());
                }
                let mut hits = DMatrix::from_element(num_words, num_words, false);
                for words in unions.values() {
                    mark_set(&mut hits, &words.iter().copied().collect::<Vec<_>>());
                }
                sum.zip_apply(&hits, |s, h| *s += f64::from(u8::from(h)));
            }
            CoocMode::Doc => {
                if r.docs.is_empty() {
                    continue;
                }
                let share = 1.0 / r.docs.len() as f64;
                for d in &r.docs {
                    let mut hits = DMatrix::from_element(num_words, num_words, false);
                    for c in &d.concepts {
                        mark_set(&mut hits, &c.words);
                    }
                    sum.zip_apply(&hits, |s, h| *s += share * f64::from(u8::from(h)));
                }
            }
        }
    }
    Ok(CooccurrenceMatrix {
        values: sum / records.len() as f64,
    })
}

/// Baseline scores: negative Euclidean distance between feature columns.
pub fn feature_similarity(features: &SemanticFeatures) -> DMatrix<f64> {
    let y = features.matrix();
    let v = y.ncols();
    DMatrix::from_fn(v, v, |a, b| -(y.column(a) - y.column(b)).norm())
}

/// `(V − 1 − r) / (V − 2)` where `r` is the 1-based rank of `target` among
/// all words other than `source`, by descending score, ties averaged.
pub fn pair_accuracy(scores: &DMatrix<f64>, source: usize, target: usize) -> Result<f64> {
    let v = scores.nrows();
    if v < 3 {
        return Err(Error::InvalidArgument(format!("rank accuracy needs at least 3 words, got {v}")));
    }
    if source >= v || target >= v {
        return Err(Error::Dimension(format!("pair ({source}, {target}) outside vocabulary of {v}")));
    }
    if source == target {
        return Err(Error::InvalidArgument(format!("word {source} paired with itself")));
    }
    let t = scores[(source, target)];
    let (mut above, mut tied) = (0usize, 0usize);
    for w in (0..v).filter(|&w| w != source && w != target) {
        let s = scores[(source, w)];
        if s > t {
            above += 1;
        } else if s == t {
            tied += 1;
        }
    }
    let rank = above as f64 + 1.0 + tied as f64 / 2.0;
    Ok((v as f64 - 1.0 - rank) / (v as f64 - 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAccuracy {
    pub forward: f64,
    pub backward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAccuracy {
    pub mean: f64,
    pub per_pair: Vec<PairAccuracy>,
}

fn set_accuracy(scores: &DMatrix<f64>, sources: &[usize], targets: &[usize]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for &s in sources {
        for &t in targets.iter().filter(|&&t| t != s) {
            let a = pair_accuracy(scores, s, t)?;
            best = Some(best.map_or(a, |b: f64| b.max(a)));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("word pair has no distinct source and target".into()))
}

/// Mean accuracy over both directions of every pair. Word sets score as
/// their best member.
pub fn rank_accuracy(scores: &DMatrix<f64>, pairs: &[WordPair]) -> Result<RankAccuracy> {
    if scores.nrows() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rank accuracy needs at least 3 words, got {}",
            scores.nrows()
        )));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no word pairs given".into()));
    }
    let per_pair = pairs
        .iter()
        .map(|p| {
            Ok(PairAccuracy {
                forward: set_accuracy(scores, &p.source, &p.target)?,
                backward: set_accuracy(scores, &p.target, &p.source)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_pair.iter().map(|p| p.forward + p.backward).sum::<f64>() / (2 * per_pair.len()) as f64;
    Ok(RankAccuracy { mean, per_pair })
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<WordPair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordWeight {
    pub word: usize,
    /// Documents whose copy of the concept has this word on.
    pub docs: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSummary {
    pub concept_id: ConceptId,
    /// Documents (within the partition, if any) using the concept.
    pub num_docs: u32,
    pub weights: Vec<WordWeight>,
}

/// Word weights of every concept used by the selected documents.
pub fn concept_summaries(snapshot: &StateSnapshot, partition: Option<&str>) -> Result<Vec<ConceptSummary>> {
    if let Some(p) = partition {
        if !snapshot.docs.iter().any(|d| d.partition.as_deref() == Some(p)) {
            return Err(Error::InvalidArgument(format!("unknown partition {p:?}")));
        }
    }
    let mut acc: BTreeMap<ConceptId, (u32, BTreeMap<usize, u32>)> = BTreeMap::new();
    for doc in &snapshot.docs {
        if partition.is_some_and(|p| doc.partition.as_deref() != Some(p)) {
            continue;
        }
        for c in &doc.concepts {
            let e = acc.entry(c.cid).or_default();
            e.0 += 1;
            for &w in &c.words {
                *e.1.entry(w).or_insert(0) += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(concept_id, (num_docs, words))| ConceptSummary {
            concept_id,
            num_docs,
            weights: words.into_iter().map(|(word, docs)| WordWeight { word, docs }).collect(),
        })
        .collect())
}

/// Number of concepts by count of words with non-zero weight.
pub fn words_per_concept_histogram(summaries: &[ConceptSummary]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for s in summaries {
        *hist.entry(s.weights.iter().filter(|w| w.docs > 0).count()).or_insert(0) += 1;
    }
    hist
}

fn write(path: &Path, text: String) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// CSV with one row per (concept, word):
/// `concept_id,concept_docs,word_index,word,docs`.
pub fn write_summaries_csv(summaries: &[ConceptSummary], vocab: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("concept_id,concept_docs,word_index,word,docs\n");
    for s in summaries {
        for w in &s.weights {
            let name = vocab.get(w.word).map_or("", String::as_str);
            out.push_str(&format!("{},{},{},{},{}\n", s.concept_id, s.num_docs, w.word, name, w.docs));
        }
    }
    write(path.as_ref(), out)
}

/// Reads back [`write_summaries_csv`] output.
pub fn read_summaries_csv(path: impl AsRef<Path>) -> Result<Vec<ConceptSummary>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<ConceptSummary> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("{}:{}: malformed summary row", path.display(), n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let cid: ConceptId = f[0].parse().map_err(|_| bad())?;
        let num_docs: u32 = f[1].parse().map_err(|_| bad())?;
        let word: usize = f[2].parse().map_err(|_| bad())?;
        let docs: u32 = f[4].parse().map_err(|_| bad())?;
        if out.last().is_none_or(|s| s.concept_id != cid) {
            out.push(ConceptSummary {
                concept_id: cid,
                num_docs,
                weights: Vec::new(),
            });
        }
        out.last_mut().expect("pushed above").weights.push(WordWeight { word, docs });
    }
    Ok(out)
}

pub fn write_summaries_json(summaries: &[ConceptSummary], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), serde_json::to_string_pretty(summaries)?)
}

/// CSV `words,concepts`.
pub fn write_histogram_csv(hist: &BTreeMap<usize, usize>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("words,concepts\n");
    for (w, c) in hist {
        out.push_str(&format!("{w},{c}\n"));
    }
    write(path.as_ref(), out)
}

/// Square matrix as CSV with a header row of word labels.
pub fn write_matrix_csv(values: &DMatrix<f64>, vocab: &[String], path: impl AsRef<Path>) -> Result<()> {
    let label = |i: usize| vocab.get(i).cloned().unwrap_or_else(|| i.to_string());
    let mut out = String::from("word");
    for j in 0..values.ncols() {
        out.push(',');
        out.push_str(&label(j));
    }
    out.push('\n');
    for i in 0..values.nrows() {
        out.push_str(&label(i));
        for j in 0..values.ncols() {
            out.push_str(&format!(",{}", values[(i, j)]));
        }
        out.push('\n');
    }
    write(path.as_ref(), out)
}
