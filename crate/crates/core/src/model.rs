//! Latent state of the nested beta process model and its mutation
//! primitives.
//!
//! Coin biases, latent concept features and noise variances are integrated
//! out analytically, so the state only holds the binary concept/word
//! indicators, the per-document prevalences and the imputed token
//! assignments, plus the sufficient statistics `m_j` and `m_ji`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Corpus;

pub type ConceptId = u64;

/// Beta process concentration; `b = 1` gives the Indian buffet process.
pub const CONCENTRATION: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Mass of the top-level base measure (expected concepts per document).
    pub alpha_omega: f64,
    /// Gamma shape of the per-document concept prevalences.
    pub alpha_pi: f64,
    /// Inverse-gamma shape of the feature noise variances.
    pub alpha_sigma: f64,
    /// Inverse-gamma scale of the feature noise variances.
    pub beta_sigma: f64,
    /// Precision scalar of the latent concept features.
    pub k: f64,
    /// Relative word importance, one entry per vocabulary word.
    pub theta: Vec<f64>,
}

impl Hyperparameters {
    pub fn with_defaults(num_words: usize) -> Self {
        Hyperparameters {
            alpha_omega: 2.0,
            alpha_pi: 1.0,
            alpha_sigma: 1.0,
            beta_sigma: 1.0,
            k: 1.0,
            theta: vec![1.0; num_words],
        }
    }

    pub fn validate(&self, num_words: usize) -> Result<()> {
        let scalars = [
            ("alpha_omega", self.alpha_omega),
            ("alpha_pi", self.alpha_pi),
            ("alpha_sigma", self.alpha_sigma),
            ("beta_sigma", self.beta_sigma),
            ("k", self.k),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.theta.len() != num_words {
            return Err(Error::Dimension(format!(
                "theta has {} entries, vocabulary has {num_words}",
                self.theta.len()
            )));
        }
        if self.theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Validation("theta entries must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed-width bit set over the vocabulary.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct WordSet {
    bits: Vec<u64>,
    len: usize,
}

impl WordSet {
    pub fn new(len: usize) -> Self {
        WordSet {
            bits: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = WordSet::new(len);
        for i in indices {
            s.insert(i);
        }
        s
    }

    pub fn full(len: usize) -> Self {
        Self::from_indices(len, 0..len)
    }

    pub fn universe(&self) -> usize {
        self.len
    }

    pub fn contains(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    /// Returns whether the set changed.
    pub fn insert(&mut self, i: usize) -> bool {
        assert!(i < self.len, "word index {i} out of range {}", self.len);
        let had = self.contains(i);
        self.bits[i / 64] |= 1 << (i % 64);
        !had
    }

    pub fn remove(&mut self, i: usize) -> bool {
        assert!(i < self.len, "word index {i} out of range {}", self.len);
        let had = self.contains(i);
        self.bits[i / 64] &= !(1 << (i % 64));
        had
    }

    pub fn set(&mut self, i: usize, on: bool) -> bool {
        if on {
            self.insert(i)
        } else {
            self.remove(i)
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|b| *b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(block, &b)| {
            let mut rest = b;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let t = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(block * 64 + t)
            })
        })
    }

    /// `Σ_{i ∈ set} θ_i`, summed in index order.
    pub fn weight(&self, theta: &[f64]) -> f64 {
        self.iter().map(|i| theta[i]).sum()
    }
}

impl std::fmt::Debug for WordSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// A concept switched on in one document: its word subset `f̂_j^(d)` and
/// prevalence `π_j^(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveConcept {
    pub id: ConceptId,
    pub words: WordSet,
    pub pi: f64,
    /// Cached `Σ_{l ∈ words} θ_l`.
    pub theta_sum: f64,
}

impl ActiveConcept {
    pub fn new(id: ConceptId, words: WordSet, pi: f64, theta: &[f64]) -> Self {
        let theta_sum = words.weight(theta);
        ActiveConcept {
            id,
            words,
            pi,
            theta_sum,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocState {
    /// Active concepts sorted by id.
    pub concepts: Vec<ActiveConcept>,
    /// Imputed concept of each token (tokens ordered by word index). Empty
    /// when assignments are stale.
    pub z: Vec<ConceptId>,
}

impl DocState {
    pub fn position(&self, id: ConceptId) -> Option<usize> {
        self.concepts.binary_search_by_key(&id, |c| c.id).ok()
    }

    pub fn get(&self, id: ConceptId) -> Option<&ActiveConcept> {
        self.position(id).map(|p| &self.concepts[p])
    }

    pub fn is_active(&self, id: ConceptId) -> bool {
        self.position(id).is_some()
    }

    /// `n_j^(d)`: tokens currently assigned to `id`.
    pub fn assigned_tokens(&self, id: ConceptId) -> u32 {
        self.z.iter().filter(|&&z| z == id).count() as u32
    }
}

/// Per-concept sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptStats {
    /// `m_j`: documents with the concept active.
    pub docs: u32,
    /// `m_ji`: documents with the concept active and word `i` switched on.
    pub word_docs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation(pub String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub hyper: Hyperparameters,
    num_words: usize,
    concepts: BTreeMap<ConceptId, ConceptStats>,
    docs: Vec<DocState>,
    next_id: ConceptId,
    version: u64,
    /// Cached joint log-probability maintained by the sampler.
    pub joint_log_prob: f64,
}

impl LatentState {
    pub fn new(hyper: Hyperparameters, num_docs: usize, num_words: usize) -> Self {
        LatentState {
            hyper,
            num_words,
            concepts: BTreeMap::new(),
            docs: vec![DocState::default(); num_docs],
            next_id: 0,
            version: 0,
            joint_log_prob: 0.0,
        }
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn concepts(&self) -> &BTreeMap<ConceptId, ConceptStats> {
        &self.concepts
    }

    pub fn concept(&self, id: ConceptId) -> Option<&ConceptStats> {
        self.concepts.get(&id)
    }

    pub fn docs(&self) -> &[DocState] {
        &self.docs
    }

    pub fn doc(&self, d: usize) -> &DocState {
        &self.docs[d]
    }

    /// Mutation counter; bumped whenever `ĉ` or `f̂` changes.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Reserves a fresh, never reused concept id.
    pub fn fresh_concept_id(&mut self) -> ConceptId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// The id the next [`fresh_concept_id`](Self::fresh_concept_id) call returns.
    pub fn peek_concept_id(&self) -> ConceptId {
        self.next_id
    }

    /// `m_j^(-d)`.
    pub fn docs_excluding(&self, id: ConceptId, d: usize) -> u32 {
        let m = self.concepts.get(&id).map_or(0, |s| s.docs);
        m - u32::from(self.docs[d].is_active(id))
    }

    /// Concepts active in `d` and in no other document.
    pub fn unique_concepts(&self, d: usize) -> Vec<ConceptId> {
        self.docs[d]
            .concepts
            .iter()
            .filter(|c| self.concepts[&c.id].docs == 1)
            .map(|c| c.id)
            .collect()
    }

    /// Concepts active in at least one document other than `d`.
    pub fn shared_concepts(&self, d: usize) -> Vec<ConceptId> {
        self.concepts
            .keys()
            .copied()
            .filter(|&id| self.docs_excluding(id, d) >= 1)
            .collect()
    }

    pub fn activate_concept(&mut self, d: usize, id: ConceptId, words: WordSet, pi: f64) -> Result<()> {
        if d >= self.docs.len() {
            return Err(Error::InvalidArgument(format!("document {d} out of range")));
        }
        if words.universe() != self.num_words {
            return Err(Error::Dimension(format!(
                "word set over {} words, model has {}",
                words.universe(),
                self.num_words
            )));
        }
        if !(pi > 0.0 && pi.is_finite()) {
            return Err(Error::InvalidArgument(format!("prevalence must be positive, got {pi}")));
        }
        let pos = match self.docs[d].concepts.binary_search_by_key(&id, |c| c.id) {
            Ok(_) => {
                return Err(Error::State(format!("concept {id} already active in document {d}")))
            }
            Err(p) => p,
        };
        let v = self.num_words;
        let stats = self.concepts.entry(id).or_insert_with(|| ConceptStats {
            docs: 0,
            word_docs: vec![0; v],
        });
        stats.docs += 1;
        for i in words.iter() {
            stats.word_docs[i] += 1;
        }
        self.next_id = self.next_id.max(id + 1);
        let concept = ActiveConcept::new(id, words, pi, &self.hyper.theta);
        self.docs[d].concepts.insert(pos, concept);
        self.docs[d].z.clear();
        self.version += 1;
        Ok(())
    }

    /// Switches a concept off in `d`; the concept disappears globally once no
    /// document uses it. Returns the removed entry.
    pub fn deactivate_concept(&mut self, d: usize, id: ConceptId) -> Result<ActiveConcept> {
        let pos = self.docs[d]
            .position(id)
            .ok_or_else(|| Error::State(format!("concept {id} not active in document {d}")))?;
        let removed = self.docs[d].concepts.remove(pos);
        let stats = self.concepts.get_mut(&id).expect("active concept has stats");
        stats.docs -= 1;
        for i in removed.words.iter() {
            stats.word_docs[i] -= 1;
        }
        if stats.docs == 0 {
            self.concepts.remove(&id);
        }
        self.docs[d].z.clear();
        self.version += 1;
        Ok(removed)
    }

    /// Sets `f̂_ji^(d)`. Returns whether the value changed.
    pub fn set_word(&mut self, d: usize, id: ConceptId, word: usize, on: bool) -> Result<bool> {
        let pos = self.docs[d]
            .position(id)
            .ok_or_else(|| Error::State(format!("concept {id} not active in document {d}")))?;
        let concept = &mut self.docs[d].concepts[pos];
        if !concept.words.set(word, on) {
            return Ok(false);
        }
        concept.theta_sum = concept.words.weight(&self.hyper.theta);
        let stats = self.concepts.get_mut(&id).expect("active concept has stats");
        if on {
            stats.word_docs[word] += 1;
        } else {
            stats.word_docs[word] -= 1;
        }
        self.version += 1;
        Ok(true)
    }

    pub fn set_pi(&mut self, d: usize, id: ConceptId, pi: f64) -> Result<()> {
        if !(pi > 0.0 && pi.is_finite()) {
            return Err(Error::Numerical(format!("prevalence must be positive, got {pi}")));
        }
        let pos = self.docs[d]
            .position(id)
            .ok_or_else(|| Error::State(format!("concept {id} not active in document {d}")))?;
        self.docs[d].concepts[pos].pi = pi;
        Ok(())
    }

    pub fn set_assignments(&mut self, d: usize, z: Vec<ConceptId>) {
        self.docs[d].z = z;
    }

    /// Overwrites a concept's count (test hook for corruption checks).
    #[doc(hidden)]
    pub fn corrupt_concept_docs(&mut self, id: ConceptId, docs: u32) {
        if let Some(s) = self.concepts.get_mut(&id) {
            s.docs = docs;
        }
    }

    /// Recomputes `m_j`, `m_ji` and the cached `θ` sums from the per-document
    /// state and reports every disagreement.
    pub fn check_counts(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut recount: BTreeMap<ConceptId, ConceptStats> = BTreeMap::new();
        for (d, doc) in self.docs.iter().enumerate() {
            for w in doc.concepts.windows(2) {
                if w[0].id >= w[1].id {
                    out.push(Violation(format!("document {d}: concepts not strictly sorted")));
                }
            }
            for c in &doc.concepts {
                if !(c.pi > 0.0) {
                    out.push(Violation(format!("document {d}: concept {} has pi {}", c.id, c.pi)));
                }
                let ts = c.words.weight(&self.hyper.theta);
                if (ts - c.theta_sum).abs() > 1e-9 * ts.max(1.0) {
                    out.push(Violation(format!(
                        "document {d}: concept {} theta sum cached {} vs {}",
                        c.id, c.theta_sum, ts
                    )));
                }
                let s = recount.entry(c.id).or_insert_with(|| ConceptStats {
                    docs: 0,
                    word_docs: vec![0; self.num_words],
                });
                s.docs += 1;
                for i in c.words.iter() {
                    s.word_docs[i] += 1;
                }
                if c.id >= self.next_id {
                    out.push(Violation(format!("concept {} not below next id {}", c.id, self.next_id)));
                }
            }
            for &zid in &doc.z {
                if !doc.is_active(zid) {
                    out.push(Violation(format!("document {d}: token assigned to inactive concept {zid}")));
                }
            }
        }
        for (id, stats) in &self.concepts {
            match recount.get(id) {
                None => out.push(Violation(format!(
                    "concept {id}: stored m_j = {} but no document uses it",
                    stats.docs
                ))),
                Some(r) => {
                    if r.docs != stats.docs {
                        out.push(Violation(format!(
                            "concept {id}: stored m_j = {} but recount = {}",
                            stats.docs, r.docs
                        )));
                    }
                    for (i, (a, b)) in stats.word_docs.iter().zip(&r.word_docs).enumerate() {
                        if a != b {
                            out.push(Violation(format!(
                                "concept {id}: stored m_j{i} = {a} but recount = {b}"
                            )));
                        }
                    }
                }
            }
        }
        for id in recount.keys() {
            if !self.concepts.contains_key(id) {
                out.push(Violation(format!("concept {id} active in documents but missing stats")));
            }
        }
        out
    }

    pub fn snapshot(&self, corpus: &Corpus) -> StateSnapshot {
        let concepts = self
            .concepts
            .iter()
            .map(|(&id, s)| ConceptRecord {
                id,
                m_j: s.docs,
                m_ji: s
                    .word_docs
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (i, c))
                    .collect(),
            })
            .collect();
        let docs = self
            .docs
            .iter()
            .zip(&corpus.documents)
            .map(|(doc, cd)| DocRecord {
                id: cd.id.clone(),
                partition: cd.partition.clone(),
                concepts: doc
                    .concepts
                    .iter()
                    .map(|c| ActiveRecord {
                        cid: c.id,
                        pi: c.pi,
                        words: c.words.iter().collect(),
                    })
                    .collect(),
            })
            .collect();
        StateSnapshot {
            num_words: self.num_words,
            hyperparameters: self.hyper.clone(),
            concepts,
            docs,
            joint_log_prob: self.joint_log_prob,
        }
    }
}

/// Serialized form of a [`LatentState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub num_words: usize,
    pub hyperparameters: Hyperparameters,
    pub concepts: Vec<ConceptRecord>,
    pub docs: Vec<DocRecord>,
    pub joint_log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: ConceptId,
    pub m_j: u32,
    pub m_ji: BTreeMap<usize, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    #[serde(default)]
    pub partition: Option<String>,
    pub concepts: Vec<ActiveRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRecord {
    pub cid: ConceptId,
    pub pi: f64,
    pub words: Vec<usize>,
}

impl StateSnapshot {
    /// Rebuilds the latent state; sufficient statistics are recomputed from
    /// the per-document records and checked against the stored ones.
    pub fn restore(&self) -> Result<LatentState> {
        let mut state = LatentState::new(self.hyperparameters.clone(), self.docs.len(), self.num_words);
        for (d, doc) in self.docs.iter().enumerate() {
            for c in &doc.concepts {
                if let Some(&bad) = c.words.iter().find(|&&w| w >= self.num_words) {
                    return Err(Error::Validation(format!("word index {bad} out of range")));
                }
                let words = WordSet::from_indices(self.num_words, c.words.iter().copied());
                state.activate_concept(d, c.cid, words, c.pi)?;
            }
        }
        for rec in &self.concepts {
            let stats = state
                .concept(rec.id)
                .ok_or_else(|| Error::Validation(format!("concept {} has no active documents", rec.id)))?;
            let m_ji: BTreeMap<usize, u32> = stats
                .word_docs
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (i, c))
                .collect();
            if stats.docs != rec.m_j || m_ji != rec.m_ji {
                return Err(Error::Validation(format!(
                    "concept {} statistics disagree with document records",
                    rec.id
                )));
            }
        }
        state.joint_log_prob = self.joint_log_prob;
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(docs: usize, v: usize) -> LatentState {
        LatentState::new(Hyperparameters::with_defaults(v), docs, v)
    }

    #[test]
    fn wordset_basics() {
        let mut s = WordSet::new(130);
        assert!(s.insert(3));
        assert!(!s.insert(3));
        s.insert(129);
        s.insert(64);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![3, 64, 129]);
        assert_eq!(s.count(), 3);
        assert!(s.remove(64));
        assert!(!s.contains(64));
        assert_eq!(s.weight(&vec![2.0; 130]), 4.0);
    }

    #[test]
    fn activate_in_empty_state() {
        let mut s = state(2, 4);
        let id = s.fresh_concept_id();
        s.activate_concept(0, id, WordSet::from_indices(4, [1, 3]), 1.0).unwrap();
        let c = s.concept(id).unwrap();
        assert_eq!(c.docs, 1);
        assert_eq!(c.word_docs, vec![0, 1, 0, 1]);
        assert!(s.check_counts().is_empty());
    }

    #[test]
    fn activate_twice_is_error() {
        let mut s = state(1, 3);
        s.activate_concept(0, 0, WordSet::new(3), 1.0).unwrap();
        assert!(s.activate_concept(0, 0, WordSet::new(3), 1.0).is_err());
    }

    #[test]
    fn activate_then_deactivate_restores() {
        let mut s = state(2, 3);
        s.activate_concept(1, 0, WordSet::from_indices(3, [0]), 0.5).unwrap();
        let mut before = s.clone();
        s.activate_concept(0, 0, WordSet::from_indices(3, [0, 2]), 2.0).unwrap();
        s.deactivate_concept(0, 0).unwrap();
        // version moves; everything else returns to the original
        before.version = s.version;
        assert_eq!(s, before);
    }

    #[test]
    fn deactivate_removes_when_last() {
        let mut s = state(3, 2);
        s.activate_concept(0, 5, WordSet::new(2), 1.0).unwrap();
        s.deactivate_concept(0, 5).unwrap();
        assert!(s.concept(5).is_none());

        for d in 0..3 {
            s.activate_concept(d, 7, WordSet::new(2), 1.0).unwrap();
        }
        s.deactivate_concept(2, 7).unwrap();
        assert_eq!(s.concept(7).unwrap().docs, 2);
        assert!(s.deactivate_concept(2, 7).is_err());
    }

    #[test]
    fn ids_are_never_reused() {
        let mut s = state(1, 2);
        let a = s.fresh_concept_id();
        s.activate_concept(0, a, WordSet::new(2), 1.0).unwrap();
        s.deactivate_concept(0, a).unwrap();
        let b = s.fresh_concept_id();
        assert!(b > a);
    }

    #[test]
    fn corrupted_count_is_reported() {
        let mut s = state(2, 2);
        s.activate_concept(0, 0, WordSet::new(2), 1.0).unwrap();
        s.activate_concept(1, 0, WordSet::new(2), 1.0).unwrap();
        s.corrupt_concept_docs(0, 3);
        let v = s.check_counts();
        assert_eq!(v.len(), 1);
        assert!(v[0].0.contains("concept 0"));
    }
}
