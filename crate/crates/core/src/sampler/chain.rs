use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{
    concept_log_prior, pi_log_prior, refresh_joint, text_log_likelihood, LikelihoodMode, ModelData,
    SemanticCache,
};
use crate::model::{ActiveConcept, ConceptId, LatentState, WordSet};
use crate::sampler::conditionals::{
    birth_log_acceptance, death_log_acceptance, eta_birth_prob, f_prior_prob, ibp_shared_prior_prob,
};

/// How per-document prevalences are resampled given token assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiUpdate {
    /// Dirichlet(α_π + n) proportions times a Gamma(J α_π, 1) total: the
    /// exact conditional given the assignments.
    #[default]
    Exact,
    /// Independent Gamma(α_π + n_j, 1) draws per concept.
    IndependentGamma,
}

/// Deterministic random streams for one chain: stream 0 for chain-level
/// draws, stream `d + 1` for document `d`.
#[derive(Debug, Clone)]
pub struct ChainRng {
    pub chain: ChaCha8Rng,
    pub docs: Vec<ChaCha8Rng>,
}

impl ChainRng {
    pub fn new(seed: u64, num_docs: usize) -> Self {
        let base = ChaCha8Rng::seed_from_u64(seed);
        let docs = (0..num_docs)
            .map(|d| {
                let mut r = base.clone();
                r.set_stream(d as u64 + 1);
                r
            })
            .collect();
        ChainRng { chain: base, docs }
    }
}

pub(crate) fn gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("gamma shape must be positive");
    g.sample(rng).max(f64::MIN_POSITIVE)
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio == f64::NEG_INFINITY || log_ratio.is_nan() {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// Difference of two log values where the old one is finite.
fn log_diff(new: f64, old: f64) -> f64 {
    if new == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        new - old
    }
}

/// Outcome of a birth/death proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BirthDeath {
    Born(ConceptId),
    BirthRejected,
    Died(ConceptId),
    DeathRejected,
}

/// One Markov chain: the latent state plus the caches the moves rely on.
/// The cached joint in the state is updated incrementally by every move.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    data: &'a ModelData,
    state: LatentState,
    cache: SemanticCache,
    doc_text: Vec<f64>,
    mode: LikelihoodMode,
    pi_update: PiUpdate,
}

impl<'a> Chain<'a> {
    pub fn new(data: &'a ModelData, mut state: LatentState, mode: LikelihoodMode, pi_update: PiUpdate) -> Result<Self> {
        if state.num_docs() != data.num_docs() || state.num_words() != data.num_words() {
            return Err(Error::Dimension(format!(
                "state is {}×{}, data is {}×{}",
                state.num_docs(),
                state.num_words(),
                data.num_docs(),
                data.num_words()
            )));
        }
        state.hyper.validate(state.num_words())?;
        let y = match mode {
            LikelihoodMode::Full => data.features.matrix().clone(),
            LikelihoodMode::PriorOnly => DMatrix::zeros(0, data.num_words()),
        };
        let cache = SemanticCache::new(&state, &y)?;
        refresh_joint(&mut state, data, mode)?;
        let mut chain = Chain {
            data,
            state,
            cache,
            doc_text: Vec::new(),
            mode,
            pi_update,
        };
        chain.doc_text = (0..chain.state.num_docs())
            .map(|d| chain.text(d, &chain.state.doc(d).concepts))
            .collect();
        Ok(chain)
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn into_state(self) -> LatentState {
        self.state
    }

    pub fn data(&self) -> &ModelData {
        self.data
    }

    pub fn mode(&self) -> LikelihoodMode {
        self.mode
    }

    pub fn semantic_cache(&self) -> &SemanticCache {
        &self.cache
    }

    fn text(&self, d: usize, concepts: &[ActiveConcept]) -> f64 {
        match self.mode {
            LikelihoodMode::PriorOnly => 0.0,
            LikelihoodMode::Full => text_log_likelihood(concepts, &self.data.docs[d], &self.state.hyper.theta),
        }
    }

    fn commit(&mut self, d: usize, text_new: f64, cache_new: Option<SemanticCache>, joint_delta: f64) {
        self.doc_text[d] = text_new;
        if let Some(c) = cache_new {
            self.cache = c;
        }
        self.cache.sync(&self.state);
        self.state.joint_log_prob += joint_delta;
    }

    /// Tokens of document `d` assigned to `id`, and those of them that are
    /// of word `word`.
    fn assigned(&self, d: usize, id: ConceptId, word: usize) -> Result<(u32, u32)> {
        let doc = self.state.doc(d);
        let tokens = &self.data.docs[d].tokens;
        if self.mode == LikelihoodMode::PriorOnly || tokens.is_empty() {
            return Ok((0, 0));
        }
        if doc.z.len() != tokens.len() {
            return Err(Error::State(format!("document {d}: token assignments are stale")));
        }
        let mut n = 0;
        let mut ni = 0;
        for (&z, &w) in doc.z.iter().zip(tokens) {
            if z == id {
                n += 1;
                if w == word {
                    ni += 1;
                }
            }
        }
        Ok((n, ni))
    }

    /// MH flip of `ĉ_j^(d)` for a concept used by at least one other document.
    /// Returns whether the flip was accepted.
    pub fn sample_shared_concept<R: Rng + ?Sized>(&mut self, d: usize, id: ConceptId, rng: &mut R) -> Result<bool> {
        let m = self.state.docs_excluding(id, d);
        let num_docs = self.state.num_docs();
        let p_on = ibp_shared_prior_prob(m, num_docs)?;
        let alpha_pi = self.state.hyper.alpha_pi;
        let doc = self.state.doc(d);
        let text_old = self.doc_text[d];

        if let Some(pos) = doc.position(id) {
            let removed = doc.concepts[pos].clone();
            let mut proposed = doc.concepts.clone();
            proposed.remove(pos);
            let text_new = self.text(d, &proposed);
            let cache_new = self.cache.with_document_change(id, &removed.words, -1, false)?;
            let sem = cache_new.value() - self.cache.value();
            let log_ratio = ((1.0 - p_on) / p_on).ln() + log_diff(text_new, text_old) + sem;
            if !accept(log_ratio, rng) {
                return Ok(false);
            }
            let before = concept_log_prior(&self.state, id, self.data.lambda());
            self.state.deactivate_concept(d, id)?;
            let after = concept_log_prior(&self.state, id, self.data.lambda());
            let delta = (text_new - text_old) + sem + (after - before) - pi_log_prior(removed.pi, alpha_pi);
            self.commit(d, text_new, Some(cache_new), delta);
        } else {
            let stats = self.state.concept(id).expect("shared concept exists");
            let lambda = self.data.lambda();
            let mut words = WordSet::new(self.state.num_words());
            for (i, &mji) in stats.word_docs.iter().enumerate() {
                if rng.random::<f64>() < f_prior_prob(mji, m + 1, lambda[i])? {
                    words.insert(i);
                }
            }
            let pi = gamma_draw(alpha_pi, rng);
            let new = ActiveConcept::new(id, words.clone(), pi, &self.state.hyper.theta);
            let mut proposed = doc.concepts.clone();
            let pos = proposed.partition_point(|c| c.id < id);
            proposed.insert(pos, new);
            let text_new = self.text(d, &proposed);
            let cache_new = self.cache.with_document_change(id, &words, 1, false)?;
            let sem = cache_new.value() - self.cache.value();
            let log_ratio = (p_on / (1.0 - p_on)).ln() + log_diff(text_new, text_old) + sem;
            if !accept(log_ratio, rng) {
                return Ok(false);
            }
            let before = concept_log_prior(&self.state, id, lambda);
            self.state.activate_concept(d, id, words, pi)?;
            let after = concept_log_prior(&self.state, id, lambda);
            let delta = (text_new - text_old) + sem + (after - before) + pi_log_prior(pi, alpha_pi);
            self.commit(d, text_new, Some(cache_new), delta);
        }
        Ok(true)
    }

    /// One birth or death proposal for the concepts used only by `d`.
    pub fn birth_death_move<R: Rng + ?Sized>(&mut self, d: usize, rng: &mut R) -> Result<BirthDeath> {
        let unique = self.state.unique_concepts(d);
        let j = unique.len();
        let num_docs = self.state.num_docs();
        let alpha = self.state.hyper.alpha_omega;
        let alpha_pi = self.state.hyper.alpha_pi;
        let text_old = self.doc_text[d];
        let doc = self.state.doc(d);

        if rng.random::<f64>() < eta_birth_prob(j, alpha, num_docs) {
            let id = self.state.peek_concept_id();
            let lambda = self.data.lambda();
            let words = WordSet::from_indices(
                self.state.num_words(),
                (0..lambda.len()).filter(|&i| rng.random::<f64>() < lambda[i]).collect::<Vec<_>>(),
            );
            let pi = gamma_draw(alpha_pi, rng);
            let mut proposed = doc.concepts.clone();
            proposed.push(ActiveConcept::new(id, words.clone(), pi, &self.state.hyper.theta));
            let text_new = self.text(d, &proposed);
            let cache_new = self.cache.with_document_change(id, &words, 1, false)?;
            let sem = cache_new.value() - self.cache.value();
            let log_ratio = birth_log_acceptance(j, alpha, num_docs) + log_diff(text_new, text_old) + sem;
            if !accept(log_ratio, rng) {
                return Ok(BirthDeath::BirthRejected);
            }
            let id = self.state.fresh_concept_id();
            self.state.activate_concept(d, id, words, pi)?;
            let prior = concept_log_prior(&self.state, id, lambda);
            let delta = (text_new - text_old) + sem + prior + pi_log_prior(pi, alpha_pi);
            self.commit(d, text_new, Some(cache_new), delta);
            Ok(BirthDeath::Born(id))
        } else {
            let id = unique[rng.random_range(0..j)];
            let pos = doc.position(id).expect("unique concept is active");
            let removed = doc.concepts[pos].clone();
            let mut proposed = doc.concepts.clone();
            proposed.remove(pos);
            let text_new = self.text(d, &proposed);
            let cache_new = self.cache.with_document_change(id, &removed.words, -1, true)?;
            let sem = cache_new.value() - self.cache.value();
            let log_ratio = death_log_acceptance(j, alpha, num_docs) + log_diff(text_new, text_old) + sem;
            if !accept(log_ratio, rng) {
                return Ok(BirthDeath::DeathRejected);
            }
            let prior = concept_log_prior(&self.state, id, self.data.lambda());
            self.state.deactivate_concept(d, id)?;
            let delta = (text_new - text_old) + sem - prior - pi_log_prior(removed.pi, alpha_pi);
            self.commit(d, text_new, Some(cache_new), delta);
            Ok(BirthDeath::Died(id))
        }
    }

    /// Gibbs update of `f̂_ji^(d)` given the current token assignments.
    /// Returns whether the value changed.
    pub fn sample_f<R: Rng + ?Sized>(&mut self, d: usize, id: ConceptId, word: usize, rng: &mut R) -> Result<bool> {
        let concept = self
            .state
            .doc(d)
            .get(id)
            .ok_or_else(|| Error::State(format!("concept {id} not active in document {d}")))?;
        let cur = concept.words.contains(word);
        let (n_j, n_ji) = self.assigned(d, id, word)?;
        if n_ji > 0 {
            if !cur {
                return Err(Error::State(format!(
                    "document {d}: tokens of word {word} assigned to concept {id} without that word"
                )));
            }
            return Ok(false);
        }
        let stats = self.state.concept(id).expect("active concept has stats");
        let lambda = self.data.lambda()[word];
        let p_on = f_prior_prob(stats.word_docs[word] - u32::from(cur), stats.docs, lambda)?;
        let (p_cur, p_alt) = if cur { (p_on, 1.0 - p_on) } else { (1.0 - p_on, p_on) };
        let update = self.cache.propose_flip(id, word, !cur)?;
        let sem = update.value - self.cache.value();
        let theta_w = self.state.hyper.theta[word];
        let s_cur = concept.theta_sum;
        let s_alt = if cur { s_cur - theta_w } else { s_cur + theta_w };
        let text_cond = if n_j > 0 {
            -(n_j as f64) * (s_alt.ln() - s_cur.ln())
        } else {
            0.0
        };
        let log_odds = (p_alt / p_cur).ln() + sem + text_cond;
        let prob_alt = 1.0 / (1.0 + (-log_odds).exp());
        if !(rng.random::<f64>() < prob_alt) {
            return Ok(false);
        }
        self.state.set_word(d, id, word, !cur)?;
        self.cache.apply_column(update);
        let text_new = self.text(d, &self.state.doc(d).concepts);
        let delta = (text_new - self.doc_text[d]) + sem + (p_alt / p_cur).ln();
        self.commit(d, text_new, None, delta);
        Ok(true)
    }

    /// Samples every token's concept: `P(z = j) ∝ π_j / S_j` over active
    /// concepts whose word set contains the token's word.
    pub fn impute_z<R: Rng + ?Sized>(&mut self, d: usize, rng: &mut R) -> Result<()> {
        if self.mode == LikelihoodMode::PriorOnly {
            self.state.set_assignments(d, Vec::new());
            return Ok(());
        }
        let doc = self.state.doc(d);
        let words = &self.data.docs[d];
        let mut z = Vec::with_capacity(words.tokens.len());
        for &(w, n) in &words.counts {
            let (ids, weights): (Vec<ConceptId>, Vec<f64>) = doc
                .concepts
                .iter()
                .filter(|c| c.words.contains(w))
                .map(|c| (c.id, c.pi / c.theta_sum))
                .unzip();
            if ids.is_empty() {
                return Err(Error::State(format!(
                    "document {d}: token of word {w} has no active concept containing it"
                )));
            }
            if ids.len() == 1 {
                z.extend(std::iter::repeat_n(ids[0], n as usize));
                continue;
            }
            let dist = WeightedIndex::new(&weights)
                .map_err(|e| Error::Numerical(format!("assignment weights: {e}")))?;
            for _ in 0..n {
                z.push(ids[dist.sample(rng)]);
            }
        }
        self.state.set_assignments(d, z);
        Ok(())
    }

    /// Resamples the prevalences of the concepts active in `d`.
    pub fn sample_pi<R: Rng + ?Sized>(&mut self, d: usize, rng: &mut R) -> Result<()> {
        let doc = self.state.doc(d);
        let j = doc.concepts.len();
        if j == 0 {
            return Ok(());
        }
        let ids: Vec<ConceptId> = doc.concepts.iter().map(|c| c.id).collect();
        let old: Vec<f64> = doc.concepts.iter().map(|c| c.pi).collect();
        let mut counts = Vec::with_capacity(j);
        for &id in &ids {
            counts.push(self.assigned(d, id, usize::MAX)?.0);
        }
        let a = self.state.hyper.alpha_pi;
        let draws: Vec<f64> = counts.iter().map(|&n| gamma_draw(a + n as f64, rng)).collect();
        let new: Vec<f64> = match self.pi_update {
            PiUpdate::IndependentGamma => draws,
            PiUpdate::Exact => {
                let total: f64 = draws.iter().sum();
                let scale = gamma_draw(j as f64 * a, rng);
                draws.iter().map(|g| (scale * g / total).max(f64::MIN_POSITIVE)).collect()
            }
        };
        let mut delta = 0.0;
        for ((&id, &p_old), &p_new) in ids.iter().zip(&old).zip(&new) {
            self.state.set_pi(d, id, p_new)?;
            delta += pi_log_prior(p_new, a) - pi_log_prior(p_old, a);
        }
        let text_new = self.text(d, &self.state.doc(d).concepts);
        delta += text_new - self.doc_text[d];
        self.commit(d, text_new, None, delta);
        Ok(())
    }

    /// One full sweep: concept membership per document (shared flips in id
    /// order, then one birth/death proposal), word sets, token assignments,
    /// prevalences.
    pub fn gibbs_sweep(&mut self, rngs: &mut ChainRng) -> Result<()> {
        self.cache.refresh()?;
        let num_docs = self.state.num_docs();
        let num_words = self.state.num_words();
        for d in 0..num_docs {
            let rng = &mut rngs.docs[d];
            for id in self.state.shared_concepts(d) {
                self.sample_shared_concept(d, id, rng)?;
            }
            self.birth_death_move(d, rng)?;
        }
        for d in 0..num_docs {
            let rng = &mut rngs.docs[d];
            self.impute_z(d, rng)?;
            let ids: Vec<ConceptId> = self.state.doc(d).concepts.iter().map(|c| c.id).collect();
            for id in ids {
                for i in 0..num_words {
                    self.sample_f(d, id, i, rng)?;
                }
            }
        }
        for d in 0..num_docs {
            self.impute_z(d, &mut rngs.docs[d])?;
        }
        for d in 0..num_docs {
            self.sample_pi(d, &mut rngs.docs[d])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Corpus, Document, SemanticFeatures};
    use crate::likelihood::{joint_log_prob, validate};
    use crate::model::Hyperparameters;
    use crate::sampler::init::initial_state;
    use crate::sampler::InitStrategy;
    use std::collections::BTreeMap;

    fn toy() -> ModelData {
        let corpus = Corpus::new(
            (0..6).map(|i| format!("w{i}")).collect(),
            vec![
                Document::new("a", BTreeMap::from([(0, 3), (1, 2)])),
                Document::new("b", BTreeMap::from([(0, 1), (1, 1), (4, 2)])),
                Document::new("c", BTreeMap::from([(3, 2), (4, 1), (5, 1)])),
                Document::new("d", BTreeMap::new()),
            ],
        )
        .unwrap();
        let y = DMatrix::from_row_slice(
            2,
            6,
            &[1.0, 1.1, 0.9, -1.0, -1.2, -0.8, 0.3, -0.2, 0.1, 0.4, -0.5, 0.0],
        );
        ModelData::new(&corpus, SemanticFeatures::new(y, vec![0.2; 6]).unwrap()).unwrap()
    }

    #[test]
    fn sweeps_keep_state_valid_and_joint_tracked() {
        let data = toy();
        let mut rngs = ChainRng::new(5, data.num_docs());
        let state = initial_state(&data, &Hyperparameters::with_defaults(6), InitStrategy::KMeans { k: 2 }, &mut rngs.chain).unwrap();
        let mut chain = Chain::new(&data, state, LikelihoodMode::Full, PiUpdate::Exact).unwrap();
        for _ in 0..200 {
            chain.gibbs_sweep(&mut rngs).unwrap();
            let s = chain.state();
            if let Err(v) = validate(s, &data, LikelihoodMode::Full) {
                panic!("{v:?}");
            }
        }
        let recomputed = joint_log_prob(chain.state(), &data, LikelihoodMode::Full).unwrap().total;
        assert!((recomputed - chain.state().joint_log_prob).abs() <= 1e-8 * recomputed.abs().max(1.0));
    }

    #[test]
    fn sweep_without_documents_is_noop() {
        let data = ModelData {
            docs: Vec::new(),
            features: SemanticFeatures::empty(3, 0.1).unwrap(),
        };
        let state = LatentState::new(Hyperparameters::with_defaults(3), 0, 3);
        let mut chain = Chain::new(&data, state.clone(), LikelihoodMode::Full, PiUpdate::Exact).unwrap();
        let mut rngs = ChainRng::new(1, 0);
        chain.gibbs_sweep(&mut rngs).unwrap();
        assert_eq!(chain.state().num_concepts(), 0);
        assert_eq!(chain.state().docs(), state.docs());
    }

    #[test]
    fn sole_explaining_concept_cannot_leave() {
        let data = toy();
        let v = 6;
        let mut s = LatentState::new(Hyperparameters::with_defaults(v), 4, v);
        s.activate_concept(0, 0, WordSet::from_indices(v, [0, 1]), 1.0).unwrap();
        s.activate_concept(1, 0, WordSet::from_indices(v, [0, 1, 4]), 1.0).unwrap();
        s.activate_concept(2, 1, WordSet::from_indices(v, [3, 4, 5]), 1.0).unwrap();
        let mut chain = Chain::new(&data, s, LikelihoodMode::Full, PiUpdate::Exact).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert!(!chain.sample_shared_concept(0, 0, &mut rng).unwrap());
        }
        assert!(chain.state().doc(0).is_active(0));
    }

    #[test]
    fn stale_assignments_are_an_error() {
        let data = toy();
        let v = 6;
        let mut s = LatentState::new(Hyperparameters::with_defaults(v), 4, v);
        s.activate_concept(0, 0, WordSet::from_indices(v, [0, 1]), 1.0).unwrap();
        let mut chain = Chain::new(&data, s, LikelihoodMode::Full, PiUpdate::Exact).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(chain.sample_f(0, 0, 2, &mut rng), Err(Error::State(_))));
        assert!(chain.impute_z(1, &mut rng).is_err());
    }
}
