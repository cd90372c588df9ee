use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SemanticFeatures;
use crate::likelihood::ModelData;
use crate::model::{ConceptId, Hyperparameters, LatentState, WordSet};
use crate::sampler::chain::gamma_draw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitStrategy {
    /// k-means over the feature columns; one concept per cluster.
    KMeans { k: usize },
    /// Words dealt into `k` clusters uniformly at random.
    Random { k: usize },
    /// One concept per word.
    Singleton,
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::KMeans { k: 10 }
    }
}

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means++ seeded Lloyd run; returns labels and inertia.
fn lloyd<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut chosen = vec![false; n];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            // all remaining points coincide with a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dd = sq_dist(p, center);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (x, slot) in center.iter_mut().enumerate().take(dim) {
                *slot = members.iter().map(|p| p[x]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, inertia)
}

fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out.retain(|g| !g.is_empty());
    out.sort_by_key(|g| g[0]);
    out
}

/// Clusters the words (feature columns) into at most `k` groups, keeping the
/// lowest-inertia of several k-means++ restarts. Groups are sorted by their
/// smallest word index.
pub fn kmeans_clusters<R: Rng + ?Sized>(features: &SemanticFeatures, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let v = features.num_words();
    if k == 0 || k > v {
        return Err(Error::InvalidArgument(format!("k must be in 1..={v}, got {k}")));
    }
    let y = features.matrix();
    let points: Vec<Vec<f64>> = (0..v).map(|i| y.column(i).iter().copied().collect()).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (labels, inertia) = lloyd(&points, k, rng);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    Ok(groups(&best.expect("at least one restart").0))
}

/// Builds a state with one concept per word group. A concept is switched on
/// in every document containing one of its words, with the word set
/// restricted to those words; prevalences come from the prior and tokens
/// are assigned greedily.
pub fn state_from_clusters<R: Rng + ?Sized>(
    data: &ModelData,
    hyper: &Hyperparameters,
    clusters: &[Vec<usize>],
    rng: &mut R,
) -> Result<LatentState> {
    let v = data.num_words();
    let mut owner = vec![None; v];
    for (c, group) in clusters.iter().enumerate() {
        for &w in group {
            owner[w] = Some(c);
        }
    }
    let mut state = LatentState::new(hyper.clone(), data.num_docs(), v);
    let ids: Vec<ConceptId> = clusters.iter().map(|_| state.fresh_concept_id()).collect();
    for (d, doc) in data.docs.iter().enumerate() {
        for (c, group) in clusters.iter().enumerate() {
            let present: Vec<usize> = group
                .iter()
                .copied()
                .filter(|w| doc.counts.binary_search_by_key(w, |&(x, _)| x).is_ok())
                .collect();
            if present.is_empty() {
                continue;
            }
            let pi = gamma_draw(hyper.alpha_pi, rng);
            state.activate_concept(d, ids[c], WordSet::from_indices(v, present), pi)?;
        }
        // Repair pass: a word left uncovered joins its own group's concept,
        // or a fresh singleton concept when it belongs to no group.
        for &(w, _) in &doc.counts {
            if state.doc(d).concepts.iter().any(|c| c.words.contains(w)) {
                continue;
            }
            match owner[w].map(|c| ids[c]) {
                Some(id) if state.doc(d).is_active(id) => {
                    state.set_word(d, id, w, true)?;
                }
                Some(id) => {
                    let pi = gamma_draw(hyper.alpha_pi, rng);
                    state.activate_concept(d, id, WordSet::from_indices(v, [w]), pi)?;
                }
                None => {
                    let id = state.fresh_concept_id();
                    let pi = gamma_draw(hyper.alpha_pi, rng);
                    state.activate_concept(d, id, WordSet::from_indices(v, [w]), pi)?;
                }
            }
        }
        let doc_state = state.doc(d);
        let z: Vec<ConceptId> = data.docs[d]
            .tokens
            .iter()
            .map(|&w| {
                doc_state
                    .concepts
                    .iter()
                    .filter(|c| c.words.contains(w))
                    .max_by(|a, b| (a.pi / a.theta_sum).total_cmp(&(b.pi / b.theta_sum)).then(b.id.cmp(&a.id)))
                    .expect("every word covered after repair")
                    .id
            })
            .collect();
        state.set_assignments(d, z);
    }
    Ok(state)
}

pub fn kmeans_init<R: Rng + ?Sized>(data: &ModelData, hyper: &Hyperparameters, k: usize, rng: &mut R) -> Result<LatentState> {
    let clusters = kmeans_clusters(&data.features, k, rng)?;
    state_from_clusters(data, hyper, &clusters, rng)
}

pub fn initial_state<R: Rng + ?Sized>(
    data: &ModelData,
    hyper: &Hyperparameters,
    strategy: InitStrategy,
    rng: &mut R,
) -> Result<LatentState> {
    let v = data.num_words();
    match strategy {
        InitStrategy::KMeans { k } => kmeans_init(data, hyper, k, rng),
        InitStrategy::Random { k } => {
            if k == 0 || k > v {
                return Err(Error::InvalidArgument(format!("k must be in 1..={v}, got {k}")));
            }
            // every cluster gets at least one word
            let mut labels: Vec<usize> = (0..v).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
            labels.shuffle(rng);
            state_from_clusters(data, hyper, &groups(&labels), rng)
        }
        InitStrategy::Singleton => {
            let clusters: Vec<Vec<usize>> = (0..v).map(|i| vec![i]).collect();
            state_from_clusters(data, hyper, &clusters, rng)
        }
    }
}
