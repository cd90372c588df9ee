//! Marginal likelihood of the semantic features given `Φ`, with the latent
//! concept features and the per-feature noise variances integrated out.
//!
//! With `G = ΦΦᵀ + K I` and `B = ΦYᵀ`, each feature row contributes
//! `β̂_k = ½(‖Y_k‖² − B_kᵀ G⁻¹ B_k) + β_σ`, and
//!
//! `log P(Y|Φ) = (|𝒞|F/2) log K − (F/2) log|G| − (α_σ + V/2) Σ_k log β̂_k + c`
//!
//! where `c` depends only on `(F, V, α_σ, β_σ)`; see [`semantic_log_normalizer`].
//! Concepts with an all-zero row of `Φ` leave the value unchanged.


use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::likelihood::phi::PhiMatrix;
use crate::linalg::Cholesky;
use crate::model::{ConceptId, Hyperparameters, LatentState, WordSet};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    k: f64,
    alpha_sigma: f64,
    beta_sigma: f64,
}

impl Params {
    fn from(h: &Hyperparameters) -> Self {
        Params {
            k: h.k,
            alpha_sigma: h.alpha_sigma,
            beta_sigma: h.beta_sigma,
        }
    }
}

/// The constant `c` dropped from [`semantic_log_likelihood`]:
/// `F[α_σ log β_σ + lnΓ(α_σ + V/2) − lnΓ(α_σ) − (V/2) log 2π]`.
pub fn semantic_log_normalizer(num_features: usize, num_words: usize, hyper: &Hyperparameters) -> f64 {
    let f = num_features as f64;
    let half_v = num_words as f64 / 2.0;
    let a = hyper.alpha_sigma;
    f * (a * hyper.beta_sigma.ln() + ln_gamma(a + half_v)
        - ln_gamma(a)
        - half_v * (2.0 * std::f64::consts::PI).ln())
}

/// Value from a factor of `G` and the rows of `B` (row-major `n × F`).
fn evaluate(chol: &Cholesky, b: &[f64], yy: &[f64], num_words: usize, p: Params) -> Result<f64> {
    let n = chol.dim();
    let f = yy.len();
    if f == 0 {
        return Ok(0.0);
    }
    let mut col = vec![0.0; n];
    let mut sum_log_beta = 0.0;
    for k in 0..f {
        for (r, c) in col.iter_mut().enumerate() {
            *c = b[r * f + k];
        }
        let q = chol.quad_form(&col);
        let mut beta = 0.5 * (yy[k] - q) + p.beta_sigma;
        if beta < p.beta_sigma {
            let slack = 1e-8 * (1.0 + yy[k]);
            if beta < p.beta_sigma - slack {
                return Err(Error::Numerical(format!(
                    "feature {k}: residual {} below prior scale {}",
                    beta, p.beta_sigma
                )));
            }
            beta = p.beta_sigma;
        }
        sum_log_beta += beta.ln();
    }
    let ff = f as f64;
    Ok(0.5 * (n as f64) * ff * p.k.ln() - 0.5 * ff * chol.log_det()
        - (p.alpha_sigma + num_words as f64 / 2.0) * sum_log_beta)
}

fn gram(phi: &[f64], n: usize, v: usize, k: f64) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for r in 0..n {
        for s in 0..=r {
            let dot: f64 = phi[r * v..(r + 1) * v]
                .iter()
                .zip(&phi[s * v..(s + 1) * v])
                .map(|(a, b)| a * b)
                .sum();
            g[r * n + s] = dot;
            g[s * n + r] = dot;
        }
        g[r * n + r] += k;
    }
    g
}

/// Row `k` of `Y` times `Φ_rᵀ`, for every row `r`, into `n × F` row-major.
fn cross(phi: &[f64], n: usize, v: usize, ycols: &[f64], f: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * f];
    for r in 0..n {
        for i in 0..v {
            let p = phi[r * v + i];
            if p != 0.0 {
                for k in 0..f {
                    b[r * f + k] += p * ycols[i * f + k];
                }
            }
        }
    }
    b
}

/// From-scratch evaluation of the proportional form.
pub fn semantic_log_likelihood(y: &DMatrix<f64>, phi: &PhiMatrix, hyper: &Hyperparameters) -> Result<f64> {
    let f = y.nrows();
    let v = y.ncols();
    if phi.values.ncols() != v {
        return Err(Error::Dimension(format!(
            "Φ has {} columns, feature matrix has {v}",
            phi.values.ncols()
        )));
    }
    if f == 0 {
        return Ok(0.0);
    }
    let n = phi.num_concepts();
    let flat: Vec<f64> = (0..n).flat_map(|r| (0..v).map(move |i| (r, i))).map(|(r, i)| phi.values[(r, i)]).collect();
    let ycols: Vec<f64> = (0..v).flat_map(|i| (0..f).map(move |k| (k, i))).map(|(k, i)| y[(k, i)]).collect();
    let chol = Cholesky::factor(&gram(&flat, n, v, hyper.k), n)?;
    let b = cross(&flat, n, v, &ycols, f);
    let yy: Vec<f64> = (0..f).map(|k| y.row(k).iter().map(|x| x * x).sum()).collect();
    evaluate(&chol, &b, &yy, v, Params::from(hyper))
}

/// Pending change of a single column of `Φ`, evaluated but not applied.
#[derive(Debug, Clone)]
pub struct ColumnUpdate {
    word: usize,
    counts: Vec<u32>,
    total: u32,
    chol: Cholesky,
    b: Vec<f64>,
    pub value: f64,
}

/// Incrementally maintained semantic likelihood for one chain.
///
/// Rows follow the state's concepts in ascending id order. Single-column
/// changes (one `f̂` flip) are applied with a rank-one update and downdate
/// of the factor of `G`; row insertions and removals rebuild everything.
#[derive(Debug, Clone)]
pub struct SemanticCache {
    params: Params,
    num_words: usize,
    num_features: usize,
    ids: Vec<ConceptId>,
    /// `m_ji`, row-major `n × V`.
    counts: Vec<u32>,
    col_totals: Vec<u32>,
    phi: Vec<f64>,
    /// `Y` stored column-major (`V × F`).
    ycols: Vec<f64>,
    yy: Vec<f64>,
    chol: Cholesky,
    b: Vec<f64>,
    value: f64,
    version: u64,
}

impl SemanticCache {
    pub fn new(state: &LatentState, y: &DMatrix<f64>) -> Result<Self> {
        let v = state.num_words();
        if y.ncols() != v {
            return Err(Error::Dimension(format!(
                "feature matrix has {} columns, model has {v} words",
                y.ncols()
            )));
        }
        let f = y.nrows();
        let ycols: Vec<f64> = (0..v).flat_map(|i| (0..f).map(move |k| (k, i))).map(|(k, i)| y[(k, i)]).collect();
        let yy = (0..f).map(|k| y.row(k).iter().map(|x| x * x).sum()).collect();
        let ids: Vec<ConceptId> = state.concepts().keys().copied().collect();
        let counts: Vec<u32> = state.concepts().values().flat_map(|s| s.word_docs.iter().copied()).collect();
        let mut cache = SemanticCache {
            params: Params::from(&state.hyper),
            num_words: v,
            num_features: f,
            ids,
            counts,
            col_totals: Vec::new(),
            phi: Vec::new(),
            ycols,
            yy,
            chol: Cholesky::empty(),
            b: Vec::new(),
            value: 0.0,
            version: state.version(),
        };
        cache.rebuild()?;
        Ok(cache)
    }

    /// Recomputes `Φ`, the factor, `B` and the value from the stored counts.
    fn rebuild(&mut self) -> Result<()> {
        let (n, v, f) = (self.ids.len(), self.num_words, self.num_features);
        self.col_totals.clear();
        self.col_totals.resize(v, 0);
        for r in 0..n {
            for i in 0..v {
                self.col_totals[i] += self.counts[r * v + i];
            }
        }
        self.phi.clear();
        self.phi.resize(n * v, 0.0);
        for r in 0..n {
            for i in 0..v {
                if self.col_totals[i] > 0 {
                    self.phi[r * v + i] = self.counts[r * v + i] as f64 / self.col_totals[i] as f64;
                }
            }
        }
        if f == 0 {
            self.chol = Cholesky::empty();
            self.b.clear();
            self.value = 0.0;
            return Ok(());
        }
        self.chol = Cholesky::factor(&gram(&self.phi, n, v, self.params.k), n)?;
        self.b = cross(&self.phi, n, v, &self.ycols, f);
        self.value = evaluate(&self.chol, &self.b, &self.yy, v, self.params)?;
        Ok(())
    }

    /// Current log value (proportional form).
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn concept_ids(&self) -> &[ConceptId] {
        &self.ids
    }

    pub fn phi_column(&self, word: usize) -> Vec<f64> {
        (0..self.ids.len()).map(|r| self.phi[r * self.num_words + word]).collect()
    }

    /// Marks the cache as matching `state` after the caller has applied the
    /// same change to both.
    pub fn sync(&mut self, state: &LatentState) {
        self.version = state.version();
    }

    pub fn ensure_fresh(&self, state: &LatentState) -> Result<()> {
        if self.version != state.version() {
            return Err(Error::StaleCache {
                cache: self.version,
                state: state.version(),
            });
        }
        Ok(())
    }

    fn row(&self, id: ConceptId) -> Result<usize> {
        self.ids
            .binary_search(&id)
            .ok()
            .ok_or_else(|| Error::State(format!("concept {id} has no row in the semantic cache")))
    }

    /// Evaluates the value after setting column `word` of the count matrix to
    /// `counts` (one entry per row).
    pub fn propose_column(&self, word: usize, counts: Vec<u32>) -> Result<ColumnUpdate> {
        let (n, v, f) = (self.ids.len(), self.num_words, self.num_features);
        let total: u32 = counts.iter().sum();
        if f == 0 {
            return Ok(ColumnUpdate {
                word,
                counts,
                total,
                chol: Cholesky::empty(),
                b: Vec::new(),
                value: 0.0,
            });
        }
        let old: Vec<f64> = self.phi_column(word);
        let new: Vec<f64> = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        let mut chol = self.chol.clone();
        chol.update(&new);
        if chol.downdate(&old).is_err() {
            let mut phi = self.phi.clone();
            for r in 0..n {
                phi[r * v + word] = new[r];
            }
            chol = Cholesky::factor(&gram(&phi, n, v, self.params.k), n)?;
        }
        let mut b = self.b.clone();
        let ycol = &self.ycols[word * f..(word + 1) * f];
        for r in 0..n {
            let d = new[r] - old[r];
            if d != 0.0 {
                for k in 0..f {
                    b[r * f + k] += d * ycol[k];
                }
            }
        }
        let value = evaluate(&chol, &b, &self.yy, v, self.params)?;
        Ok(ColumnUpdate {
            word,
            counts,
            total,
            chol,
            b,
            value,
        })
    }

    /// Evaluates switching word `word` of concept `id` on or off in one
    /// document (`m_ji` changes by one).
    pub fn propose_flip(&self, id: ConceptId, word: usize, on: bool) -> Result<ColumnUpdate> {
        let r = self.row(id)?;
        let v = self.num_words;
        let mut counts: Vec<u32> = (0..self.ids.len()).map(|s| self.counts[s * v + word]).collect();
        if on {
            counts[r] += 1;
        } else if counts[r] == 0 {
            return Err(Error::State(format!("m_j{word} of concept {id} already zero")));
        } else {
            counts[r] -= 1;
        }
        self.propose_column(word, counts)
    }

    pub fn apply_column(&mut self, u: ColumnUpdate) {
        let (v, n) = (self.num_words, self.ids.len());
        for r in 0..n {
            self.counts[r * v + u.word] = u.counts[r];
            self.phi[r * v + u.word] = if u.total == 0 {
                0.0
            } else {
                u.counts[r] as f64 / u.total as f64
            };
        }
        self.col_totals[u.word] = u.total;
        if self.num_features > 0 {
            self.chol = u.chol;
            self.b = u.b;
        }
        self.value = u.value;
    }

    /// Copy of the cache after adding (`sign = 1`) or removing (`sign = -1`)
    /// one document's word set for concept `id`. The row is created when
    /// missing and dropped when `drop_row` is set.
    pub fn with_document_change(&self, id: ConceptId, words: &WordSet, sign: i32, drop_row: bool) -> Result<SemanticCache> {
        let v = self.num_words;
        let mut next = self.clone();
        let r = match self.ids.binary_search(&id) {
            Ok(r) => r,
            Err(pos) => {
                if sign < 0 {
                    return Err(Error::State(format!("concept {id} has no row to remove from")));
                }
                next.ids.insert(pos, id);
                next.counts.splice(pos * v..pos * v, std::iter::repeat_n(0, v));
                pos
            }
        };
        for i in words.iter() {
            let c = &mut next.counts[r * v + i];
            if sign > 0 {
                *c += 1;
            } else {
                *c = c
                    .checked_sub(1)
                    .ok_or_else(|| Error::State(format!("m_j{i} of concept {id} would go negative")))?;
            }
        }
        if drop_row {
            if next.counts[r * v..(r + 1) * v].iter().any(|&c| c != 0) {
                return Err(Error::State(format!("dropping concept {id} with nonzero counts")));
            }
            next.ids.remove(r);
            next.counts.drain(r * v..(r + 1) * v);
        }
        next.rebuild()?;
        Ok(next)
    }

    /// Full refactorization from the stored counts, discarding accumulated
    /// rounding from rank-one updates.
    pub fn refresh(&mut self) -> Result<()> {
        self.rebuild()
    }
}

/// `log P(Y|Φ')` − `log P(Y|Φ)` for a single `f̂` flip of concept `id`,
/// word `word`, to value `on`.
pub fn delta_semantic_log_likelihood(
    cache: &SemanticCache,
    state: &LatentState,
    id: ConceptId,
    word: usize,
    on: bool,
) -> Result<f64> {
    cache.ensure_fresh(state)?;
    Ok(cache.propose_flip(id, word, on)?.value - cache.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::phi::compute_phi;
    use approx::assert_abs_diff_eq;

    fn hyper(v: usize) -> Hyperparameters {
        Hyperparameters::with_defaults(v)
    }

    #[test]
    fn single_word_single_concept_value() {
        let phi = PhiMatrix::from_counts(vec![0], &[vec![1]], 1);
        let y = DMatrix::zeros(1, 1);
        let h = hyper(1);
        let ll = semantic_log_likelihood(&y, &phi, &h).unwrap();
        assert_abs_diff_eq!(ll.exp(), 0.5f64.sqrt(), epsilon = 1e-12);
        let full = (ll + semantic_log_normalizer(1, 1, &h)).exp();
        assert_abs_diff_eq!(full, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn no_concepts_reduces_to_prior_residuals() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 1.0, 0.5, 0.0, -0.5]);
        let phi = PhiMatrix::from_counts(vec![], &[], 3);
        let h = hyper(3);
        let expect: f64 = (0..2)
            .map(|k| {
                let yy: f64 = y.row(k).iter().map(|x| x * x).sum();
                -(h.alpha_sigma + 1.5) * (0.5 * yy + h.beta_sigma).ln()
            })
            .sum();
        assert_abs_diff_eq!(semantic_log_likelihood(&y, &phi, &h).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn zero_rows_do_not_change_value() {
        let y = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let h = hyper(2);
        let a = PhiMatrix::from_counts(vec![0], &[vec![1, 0]], 2);
        let b = PhiMatrix::from_counts(vec![0, 1], &[vec![1, 0], vec![0, 0]], 2);
        assert_abs_diff_eq!(
            semantic_log_likelihood(&y, &a, &h).unwrap(),
            semantic_log_likelihood(&y, &b, &h).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn flip_matches_recomputation_and_reverses() {
        let v = 4;
        let mut s = LatentState::new(hyper(v), 3, v);
        s.activate_concept(0, 0, WordSet::from_indices(v, [0, 1]), 1.0).unwrap();
        s.activate_concept(1, 0, WordSet::from_indices(v, [1]), 1.0).unwrap();
        s.activate_concept(2, 1, WordSet::from_indices(v, [1, 2]), 1.0).unwrap();
        let y = DMatrix::from_row_slice(2, v, &[1.0, 0.5, -0.3, -1.2, 0.1, -0.4, 0.9, -0.6]);
        let mut cache = SemanticCache::new(&s, &y).unwrap();

        // word 3 has an all-zero column
        for (id, word, on) in [(0, 2, true), (1, 1, false), (0, 3, true)] {
            let d = delta_semantic_log_likelihood(&cache, &s, id, word, on).unwrap();
            let before = semantic_log_likelihood(&y, &compute_phi(&s), &s.hyper).unwrap();
            let doc = if id == 0 { 1 } else { 2 };
            s.set_word(doc, id, word, on).unwrap();
            let after = semantic_log_likelihood(&y, &compute_phi(&s), &s.hyper).unwrap();
            assert_abs_diff_eq!(d, after - before, epsilon = 1e-10);
            let u = cache.propose_flip(id, word, on).unwrap();
            cache.apply_column(u);
            cache.sync(&s);
            let back = delta_semantic_log_likelihood(&cache, &s, id, word, !on).unwrap();
            assert_abs_diff_eq!(d + back, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn stale_cache_detected() {
        let mut s = LatentState::new(hyper(2), 1, 2);
        s.activate_concept(0, 0, WordSet::from_indices(2, [0]), 1.0).unwrap();
        let cache = SemanticCache::new(&s, &DMatrix::zeros(1, 2)).unwrap();
        s.set_word(0, 0, 1, true).unwrap();
        assert!(matches!(
            delta_semantic_log_likelihood(&cache, &s, 0, 1, false),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn document_change_matches_rebuild() {
        let v = 3;
        let mut s = LatentState::new(hyper(v), 2, v);
        s.activate_concept(0, 4, WordSet::from_indices(v, [0, 2]), 1.0).unwrap();
        let y = DMatrix::from_row_slice(1, v, &[0.7, -0.2, -0.5]);
        let cache = SemanticCache::new(&s, &y).unwrap();
        let words = WordSet::from_indices(v, [1, 2]);
        let grown = cache.with_document_change(2, &words, 1, false).unwrap();
        s.activate_concept(1, 2, words.clone(), 1.0).unwrap();
        let direct = SemanticCache::new(&s, &y).unwrap();
        assert_abs_diff_eq!(grown.value(), direct.value(), epsilon = 1e-12);
        assert_eq!(grown.concept_ids(), &[2, 4]);
        let shrunk = grown.with_document_change(2, &words, -1, true).unwrap();
        assert_abs_diff_eq!(shrunk.value(), cache.value(), epsilon = 1e-12);
    }
}
