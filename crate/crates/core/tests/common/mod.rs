//! Reference computations shared by the integration tests. These are written
//! against the model definition directly and do not call the library's
//! likelihood code.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;
use superwords::ingest::{Corpus, Document};
use superwords::model::Hyperparameters;

/// Corpus with words `w0..` and documents given as `(word, count)` lists.
pub fn corpus(num_words: usize, docs: &[&[(usize, u32)]]) -> Corpus {
    Corpus::new(
        (0..num_words).map(|i| format!("w{i}")).collect(),
        docs.iter()
            .enumerate()
            .map(|(d, counts)| Document::new(format!("d{d}"), counts.iter().copied().collect()))
            .collect(),
    )
    .unwrap()
}

/// `Φ` from per-concept word-document counts (`rows × V`).
pub fn phi_from_counts(counts: &[Vec<u32>], num_words: usize) -> DMatrix<f64> {
    let totals: Vec<u32> = (0..num_words).map(|i| counts.iter().map(|r| r[i]).sum()).collect();
    DMatrix::from_fn(counts.len(), num_words, |r, i| {
        if totals[i] == 0 {
            0.0
        } else {
            counts[r][i] as f64 / totals[i] as f64
        }
    })
}

/// Full log density of the features given `Φ` with loadings and noise
/// variance integrated out, evaluated through the `V × V` covariance
/// `σ²(I + ΦᵀΦ / K)` of each feature row.
pub fn semantic_reference(y: &DMatrix<f64>, phi: &DMatrix<f64>, hyper: &Hyperparameters) -> f64 {
    let v = y.ncols();
    let cov = DMatrix::<f64>::identity(v, v) + phi.transpose() * phi / hyper.k;
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let (a, b) = (hyper.alpha_sigma, hyper.beta_sigma);
    let half_v = v as f64 / 2.0;
    let mut total = 0.0;
    for k in 0..y.nrows() {
        let row = y.row(k).transpose();
        let q = row.dot(&chol.solve(&row));
        total += a * b.ln() - ln_gamma(a) + ln_gamma(a + half_v)
            - half_v * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det
            - (a + half_v) * (b + 0.5 * q).ln();
    }
    total
}

/// Total variation distance between two distributions keyed by outcome.
pub fn total_variation<K: Ord + Clone>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut keys: Vec<&K> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Normalizes counts into frequencies.
pub fn frequencies<K: Ord + Clone>(counts: &BTreeMap<K, usize>) -> BTreeMap<K, f64> {
    let n: usize = counts.values().sum();
    counts.iter().map(|(k, &c)| (k.clone(), c as f64 / n as f64)).collect()
}

/// Normalizes log weights into probabilities.
pub fn normalize_log<K: Ord + Clone>(logw: &BTreeMap<K, f64>) -> BTreeMap<K, f64> {
    let max = logw.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logw.values().map(|&l| (l - max).exp()).sum();
    logw.iter().map(|(k, &l)| (k.clone(), (l - max).exp() / z)).collect()
}
