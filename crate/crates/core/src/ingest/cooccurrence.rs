use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, SemanticFeatures, DEFAULT_LAMBDA};

/// Raw documents, one string per document.
#[derive(Debug, Clone, Default)]
pub struct RawTextCollection {
    pub documents: Vec<String>,
}

impl RawTextCollection {
    pub fn new(documents: Vec<String>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::Validation("raw text collection is empty".into()));
        }
        Ok(RawTextCollection { documents })
    }

    /// Reads every regular file in `dir` (sorted by file name) as one document.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let docs = paths
            .iter()
            .map(|p| fs::read_to_string(p).map_err(|e| Error::io(p, e)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(docs)
    }

    /// Sentences across all documents, split on `.`, `!`, `?` and newlines.
    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents
            .iter()
            .flat_map(|d| d.split(['.', '!', '?', '\n']))
            .filter(|s| !s.trim().is_empty())
    }
}

/// Lowercased whitespace tokens with surrounding punctuation stripped.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '\'')
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Sentence-level co-occurrence counts: entry `(i, j)` is the number of
/// sentences containing both word `i` and word `j`; the diagonal counts
/// sentences containing the word at all.
pub fn cooccurrence_counts(raw: &RawTextCollection, corpus: &Corpus) -> DMatrix<f64> {
    let v = corpus.num_words();
    let index: HashMap<String, usize> = corpus
        .vocabulary
        .iter()
        .enumerate()
        .map(|(i, w)| (w.to_lowercase(), i))
        .collect();
    let mut counts = DMatrix::<f64>::zeros(v, v);
    for sentence in raw.sentences() {
        let present: BTreeSet<usize> = tokenize(sentence)
            .iter()
            .filter_map(|t| index.get(t).copied())
            .collect();
        for &i in &present {
            for &j in &present {
                counts[(i, j)] += 1.0;
            }
        }
    }
    counts
}

#[derive(Debug, Clone)]
pub struct CooccurrenceFeatures {
    pub features: SemanticFeatures,
    /// Fraction of total variance captured by the retained components.
    pub variance_captured: f64,
    /// Vocabulary words never seen in any sentence; their columns are zero.
    pub unobserved_words: Vec<usize>,
}

/// Projects a symmetric count matrix onto its top `f` principal components.
///
/// Each word's co-occurrence row is one observation. Rows are centered over
/// the observed words, the scatter matrix is eigendecomposed and every word
/// is projected onto the leading eigenvectors. Columns of unobserved words
/// are left at zero so feature rows stay centered.
pub fn project_principal_components(
    counts: &DMatrix<f64>,
    f: usize,
    observed: &[bool],
) -> Result<(DMatrix<f64>, f64)> {
    let v = counts.nrows();
    if f > v {
        return Err(Error::InvalidArgument(format!(
            "requested {f} components but only {v} words"
        )));
    }
    let obs: Vec<usize> = (0..v).filter(|&i| observed[i]).collect();
    let n = obs.len();
    let mut centered = DMatrix::<f64>::zeros(n, v);
    if n > 0 {
        let mut mean = vec![0.0; v];
        for &i in &obs {
            for j in 0..v {
                mean[j] += counts[(i, j)];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for (r, &i) in obs.iter().enumerate() {
            for j in 0..v {
                centered[(r, j)] = counts[(i, j)] - mean[j];
            }
        }
    }
    let scatter = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|x| x.max(0.0)).sum();
    let kept: f64 = order[..f].iter().map(|&k| eig.eigenvalues[k].max(0.0)).sum();
    let variance_captured = if total > 0.0 { kept / total } else { 1.0 };

    let mut y = DMatrix::<f64>::zeros(f, v);
    for (row, &k) in order[..f].iter().enumerate() {
        let mut u: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: the largest-magnitude loading is positive.
        let pivot = u
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        for (r, &i) in obs.iter().enumerate() {
            y[(row, i)] = (0..v).map(|j| centered[(r, j)] * u[j]).sum();
        }
    }
    Ok((y, variance_captured))
}

/// Sentence co-occurrence → PCA feature builder.
pub fn build_cooccurrence_features(
    raw: &RawTextCollection,
    corpus: &Corpus,
    f: usize,
) -> Result<CooccurrenceFeatures> {
    let v = corpus.num_words();
    if f == 0 || f > v {
        return Err(Error::InvalidArgument(format!(
            "number of components must be in 1..={v}, got {f}"
        )));
    }
    let counts = cooccurrence_counts(raw, corpus);
    let observed: Vec<bool> = (0..v).map(|i| counts[(i, i)] > 0.0).collect();
    let unobserved_words: Vec<usize> = (0..v).filter(|&i| !observed[i]).collect();
    for &i in &unobserved_words {
        log::warn!(
            "vocabulary word {:?} never appears in the raw text; its feature column is zero",
            corpus.vocabulary[i]
        );
    }
    let (y, variance_captured) = project_principal_components(&counts, f, &observed)?;
    let features = SemanticFeatures::new(y, vec![DEFAULT_LAMBDA; v])?;
    Ok(CooccurrenceFeatures {
        features,
        variance_captured,
        unobserved_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Document;
    use std::collections::BTreeMap;

    fn corpus(words: &[&str]) -> Corpus {
        Corpus::new(
            words.iter().map(|s| s.to_string()).collect(),
            vec![Document::new("d", BTreeMap::from([(0, 1)]))],
        )
        .unwrap()
    }

    #[test]
    fn tokenizer_lowercases_and_strips() {
        assert_eq!(tokenize("Hello, World!  it's"), vec!["hello", "world", "it's"]);
    }

    #[test]
    fn counts_are_symmetric_with_sentence_diagonal() {
        let c = corpus(&["apple", "pie", "cake"]);
        let raw = RawTextCollection::new(vec!["Apple pie. Apple cake! pie\ncake apple apple".into()]).unwrap();
        let m = cooccurrence_counts(&raw, &c);
        assert_eq!(m, m.transpose());
        assert_eq!(m[(0, 0)], 3.0);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(0, 2)], 2.0);
        assert_eq!(m[(1, 2)], 0.0);
    }

    #[test]
    fn words_always_together_get_identical_columns() {
        let c = corpus(&["salt", "pepper", "sugar", "flour"]);
        let raw = RawTextCollection::new(vec![
            "salt pepper sugar. salt pepper. flour sugar. salt pepper flour. sugar".into(),
        ])
        .unwrap();
        let out = build_cooccurrence_features(&raw, &c, 3).unwrap();
        let y = out.features.matrix();
        for k in 0..3 {
            assert!((y[(k, 0)] - y[(k, 1)]).abs() < 1e-9);
        }
    }

    #[test]
    fn full_basis_captures_all_variance() {
        let c = corpus(&["a", "b", "c", "d"]);
        let raw = RawTextCollection::new(vec!["a b. b c d. a d. c. a b c".into()]).unwrap();
        let out = build_cooccurrence_features(&raw, &c, 4).unwrap();
        assert!((out.variance_captured - 1.0).abs() < 1e-9);
        for k in 0..4 {
            let mean: f64 = out.features.matrix().row(k).iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn unobserved_word_column_is_zero() {
        let c = corpus(&["a", "b", "c", "zzz"]);
        let raw = RawTextCollection::new(vec!["a b. b c. a c c".into()]).unwrap();
        let out = build_cooccurrence_features(&raw, &c, 2).unwrap();
        assert_eq!(out.unobserved_words, vec![3]);
        assert!(out.features.matrix().column(3).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn too_many_components() {
        let c = corpus(&["a", "b"]);
        let raw = RawTextCollection::new(vec!["a b".into()]).unwrap();
        assert!(build_cooccurrence_features(&raw, &c, 3).is_err());
    }

    /// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors as columns.
    fn jacobi(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for _ in 0..100 {
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let (c, s) = (1.0 / (t * t + 1.0).sqrt(), t / (t * t + 1.0).sqrt());
                for k in 0..3 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
        ([a[0][0], a[1][1], a[2][2]], v)
    }

    #[test]
    fn three_word_projection_matches_eigendecomposition_oracle() {
        let c = corpus(&["a", "b", "c"]);
        let raw = RawTextCollection::new(vec!["a b. a b. b c. a".into()]).unwrap();
        let counts = [[3.0, 2.0, 0.0], [2.0, 3.0, 1.0], [0.0, 1.0, 1.0]];
        assert_eq!(cooccurrence_counts(&raw, &c), DMatrix::from_fn(3, 3, |i, j| counts[i][j]));

        let mean: Vec<f64> = (0..3).map(|j| counts.iter().map(|r| r[j]).sum::<f64>() / 3.0).collect();
        let x: Vec<Vec<f64>> = counts.iter().map(|r| (0..3).map(|j| r[j] - mean[j]).collect()).collect();
        let mut scatter = [[0.0; 3]; 3];
        for (i, row) in scatter.iter_mut().enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                *s = x.iter().map(|r| r[i] * r[j]).sum();
            }
        }
        let (values, vectors) = jacobi(scatter);
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let total: f64 = values.iter().map(|l| l.max(0.0)).sum();

        let out = build_cooccurrence_features(&raw, &c, 2).unwrap();
        assert!((out.variance_captured - (values[order[0]] + values[order[1]]) / total).abs() < 1e-9);
        for (k, &e) in order[..2].iter().enumerate() {
            let u: Vec<f64> = (0..3).map(|j| vectors[j][e]).collect();
            for w in 0..3 {
                let expected: f64 = (0..3).map(|j| x[w][j] * u[j]).sum();
                let got = out.features.matrix()[(k, w)];
                assert!((got.abs() - expected.abs()).abs() < 1e-9, "component {k} word {w}: {got} vs {expected}");
            }
        }
    }
}
