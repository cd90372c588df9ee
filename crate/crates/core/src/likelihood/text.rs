use crate::ingest::Document;
use crate::model::ActiveConcept;

/// Token counts of one document in the form the likelihood terms consume.
#[derive(Debug, Clone, PartialEq)]
pub struct DocWords {
    /// `(word, n_w)` pairs sorted by word index.
    pub counts: Vec<(usize, u32)>,
    /// One entry per token, grouped by word in index order.
    pub tokens: Vec<usize>,
    pub total: u32,
}

impl DocWords {
    pub fn from_document(doc: &Document) -> Self {
        let counts: Vec<(usize, u32)> = doc.counts.iter().map(|(&w, &n)| (w, n)).collect();
        let tokens = counts
            .iter()
            .flat_map(|&(w, n)| std::iter::repeat_n(w, n as usize))
            .collect();
        DocWords {
            total: doc.num_tokens(),
            counts,
            tokens,
        }
    }
}

/// Log-probability of a document's token sequence given its active concepts,
/// with token assignments summed out:
///
/// `Σ_w n_w log(Σ_{z: w ∈ f̂_z} θ_w π_z / S_z) − N_d log Σ_z π_z`,
/// where `S_z = Σ_{l ∈ f̂_z} θ_l`.
///
/// Returns `−∞` when some observed word has no active concept containing it.
/// The multinomial coefficient of the bag of words is omitted.
pub fn text_log_likelihood(concepts: &[ActiveConcept], doc: &DocWords, theta: &[f64]) -> f64 {
    if doc.total == 0 {
        return 0.0;
    }
    let pi_sum: f64 = concepts.iter().map(|c| c.pi).sum();
    if !(pi_sum > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut ll = 0.0;
    for &(w, n) in &doc.counts {
        let p: f64 = concepts
            .iter()
            .filter(|c| c.words.contains(w))
            .map(|c| c.pi / c.theta_sum)
            .sum();
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += n as f64 * (theta[w] * p).ln();
    }
    ll - doc.total as f64 * pi_sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WordSet;
    use std::collections::BTreeMap;

    fn doc(counts: &[(usize, u32)]) -> DocWords {
        DocWords::from_document(&Document::new("d", counts.iter().copied().collect::<BTreeMap<_, _>>()))
    }

    fn concept(id: u64, words: &[usize], pi: f64, theta: &[f64]) -> ActiveConcept {
        ActiveConcept::new(id, WordSet::from_indices(theta.len(), words.iter().copied()), pi, theta)
    }

    #[test]
    fn single_concept_uniform_theta() {
        let theta = [1.0; 3];
        let cs = [concept(0, &[0, 1], 2.7, &theta)];
        let ll = text_log_likelihood(&cs, &doc(&[(0, 1)]), &theta);
        assert!((ll.exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unexplained_word_is_negative_infinity() {
        let theta = [1.0; 3];
        let cs = [concept(0, &[0, 1], 1.0, &theta)];
        assert_eq!(text_log_likelihood(&cs, &doc(&[(0, 1), (2, 1)]), &theta), f64::NEG_INFINITY);
        assert_eq!(text_log_likelihood(&[], &doc(&[(0, 1)]), &theta), f64::NEG_INFINITY);
    }

    #[test]
    fn two_concepts_match_assignment_sum() {
        let theta = [1.0; 3];
        let cs = [concept(0, &[0], 1.0, &theta), concept(1, &[0, 1], 3.0, &theta)];
        let ll = text_log_likelihood(&cs, &doc(&[(0, 1)]), &theta);
        assert!((ll.exp() - 0.625).abs() < 1e-12);
    }

    #[test]
    fn empty_document_has_probability_one() {
        assert_eq!(text_log_likelihood(&[], &doc(&[]), &[1.0]), 0.0);
    }

    #[test]
    fn tokens_expand_counts() {
        let d = doc(&[(2, 2), (0, 1)]);
        assert_eq!(d.tokens, vec![0, 2, 2]);
        assert_eq!(d.total, 3);
    }
}
