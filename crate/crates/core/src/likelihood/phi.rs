use nalgebra::DMatrix;

use crate::model::{ConceptId, LatentState};

/// Word-to-concept responsibility matrix: `Φ_ji = m_ji / Σ_j' m_j'i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiMatrix {
    /// Concept of each row, ascending.
    pub concept_ids: Vec<ConceptId>,
    /// `|𝒞| × V`.
    pub values: DMatrix<f64>,
    /// Per-word denominators `Σ_j m_ji`.
    pub column_totals: Vec<u32>,
}

impl PhiMatrix {
    pub fn from_counts(concept_ids: Vec<ConceptId>, counts: &[Vec<u32>], num_words: usize) -> Self {
        let n = concept_ids.len();
        let mut column_totals = vec![0u32; num_words];
        for row in counts {
            for (t, &c) in column_totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        let values = DMatrix::from_fn(n, num_words, |r, i| {
            if column_totals[i] == 0 {
                0.0
            } else {
                counts[r][i] as f64 / column_totals[i] as f64
            }
        });
        PhiMatrix {
            concept_ids,
            values,
            column_totals,
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.values.nrows()
    }
}

pub fn compute_phi(state: &LatentState) -> PhiMatrix {
    let ids: Vec<ConceptId> = state.concepts().keys().copied().collect();
    let counts: Vec<Vec<u32>> = state.concepts().values().map(|s| s.word_docs.clone()).collect();
    PhiMatrix::from_counts(ids, &counts, state.num_words())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyperparameters, WordSet};

    #[test]
    fn single_concept_row() {
        let mut s = LatentState::new(Hyperparameters::with_defaults(4), 1, 4);
        s.activate_concept(0, 0, WordSet::from_indices(4, [0, 1]), 1.0).unwrap();
        let phi = compute_phi(&s);
        assert_eq!(phi.values.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_word_split_by_document_counts() {
        let mut s = LatentState::new(Hyperparameters::with_defaults(2), 4, 2);
        s.activate_concept(0, 0, WordSet::from_indices(2, [1]), 1.0).unwrap();
        for d in 1..4 {
            s.activate_concept(d, 1, WordSet::from_indices(2, [1]), 1.0).unwrap();
        }
        let phi = compute_phi(&s);
        assert_eq!(phi.values[(0, 1)], 0.25);
        assert_eq!(phi.values[(1, 1)], 0.75);
        assert_eq!(phi.column_totals, vec![0, 4]);
    }

    #[test]
    fn empty_state_has_no_rows() {
        let s = LatentState::new(Hyperparameters::with_defaults(3), 2, 3);
        let phi = compute_phi(&s);
        assert_eq!(phi.num_concepts(), 0);
        assert_eq!(phi.values.ncols(), 3);
    }
}
