//! Corpus and semantic-feature ingestion.

mod cooccurrence;
mod corpus;
mod features;

pub use cooccurrence::{
    build_cooccurrence_features, cooccurrence_counts, project_principal_components, tokenize,
    CooccurrenceFeatures, RawTextCollection,
};
pub use corpus::{load_corpus, Corpus, Document};
pub use features::{
    lambda_sidecar_path, load_features, parse_feature_tsv, SemanticFeatures, DEFAULT_LAMBDA,
};
