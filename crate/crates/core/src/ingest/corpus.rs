use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One bag-of-words document. `counts` maps word index to occurrence count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub counts: BTreeMap<usize, u32>,
    #[serde(default)]
    pub partition: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, counts: BTreeMap<usize, u32>) -> Self {
        Document {
            id: id.into(),
            counts,
            partition: None,
        }
    }

    /// Total number of tokens `N_d`.
    pub fn num_tokens(&self) -> u32 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocabulary: Vec<String>,
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Builds and validates a corpus.
    pub fn new(vocabulary: Vec<String>, documents: Vec<Document>) -> Result<Self> {
        let c = Corpus {
            vocabulary,
            documents,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn num_words(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.vocabulary.iter().position(|w| w == word)
    }

    pub fn partitions(&self) -> BTreeSet<&str> {
        self.documents
            .iter()
            .filter_map(|d| d.partition.as_deref())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocabulary.len();
        if v == 0 {
            return Err(Error::Validation("vocabulary is empty".into()));
        }
        if self.documents.is_empty() {
            return Err(Error::Validation("corpus has no documents".into()));
        }
        let mut seen_words = BTreeSet::new();
        for w in &self.vocabulary {
            if !seen_words.insert(w.as_str()) {
                return Err(Error::Validation(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        let mut ids = BTreeSet::new();
        for doc in &self.documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::Validation(format!("duplicate document id {:?}", doc.id)));
            }
            for (&w, &n) in &doc.counts {
                if w >= v {
                    return Err(Error::Validation(format!(
                        "document {:?} references word index {w} but V = {v}",
                        doc.id
                    )));
                }
                if n == 0 {
                    return Err(Error::Validation(format!(
                        "document {:?} has zero count for word index {w}",
                        doc.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Corpus = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_json(&text)
}
