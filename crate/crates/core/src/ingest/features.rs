use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Corpus;

/// Base-measure weight used for every word when no sidecar is supplied.
pub const DEFAULT_LAMBDA: f64 = 0.05;

/// Observed `F × V` semantic feature matrix (one column per word) together
/// with the per-word base-measure weights `λ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFeatures {
    y: DMatrix<f64>,
    lambda: Vec<f64>,
    /// Row means removed when the matrix was centered.
    offsets: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LambdaSidecar {
    lambda: Vec<f64>,
}

impl SemanticFeatures {
    /// Centers every row and validates `λ`.
    pub fn new(mut y: DMatrix<f64>, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != y.ncols() {
            return Err(Error::Dimension(format!(
                "lambda has {} entries but the feature matrix has {} columns",
                lambda.len(),
                y.ncols()
            )));
        }
        if let Some(bad) = lambda.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::Validation(format!(
                "lambda values must lie strictly inside (0, 1); got {bad}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature matrix has non-finite entries".into()));
        }
        let offsets = center_rows(&mut y);
        Ok(SemanticFeatures { y, lambda, offsets })
    }

    /// No semantic features (`F = 0`), uniform `λ`.
    pub fn empty(num_words: usize, lambda: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(0, num_words), vec![lambda; num_words])
    }

    pub fn with_default_lambda(y: DMatrix<f64>) -> Result<Self> {
        let v = y.ncols();
        Self::new(y, vec![DEFAULT_LAMBDA; v])
    }

    pub fn num_features(&self) -> usize {
        self.y.nrows()
    }

    pub fn num_words(&self) -> usize {
        self.y.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn set_lambda(&mut self, lambda: Vec<f64>) -> Result<()> {
        let rebuilt = SemanticFeatures::new(self.y.clone(), lambda)?;
        self.lambda = rebuilt.lambda;
        Ok(())
    }

    /// Serializes the matrix in the TSV layout: a `F V` header followed by
    /// one tab-separated row per feature. Floats use shortest round-trip
    /// formatting so reads are bit-exact.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.y.nrows(), self.y.ncols());
        for r in 0..self.y.nrows() {
            let row: Vec<String> = (0..self.y.ncols()).map(|c| format!("{:?}", self.y[(r, c)])).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Writes the TSV file and the `λ` sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))?;
        let side = lambda_sidecar_path(path);
        let json = serde_json::to_string(&LambdaSidecar {
            lambda: self.lambda.clone(),
        })?;
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }
}

/// `features.tsv` → `features.lambda.json`
pub fn lambda_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("lambda.json")
}

/// Subtracts each row's mean. Rows that are already centered to within
/// rounding are left untouched so that save/load round-trips are exact.
fn center_rows(y: &mut DMatrix<f64>) -> Vec<f64> {
    let v = y.ncols();
    let mut offsets = vec![0.0; y.nrows()];
    if v == 0 {
        return offsets;
    }
    for r in 0..y.nrows() {
        let mut row = y.row_mut(r);
        let mean = row.iter().sum::<f64>() / v as f64;
        let scale = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if mean.abs() > 1e-13 * scale.max(f64::MIN_POSITIVE) {
            row.iter_mut().for_each(|x| *x -= mean);
            offsets[r] = mean;
        }
    }
    offsets
}

pub fn parse_feature_tsv(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("feature file is empty".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::Parse(format!("bad feature header {header:?}, expected `F V`")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad dimension {s:?} in feature header")))
    };
    let (f, v) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    let mut data = Vec::with_capacity(f * v);
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != v {
            return Err(Error::Dimension(format!(
                "feature row {} has {} values, header says V = {v}",
                lineno + 1,
                vals.len()
            )));
        }
        for s in vals {
            let x: f64 = s
                .parse()
                .map_err(|_| Error::Parse(format!("non-numeric feature entry {s:?}")))?;
            data.push(x);
        }
        rows += 1;
    }
    if rows != f {
        return Err(Error::Dimension(format!("feature file has {rows} rows, header says F = {f}")));
    }
    Ok(DMatrix::from_row_slice(f, v, &data))
}

/// Loads the TSV feature matrix (and the optional `λ` sidecar) for `corpus`.
pub fn load_features(path: impl AsRef<Path>, corpus: &Corpus) -> Result<SemanticFeatures> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let y = parse_feature_tsv(&text)?;
    if y.ncols() != corpus.num_words() {
        return Err(Error::Dimension(format!(
            "feature matrix has {} columns but the corpus vocabulary has {} words",
            y.ncols(),
            corpus.num_words()
        )));
    }
    let side = lambda_sidecar_path(path);
    let lambda = if side.exists() {
        let s = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str::<LambdaSidecar>(&s)?.lambda
    } else {
        vec![DEFAULT_LAMBDA; y.ncols()]
    };
    SemanticFeatures::new(y, lambda)
}
