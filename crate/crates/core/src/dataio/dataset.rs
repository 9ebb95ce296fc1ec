//! Pairing an ARFF relation with a label list into a training-ready
//! dataset: features and 0/1 label matrix, plus optional z-score
//! standardization fitted on training features.

use super::arff::{parse_arff, ArffRelation, ParseError};
use super::xml::parse_labels_xml;
use crate::matrix::Matrix;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error("label '{0}' from the label list has no matching attribute")]
    MissingLabelAttribute(String),
    #[error("label attribute '{attr}' holds non-binary value {value} in row {row}")]
    NonBinaryLabel { attr: String, row: usize, value: f64 },
    #[error("dataset has no feature attributes")]
    NoFeatures,
    #[error("label list is empty")]
    NoLabels,
    #[error("dataset has no rows")]
    Empty,
    #[error("feature count mismatch: expected {expected}, found {found}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("label set mismatch: expected {expected:?}")]
    LabelMismatch { expected: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct MulanDataset {
    pub features: Matrix,
    /// 0/1 matrix, one column per label in label-list order.
    pub labels: Matrix,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
}

impl MulanDataset {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn total_labels(&self) -> f64 {
        self.labels.sum()
    }

    pub fn mean_labels_per_sample(&self) -> f64 {
        self.total_labels() / self.n() as f64
    }

    /// Split an ARFF relation against an ordered label-name list. Label
    /// columns are looked up by exact attribute name; the remaining
    /// columns become features in their original order.
    pub fn from_parts(rel: &ArffRelation, label_names: Vec<String>) -> Result<Self, DataError> {
        if label_names.is_empty() {
            return Err(DataError::NoLabels);
        }
        let mut label_cols = Vec::with_capacity(label_names.len());
        for name in &label_names {
            let col = rel
                .attributes
                .iter()
                .position(|a| &a.name == name)
                .ok_or_else(|| DataError::MissingLabelAttribute(name.clone()))?;
            label_cols.push(col);
        }
        let feature_cols: Vec<usize> = (0..rel.attributes.len())
            .filter(|c| !label_cols.contains(c))
            .collect();
        if feature_cols.is_empty() {
            return Err(DataError::NoFeatures);
        }
        if rel.data.rows() == 0 {
            return Err(DataError::Empty);
        }

        let n = rel.data.rows();
        let mut features = Matrix::zeros(n, feature_cols.len());
        let mut labels = Matrix::zeros(n, label_cols.len());
        for r in 0..n {
            let src = rel.data.row(r);
            for (fi, &c) in feature_cols.iter().enumerate() {
                features.set(r, fi, src[c]);
            }
            for (li, &c) in label_cols.iter().enumerate() {
                let v = src[c];
                if v != 0.0 && v != 1.0 {
                    return Err(DataError::NonBinaryLabel {
                        attr: rel.attributes[c].name.clone(),
                        row: r,
                        value: v,
                    });
                }
                labels.set(r, li, v);
            }
        }
        let feature_names = feature_cols
            .iter()
            .map(|&c| rel.attributes[c].name.clone())
            .collect();
        Ok(MulanDataset { features, labels, feature_names, label_names })
    }
}

fn read_file(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load an ARFF file together with its label-list XML.
pub fn load_mulan_pair(arff_path: &Path, xml_path: &Path) -> Result<MulanDataset, DataError> {
    let arff_text = read_file(arff_path)?;
    let rel = parse_arff(&arff_text).map_err(|source| DataError::Parse {
        path: arff_path.display().to_string(),
        source,
    })?;
    let xml_text = read_file(xml_path)?;
    let names = parse_labels_xml(&xml_text).map_err(|source| DataError::Parse {
        path: xml_path.display().to_string(),
        source,
    })?;
    MulanDataset::from_parts(&rel, names)
}

/// Per-feature z-score parameters fitted on training data. Features with
/// (near) zero variance are centered but not scaled.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows() as f64;
        let cols = features.cols();
        let mut mean = vec![0.0; cols];
        for r in 0..features.rows() {
            for (m, &v) in mean.iter_mut().zip(features.row(r).iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; cols];
        for r in 0..features.rows() {
            for ((s, &v), &m) in var.iter_mut().zip(features.row(r).iter()).zip(mean.iter()) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var
            .iter()
            .map(|&s| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, &m), &s) in out
                .row_mut(r)
                .iter_mut()
                .zip(self.mean.iter())
                .zip(self.std.iter())
            {
                *v = (*v - m) / s;
            }
        }
        out
    }
}
