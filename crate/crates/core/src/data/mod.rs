//! Client datasets: synthetic shifted domains, splitting utilities and an IDX
//! reader for real digit data.

pub mod idx;
pub mod split;
pub mod synthetic;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{load_idx, write_idx};
pub use split::{split_domain, train_test_split};
pub use synthetic::{make_domain, BaseTask, DomainSpec, Transform};

/// `N x d` features with optional labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Option<Vec<usize>>,
    pub domain_tag: String,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, domain_tag: impl Into<String>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Input(format!("features must be N x d, got {:?}", features.shape())));
        }
        if num_classes < 2 {
            return Err(Error::Input(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.rows() {
                return Err(Error::Input(format!("{} labels for {} samples", labels.len(), features.rows())));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
                return Err(Error::Input(format!("label {bad} out of range for {num_classes} classes")));
            }
        }
        Ok(Dataset {
            features,
            labels,
            domain_tag: domain_tag.into(),
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Drops the labels, as held by a target client.
    pub fn unlabeled(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    pub fn select(&self, idx: &[usize], tag: impl Into<String>) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            domain_tag: tag.into(),
            num_classes: self.num_classes,
        }
    }

    /// Per-sample count of each class.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| {
            let mut counts = vec![0; self.num_classes];
            for &y in l {
                counts[y] += 1;
            }
            counts
        })
    }

    /// Z-scores every feature column with this dataset's own statistics.
    pub fn standardized(&self) -> Dataset {
        let (n, d) = (self.len(), self.dim());
        let mut out = self.clone();
        for j in 0..d {
            let col = (0..n).map(|i| self.features.values()[i * d + j]);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                let v = &mut out.features.values_mut()[i * d + j];
                *v = (*v - mean) / sd;
            }
        }
        out
    }

    /// Writes `f0..f{d-1},label`; the label column is empty for unlabeled data.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels.as_ref().map(|l| l[i].to_string()).unwrap_or_default());
            w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
