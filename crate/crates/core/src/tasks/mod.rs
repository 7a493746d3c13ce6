//! Training objectives, datasets and sharding.

mod csv_io;
mod objective;
mod shard;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, write_csv, LabelColumn, LoadOptions};
pub use objective::{
    least_squares_grad, least_squares_loss, logreg_grad, logreg_loss, Objective, ObjectiveKind,
};
pub use shard::{shard_examples, Shard};
pub use synthetic::{generate_synthetic, generate_vectors, SyntheticKind};

/// How a dataset came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetProvenance {
    Synthetic {
        kind: SyntheticKind,
        seed: u64,
        noise: f64,
        /// Ground-truth weights used to generate labels.
        true_weights: Vec<f64>,
    },
    Csv {
        path: PathBuf,
        /// Per-column `(mean, std)` when standardization was applied.
        standardization: Option<Vec<(f64, f64)>>,
    },
}

/// `N` examples of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
    provenance: DatasetProvenance,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<f64>,
        dim: usize,
        provenance: DatasetProvenance,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dataset dimension must be positive"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::domain(format!(
                "{} feature values do not fit {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        crate::vector::check_finite(&features)?;
        crate::vector::check_finite(&labels)?;
        Ok(Self {
            features,
            labels,
            dim,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, index: usize) -> f64 {
        self.labels[index]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn provenance(&self) -> &DatasetProvenance {
        &self.provenance
    }

    /// Same examples, ignoring provenance.
    pub fn same_examples(&self, other: &Dataset) -> bool {
        self.dim == other.dim && self.features == other.features && self.labels == other.labels
    }
}
