//! Classification datasets: seeded Gaussian mixtures and the CIFAR-10 binary format.

pub mod cifar;
pub mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::one_hot;

pub use cifar::{encode_cifar10_records, load_cifar10_binary, parse_cifar10_records, ChannelStats};
pub use synthetic::{synthetic_gaussians, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    /// Generator spec or file digest.
    pub provenance: String,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, classes: usize, split: Split, provenance: String) -> Result<Dataset> {
        if labels.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Data(format!("{} inputs but {} labels", inputs.nrows(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Dataset { inputs, labels, classes, split, provenance })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.inputs.ncols()
    }

    /// Inputs and one-hot targets of the rows in `idx`.
    pub fn batch(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let x = self.inputs.select(Axis(0), idx);
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        (x, one_hot(&labels, self.classes))
    }

    pub fn targets(&self) -> Array2<f64> {
        one_hot(&self.labels, self.classes)
    }
}
