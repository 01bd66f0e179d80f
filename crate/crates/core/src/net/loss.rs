use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `½|f - y|²` per example.
    Mse,
    /// Softmax cross-entropy against target distributions.
    CrossEntropy,
}

#[derive(Clone, Debug)]
pub struct LossEval {
    /// Mean loss over the batch, times the scale.
    pub value: f64,
    /// `dL/df` of the mean loss, one row per example.
    pub grad: Array2<f64>,
}

impl Loss {
    pub fn evaluate(&self, out: ArrayView2<f64>, targets: ArrayView2<f64>, scale: f64) -> Result<LossEval> {
        if out.dim() != targets.dim() {
            return Err(Error::Shape(format!(
                "outputs {:?} and targets {:?} differ",
                out.dim(),
                targets.dim()
            )));
        }
        let b = out.nrows() as f64;
        let (value, mut grad) = match self {
            Loss::Mse => {
                let diff = &out - &targets;
                (0.5 * diff.iter().map(|v| v * v).sum::<f64>() / b, diff)
            }
            Loss::CrossEntropy => {
                let mut probs = out.to_owned();
                let mut total = 0.0;
                for (mut row, t) in probs.axis_iter_mut(Axis(0)).zip(targets.axis_iter(Axis(0))) {
                    let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    total += t.iter().zip(row.iter()).map(|(ti, fi)| ti * (lse - fi)).sum::<f64>();
                    row.mapv_inplace(|v| (v - lse).exp());
                }
                (total / b, probs - targets)
            }
        };
        grad *= scale / b;
        Ok(LossEval { value: value * scale, grad })
    }
}

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), classes));
    for (i, &c) in labels.iter().enumerate() {
        m[[i, c]] = 1.0;
    }
    m
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(out: ArrayView2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = out
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    hits as f64 / labels.len() as f64
}
