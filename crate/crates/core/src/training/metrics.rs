use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion matrix (rows = true class, columns = predicted) with weighted
/// accuracy (overall accuracy) and unweighted accuracy (mean per-class
/// recall over classes that occur).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Vec<Vec<u64>>,
    pub wa: f64,
    pub ua: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Invalid("metrics over an empty set".into()));
        }
        let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let recalls: Vec<f64> = confusion
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            wa: correct as f64 / total as f64,
            ua: recalls.iter().sum::<f64>() / recalls.len() as f64,
            confusion,
        })
    }

    /// Builds metrics from `(true, predicted)` pairs.
    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (t, p) in pairs {
            if t >= n_classes || p >= n_classes {
                return Err(Error::Invalid(format!("class index out of range: ({t}, {p})")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }
}
