//! Leave-one-speaker-out cross-validation with per-fold selection of the
//! layer count and cosine threshold.
//!
//! Grid points are compared like epochs (validation UA, then validation
//! loss); the first grid point in `K`-major order wins exact ties.
//!
//! Speakers are ordered lexicographically. Fold `i` tests on speaker `i`,
//! validates on the next speaker (wrapping around) and trains on the rest.
//! Features are standardized with statistics from the training speakers
//! only, before any graph is built.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::trainer::{evaluate, train, EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{apply_standardizer, fit_standardizer, Dataset, StandardizeStats};
use crate::graph::GraphKind;
use crate::model::{ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub test_speaker: String,
    pub val_speaker: String,
    pub train_speakers: BTreeSet<String>,
}

fn speaker_list(dataset: &Dataset) -> Result<Vec<String>> {
    if dataset.speakers.len() < 3 {
        return Err(Error::Invalid(format!(
            "leave-one-speaker-out needs at least 3 speakers (test, validation, train), got {}",
            dataset.speakers.len()
        )));
    }
    Ok(dataset.speakers.iter().cloned().collect())
}

fn split_at(speakers: &[String], i: usize) -> FoldSplit {
    let val = (i + 1) % speakers.len();
    FoldSplit {
        test_speaker: speakers[i].clone(),
        val_speaker: speakers[val].clone(),
        train_speakers: speakers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i && j != val)
            .map(|(_, s)| s.clone())
            .collect(),
    }
}

/// One split per speaker, in speaker order.
pub fn loso_splits(dataset: &Dataset) -> Result<Vec<FoldSplit>> {
    let speakers = speaker_list(dataset)?;
    Ok((0..speakers.len()).map(|i| split_at(&speakers, i)).collect())
}

/// The split that tests on `test_speaker`, with its fold index.
pub fn split_for(dataset: &Dataset, test_speaker: &str) -> Result<(usize, FoldSplit)> {
    let speakers = speaker_list(dataset)?;
    let i = speakers.iter().position(|s| s == test_speaker).ok_or_else(|| {
        Error::Invalid(format!("unknown speaker {test_speaker:?}; available: {}", speakers.join(", ")))
    })?;
    Ok((i, split_at(&speakers, i)))
}

/// Validation result of one (K, γ) grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: f64,
    pub val_wa: f64,
    pub val_ua: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub split: FoldSplit,
    /// Test-speaker metrics of the selected model.
    pub metrics: Metrics,
    pub selected_k: usize,
    pub selected_gamma: f64,
    pub model: ModelConfig,
    pub graph_kind: GraphKind,
    pub params: ModelParams,
    pub standardizer: StandardizeStats,
    /// Training history of the selected candidate.
    pub history: Vec<EpochRecord>,
    pub candidates: Vec<Candidate>,
}

/// Runs the (K, γ) search for one split and evaluates the winner on the
/// test speaker. `fold_index` keys the fold's random streams.
pub fn run_fold(
    dataset: &Dataset,
    split: &FoldSplit,
    tc: &TrainConfig,
    fold_index: usize,
) -> Result<FoldResult> {
    tc.validate()?;
    let train_raw = dataset.by_speakers(&split.train_speakers);
    if train_raw.is_empty() {
        return Err(Error::Invalid("fold has no training utterances".into()));
    }
    let standardizer = fit_standardizer(dataset, train_raw.ids())?;
    let standardized = apply_standardizer(dataset, &standardizer)?;
    let train_set = standardized.by_speakers(&split.train_speakers);
    let val_set = standardized.filter(|u| u.speaker == split.val_speaker);
    let test_set = standardized.filter(|u| u.speaker == split.test_speaker);

    let gammas = match tc.graph_kind {
        GraphKind::Cosine => tc.gamma_grid.clone(),
        // the chain graph has no threshold
        GraphKind::Temporal => vec![tc.gamma],
    };
    let grid: Vec<(usize, f64)> =
        tc.k_grid.iter().flat_map(|&k| gammas.iter().map(move |&g| (k, g))).collect();
    let seed = tc.seed ^ fold_index as u64;

    let runs: Vec<Result<(TrainConfig, super::trainer::TrainOutcome)>> = grid
        .par_iter()
        .map(|&(k, gamma)| {
            let cfg = TrainConfig { model: ModelConfig { k, ..tc.model.clone() }, gamma, seed, ..tc.clone() };
            let out = train(&train_set, &val_set, &cfg)?;
            Ok((cfg, out))
        })
        .collect();

    let mut candidates = Vec::with_capacity(runs.len());
    let mut best: Option<(EpochRecord, TrainConfig, super::trainer::TrainOutcome)> = None;
    for r in runs {
        let (cfg, out) = r?;
        let rec = out.best().clone();
        candidates.push(Candidate {
            k: cfg.model.k,
            gamma: cfg.gamma,
            val_wa: rec.val_wa,
            val_ua: rec.val_ua,
            val_loss: rec.val_loss,
            best_epoch: out.best_epoch,
        });
        if best.as_ref().is_none_or(|(b, _, _)| rec.better_than(b)) {
            best = Some((rec, cfg, out));
        }
    }
    let (_, cfg, out) = best.expect("grid is non-empty");
    let metrics = evaluate(&out.params, &cfg.model, &test_set, cfg.gamma, cfg.graph_kind)?;
    Ok(FoldResult {
        split: split.clone(),
        metrics,
        selected_k: cfg.model.k,
        selected_gamma: cfg.gamma,
        model: cfg.model,
        graph_kind: cfg.graph_kind,
        params: out.params,
        standardizer,
        history: out.history,
        candidates,
    })
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean_wa: f64,
    pub mean_ua: f64,
    pub class_names: Vec<String>,
}

impl CvReport {
    pub fn from_folds(folds: Vec<FoldResult>, class_names: Vec<String>) -> Self {
        let n = folds.len() as f64;
        let mean_wa = folds.iter().map(|f| f.metrics.wa).sum::<f64>() / n;
        let mean_ua = folds.iter().map(|f| f.metrics.ua).sum::<f64>() / n;
        Self { folds, mean_wa, mean_ua, class_names }
    }

    pub fn metrics_file(&self) -> MetricsFile {
        MetricsFile {
            folds: self
                .folds
                .iter()
                .map(|f| FoldSummary {
                    speaker: f.split.test_speaker.clone(),
                    wa: f.metrics.wa,
                    ua: f.metrics.ua,
                    confusion: f.metrics.confusion.clone(),
                    selected_k: f.selected_k,
                    selected_gamma: f.selected_gamma,
                })
                .collect(),
            mean_wa: self.mean_wa,
            mean_ua: self.mean_ua,
            class_names: self.class_names.clone(),
        }
    }
}

/// Serialized form of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub folds: Vec<FoldSummary>,
    pub mean_wa: f64,
    pub mean_ua: f64,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub speaker: String,
    pub wa: f64,
    pub ua: f64,
    pub confusion: Vec<Vec<u64>>,
    #[serde(rename = "selected_K")]
    pub selected_k: usize,
    pub selected_gamma: f64,
}

/// Full leave-one-speaker-out run. Folds execute in parallel; results are
/// identical to a serial run.
pub fn loso_cv(dataset: &Dataset, tc: &TrainConfig) -> Result<CvReport> {
    tc.validate()?;
    let splits = loso_splits(dataset)?;
    let folds = splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| run_fold(dataset, split, tc, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::from_folds(folds, dataset.class_names.clone()))
}
