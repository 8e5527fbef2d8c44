//! Mini-batch training loop and evaluation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::backward::backward_with;
use super::loss::cross_entropy_from_logits;
use super::metrics::Metrics;
use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::graph::{build_graph, norm_coefficients_with, validate_gamma, GraphKind, NormCoefficients};
use crate::matrix::Matrix;
use crate::model::{argmax, dropout_mask, forward_with, init_params, ModelConfig, ModelParams};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine threshold used by [`train`] and [`evaluate`].
    pub gamma: f64,
    /// Thresholds searched during cross-validation.
    pub gamma_grid: Vec<f64>,
    /// Layer counts searched during cross-validation.
    #[serde(rename = "K_grid")]
    pub k_grid: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub graph_kind: GraphKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 1e-3,
            epochs: 50,
            batch_size: 32,
            gamma: 0.5,
            gamma_grid: vec![0.5, 0.55, 0.6],
            k_grid: vec![2, 3, 4],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            graph_kind: GraphKind::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.gamma_grid.is_empty() || self.k_grid.is_empty() {
            return Err(Error::Config("gamma and K grids must be non-empty".into()));
        }
        if self.k_grid.contains(&0) {
            return Err(Error::Config("K grid entries must be at least 1".into()));
        }
        validate_gamma(self.gamma)?;
        self.gamma_grid.iter().try_for_each(|&g| validate_gamma(g))?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_wa: f64,
    pub val_ua: f64,
    /// Mean eval-mode cross-entropy on the validation set; breaks UA ties.
    pub val_loss: f64,
}

impl EpochRecord {
    /// Model-selection order: higher validation UA wins, then lower
    /// validation loss. Callers keep the earlier candidate on exact ties.
    pub fn better_than(&self, other: &EpochRecord) -> bool {
        self.val_ua > other.val_ua || (self.val_ua == other.val_ua && self.val_loss < other.val_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the best validation UA.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch the parameters were taken from.
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// A graph ready for repeated forward passes.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub features: Matrix,
    pub coeffs: NormCoefficients,
    pub label: usize,
}

pub fn prepare_graphs(
    dataset: &Dataset,
    kind: GraphKind,
    gamma: f64,
    self_in_aggregation: bool,
) -> Result<Vec<PreparedGraph>> {
    dataset
        .utterances
        .iter()
        .map(|u| {
            let g = build_graph(&u.features, kind, gamma)?;
            Ok(PreparedGraph {
                coeffs: norm_coefficients_with(&g, self_in_aggregation),
                features: g.features,
                label: u.label,
            })
        })
        .collect()
}

/// Mean gradient of the loss over one batch, plus the summed loss.
///
/// Per-graph passes run in parallel; the reduction runs in batch order so the
/// result does not depend on scheduling.
fn batch_gradient(
    params: &ModelParams,
    config: &ModelConfig,
    graphs: &[PreparedGraph],
    batch: &[usize],
    masks: Vec<Option<Vec<f64>>>,
) -> Result<(ModelParams, f64)> {
    let per_graph: Vec<Result<(ModelParams, f64)>> = batch
        .par_iter()
        .zip(masks)
        .map(|(&i, mask)| {
            let g = &graphs[i];
            let f = forward_with(params, config, &g.features, &g.coeffs, mask)?;
            let loss = cross_entropy_from_logits(&f.logits, g.label)?;
            let grads = backward_with(params, config, &g.coeffs, &f.cache, g.label)?;
            Ok((grads, loss))
        })
        .collect();
    let mut total = params.zeros_like();
    let mut loss_sum = 0.0;
    for r in per_graph {
        let (g, l) = r?;
        total.add_scaled(&g, 1.0);
        loss_sum += l;
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, loss_sum))
}

fn check_dataset(ds: &Dataset, config: &ModelConfig) -> Result<()> {
    if ds.d != config.d {
        return Err(Error::Shape(format!("dataset has d={}, model expects d={}", ds.d, config.d)));
    }
    if ds.n_classes() != config.c {
        return Err(Error::Shape(format!(
            "dataset has {} classes, model expects {}",
            ds.n_classes(),
            config.c
        )));
    }
    Ok(())
}

/// Trains from a fresh initialization for `tc.epochs` epochs and returns the
/// parameters of the best epoch under [`EpochRecord::better_than`].
pub fn train(train_set: &Dataset, val_set: &Dataset, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Invalid("validation set required for model selection".into()));
    }
    check_dataset(train_set, &tc.model)?;
    check_dataset(val_set, &tc.model)?;
    let train_ids: HashSet<&str> = train_set.ids().collect();
    if let Some(id) = val_set.ids().find(|id| train_ids.contains(id)) {
        return Err(Error::Invalid(format!("utterance {id:?} is in both train and validation sets")));
    }

    let config = &tc.model;
    let train_graphs = prepare_graphs(train_set, tc.graph_kind, tc.gamma, config.self_in_aggregation)?;
    let val_graphs = prepare_graphs(val_set, tc.graph_kind, tc.gamma, config.self_in_aggregation)?;

    let mut params = init_params(config, tc.seed)?;
    let mut adam = AdamState::new(&params);
    let adam_cfg = tc.adam();
    let mut shuffle_rng = rng::stream(tc.seed, Stream::Shuffle, 0);
    let mut dropout_rng = rng::stream(tc.seed, Stream::Dropout, 0);

    let mut order: Vec<usize> = (0..train_graphs.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut best: Option<(EpochRecord, ModelParams)> = None;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let masks = batch
                .iter()
                .map(|_| {
                    (config.dropout_p > 0.0)
                        .then(|| dropout_mask(&mut dropout_rng, config.z, config.dropout_p))
                })
                .collect();
            let (grads, l) = batch_gradient(&params, config, &train_graphs, batch, masks)?;
            loss_sum += l;
            adam_step(&mut params, &grads, &mut adam, tc.lr, &adam_cfg)?;
        }
        if !params.is_finite() {
            return Err(Error::Invalid(format!("parameters diverged at epoch {epoch}")));
        }
        let (val, val_loss) = evaluate_with_loss(&params, config, &val_graphs)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_graphs.len() as f64,
            val_wa: val.wa,
            val_ua: val.ua,
            val_loss,
        };
        if best.as_ref().is_none_or(|(b, _)| record.better_than(b)) {
            best = Some((record.clone(), params.clone()));
        }
        history.push(record);
    }

    let (best_record, params) = best.expect("at least one epoch");
    let best_epoch = best_record.epoch;
    Ok(TrainOutcome { params, history, best_epoch })
}

/// Eval-mode predicted class for every prepared graph, in order.
pub fn predict_prepared(
    params: &ModelParams,
    config: &ModelConfig,
    graphs: &[PreparedGraph],
) -> Result<Vec<usize>> {
    graphs
        .par_iter()
        .map(|g| Ok(argmax(&forward_with(params, config, &g.features, &g.coeffs, None)?.probs)))
        .collect()
}

pub fn evaluate_prepared(
    params: &ModelParams,
    config: &ModelConfig,
    graphs: &[PreparedGraph],
) -> Result<Metrics> {
    Ok(evaluate_with_loss(params, config, graphs)?.0)
}

/// Metrics plus the mean eval-mode cross-entropy.
pub fn evaluate_with_loss(
    params: &ModelParams,
    config: &ModelConfig,
    graphs: &[PreparedGraph],
) -> Result<(Metrics, f64)> {
    if graphs.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let outputs: Vec<(usize, f64)> = graphs
        .par_iter()
        .map(|g| {
            let f = forward_with(params, config, &g.features, &g.coeffs, None)?;
            Ok((argmax(&f.probs), cross_entropy_from_logits(&f.logits, g.label)?))
        })
        .collect::<Result<_>>()?;
    let loss = outputs.iter().map(|(_, l)| l).sum::<f64>() / graphs.len() as f64;
    let metrics =
        Metrics::from_pairs(config.c, graphs.iter().map(|g| g.label).zip(outputs.iter().map(|(p, _)| *p)))?;
    Ok((metrics, loss))
}

/// Argmax predictions on `dataset` summarized as WA/UA and a confusion matrix.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
    gamma: f64,
    graph_kind: GraphKind,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    check_dataset(dataset, config)?;
    params.check_shapes(config)?;
    let graphs = prepare_graphs(dataset, graph_kind, gamma, config.self_in_aggregation)?;
    evaluate_prepared(params, config, &graphs)
}

/// Eval-mode predictions on `dataset`, in utterance order.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &Dataset,
    gamma: f64,
    graph_kind: GraphKind,
) -> Result<Vec<usize>> {
    check_dataset(dataset, config)?;
    let graphs = prepare_graphs(dataset, graph_kind, gamma, config.self_in_aggregation)?;
    predict_prepared(params, config, &graphs)
}

/// CSV text `epoch,train_loss,val_wa,val_ua`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_wa,val_ua\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_wa, r.val_ua));
    }
    out
}
