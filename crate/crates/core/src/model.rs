//! Forward computation of the graph classifier.
//!
//! ```text
//! h⁽⁰⁾   = ReLU(W_p x + b_p)                      (or x itself without the pre-layer)
//! h'⁽ᵏ⁺¹⁾ = ReLU(W_e⁽ᵏ⁾ Σ_j c_ij h_j⁽ᵏ⁾)             c_ij = 1/√(d̂_i d̂_j)
//! h⁽ᵏ⁺¹⁾ = h'⁽ᵏ⁺¹⁾ + h⁽ᵏ⁾                          (skip, when enabled)
//! h_G    = mean_i h_i⁽ᴷ⁾
//! ŷ      = softmax(W_o dropout(h_G) + b_o)
//! ```

use rand::distributions::{Distribution, Uniform};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{norm_coefficients_with, Graph, NormCoefficients};
use crate::matrix::Matrix;
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature dimension.
    pub d: usize,
    /// Hidden units.
    pub z: usize,
    /// Number of message-passing layers.
    #[serde(rename = "K")]
    pub k: usize,
    /// Number of classes.
    #[serde(rename = "C")]
    pub c: usize,
    pub use_pre: bool,
    pub use_skip: bool,
    pub dropout_p: f64,
    pub self_in_aggregation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 88,
            z: 128,
            k: 2,
            c: 4,
            use_pre: true,
            use_skip: true,
            dropout_p: 0.1,
            self_in_aggregation: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.z < 1 || self.k < 1 || self.c < 2 {
            return Err(Error::Config(format!(
                "need d >= 1, z >= 1, K >= 1, C >= 2 (got d={}, z={}, K={}, C={})",
                self.d, self.z, self.k, self.c
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }

    /// Input width of message-passing layer `k`.
    pub fn layer_input_dim(&self, k: usize) -> usize {
        if k == 0 && !self.use_pre {
            self.d
        } else {
            self.z
        }
    }

    /// Whether layer `k` adds its input back to its output. The skip never
    /// bridges raw features to hidden units.
    pub fn skip_at(&self, k: usize) -> bool {
        self.use_skip && (self.use_pre || k > 0)
    }
}

/// All learnable tensors. Also used as the container for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `z × d`, present iff the pre-layer is enabled.
    #[serde(rename = "W_p", default, skip_serializing_if = "Option::is_none")]
    pub w_pre: Option<Matrix>,
    #[serde(rename = "b_p", default, skip_serializing_if = "Option::is_none")]
    pub b_pre: Option<Vec<f64>>,
    /// One `z × z` matrix per layer (`z × d` for the first when there is no
    /// pre-layer).
    #[serde(rename = "W_e")]
    pub w_mp: Vec<Matrix>,
    /// `C × z`.
    #[serde(rename = "W_o")]
    pub w_out: Matrix,
    #[serde(rename = "b_o")]
    pub b_out: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            w_pre: config.use_pre.then(|| Matrix::zeros(config.z, config.d)),
            b_pre: config.use_pre.then(|| vec![0.0; config.z]),
            w_mp: (0..config.k).map(|k| Matrix::zeros(config.z, config.layer_input_dim(k))).collect(),
            w_out: Matrix::zeros(config.c, config.z),
            b_out: vec![0.0; config.c],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_pre: self.w_pre.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            b_pre: self.b_pre.as_ref().map(|b| vec![0.0; b.len()]),
            w_mp: self.w_mp.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            w_out: Matrix::zeros(self.w_out.rows(), self.w_out.cols()),
            b_out: vec![0.0; self.b_out.len()],
        }
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        if let Some(w) = &self.w_pre {
            out.push(("W_p".to_owned(), w.as_slice()));
        }
        if let Some(b) = &self.b_pre {
            out.push(("b_p".to_owned(), b.as_slice()));
        }
        for (k, w) in self.w_mp.iter().enumerate() {
            out.push((format!("W_e[{k}]"), w.as_slice()));
        }
        out.push(("W_o".to_owned(), self.w_out.as_slice()));
        out.push(("b_o".to_owned(), self.b_out.as_slice()));
        out
    }

    /// Mutable flat views, same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(w) = &mut self.w_pre {
            out.push(w.as_mut_slice());
        }
        if let Some(b) = &mut self.b_pre {
            out.push(b.as_mut_slice());
        }
        for w in &mut self.w_mp {
            out.push(w.as_mut_slice());
        }
        out.push(self.w_out.as_mut_slice());
        out.push(self.b_out.as_mut_slice());
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|(_, t)| t).collect();
        let dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len(), "parameter layouts differ");
        for (d, s) in dst.into_iter().zip(src) {
            assert_eq!(d.len(), s.len(), "parameter layouts differ");
            for (a, b) in d.iter_mut().zip(s) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Checks tensor shapes against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expect = ModelParams::zeros(config);
        let shape = |m: &Option<Matrix>| m.as_ref().map(Matrix::shape);
        let ok = shape(&self.w_pre) == shape(&expect.w_pre)
            && self.b_pre.as_ref().map(Vec::len) == expect.b_pre.as_ref().map(Vec::len)
            && self.w_mp.len() == expect.w_mp.len()
            && self.w_mp.iter().zip(&expect.w_mp).all(|(a, b)| a.shape() == b.shape())
            && self.w_out.shape() == expect.w_out.shape()
            && self.b_out.len() == expect.b_out.len();
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match model config".into()))
        }
    }
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = rng::stream(seed, Stream::Init, 0);
    let mut p = ModelParams::zeros(config);
    if let Some(w) = &mut p.w_pre {
        *w = glorot(&mut rng, w.rows(), w.cols());
    }
    for w in &mut p.w_mp {
        *w = glorot(&mut rng, w.rows(), w.cols());
    }
    p.w_out = glorot(&mut rng, p.w_out.rows(), p.w_out.cols());
    Ok(p)
}

/// Exact number of learnable scalars for `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    let (d, z, c) = (config.d, config.z, config.c);
    let pre = if config.use_pre { z * d + z } else { 0 };
    let mp: usize = (0..config.k).map(|k| z * config.layer_input_dim(k)).sum();
    pre + mp + c * z + c
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn check_cols(x: &Matrix, cols: usize, what: &str) -> Result<()> {
    if x.cols() != cols {
        return Err(Error::Shape(format!("{what}: input has {} columns, expected {cols}", x.cols())));
    }
    Ok(())
}

/// Pre-activation of the pre-layer, `W_p x_i + b_p` for every row.
fn pre_layer_linear(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let (w, b) = match (&params.w_pre, &params.b_pre) {
        (Some(w), Some(b)) => (w, b),
        _ => return Err(Error::Config("model has no pre-processing layer".into())),
    };
    check_cols(x, w.cols(), "pre-layer")?;
    let mut out = x.matmul_transposed(w);
    for i in 0..out.rows() {
        for (v, bi) in out.row_mut(i).iter_mut().zip(b) {
            *v += bi;
        }
    }
    Ok(out)
}

/// Row-wise `ReLU(W_p x_i + b_p)`.
pub fn pre_layer(params: &ModelParams, x: &Matrix) -> Result<Matrix> {
    let mut h = pre_layer_linear(params, x)?;
    h.map_inplace(relu);
    Ok(h)
}

/// One message-passing layer without the skip: `ReLU(W_e Σ_j c_ij h_j)`.
pub fn mp_layer(params: &ModelParams, k: usize, h: &Matrix, coeffs: &NormCoefficients) -> Result<Matrix> {
    let w = params.w_mp.get(k).ok_or_else(|| Error::Config(format!("no message-passing layer {k}")))?;
    check_cols(h, w.cols(), "message-passing layer")?;
    if h.rows() != coeffs.n() {
        return Err(Error::Shape("node count differs from graph".into()));
    }
    let mut out = coeffs.aggregate(h).matmul_transposed(w);
    out.map_inplace(relu);
    Ok(out)
}

pub fn apply_skip(h_prev: &Matrix, h_new: &Matrix) -> Result<Matrix> {
    if h_prev.shape() != h_new.shape() {
        return Err(Error::Shape(format!("skip between {:?} and {:?}", h_prev.shape(), h_new.shape())));
    }
    let mut out = h_new.clone();
    out.add_assign(h_prev);
    Ok(out)
}

pub fn readout_mean(h: &Matrix) -> Result<Vec<f64>> {
    if h.rows() == 0 {
        return Err(Error::Invalid("readout over an empty graph".into()));
    }
    Ok(h.column_mean())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn output_logits(params: &ModelParams, h: &[f64]) -> Vec<f64> {
    params.w_out.iter_rows().zip(&params.b_out).map(|(w, b)| crate::matrix::dot(w, h) + b).collect()
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, otherwise
/// `1/(1-p)`.
pub fn dropout_mask(rng: &mut Rng, len: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}

/// Output layer: optional dropout on `h_G`, affine map, softmax.
pub fn classify(params: &ModelParams, h_g: &[f64], dropout_mask: Option<&[f64]>) -> Vec<f64> {
    let h: Vec<f64> = match dropout_mask {
        Some(m) => h_g.iter().zip(m).map(|(h, m)| h * m).collect(),
        None => h_g.to_vec(),
    };
    softmax(&output_logits(params, &h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Raw node features.
    pub input: Matrix,
    /// `W_p x + b_p` before the ReLU, when the pre-layer is enabled.
    pub pre_linear: Option<Matrix>,
    /// `h⁽⁰⁾ … h⁽ᴷ⁾`.
    pub hidden: Vec<Matrix>,
    /// Aggregated layer inputs `Σ_j c_ij h_j⁽ᵏ⁾`, one per layer.
    pub aggregated: Vec<Matrix>,
    /// Layer pre-activations `W_e⁽ᵏ⁾ Σ_j c_ij h_j⁽ᵏ⁾`.
    pub linear: Vec<Matrix>,
    pub readout: Vec<f64>,
    pub dropout_mask: Option<Vec<f64>>,
    /// Readout after dropout, the input of the output layer.
    pub readout_dropped: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub cache: ForwardCache,
}

/// Full forward pass on a graph. In train mode a dropout mask is drawn from
/// `rng` (when `dropout_p > 0`); eval mode never touches `rng`.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Forward> {
    let coeffs = norm_coefficients_with(graph, config.self_in_aggregation);
    let mask = match mode {
        Mode::Train if config.dropout_p > 0.0 => Some(dropout_mask(rng, config.z, config.dropout_p)),
        _ => None,
    };
    forward_with(params, config, &graph.features, &coeffs, mask)
}

/// Forward pass with precomputed coefficients and an explicit dropout mask
/// (`None` for evaluation).
pub fn forward_with(
    params: &ModelParams,
    config: &ModelConfig,
    x: &Matrix,
    coeffs: &NormCoefficients,
    dropout_mask: Option<Vec<f64>>,
) -> Result<Forward> {
    check_cols(x, config.d, "graph features")?;
    if x.rows() == 0 {
        return Err(Error::Invalid("graph has no nodes".into()));
    }
    if x.rows() != coeffs.n() {
        return Err(Error::Shape("coefficients built for another graph".into()));
    }
    if let Some(m) = &dropout_mask {
        if m.len() != config.z {
            return Err(Error::Shape("dropout mask length differs from z".into()));
        }
    }

    let (pre_linear, h0) = if config.use_pre {
        let lin = pre_layer_linear(params, x)?;
        let mut h = lin.clone();
        h.map_inplace(relu);
        (Some(lin), h)
    } else {
        (None, x.clone())
    };

    let mut hidden = Vec::with_capacity(config.k + 1);
    let mut aggregated = Vec::with_capacity(config.k);
    let mut linear = Vec::with_capacity(config.k);
    hidden.push(h0);
    for k in 0..config.k {
        let w = &params.w_mp[k];
        let h = &hidden[k];
        check_cols(h, w.cols(), "message-passing layer")?;
        let agg = coeffs.aggregate(h);
        let lin = agg.matmul_transposed(w);
        let mut next = lin.clone();
        next.map_inplace(relu);
        if config.skip_at(k) {
            next.add_assign(h);
        }
        aggregated.push(agg);
        linear.push(lin);
        hidden.push(next);
    }

    let readout = readout_mean(&hidden[config.k])?;
    let readout_dropped: Vec<f64> = match &dropout_mask {
        Some(m) => readout.iter().zip(m).map(|(h, m)| h * m).collect(),
        None => readout.clone(),
    };
    let logits = output_logits(params, &readout_dropped);
    let probs = softmax(&logits);
    Ok(Forward {
        logits: logits.clone(),
        probs,
        cache: ForwardCache {
            input: x.clone(),
            pre_linear,
            hidden,
            aggregated,
            linear,
            readout,
            dropout_mask,
            readout_dropped,
            logits,
        },
    })
}

/// Class probabilities in eval mode.
pub fn predict_proba(params: &ModelParams, config: &ModelConfig, graph: &Graph) -> Result<Vec<f64>> {
    let coeffs = norm_coefficients_with(graph, config.self_in_aggregation);
    Ok(forward_with(params, config, &graph.features, &coeffs, None)?.probs)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
