//! Central finite-difference check of the hand-derived gradients.
//!
//! The numerical side only ever calls the forward pass, so it is independent
//! of the backward implementation it verifies.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{build_graph, norm_coefficients_with, GraphKind, NormCoefficients};
use crate::matrix::Matrix;
use crate::model::{dropout_mask, forward_with, init_params, ModelConfig, ModelParams};
use crate::rng::{self, Stream};
use crate::training::{backward_with, cross_entropy_from_logits};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude below which gradients are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckCase {
    pub index: usize,
    pub config: ModelConfig,
    pub graph_kind: GraphKind,
    pub gamma: f64,
    pub n: usize,
    pub edges: usize,
    pub label: usize,
    pub dropout: bool,
    pub max_rel_error: f64,
    /// Parameter entry with the largest error, e.g. `W_e[1][7]`.
    pub worst: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub cases: Vec<GradcheckCase>,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Compares analytic gradients with central differences for every scalar
/// parameter. Returns the maximum relative error and where it occurred.
pub fn check_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    x: &Matrix,
    coeffs: &NormCoefficients,
    mask: Option<&[f64]>,
    label: usize,
    step: f64,
) -> Result<(f64, String)> {
    let loss = |p: &ModelParams| -> Result<f64> {
        let f = forward_with(p, config, x, coeffs, mask.map(<[f64]>::to_vec))?;
        cross_entropy_from_logits(&f.logits, label)
    };
    let f = forward_with(params, config, x, coeffs, mask.map(<[f64]>::to_vec))?;
    let analytic = backward_with(params, config, coeffs, &f.cache, label)?;

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
    let mut probe = params.clone();
    let mut worst = (0.0f64, String::new());
    for (t, name) in names.iter().enumerate() {
        for i in 0..grads[t].len() {
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = orig + step;
            let up = loss(&probe)?;
            probe.tensors_mut()[t][i] = orig - step;
            let down = loss(&probe)?;
            probe.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(grads[t][i], numeric);
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, format!("{name}[{i}]"));
            }
        }
    }
    Ok(worst)
}

/// Runs one randomized instance. Flags rotate with `index` so that a run of
/// 8 consecutive indices covers every combination of pre-layer, skip and
/// graph kind, while the depth cycles through 1..=3.
pub fn run_case(seed: u64, index: usize) -> Result<GradcheckCase> {
    let mut rng = rng::stream(seed, Stream::Gradcheck, index as u64);
    let n = rng.gen_range(1..=6);
    let d = rng.gen_range(1..=5);
    let z = rng.gen_range(1..=8);
    let c = rng.gen_range(2..=4);
    let dropout = !index.is_multiple_of(3);
    let config = ModelConfig {
        d,
        z,
        k: index % 3 + 1,
        c,
        use_pre: index.is_multiple_of(2),
        use_skip: (index / 2).is_multiple_of(2),
        dropout_p: if dropout { 0.25 } else { 0.0 },
        self_in_aggregation: index % 5 != 4,
    };
    let graph_kind = if (index / 4).is_multiple_of(2) { GraphKind::Cosine } else { GraphKind::Temporal };
    let gamma = rng.gen_range(-0.3..0.7);

    let x_data = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let x = Matrix::from_vec(n, d, x_data)?;
    let graph = build_graph(&x, graph_kind, gamma)?;
    let coeffs = norm_coefficients_with(&graph, config.self_in_aggregation);

    let mut params = init_params(&config, rng.gen())?;
    // non-zero biases so their paths carry signal
    if let Some(b) = &mut params.b_pre {
        b.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    params.b_out.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    let label = rng.gen_range(0..c);
    let mask = dropout.then(|| dropout_mask(&mut rng, z, config.dropout_p));

    let (max_rel_error, worst) =
        check_gradients(&params, &config, &x, &coeffs, mask.as_deref(), label, DEFAULT_STEP)?;
    Ok(GradcheckCase {
        index,
        config,
        graph_kind,
        gamma,
        n,
        edges: graph.edge_count(),
        label,
        dropout,
        max_rel_error,
        worst,
    })
}

pub fn gradcheck_suite(seed: u64, trials: usize) -> Result<GradcheckReport> {
    let cases = (0..trials).map(|i| run_case(seed, i)).collect::<Result<Vec<_>>>()?;
    let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { seed, cases, max_rel_error })
}
