//! Reverse-mode gradients of the softmax cross-entropy loss through the
//! whole network, derived by hand.

use crate::error::{Error, Result};
use crate::graph::{norm_coefficients_with, Graph, NormCoefficients};
use crate::matrix::Matrix;
use crate::model::{softmax, ForwardCache, Gradients, ModelConfig, ModelParams};

/// Gradients for the graph the cache was produced from.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
    cache: &ForwardCache,
    label: usize,
) -> Result<Gradients> {
    let coeffs = norm_coefficients_with(graph, config.self_in_aggregation);
    backward_with(params, config, &coeffs, cache, label)
}

pub fn backward_with(
    params: &ModelParams,
    config: &ModelConfig,
    coeffs: &NormCoefficients,
    cache: &ForwardCache,
    label: usize,
) -> Result<Gradients> {
    if cache.hidden.len() != config.k + 1 || cache.linear.len() != config.k {
        return Err(Error::Shape("forward cache does not match model depth".into()));
    }
    if cache.input.rows() != coeffs.n() {
        return Err(Error::Shape("forward cache built for another graph".into()));
    }
    if label >= config.c {
        return Err(Error::Invalid(format!("label {label} out of range for {} classes", config.c)));
    }
    params.check_shapes(config)?;

    let mut grads = params.zeros_like();

    // softmax + cross-entropy
    let mut dlogits = softmax(&cache.logits);
    dlogits[label] -= 1.0;

    grads.b_out.copy_from_slice(&dlogits);
    for (c, &g) in dlogits.iter().enumerate() {
        for (w, h) in grads.w_out.row_mut(c).iter_mut().zip(&cache.readout_dropped) {
            *w = g * h;
        }
    }

    let mut d_readout = vec![0.0; config.z];
    for (c, &g) in dlogits.iter().enumerate() {
        crate::matrix::axpy(g, params.w_out.row(c), &mut d_readout);
    }
    if let Some(mask) = &cache.dropout_mask {
        d_readout.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }

    // mean readout spreads the gradient evenly over nodes
    let n = cache.input.rows();
    let inv_n = 1.0 / n as f64;
    let mut d_hidden = Matrix::zeros(n, config.z);
    for i in 0..n {
        for (g, r) in d_hidden.row_mut(i).iter_mut().zip(&d_readout) {
            *g = r * inv_n;
        }
    }

    for k in (0..config.k).rev() {
        let lin = &cache.linear[k];
        let mut d_lin = d_hidden.clone();
        for (g, &l) in d_lin.as_mut_slice().iter_mut().zip(lin.as_slice()) {
            if l <= 0.0 {
                *g = 0.0;
            }
        }
        d_lin.add_transposed_matmul_into(&cache.aggregated[k], &mut grads.w_mp[k]);
        let d_agg = d_lin.matmul(&params.w_mp[k]);
        let mut d_prev = coeffs.aggregate(&d_agg);
        if config.skip_at(k) {
            d_prev.add_assign(&d_hidden);
        }
        d_hidden = d_prev;
    }

    if config.use_pre {
        let pre = cache
            .pre_linear
            .as_ref()
            .ok_or_else(|| Error::Shape("forward cache lacks the pre-layer".into()))?;
        let mut d_pre = d_hidden;
        for (g, &l) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            if l <= 0.0 {
                *g = 0.0;
            }
        }
        let (gw, gb) = match (&mut grads.w_pre, &mut grads.b_pre) {
            (Some(w), Some(b)) => (w, b),
            _ => unreachable!("shapes checked above"),
        };
        d_pre.add_transposed_matmul_into(&cache.input, gw);
        for row in d_pre.iter_rows() {
            for (b, g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    Ok(grads)
}
