//! Parameterized layers built from graph ops. Parameters are looked up by
//! name prefix in a [`ParamStore`].

use super::graph::{gelu_scalar, Graph, Var};
use super::params::ParamStore;
use super::rng::Rng;
use super::tensor::Tensor;
use super::NnError;

/// Elementwise GELU on a plain tensor.
pub fn gelu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape.clone(), x.data.iter().map(|&v| gelu_scalar(v)).collect())
}

/// `x·W + b` with `{name}.w` and `{name}.b`.
pub fn dense(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{name}.w"));
    let b = g.param(store, &format!("{name}.b"));
    let h = g.matmul(x, w);
    g.add_bias(h, b)
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)`. Identity when not
/// training or when `rate == 0`.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut Rng, training: bool) -> Var {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if !training || rate == 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).len())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    g.mask_mul(x, mask)
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Var {
    let gamma = g.param(store, &format!("{name}.gamma"));
    let beta = g.param(store, &format!("{name}.beta"));
    g.layer_norm(x, gamma, beta)
}

pub fn embedding_lookup(g: &mut Graph, store: &ParamStore, name: &str, indices: &[usize]) -> Var {
    let table = g.param(store, name);
    g.gather_rows(table, indices)
}

/// Registers the four projections used by [`multi_head_self_attention`].
pub fn init_attention(store: &mut ParamStore, name: &str, width: usize, rng: &mut Rng) {
    for p in ["q", "k", "v", "o"] {
        store.init_dense(&format!("{name}.{p}"), width, width, rng);
    }
}

/// Multi-head self-attention over `batch` padded sequences of length `seq`.
/// `x` is `[batch·seq × k]`; `mask` marks valid positions.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_self_attention(
    g: &mut Graph,
    store: &ParamStore,
    name: &str,
    x: Var,
    batch: usize,
    seq: usize,
    mask: &[bool],
    heads: usize,
) -> Result<Var, NnError> {
    let (rows, k) = g.value(x).dims2();
    if heads == 0 || k % heads != 0 {
        return Err(NnError::ShapeError(format!("width {k} is not divisible by {heads} heads")));
    }
    if rows != batch * seq || mask.len() != rows {
        return Err(NnError::ShapeError(format!(
            "expected {batch}x{seq} rows and mask, got {rows} rows and mask of {}",
            mask.len()
        )));
    }
    if let Some(b) = (0..batch).find(|&b| !mask[b * seq..(b + 1) * seq].iter().any(|&m| m)) {
        return Err(NnError::ShapeError(format!("sequence {b} has no valid positions")));
    }
    let q = dense(g, store, &format!("{name}.q"), x);
    let kk = dense(g, store, &format!("{name}.k"), x);
    let v = dense(g, store, &format!("{name}.v"), x);
    let a = g.attention(q, kk, v, batch, seq, heads, mask);
    Ok(dense(g, store, &format!("{name}.o"), a))
}
