//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::layers;
use super::params::ParamStore;
use super::rng::Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of `f` with respect to every parameter in
/// `store` against `(f(p+h) - f(p-h)) / 2h`. `f` must build the same
/// computation each call (any randomness re-seeded inside it).
pub fn check_gradients<F>(store: &ParamStore, f: F) -> GradReport
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    g.check().expect("forward pass is finite");
    let grads = g.backward(loss).params(store);

    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let l = f(&mut g, s);
        g.value(l).item()
    };

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = store.clone();
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let n = store.get(&name).unwrap().len();
        let analytic = grads.get(&name);
        for i in 0..n {
            let orig = store.get(&name).unwrap().data[i];
            probe.get_mut(&name).unwrap().data[i] = orig + FD_STEP;
            let up = eval(&probe);
            probe.get_mut(&name).unwrap().data[i] = orig - FD_STEP;
            let down = eval(&probe);
            probe.get_mut(&name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.map_or(0.0, |t| t.data[i]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report
}

fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore {
    let mut rng = Rng::new(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.init_normal(name, shape, 1.0, &mut rng);
    }
    s
}

fn weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.normal()).collect()
}

/// Gradient checks of every graph op and layer on small random shapes.
pub fn op_suite() -> Vec<(&'static str, GradReport)> {
    let mut out = Vec::new();

    let s = store_with(&[("a", &[3, 4]), ("b", &[4, 5]), ("c", &[5]), ("d", &[3, 5])], 1);
    let w = weights(15, 2);
    out.push((
        "dense/add/mul/scale",
        check_gradients(&s, |g, s| {
            let (a, b, c, d) = (g.param(s, "a"), g.param(s, "b"), g.param(s, "c"), g.param(s, "d"));
            let h = g.matmul(a, b);
            let h = g.add_bias(h, c);
            let m = g.mul(h, d);
            let h = g.add(m, h);
            let h = g.scale(h, -0.7);
            g.dot_const(h, w.clone())
        }),
    ));

    let s = store_with(&[("x", &[4, 6])], 3);
    let w = weights(24 * 3, 4);
    out.push((
        "gelu/tanh/sigmoid",
        check_gradients(&s, |g, s| {
            let x = g.param(s, "x");
            let a = g.gelu(x);
            let b = g.tanh(x);
            let c = g.sigmoid(x);
            let la = g.dot_const(a, w[..24].to_vec());
            let lb = g.dot_const(b, w[24..48].to_vec());
            let lc = g.dot_const(c, w[48..].to_vec());
            let l = g.add(la, lb);
            g.add(l, lc)
        }),
    ));

    let s = store_with(&[("x", &[3, 4])], 5);
    let w = weights(12, 6);
    out.push((
        "dropout",
        check_gradients(&s, |g, s| {
            let x = g.param(s, "x");
            let y = layers::dropout(g, x, 0.3, &mut Rng::new(7), true);
            g.dot_const(y, w.clone())
        }),
    ));

    let s = store_with(&[("x", &[3, 6]), ("ln.gamma", &[6]), ("ln.beta", &[6])], 7);
    let w = weights(18, 8);
    out.push((
        "layer_norm",
        check_gradients(&s, |g, s| {
            let x = g.param(s, "x");
            let y = layers::layer_norm(g, s, "ln", x);
            g.dot_const(y, w.clone())
        }),
    ));

    let s = store_with(&[("emb", &[5, 4])], 9);
    let w = weights(8, 10);
    let mask = [true, true, false, true, true, true];
    out.push((
        "embedding_lookup/mean_pool_masked",
        check_gradients(&s, |g, s| {
            let e = layers::embedding_lookup(g, s, "emb", &[0, 3, 3, 1, 4, 0]);
            let p = g.mean_pool_masked(e, 2, 3, &mask);
            g.dot_const(p, w.clone())
        }),
    ));

    let s = store_with(&[("a", &[4, 5]), ("b", &[4, 5])], 11);
    out.push((
        "cosine_similarity/softmax_cross_entropy",
        check_gradients(&s, |g, s| {
            let (a, b) = (g.param(s, "a"), g.param(s, "b"));
            let c = g.cosine_matrix(a, b);
            let c = g.scale(c, 1.0 / 0.05);
            g.softmax_cross_entropy(c, &[Some(0), Some(1), None, Some(3)])
        }),
    ));

    let s = store_with(&[("x", &[4, 6])], 13);
    out.push((
        "sigmoid_binary_cross_entropy/slices",
        check_gradients(&s, |g, s| {
            let x = g.param(s, "x");
            let y = g.slice_cols(x, 1, 4);
            let y = g.slice_rows(y, 1, 3);
            g.sigmoid_binary_cross_entropy(y, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0])
        }),
    ));

    let (k, t) = (8, 4);
    let mut s = ParamStore::new();
    let mut rng = Rng::new(14);
    layers::init_attention(&mut s, "att", k, &mut rng);
    s.init_normal("x", &[2 * t, k], 1.0, &mut rng);
    let w = weights(2 * t * k, 15);
    let mask = [true, true, true, true, true, true, false, false];
    out.push((
        "multi_head_self_attention",
        check_gradients(&s, |g, s| {
            let x = g.param(s, "x");
            let y = layers::multi_head_self_attention(g, s, "att", x, 2, t, &mask, 2).expect("valid shapes");
            g.dot_const(y, w.clone())
        }),
    ));

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    #[test]
    fn every_op_matches_finite_differences() {
        for (name, r) in op_suite() {
            assert!(r.max_rel_err < 1e-4, "{name}: {r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(0.0, 1e-10) < 1e-4);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![1.0, f64::INFINITY]));
        let _ = g.scale(x, 2.0);
        assert!(g.check().is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let s = store_with(&[("a", &[3, 4]), ("b", &[4, 4])], 17);
        let run = || {
            let mut g = Graph::new();
            let (a, b) = (g.param(&s, "a"), g.param(&s, "b"));
            let h = g.matmul(a, b);
            let h = g.gelu(h);
            let l = g.dot_const(h, vec![0.5; 12]);
            g.backward(l).params(&s)
        };
        assert_eq!(run(), run());
    }
}
