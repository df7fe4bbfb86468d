//! The Transformer sequence encoder and its contrastive loss.

use serde::{Deserialize, Serialize};

use crate::nn::layers::{self, dense, dropout, embedding_lookup, layer_norm, multi_head_self_attention};
use crate::nn::{Graph, NnError, ParamStore, Rng, Tensor, Var};

use super::SeqEncError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Transition,
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub layers: usize,
    pub k: usize,
    pub heads: usize,
    pub dropout: f64,
    pub tau: f64,
    pub max_len: usize,
    pub input_mode: InputMode,
}

impl EncoderConfig {
    /// Defaults: dropout 0.1, τ 0.05, one head per 64 dims, 14 transitions.
    pub fn new(input_dim: usize, layers: usize, k: usize) -> Self {
        Self {
            input_dim,
            layers,
            k,
            heads: (k / 64).max(1),
            dropout: 0.1,
            tau: 0.05,
            max_len: 14,
            input_mode: InputMode::Transition,
        }
    }

    pub fn with_mode(mut self, mode: InputMode) -> Self {
        self.input_mode = mode;
        self
    }

    /// Rows of the positional table: `max_len` transitions, or one more for
    /// state sequences.
    pub fn positions(&self) -> usize {
        match self.input_mode {
            InputMode::Transition => self.max_len,
            InputMode::State => self.max_len + 1,
        }
    }

    pub fn validate(&self) -> Result<(), SeqEncError> {
        let bad = |m: String| Err(SeqEncError::InvalidConfig(m));
        if self.heads == 0 || self.k % self.heads != 0 {
            return bad(format!("k={} is not divisible by heads={}", self.k, self.heads));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.input_dim == 0 || self.k == 0 || self.max_len == 0 {
            return bad("dimensions must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqEncoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

impl SeqEncoder {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, SeqEncError> {
        config.validate()?;
        let mut rng = Rng::new(seed).split_str("init");
        let (d, k) = (config.input_dim, config.k);
        let mut p = ParamStore::new();
        p.init_dense("in.up", d, 4 * k, &mut rng);
        p.init_dense("in.down", 4 * k, k, &mut rng);
        p.init_normal("pos", &[config.positions(), k], 0.02, &mut rng);
        for l in 0..config.layers {
            layers::init_attention(&mut p, &format!("layer{l}.att"), k, &mut rng);
            p.init_layer_norm(&format!("layer{l}.ln1"), k);
            p.init_dense(&format!("layer{l}.ff1"), k, 4 * k, &mut rng);
            p.init_dense(&format!("layer{l}.ff2"), 4 * k, k, &mut rng);
            p.init_layer_norm(&format!("layer{l}.ln2"), k);
        }
        p.init_dense("head.hidden", k, k, &mut rng);
        p.init_dense("head.out", k, k, &mut rng);
        Ok(Self { config, params: p })
    }

    /// Builds the forward pass for a batch of sequences, returning `[B × k]`.
    /// Dropout is applied only when `rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        batch: &[&[Vec<f64>]],
        mut rng: Option<&mut Rng>,
    ) -> Result<Var, SeqEncError> {
        let cfg = &self.config;
        let b = batch.len();
        if b == 0 {
            return Err(SeqEncError::Nn(NnError::ShapeError("empty batch".into())));
        }
        let t = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        if batch.iter().any(|s| s.is_empty()) || t > cfg.positions() {
            return Err(SeqEncError::LengthError(format!(
                "sequence lengths must be in 1..={}",
                cfg.positions()
            )));
        }
        let d = cfg.input_dim;
        let mut x = vec![0.0; b * t * d];
        let mut mask = vec![false; b * t];
        let mut pos = vec![0usize; b * t];
        for (i, seq) in batch.iter().enumerate() {
            for (j, v) in seq.iter().enumerate() {
                if v.len() != d {
                    return Err(SeqEncError::DimensionMismatch {
                        expected: d,
                        found: v.len(),
                    });
                }
                x[(i * t + j) * d..(i * t + j + 1) * d].copy_from_slice(v);
                mask[i * t + j] = true;
            }
            for j in 0..t {
                pos[i * t + j] = j;
            }
        }
        let mut drop = |g: &mut Graph, v: Var| match rng.as_deref_mut() {
            Some(r) => dropout(g, v, cfg.dropout, r, true),
            None => v,
        };

        let x = g.constant(Tensor::matrix(b * t, d, x));
        let h = dense(g, params, "in.up", x);
        let h = g.gelu(h);
        let h = drop(g, h);
        let h = dense(g, params, "in.down", h);
        let p = embedding_lookup(g, params, "pos", &pos);
        let mut h = g.add(h, p);
        for l in 0..cfg.layers {
            let a = multi_head_self_attention(g, params, &format!("layer{l}.att"), h, b, t, &mask, cfg.heads)?;
            let a = drop(g, a);
            let r = g.add(h, a);
            let r = layer_norm(g, params, &format!("layer{l}.ln1"), r);
            let f = dense(g, params, &format!("layer{l}.ff1"), r);
            let f = g.gelu(f);
            let f = dense(g, params, &format!("layer{l}.ff2"), f);
            let f = drop(g, f);
            let s = g.add(r, f);
            h = layer_norm(g, params, &format!("layer{l}.ln2"), s);
        }
        let pooled = g.mean_pool_masked(h, b, t, &mask);
        let z = dense(g, params, "head.hidden", pooled);
        let z = g.gelu(z);
        let z = drop(g, z);
        let z = dense(g, params, "head.out", z);
        g.check()?;
        Ok(z)
    }

    /// SimCSE loss of two dropout views of `batch` drawn from one `rng` stream.
    pub fn simcse_batch_loss(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        batch: &[&[Vec<f64>]],
        rng: &mut Rng,
    ) -> Result<Var, SeqEncError> {
        let doubled: Vec<&[Vec<f64>]> = batch.iter().chain(batch.iter()).copied().collect();
        let z = self.forward(g, params, &doubled, Some(rng))?;
        let b = batch.len();
        let z1 = g.slice_rows(z, 0, b);
        let z2 = g.slice_rows(z, b, b);
        Ok(simcse_graph_loss(g, z1, z2, self.config.tau))
    }

    /// Inference embeddings, no dropout.
    pub fn embed(&self, seqs: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>, SeqEncError> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let refs: Vec<&[Vec<f64>]> = chunk.iter().map(|s| s.as_slice()).collect();
            let mut g = Graph::new();
            let z = self.forward(&mut g, &self.params, &refs, None)?;
            out.extend(g.value(z).rows());
        }
        Ok(out)
    }
}

/// `mean_i −log softmax_j(cos(z1_i, z2_j)/τ)[i]` on graph nodes.
pub fn simcse_graph_loss(g: &mut Graph, z1: Var, z2: Var, tau: f64) -> Var {
    let b = g.value(z1).dims2().0;
    let c = g.cosine_matrix(z1, z2);
    let logits = g.scale(c, 1.0 / tau);
    let targets: Vec<Option<usize>> = (0..b).map(Some).collect();
    g.softmax_cross_entropy(logits, &targets)
}

/// SimCSE loss of precomputed view pairs.
pub fn simcse_loss(pairs: &[(Vec<f64>, Vec<f64>)], tau: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut g = Graph::new();
    let z1 = g.constant(Tensor::from_rows(&pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>()));
    let z2 = g.constant(Tensor::from_rows(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>()));
    let l = simcse_graph_loss(&mut g, z1, z2, tau);
    g.value(l).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;

    fn random_seqs(n: usize, d: usize, lens: &[usize], seed: u64) -> Vec<Vec<Vec<f64>>> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                (0..lens[i % lens.len()])
                    .map(|_| (0..d).map(|_| rng.normal()).collect())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn simcse_closed_forms() {
        let z = vec![0.3, -1.2, 0.5];
        assert_eq!(simcse_loss(&[(z.clone(), vec![1.0, 2.0, 3.0])], 0.05), 0.0);
        let same: Vec<_> = (0..5).map(|_| (z.clone(), z.clone())).collect();
        assert!((simcse_loss(&same, 0.05) - 5f64.ln()).abs() < 1e-10);
        let pairs = vec![(vec![1.0, 0.0], vec![2.0, 0.0]), (vec![0.0, 1.0], vec![0.0, 3.0])];
        let want = (1.0 + (-1f64).exp()).ln();
        assert!((simcse_loss(&pairs, 1.0) - want).abs() < 1e-9);
        assert!((want - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn inference_is_deterministic_and_padding_blind() {
        let cfg = EncoderConfig {
            heads: 2,
            ..EncoderConfig::new(8, 2, 16)
        };
        let m = SeqEncoder::init(cfg, 1).unwrap();
        let seqs = random_seqs(3, 8, &[2, 5, 3], 4);
        let a = m.embed(&seqs).unwrap();
        assert_eq!(a, m.embed(&seqs).unwrap());
        // the short sequence embedded alone (no padding) matches its padded batch row
        let alone = m.embed(&seqs[..1]).unwrap();
        for (x, y) in alone[0].iter().zip(&a[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_overlong_and_bad_width() {
        let m = SeqEncoder::init(EncoderConfig::new(4, 1, 16), 0).unwrap();
        let long = random_seqs(1, 4, &[15], 1);
        assert!(matches!(m.embed(&long), Err(SeqEncError::LengthError(_))));
        let wide = random_seqs(1, 5, &[3], 1);
        assert!(matches!(m.embed(&wide), Err(SeqEncError::DimensionMismatch { .. })));
        let state_mode = SeqEncoder::init(EncoderConfig::new(4, 1, 16).with_mode(InputMode::State), 0).unwrap();
        assert!(state_mode.embed(&long).is_ok());
    }

    #[test]
    fn invalid_config() {
        let cfg = EncoderConfig {
            heads: 3,
            ..EncoderConfig::new(8, 1, 16)
        };
        assert!(SeqEncoder::init(cfg, 0).is_err());
    }

    #[test]
    fn end_to_end_gradients() {
        let cfg = EncoderConfig {
            heads: 2,
            ..EncoderConfig::new(8, 1, 16)
        };
        let m = SeqEncoder::init(cfg, 3).unwrap();
        let seqs = random_seqs(3, 8, &[3, 2, 3], 5);
        let refs: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
        let report = check_gradients(&m.params, |g, p| {
            let mut rng = Rng::new(9);
            m.simcse_batch_loss(g, p, &refs, &mut rng).unwrap()
        });
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
