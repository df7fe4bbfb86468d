//! Named parameters with Adam state, initializers, and the checkpoint format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let n = value.len();
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// Glorot-uniform weight `[fan_in × fan_out]` and zero bias `[fan_out]`
    /// stored as `{name}.w` and `{name}.b`.
    pub fn init_dense(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| (2.0 * rng.uniform() - 1.0) * limit)
            .collect();
        self.insert(&format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w));
        self.insert(&format!("{name}.b"), Tensor::zeros(&[fan_out]));
    }

    /// Unit scale and zero shift stored as `{name}.gamma` and `{name}.beta`.
    pub fn init_layer_norm(&mut self, name: &str, width: usize) {
        self.insert(&format!("{name}.gamma"), Tensor::filled(&[width], 1.0));
        self.insert(&format!("{name}.beta"), Tensor::zeros(&[width]));
    }

    pub fn init_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut Rng) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.normal() * std).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data));
    }

    /// One Adam update with bias correction. Every gradient must name a
    /// known parameter with the same shape.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<(), NnError> {
        for (name, g) in grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| NnError::ShapeError(format!("gradient for unknown parameter {name}")))?;
            if slot.value.shape != g.shape {
                return Err(NnError::ShapeError(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape, slot.value.shape
                )));
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let slot = self.slots.get_mut(name).expect("checked above");
            for i in 0..g.len() {
                let gi = g.data[i];
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = slot.m[i] / c1;
                let vhat = slot.v[i] / c2;
                slot.value.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Header line of JSON, then each tensor's data as little-endian `f64`
    /// in header order.
    pub fn write_checkpoint<W: Write>(
        &self,
        mut w: W,
        seed: u64,
        config: &serde_json::Value,
    ) -> Result<(), NnError> {
        let header = CheckpointHeader {
            tensors: self
                .slots
                .iter()
                .map(|(name, s)| TensorEntry {
                    name: name.clone(),
                    shape: s.value.shape.clone(),
                })
                .collect(),
            seed,
            config: config.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        w.write_all(b"\n")?;
        for s in self.slots.values() {
            for v in &s.value.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint; optimizer moments start at zero.
    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(ParamStore, u64, serde_json::Value), NnError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| NnError::Checkpoint(format!("header: {e}")))?;
        let mut store = ParamStore::new();
        let mut buf = [0u8; 8];
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| NnError::Checkpoint(format!("payload truncated in {}", entry.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(&entry.name, Tensor::new(entry.shape, data));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok((store, header.seed, header.config))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    tensors: Vec<TensorEntry>,
    seed: u64,
    config: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    fn grads(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        s.adam_step(&grads(0.0), &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn first_step_moves_at_most_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        for g in [1e-4, 0.3, 50.0, -2.0] {
            let mut s = scalar_store(1.0);
            s.adam_step(&grads(g), &cfg).unwrap();
            let delta = s.get("w").unwrap().item() - 1.0;
            assert!(delta.abs() <= cfg.lr * (1.0 + 1e-6));
            assert!(delta * g < 0.0);
        }
    }

    /// Textbook scalar Adam, written independently of the store.
    fn reference_adam(mut w: f64, steps: usize, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_converges_like_reference() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut s = scalar_store(1.0);
        for _ in 0..200 {
            let w = s.get("w").unwrap().item();
            s.adam_step(&grads(2.0 * w), &cfg).unwrap();
        }
        let w = s.get("w").unwrap().item();
        assert!(w.abs() < 0.05, "w = {w}");
        assert!((w - reference_adam(1.0, 200, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = scalar_store(1.0);
        let bad = BTreeMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
        assert!(matches!(s.adam_step(&bad, &AdamConfig::default()), Err(NnError::ShapeError(_))));
        let unknown = BTreeMap::from([("q".to_string(), Tensor::scalar(1.0))]);
        assert!(matches!(s.adam_step(&unknown, &AdamConfig::default()), Err(NnError::ShapeError(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = Rng::new(3);
        let mut s = ParamStore::new();
        s.init_dense("enc.in", 3, 5, &mut rng);
        s.init_layer_norm("enc.ln", 5);
        let cfg = serde_json::json!({"k": 5});
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf, 42, &cfg).unwrap();
        let first_line = buf.split(|&b| b == b'\n').next().unwrap();
        let header: serde_json::Value = serde_json::from_slice(first_line).unwrap();
        assert_eq!(header["tensors"][0]["name"], "enc.in.b");
        assert_eq!(header["seed"], 42);
        let (back, seed, cfg_back) = ParamStore::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(cfg_back, cfg);
        for name in s.names() {
            assert_eq!(back.get(name), s.get(name));
        }
        buf.pop();
        assert!(ParamStore::read_checkpoint(buf.as_slice()).is_err());
    }
}
