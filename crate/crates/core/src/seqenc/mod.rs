//! Transition sequences and the contrastively trained sequence encoder.

pub mod model;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Pathway;
use crate::encode::{EncodeError, StateEncoder};
use crate::nn::{AdamConfig, Graph, NnError, ParamStore, Rng};

pub use model::{simcse_loss, EncoderConfig, InputMode, SeqEncoder};

#[derive(Debug, Error)]
pub enum SeqEncError {
    #[error("length error: {0}")]
    LengthError(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `δ_t = h_{t+1} − h_t` for consecutive state vectors.
pub fn to_transitions(h: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, SeqEncError> {
    if h.len() < 2 {
        return Err(SeqEncError::LengthError(format!("need at least 2 states, got {}", h.len())));
    }
    let d = h[0].len();
    if let Some(bad) = h.iter().find(|v| v.len() != d) {
        return Err(SeqEncError::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(h.windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect())
}

/// Encodes every state of each pathway and returns the model input for `mode`.
pub fn build_sequences(
    enc: &StateEncoder,
    pathways: &[Pathway],
    mode: InputMode,
) -> Result<Vec<Vec<Vec<f64>>>, SeqEncError> {
    pathways
        .iter()
        .map(|p| {
            let h = enc.encode_all(&p.states)?;
            match mode {
                InputMode::State => Ok(h),
                InputMode::Transition => to_transitions(&h),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 64,
            max_epochs: 50,
            patience: 5,
            seed: 7,
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle then contiguous train/val/test cut. Validation gets at
/// least one item whenever there are two or more.
pub fn split_indices(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).split_str("split").shuffle(&mut idx);
    let mut n_val = (n as f64 * val_frac).round() as usize;
    if n_val == 0 && n >= 2 {
        n_val = 1;
    }
    let n_train = ((n as f64 * train_frac).round() as usize).min(n - n_val.min(n));
    let val = idx[n_train..n_train + n_val.min(n - n_train)].to_vec();
    let test = idx[n_train + val.len()..].to_vec();
    idx.truncate(n_train);
    Split {
        train: idx,
        val,
        test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SeqEncoder,
    pub log: Vec<TrainLogRow>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub split: Split,
}

fn mean_loss(
    model: &SeqEncoder,
    params: &ParamStore,
    seqs: &[Vec<Vec<f64>>],
    idx: &[usize],
    batch: usize,
    rng: &Rng,
) -> Result<f64, SeqEncError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (bi, chunk) in idx.chunks(batch.max(1)).enumerate() {
        let refs: Vec<&[Vec<f64>]> = chunk.iter().map(|&i| seqs[i].as_slice()).collect();
        let mut g = Graph::new();
        let mut r = rng.split(bi as u64);
        let l = model.simcse_batch_loss(&mut g, params, &refs, &mut r)?;
        total += g.value(l).item() * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mini-batch SimCSE training with early stopping on validation loss.
/// Row 0 of the log holds the losses before any update. The returned model
/// is the best validation epoch among epochs ≥ 1.
pub fn train(config: &EncoderConfig, seqs: &[Vec<Vec<f64>>], hyper: &TrainHyper) -> Result<TrainOutcome, SeqEncError> {
    if seqs.is_empty() {
        return Err(SeqEncError::EmptyCorpus);
    }
    let split = split_indices(seqs.len(), hyper.train_frac, hyper.val_frac, hyper.seed);
    if split.train.is_empty() {
        return Err(SeqEncError::EmptyCorpus);
    }
    let val_idx = if split.val.is_empty() { &split.train } else { &split.val };
    let root = Rng::new(hyper.seed);
    let val_rng = root.split_str("val");
    let adam = AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    };
    let mut model = SeqEncoder::init(config.clone(), hyper.seed)?;
    let batch = hyper.batch.max(1);

    let mut log = vec![TrainLogRow {
        epoch: 0,
        train_loss: mean_loss(&model, &model.params, seqs, &split.train, batch, &root.split_str("train-eval"))?,
        val_loss: mean_loss(&model, &model.params, seqs, val_idx, batch, &val_rng)?,
    }];
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut bad = 0usize;
    let mut order = split.train.clone();
    let mut step = 0u64;
    for epoch in 1..=hyper.max_epochs {
        root.split_str("epoch").split(epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let refs: Vec<&[Vec<f64>]> = chunk.iter().map(|&i| seqs[i].as_slice()).collect();
            let mut g = Graph::new();
            let mut r = root.split_str("step").split(step);
            step += 1;
            let l = model.simcse_batch_loss(&mut g, &model.params, &refs, &mut r)?;
            total += g.value(l).item() * chunk.len() as f64;
            let grads = g.backward(l).params(&model.params);
            model.params.adam_step(&grads, &adam)?;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = mean_loss(&model, &model.params, seqs, val_idx, batch, &val_rng)?;
        if !val_loss.is_finite() {
            return Err(NnError::NonFinite(format!("validation loss at epoch {epoch}")).into());
        }
        log.push(TrainLogRow {
            epoch,
            train_loss,
            val_loss,
        });
        match &best {
            Some((_, b, _)) if val_loss >= *b => bad += 1,
            _ => {
                best = Some((epoch, val_loss, model.params.clone()));
                bad = 0;
            }
        }
        if bad > 0 && bad >= hyper.patience {
            break;
        }
    }
    let (best_epoch, best_val_loss) = match best {
        Some((e, v, p)) => {
            model.params = p;
            (e, v)
        }
        None => (0, log[0].val_loss),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_loss,
        split,
    })
}

pub fn write_log_csv<W: Write>(mut w: W, log: &[TrainLogRow]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for r in log {
        writeln!(w, "{},{:?},{:?}", r.epoch, r.train_loss, r.val_loss)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointConfig {
    encoder: EncoderConfig,
}

pub fn save_checkpoint<W: Write>(model: &SeqEncoder, w: W, seed: u64) -> Result<(), SeqEncError> {
    let cfg = serde_json::to_value(CheckpointConfig {
        encoder: model.config.clone(),
    })
    .expect("config serializes");
    model.params.write_checkpoint(w, seed, &cfg)?;
    Ok(())
}

pub fn load_checkpoint<R: BufRead>(r: R) -> Result<(SeqEncoder, u64), SeqEncError> {
    let (params, seed, cfg) = ParamStore::read_checkpoint(r)?;
    let cfg: CheckpointConfig =
        serde_json::from_value(cfg).map_err(|e| NnError::Checkpoint(format!("config: {e}")))?;
    cfg.encoder.validate()?;
    let reference = SeqEncoder::init(cfg.encoder.clone(), 0)?;
    for name in reference.params.names() {
        let want = &reference.params.get(name).expect("listed").shape;
        match params.get(name) {
            Some(t) if &t.shape == want => {}
            _ => {
                return Err(NnError::Checkpoint(format!("parameter {name} missing or mis-shaped")).into());
            }
        }
    }
    Ok((
        SeqEncoder {
            config: cfg.encoder,
            params,
        },
        seed,
    ))
}

/// Seed for one (L, k) cell, independent of which other cells run.
pub fn cell_seed(seed: u64, layers: usize, k: usize) -> u64 {
    Rng::new(seed).split_str(&format!("cell:L{layers}:k{k}")).next_u64()
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub config: EncoderConfig,
    pub seed: u64,
    pub outcome: TrainOutcome,
}

/// Trains one cell of the grid exactly as [`grid_search`] would.
pub fn train_cell(
    base: &EncoderConfig,
    layers: usize,
    k: usize,
    seqs: &[Vec<Vec<f64>>],
    hyper: &TrainHyper,
) -> Result<GridCell, SeqEncError> {
    let config = EncoderConfig {
        layers,
        k,
        heads: (k / 64).max(1),
        ..base.clone()
    };
    let seed = cell_seed(hyper.seed, layers, k);
    let cell_hyper = TrainHyper {
        seed,
        ..hyper.clone()
    };
    let outcome = train(&config, seqs, &cell_hyper)?;
    Ok(GridCell { config, seed, outcome })
}

pub fn grid_search(
    enc: &StateEncoder,
    pathways: &[Pathway],
    base: &EncoderConfig,
    layer_set: &[usize],
    k_set: &[usize],
    hyper: &TrainHyper,
) -> Result<Vec<GridCell>, SeqEncError> {
    let seqs = build_sequences(enc, pathways, base.input_mode)?;
    let mut out = Vec::new();
    for &l in layer_set {
        for &k in k_set {
            out.push(train_cell(base, l, k, &seqs, hyper)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub positive: f64,
    pub negative: f64,
}

/// Mean cosine between two dropout views of the same sequence versus
/// between views of different sequences in the same batch.
pub fn alignment(
    model: &SeqEncoder,
    seqs: &[Vec<Vec<f64>>],
    idx: &[usize],
    batch: usize,
    seed: u64,
) -> Result<Alignment, SeqEncError> {
    let rng = Rng::new(seed).split_str("alignment");
    let (mut pos, mut np, mut neg, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (bi, chunk) in idx.chunks(batch.max(2)).enumerate() {
        let refs: Vec<&[Vec<f64>]> = chunk
            .iter()
            .chain(chunk.iter())
            .map(|&i| seqs[i].as_slice())
            .collect();
        let mut g = Graph::new();
        let z = model.forward(&mut g, &model.params, &refs, Some(&mut rng.split(bi as u64)))?;
        let b = chunk.len();
        let z1 = g.slice_rows(z, 0, b);
        let z2 = g.slice_rows(z, b, b);
        let c = g.cosine_matrix(z1, z2);
        let c = g.value(c);
        for i in 0..b {
            for j in 0..b {
                if i == j {
                    pos += c.data[i * b + j];
                    np += 1;
                } else {
                    neg += c.data[i * b + j];
                    nn += 1;
                }
            }
        }
    }
    Ok(Alignment {
        positive: pos / np.max(1) as f64,
        negative: neg / nn.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_arithmetic() {
        let h = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 2.0]];
        assert_eq!(to_transitions(&h).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        let same = vec![vec![0.5, 0.25]; 2];
        assert_eq!(to_transitions(&same).unwrap(), vec![vec![0.0, 0.0]]);
        let fifteen = vec![vec![1.0]; 15];
        assert_eq!(to_transitions(&fifteen).unwrap().len(), 14);
        assert!(matches!(to_transitions(&h[..1]), Err(SeqEncError::LengthError(_))));
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(to_transitions(&ragged), Err(SeqEncError::DimensionMismatch { .. })));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let s = split_indices(100, 0.8, 0.1, 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s, split_indices(100, 0.8, 0.1, 3));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let tiny = split_indices(3, 0.8, 0.1, 1);
        assert_eq!(tiny.val.len(), 1);
        assert_eq!(tiny.train.len(), 2);
    }

    fn toy_seqs(n: usize, d: usize) -> Vec<Vec<Vec<f64>>> {
        let mut rng = Rng::new(42);
        (0..n)
            .map(|i| (0..1 + i % 4).map(|_| (0..d).map(|_| rng.normal()).collect()).collect())
            .collect()
    }

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            heads: 2,
            ..EncoderConfig::new(6, 1, 16)
        }
    }

    #[test]
    fn one_epoch_with_zero_patience() {
        let hyper = TrainHyper {
            max_epochs: 1,
            patience: 0,
            batch: 8,
            ..Default::default()
        };
        let out = train(&small_config(), &toy_seqs(30, 6), &hyper).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn training_is_reproducible_to_the_byte() {
        let hyper = TrainHyper {
            max_epochs: 2,
            batch: 8,
            ..Default::default()
        };
        let seqs = toy_seqs(24, 6);
        let run = || {
            let out = train(&small_config(), &seqs, &hyper).unwrap();
            let mut ck = Vec::new();
            save_checkpoint(&out.model, &mut ck, hyper.seed).unwrap();
            let mut log = Vec::new();
            write_log_csv(&mut log, &out.log).unwrap();
            (ck, log)
        };
        let a = run();
        assert_eq!(a, run());
        let (m, seed) = load_checkpoint(a.0.as_slice()).unwrap();
        assert_eq!(seed, 7);
        assert_eq!(m.config, small_config());
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(
            train(&small_config(), &[], &TrainHyper::default()),
            Err(SeqEncError::EmptyCorpus)
        ));
    }

    #[test]
    fn grid_cells_are_independent() {
        let corpus = crate::corpus::generate_corpus(2, 2, 3, 1, crate::corpus::PolicyMix::default());
        let enc = StateEncoder::structural(16, 0).unwrap();
        let base = EncoderConfig::new(16, 1, 16);
        let hyper = TrainHyper {
            max_epochs: 1,
            batch: 4,
            ..Default::default()
        };
        let grid = grid_search(&enc, &corpus.pathways, &base, &[1, 2], &[16], &hyper).unwrap();
        assert_eq!(grid.len(), 2);
        let seqs = build_sequences(&enc, &corpus.pathways, InputMode::Transition).unwrap();
        let alone = train_cell(&base, 2, 16, &seqs, &hyper).unwrap();
        assert_eq!(alone.outcome.model.params, grid[1].outcome.model.params);
        assert_eq!(alone.outcome.log, grid[1].outcome.log);
    }
}
