//! Probes on frozen sequence embeddings: action content (multi-label),
//! efficiency (3-way), and LSTM reconstruction of the action sequence.

pub mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::layers::dense;
use crate::nn::{AdamConfig, Graph, NnError, ParamStore, Rng, Tensor, Var};
use crate::seqenc::Split;

pub use metrics::{
    comparison_row, f1_from_counts, multiclass_counts, multilabel_counts, perplexity, write_comparison_csv,
    ComparisonRow, Counts, F1Summary,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty sequence")]
    EmptySequence,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Arithmetic mean of the vectors.
pub fn mean_pool_baseline(seq: &[Vec<f64>]) -> Result<Vec<f64>, ProbeError> {
    let first = seq.first().ok_or(ProbeError::EmptySequence)?;
    let d = first.len();
    let mut out = vec![0.0; d];
    for v in seq {
        if v.len() != d {
            return Err(ProbeError::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    for o in out.iter_mut() {
        *o /= seq.len() as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub hidden: usize,
    pub lstm_hidden: usize,
    pub token_dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self {
            hidden: 256,
            lstm_hidden: 128,
            token_dim: 32,
            lr: 1e-3,
            batch: 64,
            max_epochs: 200,
            patience: 5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: String,
    pub n_train: usize,
    pub n_eval: usize,
    pub epochs: usize,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub perplexity: Option<f64>,
    pub token_accuracy: Option<f64>,
    pub per_class: Vec<metrics::ClassF1>,
}

/// Per-feature z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>], idx: &[usize]) -> Self {
        let d = x[idx[0]].len();
        let n = idx.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(&x[i]) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for &i in idx {
            for j in 0..d {
                var[j] += (x[i][j] - mean[j]).powi(2) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }

    fn batch(&self, x: &[Vec<f64>], idx: &[usize]) -> Tensor {
        Tensor::from_rows(&idx.iter().map(|&i| self.apply(&x[i])).collect::<Vec<_>>())
    }
}

fn check_inputs(x: &[Vec<f64>], n_targets: usize, split: &Split) -> Result<usize, ProbeError> {
    if x.is_empty() || split.train.is_empty() {
        return Err(ProbeError::EmptyDataset);
    }
    if n_targets != x.len() {
        return Err(ProbeError::DimensionMismatch {
            expected: x.len(),
            found: n_targets,
        });
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|v| v.len() != d) {
        return Err(ProbeError::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(d)
}

/// Adam with early stopping on validation loss; leaves the best parameters
/// in `params` and returns the number of epochs run.
fn fit<F>(params: &mut ParamStore, split: &Split, hyper: &ProbeHyper, loss: F) -> Result<usize, ProbeError>
where
    F: Fn(&mut Graph, &ParamStore, &[usize]) -> Result<Var, ProbeError>,
{
    let adam = AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    };
    let val = if split.val.is_empty() { &split.train } else { &split.val };
    let batch = hyper.batch.max(1);
    let eval = |p: &ParamStore| -> Result<f64, ProbeError> {
        let mut total = 0.0;
        for chunk in val.chunks(batch) {
            let mut g = Graph::new();
            let l = loss(&mut g, p, chunk)?;
            total += g.value(l).item() * chunk.len() as f64;
        }
        Ok(total / val.len() as f64)
    };
    let rng = Rng::new(hyper.seed).split_str("probe-epoch");
    let mut order = split.train.clone();
    let mut best = (eval(params)?, params.clone());
    let mut bad = 0;
    let mut epochs = 0;
    for epoch in 1..=hyper.max_epochs {
        epochs = epoch;
        rng.split(epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let mut g = Graph::new();
            let l = loss(&mut g, params, chunk)?;
            g.check()?;
            let grads = g.backward(l).params(params);
            params.adam_step(&grads, &adam)?;
        }
        let v = eval(params)?;
        if v < best.0 {
            best = (v, params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= hyper.patience.max(1) {
                break;
            }
        }
    }
    *params = best.1;
    Ok(epochs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    pub params: ParamStore,
    pub standardizer: Standardizer,
    pub outputs: usize,
    pub multilabel: bool,
}

impl MlpProbe {
    fn init(d: usize, hidden: usize, outputs: usize, multilabel: bool, std: Standardizer, seed: u64) -> Self {
        let mut rng = Rng::new(seed).split_str("probe-init");
        let mut params = ParamStore::new();
        params.init_dense("mlp.hidden", d, hidden, &mut rng);
        params.init_dense("mlp.out", hidden, outputs, &mut rng);
        Self {
            params,
            standardizer: std,
            outputs,
            multilabel,
        }
    }

    fn logits(&self, g: &mut Graph, p: &ParamStore, x: &[Vec<f64>], idx: &[usize]) -> Var {
        let input = g.constant(self.standardizer.batch(x, idx));
        let h = dense(g, p, "mlp.hidden", input);
        let h = g.gelu(h);
        dense(g, p, "mlp.out", h)
    }

    /// Sigmoid probabilities (multi-label) or softmax probabilities.
    pub fn predict_proba(&self, x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
        let mut g = Graph::new();
        let l = self.logits(&mut g, &self.params, x, idx);
        let out = if self.multilabel {
            g.sigmoid(l)
        } else {
            l
        };
        let rows = g.value(out).rows();
        if self.multilabel {
            return rows;
        }
        rows.into_iter()
            .map(|r| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    /// Multi-label predictions at threshold 0.5.
    pub fn predict_sets(&self, x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<bool>> {
        self.predict_proba(x, idx)
            .into_iter()
            .map(|r| r.into_iter().map(|p| p >= 0.5).collect())
            .collect()
    }

    pub fn predict_classes(&self, x: &[Vec<f64>], idx: &[usize]) -> Vec<usize> {
        self.predict_proba(x, idx)
            .into_iter()
            .map(|r| argmax(&r))
            .collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn eval_idx(split: &Split) -> &[usize] {
    if split.test.is_empty() {
        &split.train
    } else {
        &split.test
    }
}

/// Multi-label action-content probe evaluated on the test split (the train
/// split if there is no test split).
pub fn train_action_content_probe(
    x: &[Vec<f64>],
    targets: &[Vec<bool>],
    class_names: &[String],
    split: &Split,
    hyper: &ProbeHyper,
) -> Result<(MlpProbe, ProbeReport), ProbeError> {
    let d = check_inputs(x, targets.len(), split)?;
    let classes = class_names.len();
    if let Some(bad) = targets.iter().find(|t| t.len() != classes) {
        return Err(ProbeError::DimensionMismatch {
            expected: classes,
            found: bad.len(),
        });
    }
    let std = Standardizer::fit(x, &split.train);
    let mut probe = MlpProbe::init(d, hyper.hidden, classes, true, std, hyper.seed);
    let mut params = probe.params.clone();
    let epochs = fit(&mut params, split, hyper, |g, p, idx| {
        let l = probe.logits(g, p, x, idx);
        let t: Vec<f64> = idx
            .iter()
            .flat_map(|&i| targets[i].iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .collect();
        Ok(g.sigmoid_binary_cross_entropy(l, &t))
    })?;
    probe.params = params;
    let report = action_content_report(&probe, x, targets, class_names, eval_idx(split), split.train.len(), epochs);
    Ok((probe, report))
}

pub fn action_content_report(
    probe: &MlpProbe,
    x: &[Vec<f64>],
    targets: &[Vec<bool>],
    class_names: &[String],
    idx: &[usize],
    n_train: usize,
    epochs: usize,
) -> ProbeReport {
    let pred = probe.predict_sets(x, idx);
    let gold: Vec<Vec<bool>> = idx.iter().map(|&i| targets[i].clone()).collect();
    let s = f1_from_counts(class_names, &multilabel_counts(&gold, &pred));
    ProbeReport {
        task: "action_content".into(),
        n_train,
        n_eval: idx.len(),
        epochs,
        micro_f1: Some(s.micro_f1),
        macro_f1: Some(s.macro_f1),
        perplexity: None,
        token_accuracy: None,
        per_class: s.per_class,
    }
}

/// Three-way efficiency probe (softmax + cross-entropy).
pub fn train_efficiency_probe(
    x: &[Vec<f64>],
    labels: &[usize],
    class_names: &[String],
    split: &Split,
    hyper: &ProbeHyper,
) -> Result<(MlpProbe, ProbeReport), ProbeError> {
    let d = check_inputs(x, labels.len(), split)?;
    let classes = class_names.len();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(ProbeError::DimensionMismatch {
            expected: classes,
            found: bad + 1,
        });
    }
    let std = Standardizer::fit(x, &split.train);
    let mut probe = MlpProbe::init(d, hyper.hidden, classes, false, std, hyper.seed);
    let mut params = probe.params.clone();
    let epochs = fit(&mut params, split, hyper, |g, p, idx| {
        let l = probe.logits(g, p, x, idx);
        let t: Vec<Option<usize>> = idx.iter().map(|&i| Some(labels[i])).collect();
        Ok(g.softmax_cross_entropy(l, &t))
    })?;
    probe.params = params;
    let idx = eval_idx(split);
    let pred = probe.predict_classes(x, idx);
    let gold: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let s = f1_from_counts(class_names, &multiclass_counts(&gold, &pred, classes));
    let report = ProbeReport {
        task: "efficiency".into(),
        n_train: split.train.len(),
        n_eval: idx.len(),
        epochs,
        micro_f1: Some(s.micro_f1),
        macro_f1: Some(s.macro_f1),
        perplexity: None,
        token_accuracy: None,
        per_class: s.per_class,
    };
    Ok((probe, report))
}

/// Micro F1 of always predicting the most frequent training label.
pub fn majority_baseline_micro_f1(labels: &[usize], split: &Split, classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for &i in &split.train {
        counts[labels[i]] += 1;
    }
    let majority = (0..classes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let idx = eval_idx(split);
    idx.iter().filter(|&&i| labels[i] == majority).count() as f64 / idx.len().max(1) as f64
}

/// LSTM decoder conditioned on a sequence embedding. Tokens `0..vocab` are
/// actions; `vocab` is EOS and `vocab + 1` is BOS (input only).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmProbe {
    pub params: ParamStore,
    pub standardizer: Standardizer,
    pub vocab: usize,
    pub hidden: usize,
}

impl LstmProbe {
    fn init(d: usize, vocab: usize, hyper: &ProbeHyper, std: Standardizer) -> Self {
        let h = hyper.lstm_hidden;
        let mut rng = Rng::new(hyper.seed).split_str("lstm-init");
        let mut p = ParamStore::new();
        for name in ["init.h", "init.c"] {
            p.init_dense(&format!("{name}1"), d, h, &mut rng);
            p.init_dense(&format!("{name}2"), h, h, &mut rng);
        }
        p.init_normal("lstm.emb", &[vocab + 2, hyper.token_dim], 0.1, &mut rng);
        p.init_dense("lstm.x", hyper.token_dim, 4 * h, &mut rng);
        p.init_dense("lstm.h", h, 4 * h, &mut rng);
        let b = p.get_mut("lstm.x.b").expect("just created");
        for v in b.data[h..2 * h].iter_mut() {
            *v = 1.0;
        }
        p.init_dense("lstm.out", h, vocab + 1, &mut rng);
        Self {
            params: p,
            standardizer: std,
            vocab,
            hidden: h,
        }
    }

    pub fn eos(&self) -> usize {
        self.vocab
    }

    pub fn bos(&self) -> usize {
        self.vocab + 1
    }

    fn initial_state(&self, g: &mut Graph, p: &ParamStore, z: Var) -> (Var, Var) {
        let mut mlp = |name: &str| {
            let a = dense(g, p, &format!("{name}1"), z);
            let a = g.tanh(a);
            let a = dense(g, p, &format!("{name}2"), a);
            g.tanh(a)
        };
        let h = mlp("init.h");
        let c = mlp("init.c");
        (h, c)
    }

    fn step(&self, g: &mut Graph, p: &ParamStore, tokens: &[usize], h: Var, c: Var) -> (Var, Var, Var) {
        let n = self.hidden;
        let e = crate::nn::layers::embedding_lookup(g, p, "lstm.emb", tokens);
        let gx = dense(g, p, "lstm.x", e);
        let gh = dense(g, p, "lstm.h", h);
        let gates = g.add(gx, gh);
        let i = g.slice_cols(gates, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice_cols(gates, n, n);
        let f = g.sigmoid(f);
        let u = g.slice_cols(gates, 2 * n, n);
        let u = g.tanh(u);
        let o = g.slice_cols(gates, 3 * n, n);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let iu = g.mul(i, u);
        let c = g.add(fc, iu);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        let logits = dense(g, p, "lstm.out", h);
        (h, c, logits)
    }

    /// Teacher-forced logits per step and the gold target per step.
    fn teacher_forced(
        &self,
        g: &mut Graph,
        p: &ParamStore,
        x: &[Vec<f64>],
        seqs: &[Vec<usize>],
        idx: &[usize],
    ) -> (Vec<Var>, Vec<Vec<Option<usize>>>) {
        let z = g.constant(self.standardizer.batch(x, idx));
        let (mut h, mut c) = self.initial_state(g, p, z);
        let steps = idx.iter().map(|&i| seqs[i].len() + 1).max().unwrap_or(1);
        let mut logits = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps);
        for t in 0..steps {
            let inputs: Vec<usize> = idx
                .iter()
                .map(|&i| match t {
                    0 => self.bos(),
                    _ => seqs[i].get(t - 1).copied().unwrap_or(self.eos()),
                })
                .collect();
            let gold: Vec<Option<usize>> = idx
                .iter()
                .map(|&i| {
                    let s = &seqs[i];
                    if t < s.len() {
                        Some(s[t])
                    } else if t == s.len() {
                        Some(self.eos())
                    } else {
                        None
                    }
                })
                .collect();
            let (nh, nc, l) = self.step(g, p, &inputs, h, c);
            h = nh;
            c = nc;
            logits.push(l);
            targets.push(gold);
        }
        (logits, targets)
    }

    /// Mean cross-entropy over all gold tokens (EOS included).
    fn loss(&self, g: &mut Graph, p: &ParamStore, x: &[Vec<f64>], seqs: &[Vec<usize>], idx: &[usize]) -> Var {
        let (logits, targets) = self.teacher_forced(g, p, x, seqs, idx);
        let total: usize = targets.iter().map(|t| t.iter().filter(|v| v.is_some()).count()).sum();
        let mut acc: Option<Var> = None;
        for (l, t) in logits.into_iter().zip(&targets) {
            let count = t.iter().filter(|v| v.is_some()).count();
            if count == 0 {
                continue;
            }
            let ce = g.softmax_cross_entropy(l, t);
            let w = g.scale(ce, count as f64 / total as f64);
            acc = Some(match acc {
                Some(a) => g.add(a, w),
                None => w,
            });
        }
        acc.expect("every sequence has an EOS target")
    }

    /// Per-token negative log-likelihoods under teacher forcing.
    pub fn token_nll(&self, x: &[Vec<f64>], seqs: &[Vec<usize>], idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::new();
        for chunk in idx.chunks(256) {
            let mut g = Graph::new();
            let (logits, targets) = self.teacher_forced(&mut g, &self.params, x, seqs, chunk);
            for (l, t) in logits.iter().zip(&targets) {
                let v = g.value(*l);
                for (r, gold) in t.iter().enumerate() {
                    if let Some(gold) = gold {
                        let row = v.row(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lse = m + row.iter().map(|a| (a - m).exp()).sum::<f64>().ln();
                        out.push(lse - row[*gold]);
                    }
                }
            }
        }
        out
    }

    /// Greedy decoding for `lengths[j]` steps from each embedding.
    pub fn greedy_decode(&self, x: &[Vec<f64>], idx: &[usize], lengths: &[usize]) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for (ci, chunk) in idx.chunks(256).enumerate() {
            let lens = &lengths[ci * 256..ci * 256 + chunk.len()];
            let steps = lens.iter().copied().max().unwrap_or(0);
            let mut g = Graph::new();
            let z = g.constant(self.standardizer.batch(x, chunk));
            let (mut h, mut c) = self.initial_state(&mut g, &self.params, z);
            let mut inputs = vec![self.bos(); chunk.len()];
            let mut decoded = vec![Vec::new(); chunk.len()];
            for _ in 0..steps {
                let (nh, nc, l) = self.step(&mut g, &self.params, &inputs, h, c);
                h = nh;
                c = nc;
                let v = g.value(l);
                for r in 0..chunk.len() {
                    let tok = argmax(v.row(r));
                    decoded[r].push(tok);
                    inputs[r] = tok;
                }
            }
            for (r, mut d) in decoded.into_iter().enumerate() {
                d.truncate(lens[r]);
                out.push(d);
            }
        }
        out
    }
}

/// Position-wise agreement of greedy decodes with gold action tokens, at gold length.
pub fn token_accuracy(gold: &[Vec<usize>], decoded: &[Vec<usize>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (g, d) in gold.iter().zip(decoded) {
        for (t, tok) in g.iter().enumerate() {
            total += 1;
            if d.get(t) == Some(tok) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Perplexity of the training-token unigram distribution (EOS included) on
/// the evaluation split, with add-one smoothing.
pub fn unigram_perplexity(seqs: &[Vec<usize>], vocab: usize, split: &Split) -> f64 {
    let mut counts = vec![1.0; vocab + 1];
    for &i in &split.train {
        for &t in &seqs[i] {
            counts[t] += 1.0;
        }
        counts[vocab] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let mut nll = Vec::new();
    for &i in eval_idx(split) {
        for &t in seqs[i].iter().chain(std::iter::once(&vocab)) {
            nll.push(-(counts[t] / total).ln());
        }
    }
    perplexity(&nll)
}

pub fn train_reconstruction_probe(
    x: &[Vec<f64>],
    seqs: &[Vec<usize>],
    vocab: usize,
    split: &Split,
    hyper: &ProbeHyper,
) -> Result<(LstmProbe, ProbeReport), ProbeError> {
    let d = check_inputs(x, seqs.len(), split)?;
    if let Some(bad) = seqs.iter().flatten().find(|&&t| t >= vocab) {
        return Err(ProbeError::DimensionMismatch {
            expected: vocab,
            found: bad + 1,
        });
    }
    let std = Standardizer::fit(x, &split.train);
    let mut probe = LstmProbe::init(d, vocab, hyper, std);
    let mut params = probe.params.clone();
    let epochs = fit(&mut params, split, hyper, |g, p, idx| Ok(probe.loss(g, p, x, seqs, idx)))?;
    probe.params = params;
    let report = reconstruction_report(&probe, x, seqs, eval_idx(split), split.train.len(), epochs);
    Ok((probe, report))
}

pub fn reconstruction_report(
    probe: &LstmProbe,
    x: &[Vec<f64>],
    seqs: &[Vec<usize>],
    idx: &[usize],
    n_train: usize,
    epochs: usize,
) -> ProbeReport {
    let ppl = perplexity(&probe.token_nll(x, seqs, idx));
    let gold: Vec<Vec<usize>> = idx.iter().map(|&i| seqs[i].clone()).collect();
    let lengths: Vec<usize> = gold.iter().map(|g| g.len()).collect();
    let decoded = probe.greedy_decode(x, idx, &lengths);
    ProbeReport {
        task: "reconstruction".into(),
        n_train,
        n_eval: idx.len(),
        epochs,
        micro_f1: None,
        macro_f1: None,
        perplexity: Some(ppl),
        token_accuracy: Some(token_accuracy(&gold, &decoded)),
        per_class: Vec::new(),
    }
}

/// Side-by-side metrics for matching sequence and baseline reports.
pub fn compare_to_baseline(seq: &ProbeReport, base: &ProbeReport) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    let pairs = [
        ("micro_f1", seq.micro_f1, base.micro_f1, true),
        ("macro_f1", seq.macro_f1, base.macro_f1, true),
        ("perplexity", seq.perplexity, base.perplexity, false),
        ("token_accuracy", seq.token_accuracy, base.token_accuracy, true),
    ];
    for (metric, a, b, higher) in pairs {
        if let (Some(a), Some(b)) = (a, b) {
            rows.push(comparison_row(&seq.task, metric, a, b, higher));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_split(n: usize) -> Split {
        Split {
            train: (0..n).collect(),
            val: (0..n).collect(),
            test: (0..n).collect(),
        }
    }

    #[test]
    fn mean_pool() {
        assert_eq!(mean_pool_baseline(&[vec![1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(mean_pool_baseline(&[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(mean_pool_baseline(&[]), Err(ProbeError::EmptySequence)));
    }

    #[test]
    fn separable_single_action_set() {
        let mut rng = Rng::new(1);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            let mut v: Vec<f64> = (0..4).map(|_| 0.1 * rng.normal()).collect();
            v[c] += 3.0;
            x.push(v);
            y.push((0..3).map(|j| j == c).collect::<Vec<bool>>());
        }
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let hyper = ProbeHyper {
            hidden: 16,
            ..Default::default()
        };
        let split = full_split(60);
        let (_, r) = train_action_content_probe(&x, &y, &names, &split, &hyper).unwrap();
        assert_eq!(r.micro_f1, Some(1.0));
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let (_, r) = train_efficiency_probe(&x, &labels, &names, &split, &hyper).unwrap();
        assert_eq!(r.micro_f1, Some(1.0));
    }

    #[test]
    fn empty_and_mismatched() {
        let names = vec!["a".to_string()];
        let split = full_split(0);
        assert!(matches!(
            train_action_content_probe(&[], &[], &names, &split, &ProbeHyper::default()),
            Err(ProbeError::EmptyDataset)
        ));
        let split = full_split(2);
        let x = vec![vec![1.0], vec![2.0, 3.0]];
        assert!(matches!(
            train_efficiency_probe(&x, &[0, 0], &names, &split, &ProbeHyper::default()),
            Err(ProbeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_example_memorized() {
        let x = vec![vec![0.3, -0.2, 0.9]];
        let seqs = vec![vec![2, 0, 1, 1]];
        let hyper = ProbeHyper {
            lstm_hidden: 16,
            token_dim: 8,
            lr: 1e-2,
            max_epochs: 100,
            patience: 100,
            ..Default::default()
        };
        let (probe, report) = train_reconstruction_probe(&x, &seqs, 3, &full_split(1), &hyper).unwrap();
        assert!(report.perplexity.unwrap() < 1.05, "{report:?}");
        assert_eq!(report.token_accuracy, Some(1.0));
        assert_eq!(probe.greedy_decode(&x, &[0], &[4]), seqs);
    }

    #[test]
    fn unigram_and_accuracy_helpers() {
        let seqs = vec![vec![0, 1], vec![1, 1]];
        let split = full_split(2);
        let ppl = unigram_perplexity(&seqs, 2, &split);
        assert!(ppl > 1.0 && ppl < 3.0);
        assert_eq!(token_accuracy(&[vec![1, 2, 3]], &[vec![1, 0]]), 1.0 / 3.0);
    }

    #[test]
    fn identical_reports_compare_to_zero() {
        let r = ProbeReport {
            task: "efficiency".into(),
            n_train: 1,
            n_eval: 1,
            epochs: 1,
            micro_f1: Some(0.5),
            macro_f1: Some(0.4),
            perplexity: None,
            token_accuracy: None,
            per_class: vec![],
        };
        let rows = compare_to_baseline(&r, &r);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|row| row.delta == 0.0 && row.direction == metrics::TIE));
    }
}
