//! F1 scores, perplexity, and the side-by-side comparison table.

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub class: String,
    pub counts: Counts,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassF1>,
}

/// Micro F1 from pooled counts; macro F1 averages classes that have at least
/// one gold or predicted positive (classes with TP+FP+FN = 0 are skipped).
pub fn f1_from_counts(names: &[String], counts: &[Counts]) -> F1Summary {
    let pooled = counts.iter().fold(Counts::default(), |a, c| Counts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
    });
    let active: Vec<f64> = counts.iter().filter(|c| !c.is_empty()).map(|c| c.f1()).collect();
    let macro_f1 = if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    };
    F1Summary {
        micro_f1: pooled.f1(),
        macro_f1,
        per_class: names
            .iter()
            .zip(counts)
            .map(|(n, c)| ClassF1 {
                class: n.clone(),
                counts: *c,
                f1: c.f1(),
            })
            .collect(),
    }
}

pub fn multilabel_counts(gold: &[Vec<bool>], pred: &[Vec<bool>]) -> Vec<Counts> {
    let classes = gold.first().map_or(0, |g| g.len());
    let mut out = vec![Counts::default(); classes];
    for (g, p) in gold.iter().zip(pred) {
        for c in 0..classes {
            match (g[c], p[c]) {
                (true, true) => out[c].tp += 1,
                (false, true) => out[c].fp += 1,
                (true, false) => out[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    out
}

pub fn multiclass_counts(gold: &[usize], pred: &[usize], classes: usize) -> Vec<Counts> {
    let mut out = vec![Counts::default(); classes];
    for (&g, &p) in gold.iter().zip(pred) {
        if g == p {
            out[g].tp += 1;
        } else {
            out[p].fp += 1;
            out[g].fn_ += 1;
        }
    }
    out
}

/// `exp` of the mean negative log-likelihood per token.
pub fn perplexity(token_nll: &[f64]) -> f64 {
    if token_nll.is_empty() {
        return 1.0;
    }
    (token_nll.iter().sum::<f64>() / token_nll.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: String,
    pub metric: String,
    pub sequence: f64,
    pub baseline: f64,
    pub delta: f64,
    pub direction: String,
}

pub const SEQUENCE_WINS: &str = "sequence-encoder wins";
pub const BASELINE_WINS: &str = "baseline wins";
pub const TIE: &str = "tie";

/// Direction for one metric; `higher_is_better` is false for perplexity.
pub fn direction(sequence: f64, baseline: f64, higher_is_better: bool) -> &'static str {
    let d = if higher_is_better {
        sequence - baseline
    } else {
        baseline - sequence
    };
    if d > 0.0 {
        SEQUENCE_WINS
    } else if d < 0.0 {
        BASELINE_WINS
    } else {
        TIE
    }
}

pub fn comparison_row(task: &str, metric: &str, sequence: f64, baseline: f64, higher_is_better: bool) -> ComparisonRow {
    ComparisonRow {
        task: task.to_string(),
        metric: metric.to_string(),
        sequence,
        baseline,
        delta: sequence - baseline,
        direction: direction(sequence, baseline, higher_is_better).to_string(),
    }
}

pub fn write_comparison_csv<W: Write>(mut w: W, rows: &[ComparisonRow]) -> std::io::Result<()> {
    writeln!(w, "task,metric,sequence,baseline,delta,direction")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.task, r.metric, r.sequence, r.baseline, r.delta, r.direction
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counts() {
        let c = Counts { tp: 2, fp: 1, fn_: 1 };
        assert!((c.f1() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_predictions() {
        let gold = vec![vec![true, false], vec![false, true]];
        let pred = vec![vec![false, false]; 2];
        let s = f1_from_counts(&["a".into(), "b".into()], &multilabel_counts(&gold, &pred));
        assert_eq!(s.micro_f1, 0.0);
        assert_eq!(s.macro_f1, 0.0);
    }

    #[test]
    fn macro_skips_absent_classes() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let counts = [
            Counts { tp: 3, fp: 1, fn_: 0 },
            Counts { tp: 0, fp: 0, fn_: 0 },
            Counts { tp: 0, fp: 2, fn_: 0 },
        ];
        let s = f1_from_counts(&names, &counts);
        // class a: 6/7, class c: 0, class b skipped
        assert!((s.macro_f1 - (6.0 / 7.0) / 2.0).abs() < 1e-15);
        assert!((s.micro_f1 - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let gold: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let pred = vec![1usize; 30];
        let s = f1_from_counts(&["o".into(), "s".into(), "i".into()], &multiclass_counts(&gold, &pred, 3));
        assert!((s.micro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perplexity_bounds() {
        let uniform = vec![10f64.ln(); 7];
        assert!((perplexity(&uniform) - 10.0).abs() < 1e-12);
        assert_eq!(perplexity(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn comparison_directions() {
        let r = comparison_row("action_content", "micro_f1", 0.861, 0.809, true);
        assert!((r.delta - 0.052).abs() < 1e-12);
        assert_eq!(r.direction, SEQUENCE_WINS);
        assert_eq!(comparison_row("efficiency", "micro_f1", 0.889, 0.960, true).direction, BASELINE_WINS);
        assert_eq!(comparison_row("reconstruction", "perplexity", 1.5, 2.0, false).direction, SEQUENCE_WINS);
        assert_eq!(comparison_row("x", "y", 0.5, 0.5, true).delta, 0.0);
    }

    proptest! {
        #[test]
        fn multiclass_micro_equals_accuracy(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60)) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let s = f1_from_counts(&["a".into(), "b".into(), "c".into()], &multiclass_counts(&gold, &pred, 3));
            let acc = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / pairs.len() as f64;
            prop_assert!((s.micro_f1 - acc).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.macro_f1));
        }
    }
}
