//! Embedding-based strategy measures (uniqueness, diversity, conformity) and
//! the geometry diagnostics used to compare state and transition spaces.

pub mod geometry;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{project_2d, silhouette, silhouette_comparison, Level, SilhouettePair};

pub const DEFAULT_SHRINKAGE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("covariance is singular even after shrinkage")]
    SingularCovariance,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("diversity needs at least 2 attempts, got {0}")]
    InsufficientAttempts(usize),
    #[error("no optimal pathway observed for problem {0}")]
    NoOptimalObserved(String),
    #[error("zero variance of conformity for problem {0}")]
    ZeroVariance(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate grouping: {0}")]
    DegenerateGrouping(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// Mean, shrunk covariance and its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDistribution {
    pub mean: Vec<f64>,
    /// Population covariance before shrinkage, row-major `k × k`.
    pub covariance: Vec<f64>,
    pub shrinkage: f64,
    pub n: usize,
    chol: Vec<f64>,
}

impl CohortDistribution {
    /// Population covariance Σ shrunk to `(1−λ)Σ + λ·(tr Σ / k)·I`.
    pub fn fit(samples: &[Vec<f64>], shrinkage: f64) -> Result<Self, StrategyError> {
        if samples.len() < 2 {
            return Err(StrategyError::InsufficientSamples {
                needed: 2,
                got: samples.len(),
            });
        }
        let k = samples[0].len();
        check_dims(samples, k)?;
        let n = samples.len() as f64;
        let mut mean = vec![0.0; k];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut centered = Vec::with_capacity(samples.len() * k);
        for s in samples {
            centered.extend(s.iter().zip(&mean).map(|(v, m)| v - m));
        }
        let mut cov = vec![0.0; k * k];
        crate::nn::tensor::gemm(k, samples.len(), k, &centered, true, &centered, false, &mut cov, 0.0);
        for c in cov.iter_mut() {
            *c /= n;
        }
        let trace: f64 = (0..k).map(|i| cov[i * k + i]).sum();
        let mut shrunk: Vec<f64> = cov.iter().map(|c| (1.0 - shrinkage) * c).collect();
        for i in 0..k {
            shrunk[i * k + i] += shrinkage * trace / k as f64;
        }
        let chol = cholesky(&shrunk, k).ok_or(StrategyError::SingularCovariance)?;
        Ok(Self {
            mean,
            covariance: cov,
            shrinkage,
            n: samples.len(),
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `sqrt((z−μ)ᵀ Σ_λ⁻¹ (z−μ))` by forward substitution on the Cholesky factor.
    pub fn mahalanobis(&self, z: &[f64]) -> Result<f64, StrategyError> {
        let k = self.dim();
        if z.len() != k {
            return Err(StrategyError::DimensionMismatch {
                expected: k,
                found: z.len(),
            });
        }
        let mut y = vec![0.0; k];
        for i in 0..k {
            let mut s = z[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[i * k + j] * y[j];
            }
            y[i] = s / self.chol[i * k + i];
        }
        Ok(y.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

fn check_dims(v: &[Vec<f64>], k: usize) -> Result<(), StrategyError> {
    match v.iter().find(|s| s.len() != k) {
        Some(bad) => Err(StrategyError::DimensionMismatch {
            expected: k,
            found: bad.len(),
        }),
        None => Ok(()),
    }
}

/// Lower-triangular `L` with `L Lᵀ = a`, or `None` if `a` is not
/// numerically positive definite.
pub fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= scale * 1e-13 || s <= 0.0 {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Some(l)
}

pub fn uniqueness(z: &[f64], dist: &CohortDistribution) -> Result<f64, StrategyError> {
    dist.mahalanobis(z)
}

/// Cosine similarity; exactly 1 for identical nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean of `1 − cos` over unordered pairs.
pub fn diversity(attempts: &[Vec<f64>]) -> Result<f64, StrategyError> {
    if attempts.len() < 2 {
        return Err(StrategyError::InsufficientAttempts(attempts.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..attempts.len() {
        for j in 0..i {
            total += 1.0 - cosine(&attempts[i], &attempts[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Population z-scores; `None` when the spread is zero.
pub fn standardize_population(values: &[f64]) -> Option<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return None;
    }
    Some(values.iter().map(|v| (v - mean) / std).collect())
}

/// One attempt joined with its sequence embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub student_id: String,
    pub problem_id: String,
    pub attempt_id: String,
    pub completed: bool,
    pub optimal: bool,
    /// Canonical action-sequence string used to break modal ties.
    pub action_key: String,
    /// Identity of the solution (its state sequence) for counting frequency.
    pub solution_key: String,
    pub z: Vec<f64>,
}

/// Index of the most frequent optimal solution of one problem; ties go to
/// the lexicographically smallest action key, then solution key.
pub fn modal_optimal(attempts: &[&AttemptRecord]) -> Option<usize> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, a) in attempts.iter().enumerate() {
        if a.completed && a.optimal {
            counts.entry(&a.solution_key).or_insert((0, i)).0 += 1;
        }
    }
    counts
        .into_values()
        .min_by(|(ca, ia), (cb, ib)| {
            cb.cmp(ca)
                .then_with(|| attempts[*ia].action_key.cmp(&attempts[*ib].action_key))
                .then_with(|| attempts[*ia].solution_key.cmp(&attempts[*ib].solution_key))
        })
        .map(|(_, i)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConformity {
    pub problem_id: String,
    /// Standardized score per completed attempt index (into the input slice).
    pub scores: Vec<(usize, f64)>,
    pub raw: Vec<f64>,
}

/// Per-problem standardized conformity of completed attempts. Problems with
/// no optimal solution or zero spread are reported as errors and skipped.
pub fn conformity_by_problem(attempts: &[AttemptRecord]) -> (Vec<ProblemConformity>, Vec<StrategyError>) {
    let mut by_problem: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in attempts.iter().enumerate() {
        by_problem.entry(&a.problem_id).or_default().push(i);
    }
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (pid, idx) in by_problem {
        let group: Vec<&AttemptRecord> = idx.iter().map(|&i| &attempts[i]).collect();
        let Some(m) = modal_optimal(&group) else {
            skipped.push(StrategyError::NoOptimalObserved(pid.to_string()));
            continue;
        };
        let modal_z = &group[m].z;
        let completed: Vec<usize> = idx.iter().copied().filter(|&i| attempts[i].completed).collect();
        let raw: Vec<f64> = completed.iter().map(|&i| cosine(&attempts[i].z, modal_z)).collect();
        match standardize_population(&raw) {
            Some(zs) => out.push(ProblemConformity {
                problem_id: pid.to_string(),
                scores: completed.into_iter().zip(zs).collect(),
                raw,
            }),
            None => skipped.push(StrategyError::ZeroVariance(pid.to_string())),
        }
    }
    (out, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyScores {
    pub student_id: String,
    pub uniqueness: f64,
    pub diversity: Option<f64>,
    pub conformity: Option<f64>,
    pub n_attempts: usize,
    pub n_problems: usize,
    pub flags: Vec<String>,
}

/// Student-level measures. Uniqueness uses every attempt as the cohort;
/// conformity averages the student's standardized completed attempts.
pub fn strategy_scores(attempts: &[AttemptRecord], shrinkage: f64) -> Result<Vec<StrategyScores>, StrategyError> {
    let zs: Vec<Vec<f64>> = attempts.iter().map(|a| a.z.clone()).collect();
    let dist = CohortDistribution::fit(&zs, shrinkage)?;
    let uniq: Vec<f64> = zs.iter().map(|z| dist.mahalanobis(z)).collect::<Result<_, _>>()?;
    let (conf, _) = conformity_by_problem(attempts);
    let mut conf_of = vec![None; attempts.len()];
    for p in &conf {
        for &(i, s) in &p.scores {
            conf_of[i] = Some(s);
        }
    }
    let mut by_student: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, a) in attempts.iter().enumerate() {
        by_student.entry(&a.student_id).or_default().push(i);
    }
    let mut out = Vec::new();
    for (sid, idx) in by_student {
        let own: Vec<Vec<f64>> = idx.iter().map(|&i| zs[i].clone()).collect();
        let mut flags = Vec::new();
        let diversity = diversity(&own).ok();
        if diversity.is_none() {
            flags.push("diversity_undefined".to_string());
        }
        let cs: Vec<f64> = idx.iter().filter_map(|&i| conf_of[i]).collect();
        let conformity = if cs.is_empty() {
            flags.push("conformity_undefined".to_string());
            None
        } else {
            Some(cs.iter().sum::<f64>() / cs.len() as f64)
        };
        let mut problems: Vec<&str> = idx.iter().map(|&i| attempts[i].problem_id.as_str()).collect();
        problems.sort();
        problems.dedup();
        out.push(StrategyScores {
            student_id: sid.to_string(),
            uniqueness: idx.iter().map(|&i| uniq[i]).sum::<f64>() / idx.len() as f64,
            diversity,
            conformity,
            n_attempts: idx.len(),
            n_problems: problems.len(),
            flags,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.10}"))
}

pub fn write_scores_csv<W: Write>(mut w: W, scores: &[StrategyScores]) -> std::io::Result<()> {
    writeln!(w, "student_id,uniqueness,diversity,conformity,n_attempts,n_problems,flags")?;
    for s in scores {
        writeln!(
            w,
            "{},{:.10},{},{},{},{},{}",
            s.student_id,
            s.uniqueness,
            opt(s.diversity),
            opt(s.conformity),
            s.n_attempts,
            s.n_problems,
            s.flags.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;
    use proptest::prelude::*;

    fn gaussian(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| (0..k).map(|_| rng.normal()).collect()).collect()
    }

    #[test]
    fn mahalanobis_hand_cases() {
        let d = CohortDistribution::fit(&[vec![0.0], vec![2.0]], 0.0).unwrap();
        assert!((d.mahalanobis(&[3.0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(d.mahalanobis(&[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn identity_covariance_is_euclidean() {
        // four points whose population covariance is exactly I
        let pts = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        for lambda in [0.0, 0.1, 1.0] {
            let d = CohortDistribution::fit(&pts, lambda).unwrap();
            let z = [0.3, -2.5];
            let e = (0.3f64 * 0.3 + 2.5 * 2.5).sqrt();
            assert!((d.mahalanobis(&z).unwrap() - e).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_invariance() {
        let k = 4;
        let pts = gaussian(50, k, 3);
        let mut rng = Rng::new(4);
        let a: Vec<f64> = (0..k * k)
            .map(|i| rng.normal() + if i % (k + 1) == 0 { 3.0 } else { 0.0 })
            .collect();
        let b: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let map = |v: &[f64]| -> Vec<f64> {
            (0..k).map(|i| (0..k).map(|j| a[i * k + j] * v[j]).sum::<f64>() + b[i]).collect()
        };
        let d1 = CohortDistribution::fit(&pts, 0.0).unwrap();
        let d2 = CohortDistribution::fit(&pts.iter().map(|p| map(p)).collect::<Vec<_>>(), 0.0).unwrap();
        for z in gaussian(10, k, 5) {
            let u1 = d1.mahalanobis(&z).unwrap();
            let u2 = d2.mahalanobis(&map(&z)).unwrap();
            assert!((u1 - u2).abs() < 1e-6, "{u1} vs {u2}");
        }
    }

    #[test]
    fn shrinkage_rescues_rank_deficiency() {
        let pts = gaussian(3, 8, 1);
        assert_eq!(CohortDistribution::fit(&pts, 0.0).unwrap_err(), StrategyError::SingularCovariance);
        assert!(CohortDistribution::fit(&pts, 0.1).is_ok());
    }

    #[test]
    fn diversity_cases() {
        let v = vec![1.0, 2.0];
        assert_eq!(diversity(&[v.clone(), v.clone(), v.clone()]).unwrap(), 0.0);
        assert!((diversity(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap() - 1.0).abs() < 1e-15);
        let three = [vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0]];
        assert!((diversity(&three).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(diversity(&[v]), Err(StrategyError::InsufficientAttempts(1)));
    }

    proptest! {
        #[test]
        fn diversity_bounds_and_permutation(seed in 0u64..500, n in 2usize..7) {
            let pts = gaussian(n, 3, seed);
            let d = diversity(&pts).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            let mut rev = pts.clone();
            rev.reverse();
            prop_assert!((diversity(&rev).unwrap() - d).abs() < 1e-12);
        }

        #[test]
        fn population_zscores(vals in proptest::collection::vec(-5.0f64..5.0, 2..40)) {
            if let Some(z) = standardize_population(&vals) {
                let n = z.len() as f64;
                let mean = z.iter().sum::<f64>() / n;
                let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-10);
                prop_assert!((sd - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_attempt_zscores() {
        let z = standardize_population(&[0.2, 0.8]).unwrap();
        assert!((z[0] + 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
        assert!(standardize_population(&[0.5, 0.5]).is_none());
    }

    fn rec(student: &str, problem: &str, sol: &str, actions: &str, optimal: bool, z: Vec<f64>) -> AttemptRecord {
        AttemptRecord {
            student_id: student.into(),
            problem_id: problem.into(),
            attempt_id: format!("{student}-{problem}-{sol}"),
            completed: true,
            optimal,
            action_key: actions.into(),
            solution_key: sol.into(),
            z,
        }
    }

    #[test]
    fn modal_tie_break_is_lexicographic() {
        let a = rec("s1", "p", "B", "Commute AddSubNumbers", true, vec![1.0, 0.0]);
        let b = rec("s2", "p", "A", "AddSubNumbers Commute", true, vec![0.0, 1.0]);
        let c = rec("s3", "p", "C", "AddSubNumbers", false, vec![1.0, 1.0]);
        for order in [vec![&a, &b, &c], vec![&c, &b, &a], vec![&b, &c, &a]] {
            let m = modal_optimal(&order).unwrap();
            assert_eq!(order[m].solution_key, "A");
        }
        let a2 = rec("s4", "p", "B", "Commute AddSubNumbers", true, vec![1.0, 0.0]);
        let m = modal_optimal(&[&a, &b, &a2]).unwrap();
        assert_eq!(m, 0);
    }

    #[test]
    fn conformity_raw_is_one_for_modal_solution() {
        let attempts = vec![
            rec("s1", "p", "A", "x", true, vec![1.0, 0.0]),
            rec("s2", "p", "B", "y", false, vec![0.0, 1.0]),
        ];
        let (conf, skipped) = conformity_by_problem(&attempts);
        assert!(skipped.is_empty());
        assert_eq!(conf[0].raw, vec![1.0, 0.0]);
        assert_eq!(conf[0].scores.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!((conf[0].scores[0].1 - 1.0).abs() < 1e-12 && (conf[0].scores[1].1 + 1.0).abs() < 1e-12);
        let none = vec![rec("s1", "q", "A", "x", false, vec![1.0, 0.0])];
        let (_, skipped) = conformity_by_problem(&none);
        assert_eq!(skipped, vec![StrategyError::NoOptimalObserved("q".into())]);
    }

    #[test]
    fn scores_cover_every_student() {
        let mut rng = Rng::new(8);
        let mut attempts = Vec::new();
        for s in 0..5 {
            for p in 0..3 {
                let z: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
                attempts.push(rec(&format!("s{s}"), &format!("p{p}"), &format!("sol{}", (s + p) % 2), "a", s % 2 == 0, z));
            }
        }
        attempts.push(rec("lonely", "p0", "x", "a", false, vec![0.1, 0.2, 0.3, 0.4]));
        let scores = strategy_scores(&attempts, DEFAULT_SHRINKAGE).unwrap();
        assert_eq!(scores.len(), 6);
        let lonely = scores.iter().find(|s| s.student_id == "lonely").unwrap();
        assert!(lonely.diversity.is_none());
        assert!(lonely.flags.contains(&"diversity_undefined".to_string()));
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &scores).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }
}
