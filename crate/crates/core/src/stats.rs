//! Ordinary least squares on standardized predictors with classical standard
//! errors and Student-t p-values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("need more observations than terms: n={n}, terms={p}")]
    InsufficientObservations { n: usize, p: usize },
    #[error("column {name} has {found} rows, expected {expected}")]
    LengthMismatch { name: String, expected: usize, found: usize },
}

/// `(x − mean) / s` with the sample standard deviation.
pub fn standardize(column: &[f64]) -> Result<Vec<f64>, StatsError> {
    if column.len() < 2 {
        return Err(StatsError::ZeroVariance("column with fewer than 2 values".into()));
    }
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(StatsError::ZeroVariance("column".into()));
    }
    Ok(column.iter().map(|v| (v - mean) / sd).collect())
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| ≥ |t|)`.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub b: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub outcome: String,
    pub terms: Vec<Term>,
    pub r_squared: f64,
    pub n: usize,
    pub dropped: usize,
}

impl RegressionResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }
}

pub const INTERCEPT: &str = "(Intercept)";

/// OLS of `y` on an intercept plus `predictors` via Householder QR.
pub fn ols(outcome: &str, y: &[f64], predictors: &[(String, Vec<f64>)]) -> Result<RegressionResult, StatsError> {
    let n = y.len();
    let p = predictors.len() + 1;
    for (name, col) in predictors {
        if col.len() != n {
            return Err(StatsError::LengthMismatch {
                name: name.clone(),
                expected: n,
                found: col.len(),
            });
        }
    }
    if n <= p {
        return Err(StatsError::InsufficientObservations { n, p });
    }
    // column-major design matrix
    let mut a = vec![1.0; n * p];
    for (j, (_, col)) in predictors.iter().enumerate() {
        a[(j + 1) * n..(j + 2) * n].copy_from_slice(col);
    }
    let mut qty = y.to_vec();
    let mut rdiag = vec![0.0; p];
    let col_norms: Vec<f64> = (0..p)
        .map(|j| a[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for j in 0..p {
        let norm = a[j * n + j..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-10 * col_norms[j].max(1e-300) {
            return Err(StatsError::RankDeficient);
        }
        let alpha = if a[j * n + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j * n + j..(j + 1) * n].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for c in j..p {
            let col = &mut a[c * n + j..(c + 1) * n];
            let s: f64 = v.iter().zip(col.iter()).map(|(x, y)| x * y).sum::<f64>() * 2.0 / vnorm2;
            for (cv, vv) in col.iter_mut().zip(&v) {
                *cv -= s * vv;
            }
        }
        let s: f64 = v.iter().zip(&qty[j..]).map(|(x, y)| x * y).sum::<f64>() * 2.0 / vnorm2;
        for (q, vv) in qty[j..].iter_mut().zip(&v) {
            *q -= s * vv;
        }
        rdiag[j] = a[j * n + j];
    }
    let r = |i: usize, j: usize| a[j * n + i];
    let mut b = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for j in i + 1..p {
            s -= r(i, j) * b[j];
        }
        b[i] = s / rdiag[i];
    }
    // R⁻¹ (upper triangular), row norms give diag((XᵀX)⁻¹)
    let mut rinv = vec![0.0; p * p];
    for col in 0..p {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for j in i + 1..=col {
                s -= r(i, j) * rinv[j * p + col];
            }
            rinv[i * p + col] = s / rdiag[i];
        }
    }
    let rss: f64 = qty[p..].iter().map(|v| v * v).sum();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let names = std::iter::once(INTERCEPT.to_string()).chain(predictors.iter().map(|(n, _)| n.clone()));
    let terms = names
        .enumerate()
        .map(|(i, name)| {
            let diag: f64 = (0..p).map(|j| rinv[i * p + j].powi(2)).sum();
            let se = (sigma2 * diag).sqrt();
            let t = if se > 0.0 {
                b[i] / se
            } else if b[i] == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(b[i])
            };
            let p = if se > 0.0 || b[i] != 0.0 { two_sided_p(t, df) } else { 1.0 };
            Term {
                name,
                b: b[i],
                se,
                t,
                p,
            }
        })
        .collect();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };
    Ok(RegressionResult {
        outcome: outcome.to_string(),
        terms,
        r_squared,
        n,
        dropped: 0,
    })
}

/// Drops rows with any missing value, standardizes each predictor, then fits.
pub fn regress_listwise(
    outcome: &str,
    y: &[Option<f64>],
    predictors: &[(String, Vec<Option<f64>>)],
) -> Result<RegressionResult, StatsError> {
    let keep: Vec<usize> = (0..y.len())
        .filter(|&i| y[i].is_some() && predictors.iter().all(|(_, c)| c[i].is_some()))
        .collect();
    let yy: Vec<f64> = keep.iter().map(|&i| y[i].expect("kept")).collect();
    let mut cols = Vec::new();
    for (name, c) in predictors {
        let raw: Vec<f64> = keep.iter().map(|&i| c[i].expect("kept")).collect();
        let z = standardize(&raw).map_err(|_| StatsError::ZeroVariance(name.clone()))?;
        cols.push((name.clone(), z));
    }
    let mut r = ols(outcome, &yy, &cols)?;
    r.dropped = y.len() - keep.len();
    Ok(r)
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".to_string()
    } else {
        let s = format!("{p:.3}");
        s.trim_start_matches('0').to_string()
    }
}

/// Plain-text table: one block per outcome with b, SE, p and stars.
pub fn format_table(results: &[RegressionResult]) -> String {
    let mut out = String::new();
    for r in results {
        let _ = writeln!(out, "Outcome: {} (N = {}, dropped = {})", r.outcome, r.n, r.dropped);
        let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>8}", "Predictor", "b", "SE", "p");
        for t in &r.terms {
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>10} {:>8}",
                t.name,
                format!("{:.2}{}", t.b, stars(t.p)),
                format!("{:.3}", t.se),
                format_p(t.p)
            );
        }
        let _ = writeln!(out, "R^2 = {:.3}", r.r_squared);
        out.push('\n');
    }
    out.push_str("Note: * p<.05, ** p<.01, *** p<.001\n");
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::Rng;

    /// Exact two-sided tail for integer df from the finite trigonometric series.
    pub(crate) fn t_two_sided_oracle(t: f64, df: u32) -> f64 {
        let theta = (t.abs() / (df as f64).sqrt()).atan();
        let (s, c) = theta.sin_cos();
        let c2 = c * c;
        let a = if df % 2 == 1 {
            let mut sum = 0.0;
            if df > 1 {
                let mut term = 1.0;
                sum = 1.0;
                let mut k: i64 = 2;
                while k <= df as i64 - 3 {
                    term *= k as f64 / (k + 1) as f64 * c2;
                    sum += term;
                    k += 2;
                }
            }
            2.0 / std::f64::consts::PI * (theta + s * c * sum)
        } else {
            let mut term = 1.0;
            let mut sum = 1.0;
            let mut k: i64 = 1;
            while k <= df as i64 - 3 {
                term *= k as f64 / (k + 1) as f64 * c2;
                sum += term;
                k += 2;
            }
            s * sum
        };
        1.0 - a
    }

    #[test]
    fn standardize_cases() {
        let z = standardize(&[0.0, 2.0]).unwrap();
        assert!((z[0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(standardize(&[3.0; 4]), Err(StatsError::ZeroVariance(_))));
        let z = standardize(&[1.0, 5.0, 2.5, -3.0, 7.25]).unwrap();
        let mean = z.iter().sum::<f64>() / 5.0;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_matches_series_oracle() {
        let mut worst: f64 = 0.0;
        for df in (1..=40).chain([57, 100, 333, 999, 1000]) {
            for t in [0.0, 0.1, 0.5, 1.0, 1.96, 2.5, 4.0, 10.0] {
                let got = two_sided_p(t, df as f64);
                worst = worst.max((got - t_two_sided_oracle(t, df)).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        assert!((t_cdf(0.0, 5.0) - 0.5).abs() < 1e-15);
        assert!((t_cdf(-1.3, 7.0) + t_cdf(1.3, 7.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_fit_and_constant_outcome() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = ols("y", &y, &[("x".into(), x.clone())]).unwrap();
        let t = r.term("x").unwrap();
        assert!((t.b - 2.0).abs() < 1e-12);
        assert!(t.se < 1e-12);
        assert!((r.r_squared - 1.0).abs() < 1e-12);
        let r = ols("c", &[3.0; 10], &[("x".into(), x)]).unwrap();
        assert!(r.term("x").unwrap().b.abs() < 1e-12);
        assert_eq!(r.r_squared, 0.0);
    }

    #[test]
    fn rank_deficiency_and_small_n() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let dup = x.iter().map(|v| 2.0 * v).collect();
        let y = vec![1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        assert_eq!(
            ols("y", &y, &[("x".into(), x.clone()), ("2x".into(), dup)]).unwrap_err(),
            StatsError::RankDeficient
        );
        assert!(matches!(
            ols("y", &y[..2], &[("x".into(), x[..2].to_vec())]),
            Err(StatsError::InsufficientObservations { .. })
        ));
    }

    #[test]
    fn residuals_orthogonal_and_r2_monotone() {
        let mut rng = Rng::new(4);
        let n = 200;
        let x1: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.5 * x1[i] + rng.normal()).collect();
        let r1 = ols("y", &y, &[("x1".into(), x1.clone())]).unwrap();
        let r2 = ols("y", &y, &[("x1".into(), x1.clone()), ("x2".into(), x2.clone())]).unwrap();
        assert!(r2.r_squared >= r1.r_squared);
        let fitted: Vec<f64> = (0..n)
            .map(|i| r2.terms[0].b + r2.terms[1].b * x1[i] + r2.terms[2].b * x2[i])
            .collect();
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let scale = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for col in [vec![1.0; n], x1, x2] {
            let dot: f64 = resid.iter().zip(&col).map(|(a, b)| a * b).sum();
            let cn = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(dot.abs() / (scale * cn) < 1e-8);
        }
    }

    proptest::proptest! {
        #[test]
        fn adding_a_predictor_never_lowers_r2(seed in 0u64..500, n in 8usize..40) {
            let mut rng = Rng::new(seed);
            let x1: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let x2: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let y: Vec<f64> = (0..n).map(|i| x1[i] * 0.3 + rng.normal()).collect();
            let r1 = ols("y", &y, &[("x1".into(), x1.clone())]).unwrap();
            let r2 = ols("y", &y, &[("x1".into(), x1), ("x2".into(), x2)]).unwrap();
            proptest::prop_assert!(r2.r_squared >= r1.r_squared - 1e-12);
        }
    }

    #[test]
    fn listwise_deletion_counts() {
        let y = vec![Some(1.0), Some(2.0), None, Some(4.0), Some(3.0), Some(6.0)];
        let x = vec![Some(0.5), Some(1.0), Some(2.0), None, Some(1.2), Some(3.1)];
        let r = regress_listwise("y", &y, &[("x".into(), x)]).unwrap();
        assert_eq!(r.n, 4);
        assert_eq!(r.dropped, 2);
    }

    #[test]
    fn table_formatting() {
        let r = RegressionResult {
            outcome: "post".into(),
            terms: vec![Term {
                name: "conformity".into(),
                b: 10.32,
                se: 1.632,
                t: 6.3,
                p: 0.0000001,
            }],
            r_squared: 0.1,
            n: 778,
            dropped: 0,
        };
        let text = format_table(&[r]);
        assert!(text.contains("10.32***"));
        assert!(text.contains("1.632"));
        assert!(text.contains("<.001"));
        assert_eq!(stars(0.03), "*");
        assert_eq!(stars(0.005), "**");
        assert_eq!(stars(0.2), "");
    }
}
