//! Silhouette scores and a deterministic PCA projection to two dimensions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StrategyError;
use crate::nn::tensor::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    State,
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouettePair {
    pub level: Level,
    pub n: usize,
    pub by_problem: f64,
    pub by_action: f64,
}

/// Mean silhouette coefficient under Euclidean distance. Needs at least two
/// groups, each with at least two members.
pub fn silhouette(points: &[Vec<f64>], labels: &[String]) -> Result<f64, StrategyError> {
    assert_eq!(points.len(), labels.len());
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(l.as_str()).or_insert(next);
    }
    let groups = ids.len();
    if groups < 2 {
        return Err(StrategyError::DegenerateGrouping(format!("{groups} group(s)")));
    }
    let label_idx: Vec<usize> = labels.iter().map(|l| ids[l.as_str()]).collect();
    let mut sizes = vec![0usize; groups];
    for &g in &label_idx {
        sizes[g] += 1;
    }
    if let Some((name, _)) = ids.iter().find(|(_, &g)| sizes[g] < 2) {
        return Err(StrategyError::DegenerateGrouping(format!("group {name} has one member")));
    }
    let n = points.len();
    let d = points[0].len();
    super::check_dims(points, d)?;
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let sq: Vec<f64> = points.iter().map(|p| p.iter().map(|v| v * v).sum()).collect();

    let block = 256;
    let mut total = 0.0;
    let mut dots = vec![0.0; block * n];
    let mut sums = vec![0.0; groups];
    for start in (0..n).step_by(block) {
        let rows = block.min(n - start);
        gemm(rows, d, n, &flat[start * d..(start + rows) * d], false, &flat, true, &mut dots[..rows * n], 0.0);
        for r in 0..rows {
            let i = start + r;
            sums.iter_mut().for_each(|s| *s = 0.0);
            for j in 0..n {
                if j != i {
                    let d2 = (sq[i] + sq[j] - 2.0 * dots[r * n + j]).max(0.0);
                    sums[label_idx[j]] += d2.sqrt();
                }
            }
            let own = label_idx[i];
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..groups)
                .filter(|&g| g != own)
                .map(|g| sums[g] / sizes[g] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            total += if m > 0.0 { (b - a) / m } else { 0.0 };
        }
    }
    Ok(total / n as f64)
}

/// Silhouette of the same vectors under problem labels and action labels.
pub fn silhouette_comparison(
    vectors: &[Vec<f64>],
    problems: &[String],
    actions: &[String],
    level: Level,
) -> Result<SilhouettePair, StrategyError> {
    Ok(SilhouettePair {
        level,
        n: vectors.len(),
        by_problem: silhouette(vectors, problems)?,
        by_action: silhouette(vectors, actions)?,
    })
}

const POWER_MAX_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-14;

/// Leading eigenpair of a symmetric PSD matrix by power iteration.
fn power_iteration(a: &[f64], k: usize, start: &[f64]) -> (f64, Vec<f64>) {
    let mut v = start.to_vec();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut w = vec![0.0; k];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        gemm(k, k, 1, a, false, &v, false, &mut w, 0.0);
        let nw = norm(&w);
        if nw == 0.0 {
            return (0.0, v);
        }
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        lambda = nw;
        if diff < POWER_TOL {
            break;
        }
    }
    (lambda, v)
}

fn orient(v: &mut [f64]) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-two principal-component scores of the centered vectors. Each loading
/// vector's largest-magnitude entry is made positive.
pub fn project_2d(vectors: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, StrategyError> {
    if vectors.len() < 2 {
        return Err(StrategyError::DegenerateInput(format!("{} vector(s)", vectors.len())));
    }
    let k = vectors[0].len();
    super::check_dims(vectors, k)?;
    let n = vectors.len();
    let mut mean = vec![0.0; k];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<f64> = vectors
        .iter()
        .flat_map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect::<Vec<_>>())
        .collect();
    let mut cov = vec![0.0; k * k];
    gemm(k, n, k, &centered, true, &centered, false, &mut cov, 0.0);
    let trace: f64 = (0..k).map(|i| cov[i * k + i]).sum();
    if !(trace > 0.0) {
        return Err(StrategyError::DegenerateInput("all vectors coincide".into()));
    }
    // deterministic start that is unlikely to be orthogonal to any eigenvector
    let start: Vec<f64> = (0..k).map(|i| 1.0 + 0.618_033_988_749_895 * ((i * 7 + 3) % 11) as f64).collect();
    let (l1, mut v1) = power_iteration(&cov, k, &start);
    orient(&mut v1);
    let mut deflated = cov.clone();
    for i in 0..k {
        for j in 0..k {
            deflated[i * k + j] -= l1 * v1[i] * v1[j];
        }
    }
    let mut start2 = start.clone();
    let proj: f64 = start2.iter().zip(&v1).map(|(a, b)| a * b).sum();
    start2.iter_mut().zip(&v1).for_each(|(s, v)| *s -= proj * v);
    let (l2, mut v2) = if start2.iter().map(|x| x * x).sum::<f64>() < 1e-30 {
        (0.0, vec![0.0; k])
    } else {
        power_iteration(&deflated, k, &start2)
    };
    if l2 <= 1e-12 * l1 {
        v2 = vec![0.0; k];
    } else {
        // re-orthogonalize against drift
        let p: f64 = v2.iter().zip(&v1).map(|(a, b)| a * b).sum();
        v2.iter_mut().zip(&v1).for_each(|(a, b)| *a -= p * b);
        let nv = v2.iter().map(|x| x * x).sum::<f64>().sqrt();
        v2.iter_mut().for_each(|x| *x /= nv);
        orient(&mut v2);
    }
    Ok((0..n)
        .map(|r| {
            let row = &centered[r * k..(r + 1) * k];
            (
                row.iter().zip(&v1).map(|(a, b)| a * b).sum(),
                row.iter().zip(&v2).map(|(a, b)| a * b).sum(),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;

    fn labels(v: &[usize]) -> Vec<String> {
        v.iter().map(|i| format!("g{i}")).collect()
    }

    /// Direct O(n²) silhouette written from the definition.
    fn brute_silhouette(p: &[Vec<f64>], l: &[usize]) -> f64 {
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let groups = l.iter().max().unwrap() + 1;
        let mut total = 0.0;
        for i in 0..p.len() {
            let mut mean_to = vec![(0.0, 0usize); groups];
            for j in 0..p.len() {
                if i != j {
                    mean_to[l[j]].0 += dist(&p[i], &p[j]);
                    mean_to[l[j]].1 += 1;
                }
            }
            let a = mean_to[l[i]].0 / mean_to[l[i]].1 as f64;
            let b = (0..groups)
                .filter(|&g| g != l[i])
                .map(|g| mean_to[g].0 / mean_to[g].1 as f64)
                .fold(f64::INFINITY, f64::min);
            total += (b - a) / a.max(b);
        }
        total / p.len() as f64
    }

    #[test]
    fn silhouette_matches_definition() {
        let mut rng = Rng::new(2);
        let pts: Vec<Vec<f64>> = (0..300).map(|i| vec![rng.normal() + (i % 3) as f64, rng.normal()]).collect();
        let l: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let fast = silhouette(&pts, &labels(&l)).unwrap();
        assert!((fast - brute_silhouette(&pts, &l)).abs() < 1e-10);
    }

    #[test]
    fn separated_clouds_and_random_labels() {
        let mut rng = Rng::new(5);
        let mut pts = Vec::new();
        let mut l = Vec::new();
        for i in 0..100 {
            let c = i % 2;
            pts.push(vec![rng.normal() * 0.3 + 10.0 * c as f64, rng.normal() * 0.3]);
            l.push(c);
        }
        assert!(silhouette(&pts, &labels(&l)).unwrap() > 0.8);
        let blob: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let random: Vec<usize> = (0..200).map(|_| rng.below(2)).collect();
        assert!(silhouette(&blob, &labels(&random)).unwrap().abs() < 0.1);
    }

    #[test]
    fn degenerate_groupings() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(matches!(silhouette(&pts, &labels(&[0, 0, 0])), Err(StrategyError::DegenerateGrouping(_))));
        assert!(matches!(silhouette(&pts, &labels(&[0, 0, 1])), Err(StrategyError::DegenerateGrouping(_))));
    }

    /// Cyclic Jacobi eigensolver for small symmetric matrices.
    fn jacobi_eigen(mut a: Vec<f64>, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut v = vec![0.0; k * k];
        for i in 0..k {
            v[i * k + i] = 1.0;
        }
        for _ in 0..100 {
            let off: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * k + j].powi(2)).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..k {
                for q in p + 1..k {
                    if a[p * k + q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q * k + q] - a[p * k + p]) / (2.0 * a[p * k + q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for r in 0..k {
                        let (arp, arq) = (a[r * k + p], a[r * k + q]);
                        a[r * k + p] = c * arp - s * arq;
                        a[r * k + q] = s * arp + c * arq;
                    }
                    for r in 0..k {
                        let (apr, aqr) = (a[p * k + r], a[q * k + r]);
                        a[p * k + r] = c * apr - s * aqr;
                        a[q * k + r] = s * apr + c * aqr;
                    }
                    for r in 0..k {
                        let (vrp, vrq) = (v[r * k + p], v[r * k + q]);
                        v[r * k + p] = c * vrp - s * vrq;
                        v[r * k + q] = s * vrp + c * vrq;
                    }
                }
            }
        }
        let vals: Vec<f64> = (0..k).map(|i| a[i * k + i]).collect();
        let vecs = (0..k).map(|j| (0..k).map(|i| v[i * k + j]).collect()).collect();
        (vals, vecs)
    }

    #[test]
    fn three_points_match_dense_oracle() {
        let pts = vec![vec![1.0, 2.0, 0.5], vec![-0.5, 1.0, 2.0], vec![3.0, -1.0, 1.0]];
        let k = 3;
        let mean: Vec<f64> = (0..k).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / 3.0).collect();
        let c: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
        let mut cov = vec![0.0; k * k];
        for r in &c {
            for i in 0..k {
                for j in 0..k {
                    cov[i * k + j] += r[i] * r[j];
                }
            }
        }
        let (vals, vecs) = jacobi_eigen(cov, k);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
        let mut axes: Vec<Vec<f64>> = order[..2].iter().map(|&i| vecs[i].clone()).collect();
        for ax in axes.iter_mut() {
            orient(ax);
        }
        let got = project_2d(&pts).unwrap();
        for (r, (x, y)) in c.iter().zip(&got) {
            let ex: f64 = r.iter().zip(&axes[0]).map(|(a, b)| a * b).sum();
            let ey: f64 = r.iter().zip(&axes[1]).map(|(a, b)| a * b).sum();
            assert!((x - ex).abs() < 1e-8 && (y - ey).abs() < 1e-8, "{x},{y} vs {ex},{ey}");
        }
    }

    #[test]
    fn planar_points_keep_distances() {
        let mut rng = Rng::new(9);
        let u = [0.6, 0.0, 0.8, 0.0, 0.0];
        let w = [0.0, 1.0, 0.0, 0.0, 0.0];
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let (a, b) = (rng.normal() * 3.0, rng.normal());
                (0..5).map(|i| a * u[i] + b * w[i] + 1.5).collect()
            })
            .collect();
        let p = project_2d(&pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..i {
                let d_hi: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let d_lo = ((p[i].0 - p[j].0).powi(2) + (p[i].1 - p[j].1).powi(2)).sqrt();
                assert!((d_hi - d_lo).abs() < 1e-9);
            }
        }
        let mut doubled = pts.clone();
        doubled.extend(pts.clone());
        let pd = project_2d(&doubled).unwrap();
        for i in 0..pts.len() {
            assert!((pd[i].0 - p[i].0).abs() < 1e-9 && (pd[i].1 - p[i].1).abs() < 1e-9);
        }
        assert!(matches!(project_2d(&[vec![1.0, 2.0], vec![1.0, 2.0]]), Err(StrategyError::DegenerateInput(_))));
    }
}
