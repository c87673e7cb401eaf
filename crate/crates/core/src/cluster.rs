//! K-means engine and clustering agreement measures shared by the archetype
//! and subtype models.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the largest centroid shift (Euclidean).
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 50,
            max_iter: 300,
            tol: 1e-8,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step of the selected run.
    pub inertia_trace: Vec<f64>,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding and multiple restarts; the run
/// with the lowest inertia wins (ties to the lowest restart index).
/// Restart `r` draws its seed from `(cfg.seed, r)`, so the selected model
/// does not depend on scheduling.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansFit> {
    if cfg.k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let distinct = count_distinct(points, cfg.k);
    if distinct < cfg.k {
        return Err(Error::Degenerate(format!(
            "{distinct} distinct points for k = {}",
            cfg.k
        )));
    }
    let runs: Vec<KMeansFit> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            single_run(
                points,
                cfg,
                derive_seed(cfg.seed, &format!("kmeans-restart-{r}")),
            )
        })
        .collect();
    let mut best: Option<KMeansFit> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn count_distinct(points: &[Vec<f64>], stop_at: usize) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= stop_at {
                break;
            }
        }
    }
    seen.len()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        let c = points[idx].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn single_run(points: &[Vec<f64>], cfg: &KMeansConfig, seed: u64) -> KMeansFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();
    let k = cfg.k;
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            labels[i] = j;
            inertia += d;
        }
        trace.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        // Empty clusters are reseeded from the point farthest from its centroid.
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("non-empty points");
                let old = labels[far];
                counts[old] -= 1;
                for (s, x) in sums[old].iter_mut().zip(&points[far]) {
                    *s -= x;
                }
                labels[far] = j;
                counts[j] = 1;
                sums[j] = points[far].clone();
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let new: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[j]).sqrt());
            centroids[j] = new;
        }
        if shift < cfg.tol || iterations >= cfg.max_iter {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(p, &centroids);
        labels[i] = j;
        inertia += d;
    }
    KMeansFit {
        centroids,
        labels,
        inertia,
        iterations,
        inertia_trace: trace,
    }
}

// ── Agreement measures ──────────────────────────────────────────────────

type Contingency = (
    HashMap<(usize, usize), f64>,
    HashMap<usize, f64>,
    HashMap<usize, f64>,
);

fn contingency(a: &[usize], b: &[usize]) -> Contingency {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let mut joint = HashMap::new();
    let mut ra = HashMap::new();
    let mut rb = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *ra.entry(x).or_insert(0.0) += 1.0;
        *rb.entry(y).or_insert(0.0) += 1.0;
    }
    (joint, ra, rb)
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (joint, ra, rb) = contingency(a, b);
    let index: f64 = joint.values().map(|&v| comb2(v)).sum();
    let sum_a: f64 = ra.values().map(|&v| comb2(v)).sum();
    let sum_b: f64 = rb.values().map(|&v| comb2(v)).sum();
    let expected = sum_a * sum_b / comb2(n);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn normalized_mutual_info(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (joint, ra, rb) = contingency(a, b);
    let entropy = |m: &HashMap<usize, f64>| -> f64 {
        m.values()
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = entropy(&ra);
    let hb = entropy(&rb);
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c / n;
            pxy * (pxy * n * n / (ra[&x] * rb[&y])).ln()
        })
        .sum();
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let denom = 0.5 * (ha + hb);
    if denom == 0.0 {
        0.0
    } else {
        mi / denom
    }
}

/// Mean silhouette `(b - a) / max(a, b)` over all points, Euclidean distance.
/// Points in singleton clusters contribute 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Degenerate(
            "silhouette undefined for a single cluster".into(),
        ));
    }
    let slot: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut sizes = vec![0usize; ids.len()];
    for l in labels {
        sizes[slot[l]] += 1;
    }
    let total: f64 = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = slot[&labels[i]];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; ids.len()];
            for (j, q) in points.iter().enumerate() {
                if i != j {
                    sums[slot[&labels[j]]] += sq_dist(&points[i], q).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..ids.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / points.len() as f64)
}

/// Deterministic evenly spaced subsample of at most `max` indices.
pub fn subsample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 0.0], [5.0, 5.0], [0.0, 5.0], [5.0, 0.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..50 {
                pts.push(vec![
                    center[0] + rng.random_range(-0.5..0.5),
                    center[1] + rng.random_range(-0.5..0.5),
                ]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn recovers_blobs_and_inertia_never_increases() {
        let (pts, truth) = blobs(3);
        let fit = kmeans(&pts, &KMeansConfig::new(4, 11)).unwrap();
        assert!((adjusted_rand_index(&fit.labels, &truth) - 1.0).abs() < 1e-12);
        for w in fit.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.inertia_trace);
        }
    }

    #[test]
    fn k1_centroid_is_mean() {
        let (pts, _) = blobs(1);
        let fit = kmeans(&pts, &KMeansConfig::new(1, 0)).unwrap();
        let n = pts.len() as f64;
        let mx: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my: f64 = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        assert!((fit.centroids[0][0] - mx).abs() < 1e-12);
        assert!((fit.centroids[0][1] - my).abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(
            kmeans(&pts, &KMeansConfig::new(3, 0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn same_seed_same_model() {
        let (pts, _) = blobs(9);
        let a = kmeans(&pts, &KMeansConfig::new(4, 5)).unwrap();
        let b = kmeans(&pts, &KMeansConfig::new(4, 5)).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn ari_nmi_identity_and_renaming() {
        let a = vec![0, 0, 1, 1, 2, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a), 1.0);
        assert!((normalized_mutual_info(&a, &a) - 1.0).abs() < 1e-12);
        let renamed: Vec<usize> = a.iter().map(|&x| (x + 1) % 3 + 10).collect();
        assert!((adjusted_rand_index(&a, &renamed) - 1.0).abs() < 1e-12);
        assert!((normalized_mutual_info(&a, &renamed) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_near_zero_under_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a: Vec<usize> = (0..1000).map(|i| i % 7).collect();
        let mut b = a.clone();
        b.shuffle(&mut rng);
        assert!(adjusted_rand_index(&a, &b).abs() < 0.05);
    }

    #[test]
    fn ari_matches_pair_counting_oracle() {
        // Rand-index pair counting, adjusted by the permutation expectation.
        let a = vec![0, 0, 0, 1, 1, 2, 2, 2, 1, 0];
        let b = vec![1, 1, 0, 0, 2, 2, 2, 1, 0, 1];
        let n = a.len();
        let (mut same_both, mut same_a, mut same_b) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                same_a += f64::from(u8::from(sa));
                same_b += f64::from(u8::from(sb));
                same_both += f64::from(u8::from(sa && sb));
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let expected = same_a * same_b / pairs;
        let oracle = (same_both - expected) / (0.5 * (same_a + same_b) - expected);
        assert!((adjusted_rand_index(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn silhouette_single_cluster_is_error() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(silhouette(&pts, &[0, 0]).is_err());
    }

    #[test]
    fn silhouette_two_points_per_cluster_by_hand() {
        // clusters {0,1} and {10,11}: a = 1, b = mean distance to other cluster
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        let per = [
            (10.5 - 1.0) / 10.5,
            (9.5 - 1.0) / 9.5,
            (9.5 - 1.0) / 9.5,
            (10.5 - 1.0) / 10.5,
        ];
        let oracle: f64 = per.iter().sum::<f64>() / 4.0;
        assert!((s - oracle).abs() < 1e-12);
    }
}
