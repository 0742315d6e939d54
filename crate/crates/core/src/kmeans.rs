//! Lloyd's k-means with k-means++ seeding, used to compress the contextual
//! occurrences of a single token into at most `k` decoder rows.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::squared_distance;

/// Relative slack allowed when checking that Lloyd iterations do not increase the SSE.
pub const SSE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Centroid index of every input point.
    pub assignments: Vec<usize>,
    /// Within-cluster SSE after every assignment step. Empty when k-means was skipped.
    pub sse_history: Vec<f64>,
}

impl Clustering {
    pub fn sse(&self, points: &[Vec<f64>]) -> f64 {
        sse(points, &self.centroids, &self.assignments)
    }
}

/// Clusters `points` into at most `k` centroids.
///
/// When the points hold at most `k` distinct vectors they are returned verbatim
/// (first-seen order) without running k-means.
pub fn cluster(points: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::invalid("cannot cluster an empty set of vectors"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let (unique, unique_of) = dedup(points);
    if unique.len() <= k {
        return Ok(Clustering {
            centroids: unique.into_iter().map(|i| points[i].clone()).collect(),
            assignments: unique_of,
            sse_history: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let (mut assignments, first) = assign(points, &centroids);
    let mut sse_history = vec![first];
    for _ in 0..iters {
        update(points, &assignments, &mut centroids);
        let (next, s) = assign(points, &centroids);
        let prev = *sse_history.last().expect("history is non-empty");
        if s > prev + SSE_SLACK * prev.max(1.0) {
            return Err(Error::Numeric(format!(
                "k-means SSE increased from {prev} to {s}"
            )));
        }
        sse_history.push(s);
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }
    drop_empty(&mut centroids, &mut assignments);
    Ok(Clustering {
        centroids,
        assignments,
        sse_history,
    })
}

fn dedup(points: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique = Vec::new();
    let mut unique_of = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let idx = *seen.entry(key).or_insert_with(|| {
            unique.push(i);
            unique.len() - 1
        });
        unique_of.push(idx);
    }
    (unique, unique_of)
}

fn seed_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            // Fewer distinct points than k cannot reach here; dedup handles it.
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centroids
}

/// Nearest-centroid assignment; ties go to the lowest centroid index.
fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assignments = points
        .iter()
        .map(|p| {
            let (best, dist) = nearest(p, centroids);
            total += dist;
            best
        })
        .collect();
    (assignments, total)
}

pub(crate) fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(p, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Moves every centroid to the mean of its members; an empty cluster takes the point
/// farthest from its current centroid.
fn update(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        crate::linalg::axpy(1.0, p, &mut sums[a]);
        counts[a] += 1;
    }
    let mut taken = vec![false; points.len()];
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            centroids[c] = sums[c].iter().map(|s| s * inv).collect();
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            let far = (0..points.len())
                .filter(|&i| !taken[i])
                .max_by(|&i, &j| {
                    let di = squared_distance(&points[i], &centroids[assignments[i]]);
                    let dj = squared_distance(&points[j], &centroids[assignments[j]]);
                    di.total_cmp(&dj).then(j.cmp(&i))
                })
                .expect("more points than clusters");
            taken[far] = true;
            centroids[c] = points[far].clone();
        }
    }
}

fn drop_empty(centroids: &mut Vec<Vec<f64>>, assignments: &mut [usize]) {
    let mut used = vec![false; centroids.len()];
    for &a in assignments.iter() {
        used[a] = true;
    }
    if used.iter().all(|&u| u) {
        return;
    }
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    for (c, centroid) in centroids.drain(..).enumerate() {
        if used[c] {
            remap[c] = kept.len();
            kept.push(centroid);
        }
    }
    *centroids = kept;
    for a in assignments.iter_mut() {
        *a = remap[*a];
    }
}

pub fn sse(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Minimum-SSE partition by enumerating every labelling of the points.
    fn exhaustive(points: &[Vec<f64>], k: usize) -> (f64, Vec<Vec<f64>>) {
        let n = points.len();
        let dim = points[0].len();
        let mut best = (f64::INFINITY, Vec::new());
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut labels = Vec::with_capacity(n);
            let mut c = code;
            for _ in 0..n {
                labels.push(c % k);
                c /= k;
            }
            if (0..k).any(|l| !labels.contains(&l)) {
                continue;
            }
            let mut cents = vec![vec![0.0; dim]; k];
            let mut counts = vec![0.0; k];
            for (p, &l) in points.iter().zip(&labels) {
                for d in 0..dim {
                    cents[l][d] += p[d];
                }
                counts[l] += 1.0;
            }
            for l in 0..k {
                cents[l].iter_mut().for_each(|v| *v /= counts[l]);
            }
            let s = sse(points, &cents, &labels);
            if s < best.0 {
                best = (s, cents);
            }
        }
        best
    }

    fn sorted(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn identical_vectors_collapse() {
        let pts = vec![vec![1.0, 2.0]; 3];
        let c = cluster(&pts, 5, 50, 0).unwrap();
        assert_eq!(c.centroids, vec![vec![1.0, 2.0]]);
        assert_eq!(c.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn two_blobs_match_exhaustive_oracle() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![10.0, 10.0],
            vec![0.0, 0.0],
            vec![10.0, 10.0],
            vec![0.0, 0.0],
            vec![10.0, 10.0],
        ];
        let (best_sse, best) = exhaustive(&pts, 2);
        assert_eq!(best_sse, 0.0);
        // Only two distinct vectors, so dedup returns them verbatim.
        let c = cluster(&pts, 2, 50, 3).unwrap();
        assert_eq!(sorted(c.centroids.clone()), sorted(best));

        // Perturbed blobs force Lloyd to actually run.
        let pts: Vec<Vec<f64>> = vec![
            vec![0.0, 0.1],
            vec![0.1, 0.0],
            vec![0.0, 0.0],
            vec![10.0, 10.1],
            vec![10.1, 10.0],
            vec![10.0, 10.0],
        ];
        let (best_sse, best) = exhaustive(&pts, 2);
        let c = cluster(&pts, 2, 50, 3).unwrap();
        assert!((c.sse(&pts) - best_sse).abs() < 1e-12);
        for (a, b) in sorted(c.centroids).iter().zip(sorted(best)) {
            assert!(crate::linalg::squared_distance(a, &b) < 1e-20);
        }
    }

    #[test]
    fn k_one_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let c = cluster(&pts, 1, 50, 0).unwrap();
        assert_eq!(c.centroids, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(cluster(&[], 2, 10, 0).is_err());
    }

    #[test]
    fn lloyd_is_monotone_and_ends_at_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..30 {
            let n = rng.random_range(8..60);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let k = rng.random_range(2..6);
            let c = cluster(&pts, k, 50, trial).unwrap();
            for w in c.sse_history.windows(2) {
                assert!(w[1] <= w[0] + SSE_SLACK * w[0].max(1.0));
            }
            for (p, &a) in pts.iter().zip(&c.assignments) {
                let (_, d) = nearest(p, &c.centroids);
                assert!(squared_distance(p, &c.centroids[a]) <= d + 1e-6);
            }
        }
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64).sin(), (i as f64).cos()])
            .collect();
        assert_eq!(
            cluster(&pts, 3, 50, 5).unwrap(),
            cluster(&pts, 3, 50, 5).unwrap()
        );
    }
}
