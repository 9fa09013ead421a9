//! Lloyd's algorithm with k-means++ seeding.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, SampleError};

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<EmbeddingVector>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, then the final value.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    /// Clusters that ended with no members.
    pub empty_clusters: Vec<usize>,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments.iter().enumerate().filter(move |(_, &c)| c == cluster).map(|(i, _)| i)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        // Strict comparison: ties go to the lowest cluster index.
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // Every remaining point coincides with a centroid.
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen[next] = true;
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[next]));
        }
        centroids.push(points[next].to_vec());
    }
    centroids
}

/// Clusters `vectors` into `k` groups. Deterministic in `(vectors, k, seed)`.
pub fn kmeans(vectors: &[EmbeddingVector], k: usize, seed: u64) -> Result<ClusteringResult, SampleError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(SampleError::InvalidK { k, n });
    }
    super::embed::check_dims(vectors)?;
    let points: Vec<&[f64]> = vectors.iter().map(|v| v.values()).collect();
    let dim = points[0].len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        inertia_history.push(inertia);
        if !changed {
            break;
        }
        // Update step; empty clusters keep their previous centroid.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }

    let inertia: f64 = points.iter().zip(&assignments).map(|(p, &c)| sq_dist(p, &centroids[c])).sum();
    inertia_history.push(inertia);
    let empty_clusters = (0..k).filter(|c| !assignments.contains(c)).collect();
    Ok(ClusteringResult {
        assignments,
        centroids: centroids.into_iter().map(EmbeddingVector::new).collect::<Result<_, _>>()?,
        inertia,
        inertia_history,
        iterations,
        empty_clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(points: &[&[f64]]) -> Vec<EmbeddingVector> {
        points.iter().map(|p| EmbeddingVector::new(p.to_vec()).unwrap()).collect()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let v = vecs(&[&[0.0, 0.0], &[2.0, 0.0], &[4.0, 3.0], &[2.0, 1.0]]);
        let r = kmeans(&v, 1, 7).unwrap();
        assert_eq!(r.centroids[0].values(), &[2.0, 1.0]);
        // per-point squared deviations: 5 + 1 + 8 + 0
        assert!((r.inertia - 14.0).abs() < 1e-12);
        assert!(r.empty_clusters.is_empty());
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let v = vecs(&[&[0.0], &[1.0], &[5.0], &[9.0], &[9.5]]);
        let r = kmeans(&v, 5, 3).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn invalid_k() {
        let v = vecs(&[&[0.0], &[1.0]]);
        assert!(matches!(kmeans(&v, 3, 0), Err(SampleError::InvalidK { k: 3, n: 2 })));
        assert!(matches!(kmeans(&v, 0, 0), Err(SampleError::InvalidK { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let v = vecs(&[&[0.0], &[1.0, 2.0]]);
        assert!(matches!(kmeans(&v, 1, 0), Err(SampleError::DimensionMismatch { .. })));
    }

    #[test]
    fn duplicates_leave_clusters_empty() {
        let v = vecs(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let r = kmeans(&v, 3, 0).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 0]);
        assert_eq!(r.empty_clusters, vec![1, 2]);
        assert_eq!(r.inertia, 0.0);
    }
}
