mod support;

use semslice::sampler::{kmeans, EmbeddingVector, MAX_ITERATIONS};
use support::fixtures::{random_instance, two_blobs};

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid by brute force, lowest index on ties.
fn nearest(p: &EmbeddingVector, centroids: &[EmbeddingVector]) -> usize {
    let mut best = 0;
    for (c, v) in centroids.iter().enumerate() {
        if sq(p.values(), v.values()) < sq(p.values(), centroids[best].values()) {
            best = c;
        }
    }
    best
}

#[test]
fn inertia_never_increases() {
    for seed in 0..100 {
        let (points, k) = random_instance(seed);
        let r = kmeans(&points, k, seed).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0], "instance {seed}: inertia rose {} -> {}", w[0], w[1]);
        }
        let recomputed: f64 =
            points.iter().zip(&r.assignments).map(|(p, &c)| sq(p.values(), r.centroids[c].values())).sum();
        assert!((recomputed - r.inertia).abs() <= 1e-9 * recomputed.max(1.0), "instance {seed}");
        assert!(r.assignments.iter().all(|&c| c < k));
        if r.iterations < MAX_ITERATIONS {
            // at a fixpoint, every point sits with its nearest centroid
            for (p, &c) in points.iter().zip(&r.assignments) {
                let n = nearest(p, &r.centroids);
                assert!(
                    n == c
                        || sq(p.values(), r.centroids[n].values()) == sq(p.values(), r.centroids[c].values()),
                    "instance {seed}"
                );
            }
        }
    }
}

#[test]
fn separated_blobs_split_perfectly() {
    for seed in 0..10 {
        let points = two_blobs(seed);
        let r = kmeans(&points, 2, seed).unwrap();
        let first = r.assignments[0];
        assert!(r.assignments[..20].iter().all(|&c| c == first), "seed {seed}");
        assert!(r.assignments[20..].iter().all(|&c| c != first), "seed {seed}");
        for (p, &c) in points.iter().zip(&r.assignments) {
            assert_eq!(nearest(p, &r.centroids), c);
        }
    }
}

#[test]
fn fixed_seed_is_deterministic() {
    for seed in 0..20 {
        let (points, k) = random_instance(seed);
        assert_eq!(kmeans(&points, k, 42).unwrap(), kmeans(&points, k, 42).unwrap());
    }
}
