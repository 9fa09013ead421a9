//! Few-shot input selection: uniform random sampling, and diversity sampling
//! that clusters embeddings and keeps one representative per cluster.

mod embed;
mod kmeans;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};

pub use embed::{
    EmbeddingProvider, EmbeddingVector, HashNgramEmbedder, HttpEmbedder, HttpEmbeddingConfig,
    MemoizedEmbedder,
};
pub use kmeans::{kmeans, ClusteringResult, MAX_ITERATIONS};

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("text {0} is empty")]
    EmptyText(usize),
    #[error("non-finite embedding: {0}")]
    NonFinite(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot form {k} clusters from {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("cannot sample {n} examples from a dataset of {len}")]
    TooMany { n: usize, len: usize },
    #[error("embedding provider failed: {0}")]
    Provider(String),
}

/// Which embedder diversity sampling uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "kebab-case")]
#[derive(Default)]
pub enum EmbeddingConfig {
    #[default]
    HashNgram,
    Http(HttpEmbeddingConfig),
}

fn check_n(dataset: &Dataset, n: usize) -> Result<(), SampleError> {
    if n == 0 || n > dataset.len() {
        return Err(SampleError::TooMany { n, len: dataset.len() });
    }
    Ok(())
}

/// `n` examples uniformly without replacement, returned in dataset order.
pub fn sample_random(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<Example>, SampleError> {
    check_n(dataset, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, dataset.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| dataset.examples()[i].clone()).collect())
}

/// Seed used for the single re-clustering attempt when a cluster comes back
/// empty.
fn reseed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Picks the point nearest each non-empty cluster's centroid, ties broken by
/// smallest index.
fn representatives(points: &[EmbeddingVector], clusters: &ClusteringResult) -> Vec<usize> {
    let mut picked = Vec::new();
    for c in 0..clusters.k() {
        let centroid = clusters.centroids[c].values();
        let best = clusters.members(c).map(|i| (i, kmeans::sq_dist(points[i].values(), centroid))).fold(
            None,
            |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            },
        );
        if let Some((i, _)) = best {
            picked.push(i);
        }
    }
    picked
}

/// Adds the unselected point farthest from the current selection until
/// `n` points are selected. Ties go to the smallest index.
fn farthest_point_completion(points: &[EmbeddingVector], selected: &mut Vec<usize>, n: usize) {
    let mut taken = vec![false; points.len()];
    for &i in selected.iter() {
        taken[i] = true;
    }
    while selected.len() < n {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..points.len()).filter(|&i| !taken[i]) {
            let d = selected
                .iter()
                .map(|&s| kmeans::sq_dist(points[i].values(), points[s].values()))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("n <= number of points");
        taken[i] = true;
        selected.push(i);
    }
}

/// `n` representatives of `n` embedding clusters, returned in dataset order.
pub fn sample_diverse<P: EmbeddingProvider + ?Sized>(
    dataset: &Dataset,
    n: usize,
    seed: u64,
    provider: &P,
) -> Result<Vec<Example>, SampleError> {
    check_n(dataset, n)?;
    let texts: Vec<&str> = dataset.examples().iter().map(|e| e.text.as_str()).collect();
    let points: Vec<EmbeddingVector> = provider.embed(&texts)?.into_iter().map(|v| v.normalized()).collect();
    if points.len() != dataset.len() {
        return Err(SampleError::Provider(format!(
            "provider returned {} vectors for {} texts",
            points.len(),
            dataset.len()
        )));
    }

    let mut clusters = kmeans(&points, n, seed)?;
    if !clusters.empty_clusters.is_empty() {
        log::debug!("{} empty clusters; re-seeding", clusters.empty_clusters.len());
        clusters = kmeans(&points, n, reseed(seed))?;
    }
    let mut selected = representatives(&points, &clusters);
    if selected.len() < n {
        log::debug!("completing {} picks by farthest point", n - selected.len());
        farthest_point_completion(&points, &mut selected, n);
    }
    selected.sort_unstable();
    Ok(selected.into_iter().map(|i| dataset.examples()[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(texts: &[&str]) -> Dataset {
        Dataset::new("d", texts.iter().enumerate().map(|(i, t)| Example::new(format!("e{i}"), *t)).collect())
            .unwrap()
    }

    fn ids(v: &[Example]) -> Vec<&str> {
        v.iter().map(|e| e.id.as_str()).collect()
    }

    #[test]
    fn random_whole_dataset_in_order() {
        let d = dataset(&["a", "b", "c", "d"]);
        assert_eq!(ids(&sample_random(&d, 4, 9).unwrap()), vec!["e0", "e1", "e2", "e3"]);
    }

    #[test]
    fn random_is_seed_deterministic_and_ordered() {
        let texts: Vec<String> = (0..50).map(|i| format!("text {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let d = dataset(&refs);
        let a = sample_random(&d, 8, 42).unwrap();
        assert_eq!(a, sample_random(&d, 8, 42).unwrap());
        let pos: Vec<usize> =
            a.iter().map(|e| d.examples().iter().position(|x| x.id == e.id).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn too_many_rejected() {
        let d = dataset(&["a", "b"]);
        assert!(matches!(sample_random(&d, 3, 0), Err(SampleError::TooMany { n: 3, len: 2 })));
        assert!(matches!(
            sample_diverse(&d, 3, 0, &HashNgramEmbedder::default()),
            Err(SampleError::TooMany { .. })
        ));
    }

    #[test]
    fn diverse_single_pick_is_nearest_the_centroid() {
        let texts = ["red apple pie", "red apple tart", "green apple pie", "blue whale song"];
        let d = dataset(&texts);
        let e = HashNgramEmbedder::default();
        let picked = sample_diverse(&d, 1, 0, &e).unwrap();
        // brute force: nearest normalized vector to the mean of all of them
        let vs: Vec<EmbeddingVector> = texts.iter().map(|t| e.embed_one(t)).collect();
        let dim = vs[0].dim();
        let mean: Vec<f64> =
            (0..dim).map(|j| vs.iter().map(|v| v.values()[j]).sum::<f64>() / vs.len() as f64).collect();
        let expected = (0..vs.len())
            .min_by(|&a, &b| {
                kmeans::sq_dist(vs[a].values(), &mean)
                    .partial_cmp(&kmeans::sq_dist(vs[b].values(), &mean))
                    .unwrap()
            })
            .unwrap();
        assert_eq!(picked[0].id, format!("e{expected}"));
    }

    #[test]
    fn diverse_duplicates_returns_everything() {
        let d = dataset(&["same", "same", "same", "same"]);
        let picked = sample_diverse(&d, 4, 5, &HashNgramEmbedder::default()).unwrap();
        assert_eq!(ids(&picked), vec!["e0", "e1", "e2", "e3"]);
    }

    #[test]
    fn diverse_output_distinct_and_sized() {
        let texts: Vec<String> =
            (0..30).map(|i| format!("sample number {} about topic {}", i, i % 4)).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let d = dataset(&refs);
        for n in [1, 2, 5, 8, 30] {
            let p = sample_diverse(&d, n, 11, &HashNgramEmbedder::default()).unwrap();
            assert_eq!(p.len(), n);
            let mut u = ids(&p);
            u.dedup();
            assert_eq!(u.len(), n);
            assert_eq!(p, sample_diverse(&d, n, 11, &HashNgramEmbedder::default()).unwrap());
        }
    }
}
