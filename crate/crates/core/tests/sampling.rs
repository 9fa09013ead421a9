mod support;

use semslice::corpus::{Dataset, Example};
use semslice::sampler::{sample_diverse, sample_random, HashNgramEmbedder};
use support::fixtures::two_vocabulary_corpus;

#[test]
fn random_sampling_is_uniform() {
    let ds = Dataset::new("ten", (0..10).map(|i| Example::new(format!("{i}"), "x")).collect()).unwrap();
    let mut counts = [0u32; 10];
    for trial in 0..10_000 {
        let picked = sample_random(&ds, 1, trial).unwrap();
        counts[picked[0].id.parse::<usize>().unwrap()] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        assert!((850..=1150).contains(c), "element {i} drawn {c} times: {counts:?}");
    }
    // chi-square with 9 degrees of freedom; 27.88 is the 0.999 quantile
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    assert!(chi2 < 27.88, "chi2 = {chi2}");
}

#[test]
fn diverse_pair_covers_both_vocabularies() {
    let emb = HashNgramEmbedder::default();
    let mut hits = 0;
    for trial in 0..100 {
        let ds = two_vocabulary_corpus(trial);
        let picked = sample_diverse(&ds, 2, trial, &emb).unwrap();
        assert_eq!(picked.len(), 2);
        let a = picked.iter().filter(|e| e.id.starts_with("a-")).count();
        hits += usize::from(a == 1);
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn diverse_sampling_replays() {
    let emb = HashNgramEmbedder::default();
    let ds = two_vocabulary_corpus(3);
    for n in [1, 3, 8] {
        let a = sample_diverse(&ds, n, 11, &emb).unwrap();
        assert_eq!(a, sample_diverse(&ds, n, 11, &emb).unwrap());
        let ids: std::collections::BTreeSet<_> = a.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), n);
    }
}
